"""Pareto tail fitting with KS scale selection and competitor tests.

Conventions.  alpha is the survival exponent, P(X > t) ~ (t/t_min)^-alpha
for t >= t_min; beta = alpha + 1 is the density exponent.  The Pareto MLE
for the tail above t_min is the Hill estimator

    alpha_hat = n_tail / sum log(x_i / t_min),      beta_hat = alpha_hat + 1.

t_min is chosen by minimising the Kolmogorov-Smirnov distance between the
tail empirical CDF and the fitted Pareto over a grid of order statistics
(at most `n_candidates`, log-spaced in tail size, each keeping at least
`min_tail` samples), ties broken toward smaller t_min.  Exponential and
lognormal competitors are fitted by MLE on the same tail and compared with
a Vuong-style normalised likelihood-ratio test.  Confidence intervals come
from a Poisson-weighted nonparametric bootstrap that re-runs scale
selection and MLE per replicate, or from the asymptotic MLE standard error
alpha_hat/sqrt(n_tail) for very large samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

__all__ = [
    "TailFitReport",
    "pareto_mle",
    "select_tmin",
    "competitor_fits",
    "likelihood_ratio_test",
    "bootstrap_ci",
    "fit_tail",
]

MIN_TAIL = 50
N_CANDIDATES = 200


@dataclass
class TailFitReport:
    """Result of one tail fit, with competitor diagnostics."""

    alpha_hat: float
    beta_hat: float
    t_min: float
    ci95: tuple
    n_tail: int
    n_samples: int
    ks_distance: float
    pareto_loglik: float
    competitor_loglik: dict
    lrt_pvalues: dict
    lrt_statistics: dict
    ci_method: str
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "alpha_hat": self.alpha_hat,
            "beta_hat": self.beta_hat,
            "t_min": self.t_min,
            "ci95_low": self.ci95[0],
            "ci95_high": self.ci95[1],
            "n_tail": self.n_tail,
            "n_samples": self.n_samples,
            "ks_distance": self.ks_distance,
            "pareto_loglik": self.pareto_loglik,
            "competitor_loglik": dict(self.competitor_loglik),
            "lrt_pvalues": dict(self.lrt_pvalues),
            "lrt_statistics": dict(self.lrt_statistics),
            "ci_method": self.ci_method,
            "flags": list(self.flags),
        }

    def to_text(self) -> str:
        lines = [
            f"alpha_hat = {self.alpha_hat:.6g}",
            f"beta_hat = {self.beta_hat:.6g}",
            f"t_min = {self.t_min:.6g}",
            f"ci95 = ({self.ci95[0]:.6g}, {self.ci95[1]:.6g}) [{self.ci_method}]",
            f"n_tail = {self.n_tail}",
            f"n_samples = {self.n_samples}",
            f"ks_distance = {self.ks_distance:.6g}",
            f"pareto_loglik = {self.pareto_loglik:.6g}",
        ]
        for name, ll in sorted(self.competitor_loglik.items()):
            lines.append(f"loglik[{name}] = {ll:.6g}")
        for name, pv in sorted(self.lrt_pvalues.items()):
            stat = self.lrt_statistics.get(name, float("nan"))
            lines.append(f"lrt[{name}] = stat {stat:.4g}, p {pv:.4g}")
        if self.flags:
            lines.append("flags = " + ",".join(self.flags))
        return "\n".join(lines)


def _positive_sorted(samples) -> np.ndarray:
    s = np.asarray(samples, dtype=np.float64)
    s = s[np.isfinite(s) & (s > 0)]
    return np.sort(s)


def pareto_mle(samples, t_min: float) -> tuple:
    """(beta_hat, loglik) of the Pareto fit to samples >= t_min.

    beta_hat = 1 + n_tail / sum log(x/t_min); the log-likelihood uses the
    density (beta-1) t_min^(beta-1) x^-beta on the tail.  If every tail
    sample equals t_min the estimate is flagged infinite: (inf, -inf).
    """
    s = np.asarray(samples, dtype=np.float64)
    tail = s[s >= t_min]
    if tail.size < 2:
        raise ValueError("need at least 2 samples >= t_min")
    if np.any(tail <= 0) or t_min <= 0:
        raise ValueError("samples and t_min must be positive")
    m = tail.size
    logsum = float(np.sum(np.log(tail / t_min)))
    if logsum <= 0:
        return math.inf, -math.inf
    alpha = m / logsum
    loglik = m * math.log(alpha) + m * alpha * math.log(t_min) \
        - (alpha + 1.0) * float(np.sum(np.log(tail)))
    return alpha + 1.0, loglik


def _candidate_starts(n: int, n_candidates: int, min_tail: int) -> np.ndarray:
    """Start indices into the sorted sample, ascending in t_min."""
    if n <= min_tail:
        return np.array([0])
    counts = np.unique(np.geomspace(min_tail, n, n_candidates).astype(np.int64))
    return np.unique(n - counts)


def _scan_tmin(s: np.ndarray, logs: np.ndarray, suffix: np.ndarray,
               starts: np.ndarray, counts: np.ndarray | None):
    """KS scan over candidate start indices; returns the best candidate.

    counts = None scans the raw sample; otherwise counts[j] resampling
    weights drive a weighted scan (used by the bootstrap).  Returns
    (start, t_min, alpha_hat, ks, m) or None when no candidate is fittable.
    Ties in the KS distance keep the smaller t_min (scan order).
    """
    n = s.size
    if counts is not None:
        cum = np.concatenate([[0.0], np.cumsum(counts)])
        wsuffix = np.concatenate([np.cumsum((counts * logs)[::-1])[::-1], [0.0]])
        total = cum[-1]
        ecdf_hi_all = None
    else:
        # unweighted scan: tail ECDF levels derive from positions alone
        cum = None
        ecdf_hi_all = np.arange(1, n + 1, dtype=np.float64)
    best = None
    for i in starts:
        if counts is None:
            m = n - i
            logsum = suffix[i] - m * logs[i]
            if m < 2 or logsum <= 0:
                continue
            alpha = m / logsum
            # G = ecdf_hi - F computed in few fused passes
            G = np.expm1(alpha * (logs[i] - logs[i:]))
            G += ecdf_hi_all[:m] / m
            w = 1.0 / m
        else:
            m = total - cum[i]
            logsum = wsuffix[i] - m * logs[i]
            if m < 2 or logsum <= 0:
                continue
            alpha = m / logsum
            G = np.expm1(alpha * (logs[i] - logs[i:]))
            G += (cum[i + 1:] - cum[i]) / m
            w = counts[i:] / m
        ks = max(float(G.max()), float((w - G).max()))
        if best is None or ks < best[3]:
            best = (int(i), float(s[i]), float(alpha), float(ks), int(m))
    return best


def select_tmin(samples, n_candidates: int = N_CANDIDATES,
                min_tail: int = MIN_TAIL) -> tuple:
    """(t_min, ks_distance) minimising the tail KS over the candidate grid."""
    s = _positive_sorted(samples)
    if s.size < 100:
        raise ValueError("select_tmin needs at least 100 positive samples")
    logs = np.log(s)
    suffix = np.concatenate([np.cumsum(logs[::-1])[::-1], [0.0]])
    starts = _candidate_starts(s.size, n_candidates, min_tail)
    best = _scan_tmin(s, logs, suffix, starts, None)
    if best is None:
        raise ValueError("no fittable t_min candidate (all-equal samples?)")
    return best[1], best[3]


def _exp_loglik(tail: np.ndarray, t_min: float):
    """Exponential MLE on excesses over t_min; conditional log-likelihood."""
    mean_excess = float(np.mean(tail - t_min))
    if mean_excess <= 0:
        return math.nan, None
    rate = 1.0 / mean_excess
    return float(tail.size * math.log(rate)
                 - rate * np.sum(tail - t_min)), rate


def _lognorm_cond_ll(lt: np.ndarray, log_t: float, mu: float,
                     sd: float) -> float:
    """Tail-conditioned lognormal log-likelihood at (mu, sd)."""
    z = (log_t - mu) / sd
    log_sf = float(special.log_ndtr(-z))  # log P(X >= t_min)
    return float(np.sum(-lt - 0.5 * math.log(2 * math.pi) - math.log(sd)
                        - (lt - mu) ** 2 / (2 * sd * sd)) - lt.size * log_sf)


def _lognorm_loglik(tail: np.ndarray, t_min: float):
    """Conditional-MLE lognormal fit on the tail.

    The likelihood is conditioned on x >= t_min, so the MLE is found
    numerically (moments of the tail logs only initialise it; they are not
    the truncated-model MLE).
    """
    from scipy import optimize

    lt = np.log(tail)
    log_t = math.log(t_min)
    mu0 = float(np.mean(lt))
    var0 = float(np.var(lt))
    # relative guard: identical samples leave O(eps^2) rounding residue
    if var0 <= (1e-12 * max(1.0, abs(mu0))) ** 2:
        return math.nan, None
    sd0 = math.sqrt(var0)

    def nll(params):
        mu, log_sd = params
        sd = math.exp(log_sd)
        return -_lognorm_cond_ll(lt, log_t, mu, sd) / lt.size

    res = optimize.minimize(nll, x0=[mu0, math.log(sd0)],
                            method="Nelder-Mead",
                            options={"xatol": 1e-6, "fatol": 1e-10,
                                     "maxiter": 400})
    mu, sd = float(res.x[0]), float(math.exp(res.x[1]))
    ll = _lognorm_cond_ll(lt, log_t, mu, sd)
    ll0 = _lognorm_cond_ll(lt, log_t, mu0, sd0)
    if ll0 > ll:  # optimizer went nowhere useful
        mu, sd, ll = mu0, sd0, ll0
    return ll, (mu, sd)


def competitor_fits(samples, t_min: float) -> dict:
    """Tail-conditioned MLE log-likelihoods of the competitor models.

    Returns {'exponential': ll, 'lognormal': ll}; a degenerate fit (zero
    variance) is flagged with nan.
    """
    s = np.asarray(samples, dtype=np.float64)
    tail = s[s >= t_min]
    if tail.size < 2:
        raise ValueError("need at least 2 tail samples")
    ll_exp, _ = _exp_loglik(tail, t_min)
    ll_ln, _ = _lognorm_loglik(tail, t_min)
    return {"exponential": ll_exp, "lognormal": ll_ln}


def _pointwise_loglik(model: str, tail: np.ndarray, t_min: float) -> np.ndarray:
    lt = np.log(tail)
    if model == "pareto":
        beta, _ = pareto_mle(tail, t_min)
        alpha = beta - 1.0
        if not math.isfinite(alpha):
            raise ValueError("degenerate Pareto fit")
        return math.log(alpha) + alpha * math.log(t_min) - (alpha + 1.0) * lt
    if model == "exponential":
        ll, rate = _exp_loglik(tail, t_min)
        if rate is None:
            raise ValueError("degenerate exponential fit")
        return math.log(rate) - rate * (tail - t_min)
    if model == "lognormal":
        ll, params = _lognorm_loglik(tail, t_min)
        if params is None:
            raise ValueError("degenerate lognormal fit")
        mu, sd = params
        z = (math.log(t_min) - mu) / sd
        log_sf = float(special.log_ndtr(-z))
        return (-lt - 0.5 * math.log(2 * math.pi) - math.log(sd)
                - (lt - mu) ** 2 / (2 * sd * sd)) - log_sf
    raise ValueError(f"unknown model {model!r}")


def likelihood_ratio_test(samples, t_min: float, model_a: str,
                          model_b: str) -> tuple:
    """Vuong-style normalised LRT between two tail models.

    Positive statistic favours model_a.  Returns (statistic, p_value) with
    a two-sided p under asymptotic normality of the per-sample loglik
    differences; (0, 1) for identical models, (nan, nan) when the pointwise
    differences have zero variance.
    """
    s = np.asarray(samples, dtype=np.float64)
    tail = s[s >= t_min]
    if tail.size < 2:
        raise ValueError("need at least 2 tail samples")
    la = _pointwise_loglik(model_a, tail, t_min)
    lb = _pointwise_loglik(model_b, tail, t_min)
    d = la - lb
    if np.all(d == 0.0):
        return 0.0, 1.0
    sd = float(np.std(d))
    if sd == 0.0:
        return math.nan, math.nan
    stat = float(np.sum(d)) / (sd * math.sqrt(d.size))
    p = 2.0 * float(special.ndtr(-abs(stat)))
    return stat, p


def bootstrap_ci(samples, n_boot: int = 1000, seed: int = 0,
                 n_candidates: int = N_CANDIDATES,
                 min_tail: int = MIN_TAIL) -> tuple:
    """Percentile bootstrap 95% CI for alpha_hat.

    Each replicate reweights the sample with iid Poisson(1) counts (the
    large-n limit of multinomial resampling, and it keeps the sample
    sorted) and re-runs scale selection plus the Pareto MLE.
    """
    s = _positive_sorted(samples)
    if s.size < 100:
        raise ValueError("bootstrap_ci needs at least 100 positive samples")
    logs = np.log(s)
    suffix = np.concatenate([np.cumsum(logs[::-1])[::-1], [0.0]])
    starts = _candidate_starts(s.size, n_candidates, min_tail)
    rng = np.random.default_rng(seed)
    alphas = np.empty(n_boot)
    got = 0
    for _ in range(n_boot):
        counts = rng.poisson(1.0, s.size)
        best = _scan_tmin(s, logs, suffix, starts, counts)
        if best is None:
            continue
        alphas[got] = best[2]
        got += 1
    if got < max(20, n_boot // 2):
        raise ValueError("too many degenerate bootstrap replicates")
    lo, hi = np.percentile(alphas[:got], [2.5, 97.5])
    return float(lo), float(hi)


def fit_tail(samples, n_candidates: int = N_CANDIDATES,
             min_tail: int = MIN_TAIL, ci_method: str = "auto",
             n_boot: int = 1000, seed: int = 0,
             bootstrap_max_n: int = 2_000_000) -> TailFitReport:
    """Full pipeline: scale selection, Pareto MLE, competitors, LRTs, CI.

    ci_method 'auto' bootstraps up to bootstrap_max_n samples and falls
    back to the asymptotic MLE interval beyond that (bootstrap cost is
    linear in n per replicate).
    """
    s = _positive_sorted(samples)
    if s.size < 100:
        raise ValueError("fit_tail needs at least 100 positive samples")
    flags = []
    t_min, ks = select_tmin(s, n_candidates, min_tail)
    beta, ll_pareto = pareto_mle(s, t_min)
    alpha = beta - 1.0
    tail = s[s >= t_min]
    m = tail.size
    if m < MIN_TAIL:
        flags.append("low_confidence")
    if not math.isfinite(alpha):
        flags.append("degenerate_tail")

    comp = competitor_fits(s, t_min)
    if any(not math.isfinite(v) for v in comp.values()):
        flags.append("degenerate_competitor")

    lrt_p, lrt_stat = {}, {}
    for other in ("exponential", "lognormal"):
        try:
            stat, p = likelihood_ratio_test(s, t_min, "pareto", other)
        except ValueError:
            stat, p = math.nan, math.nan
            flags.append(f"lrt_failed_{other}")
        lrt_p[f"pareto_vs_{other}"] = p
        lrt_stat[f"pareto_vs_{other}"] = stat

    method = ci_method
    if method == "auto":
        method = "bootstrap" if s.size <= bootstrap_max_n else "asymptotic"
    if method == "bootstrap":
        try:
            ci = bootstrap_ci(s, n_boot=n_boot, seed=seed,
                              n_candidates=n_candidates, min_tail=min_tail)
        except ValueError:
            ci = (math.nan, math.nan)
            flags.append("bootstrap_failed")
            method = "failed"
    elif method == "asymptotic":
        if math.isfinite(alpha) and m > 0:
            se = alpha / math.sqrt(m)
            ci = (alpha - 1.96 * se, alpha + 1.96 * se)
        else:
            ci = (math.nan, math.nan)
    else:
        raise ValueError(f"unknown ci_method {ci_method!r}")
    if s.size < 1000:
        flags.append("small_sample")

    return TailFitReport(
        alpha_hat=alpha,
        beta_hat=beta,
        t_min=t_min,
        ci95=ci,
        n_tail=m,
        n_samples=int(s.size),
        ks_distance=ks,
        pareto_loglik=ll_pareto,
        competitor_loglik=comp,
        lrt_pvalues=lrt_p,
        lrt_statistics=lrt_stat,
        ci_method=method,
        flags=flags,
    )

"""Numerical checks of the heavy-tail theory for linear-recurrence chains.

Provides Monte Carlo estimates of

* the ergodicity diagnostic E log |A| (negative means a unique stationary
  distribution exists for w' = A w + B);
* moment transforms s -> E phi(A)^s for phi in {sigma_min, spectral norm},
  accumulated in the log domain so large s cannot overflow;
* the exponent roots of E sigma_min(A)^s = 1 (alpha_root, upper bound on
  the tail exponent) and E |A|^s = 1 (beta_root, lower bound), solved by
  bisection on a common-random-numbers sample so the bracket logic never
  fights Monte Carlo jitter;
* per-draw Lipschitz envelopes (K, k, |Psi(w*)|) of the SGD update and the
  closed-form moment bounds kappa_p built from them;
* the expansion-probability criterion inf_w P(|f(Psi(w))| > (1+eps)|f(w)|)
  over a probe grid, whose positivity certifies a heavy-tailed limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .chain import ChainStreams, StepMap
from .problems import (
    LinearCoeffSampler,
    RidgeProblem,
    TwoLayerReluProblem,
    ridge_closed_form,
)

__all__ = [
    "ErgodicityReport",
    "KestenResult",
    "LipschitzProfile",
    "MomentBounds",
    "ExpansionReport",
    "ergodicity_diagnostic",
    "moment_transform",
    "kesten_solve",
    "lipschitz_profile_sgd",
    "moment_bounds",
    "expansion_probability",
    "default_probes",
]

MAX_EXPONENT = 64.0


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def _phi_draws(sampler: LinearCoeffSampler, rng, n_mc: int):
    """Per-draw (sigma_min, spectral_norm) of A, as arrays of length n_mc."""
    A, _ = sampler.sample(rng, n_mc)
    if A.ndim == 1:
        a = np.abs(A)
        return a, a
    side = A.shape[-1]
    if side <= 200:
        sv = np.linalg.svd(A, compute_uv=False)
        return sv[:, -1], sv[:, 0]
    smin = np.empty(n_mc)
    smax = np.empty(n_mc)
    for i in range(n_mc):
        smax[i] = _power_norm(A[i])
        smin[i] = _power_norm(np.linalg.inv(A[i]))
        smin[i] = 1.0 / smin[i]
    return smin, smax


def _power_norm(M: np.ndarray, tol: float = 1e-8, max_iter: int = 500) -> float:
    """Spectral norm by power iteration on M^T M (large matrices only)."""
    v = np.ones(M.shape[1]) / math.sqrt(M.shape[1])
    last = 0.0
    for _ in range(max_iter):
        w = M.T @ (M @ v)
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        v = w / nrm
        if abs(nrm - last) <= tol * nrm:
            break
        last = nrm
    return math.sqrt(nrm)


@dataclass
class ErgodicityReport:
    mean_log_norm: float
    stderr: float
    n_mc: int
    verdict: str  # ergodic / nonergodic / inconclusive

    def to_dict(self):
        return {"mean_log_norm": self.mean_log_norm, "stderr": self.stderr,
                "n_mc": self.n_mc, "verdict": self.verdict}


def ergodicity_diagnostic(sampler: LinearCoeffSampler, n_mc: int = 10_000,
                          rng=0) -> ErgodicityReport:
    """Monte Carlo estimate of E log |A| (spectral norm) with a verdict.

    Verdict is 'inconclusive' when 0 lies within 3 standard errors.
    """
    if n_mc < 1000:
        raise ValueError("n_mc must be at least 1000")
    rng = _as_rng(rng)
    _, smax = _phi_draws(sampler, rng, n_mc)
    with np.errstate(divide="ignore"):
        logs = np.log(smax)
    mean = float(np.mean(logs))
    se = float(np.std(logs) / math.sqrt(n_mc))
    if mean + 3 * se < 0:
        verdict = "ergodic"
    elif mean - 3 * se > 0:
        verdict = "nonergodic"
    else:
        verdict = "inconclusive"
    return ErgodicityReport(mean, se, n_mc, verdict)


def _log_moment(logphi: np.ndarray, s: float) -> float:
    """log E phi^s from log-phi draws (log-domain accumulation)."""
    return float(logsumexp(s * logphi)) - math.log(logphi.size)


def moment_transform(sampler: LinearCoeffSampler, s: float, n_mc: int = 100_000,
                     which: str = "sigma_min", rng=0) -> tuple:
    """(estimate, stderr) of E phi(A)^s for phi = sigma_min or spectral_norm."""
    if which not in ("sigma_min", "spectral_norm"):
        raise ValueError("which must be 'sigma_min' or 'spectral_norm'")
    if s == 0.0:
        return 1.0, 0.0
    rng = _as_rng(rng)
    smin, smax = _phi_draws(sampler, rng, n_mc)
    phi = smin if which == "sigma_min" else smax
    with np.errstate(divide="ignore"):
        logphi = np.log(phi)
    logphi = logphi[np.isfinite(logphi) | (logphi == -np.inf)]
    m1 = _log_moment(logphi, s)
    m2 = _log_moment(logphi, 2 * s)
    est = math.exp(m1)
    var = math.exp(m2) - math.exp(2 * m1) if math.isfinite(m2) else math.inf
    se = math.sqrt(max(var, 0.0) / n_mc) if math.isfinite(var) else math.inf
    return est, se


@dataclass
class KestenResult:
    """Roots of the moment transforms, with Monte Carlo error bars.

    alpha_root solves E sigma_min(A)^s = 1 (the tail exponent is at most
    alpha_root); beta_root solves E |A|^s = 1 (at least beta_root).  Theory
    gives beta_root <= alpha_root; `consistent` is False when the estimates
    violate that beyond their combined error bars.  A missing root is
    reported through its verdict, not an exception.
    """

    alpha_root: float
    beta_root: float
    alpha_stderr: float
    beta_stderr: float
    alpha_verdict: str  # root / light_tail_no_root / no_contraction
    beta_verdict: str
    n_mc: int
    bracket: tuple
    consistent: bool

    def to_dict(self):
        return {
            "alpha_root": self.alpha_root, "beta_root": self.beta_root,
            "alpha_stderr": self.alpha_stderr, "beta_stderr": self.beta_stderr,
            "alpha_verdict": self.alpha_verdict,
            "beta_verdict": self.beta_verdict,
            "n_mc": self.n_mc, "bracket": list(self.bracket),
            "consistent": self.consistent,
        }


def _root_from_logphi(logphi: np.ndarray, bracket, tol: float):
    """Bisection root of log E phi^s = 0 on the fixed sample.

    Returns (root, stderr, verdict, bracket_used).  The upper bracket end
    is doubled up to MAX_EXPONENT while no sign change exists.
    """
    lo, hi = bracket
    if not 0 < lo < hi:
        raise ValueError("bracket must satisfy 0 < lo < hi")
    finite = logphi[np.isfinite(logphi)]
    if finite.size == 0:
        return math.nan, math.nan, "degenerate", (lo, hi)

    def g(s):
        return _log_moment(logphi, s)

    g_lo = g(lo)
    if g_lo >= 0:
        # no contraction at small s: E log phi >= 0 territory
        return math.nan, math.nan, "no_contraction", (lo, hi)
    while g(hi) < 0:
        if hi >= MAX_EXPONENT:
            return math.nan, math.nan, "light_tail_no_root", (lo, hi)
        hi = min(2 * hi, MAX_EXPONENT)
    a, b = lo, hi
    for _ in range(200):
        mid = 0.5 * (a + b)
        val = g(mid)
        if abs(math.expm1(val)) < tol or (b - a) < 1e-12 * (1 + b):
            a = b = mid
            break
        if val < 0:
            a = mid
        else:
            b = mid
    root = 0.5 * (a + b)
    # delta method: se(root) = se(E phi^s) / |d/ds E phi^s| at the root
    m1 = g(root)
    m2 = _log_moment(logphi, 2 * root)
    var = math.exp(m2) - math.exp(2 * m1) if math.isfinite(m2) else math.inf
    se_val = math.sqrt(max(var, 0.0) / logphi.size)
    w = np.exp(root * logphi - logsumexp(root * logphi))
    deriv = abs(float(np.sum(w * logphi)))  # d/ds log E phi^s at root, times 1
    se = se_val / max(deriv * math.exp(m1), 1e-12)
    return root, se, "root", (lo, hi)


def kesten_solve(sampler: LinearCoeffSampler, which: str = "both",
                 bracket: tuple = (0.05, 8.0), tol: float = 1e-3,
                 n_mc: int = 200_000, rng=0) -> KestenResult:
    """Solve the exponent equations on a common-random-numbers sample.

    which selects 'sigma_min' (alpha_root only), 'spectral_norm'
    (beta_root only) or 'both'.  Both roots reuse one sample of A draws.
    """
    if which not in ("both", "sigma_min", "spectral_norm"):
        raise ValueError("which must be 'both', 'sigma_min' or 'spectral_norm'")
    rng = _as_rng(rng)
    smin, smax = _phi_draws(sampler, rng, n_mc)
    with np.errstate(divide="ignore"):
        log_smin, log_smax = np.log(smin), np.log(smax)

    alpha = beta = math.nan
    a_se = b_se = math.nan
    a_verdict = b_verdict = "not_requested"
    used = bracket
    if which in ("both", "sigma_min"):
        alpha, a_se, a_verdict, used = _root_from_logphi(log_smin, bracket, tol)
    if which in ("both", "spectral_norm"):
        beta, b_se, b_verdict, used_b = _root_from_logphi(log_smax, bracket, tol)
        used = (min(used[0], used_b[0]), max(used[1], used_b[1]))

    consistent = True
    if math.isfinite(alpha) and math.isfinite(beta):
        slack = 3.0 * (a_se + b_se) + 2 * tol
        consistent = alpha >= beta - slack
    return KestenResult(alpha, beta, a_se, b_se, a_verdict, b_verdict,
                        n_mc, used, consistent)


# ---------------------------------------------------------------------------
# Lipschitz envelopes and moment bounds


@dataclass
class LipschitzProfile:
    """Per-draw Lipschitz data of the update around a reference point w*.

    k |w - w*| - M <= |Psi(w) - Psi(w*)| <= K |w - w*| holds per draw; for
    linear updates M = 0 and K, k are the extreme singular values of A.
    """

    K_samples: np.ndarray
    k_samples: np.ndarray
    psi_wstar_norms: np.ndarray
    w_star: np.ndarray
    M_psi: float = 0.0
    flags: list = field(default_factory=list)

    def expansion_fraction(self) -> float:
        """Fraction of draws with k > 1 (the heavy-tail driver)."""
        return float(np.mean(self.k_samples > 1.0))


def lipschitz_profile_sgd(problem, spec, n_mc: int = 20_000, rng=0,
                          probe_radii: Sequence[float] = (1e2, 1e4, 1e6),
                          w_star: Optional[np.ndarray] = None) -> LipschitzProfile:
    """Sample (K, k, |Psi(w*)|) for the SGD update on the given problem.

    Ridge: exact per batch, K = |I - gamma (XX^T/n + lam I)|, k the smallest
    singular value, w* the closed form optimum.  Two-layer ReLU: the
    w-dependent Hessian is probed at `probe_radii` along random directions
    with finite-difference Hessians (flagged approximate).
    """
    rng = _as_rng(rng)
    gamma = spec.gamma if hasattr(spec, "gamma") else float(spec)
    if isinstance(problem, RidgeProblem):
        X, Y = problem.source.draw_many(rng, problem.batch_size, n_mc)
        n = problem.batch_size
        eye = np.eye(problem.d)
        C = np.einsum("kni,knj->kij", X, X) / n
        J = eye - gamma * (C + problem.lam * eye)
        sv = np.linalg.svd(J, compute_uv=False)
        K, k = sv[:, 0], sv[:, -1]
        Mstar = ridge_closed_form(problem)
        ws = Mstar.ravel() if w_star is None else np.asarray(w_star)
        # Psi(w*) = w* - gamma * grad_batch(w*)
        R = np.einsum("knd,md->knm", X, Mstar) - Y
        G = np.einsum("knm,knd->kmd", R, X) / n + problem.lam * Mstar
        psi = ws - gamma * G.reshape(n_mc, -1)
        psi_norms = np.linalg.norm(psi, axis=1)
        return LipschitzProfile(K, k, psi_norms, ws)
    if isinstance(problem, TwoLayerReluProblem):
        ws = (np.zeros(problem.n_params) if w_star is None
              else np.asarray(w_star, dtype=np.float64))
        K = np.empty(n_mc)
        k = np.empty(n_mc)
        psi_norms = np.empty(n_mc)
        eye = np.eye(problem.n_params)
        for i in range(n_mc):
            X, Y = problem.source.draw(rng, problem.batch_size)
            Kbest, kbest = 0.0, math.inf
            for r in probe_radii:
                u = rng.standard_normal(problem.n_params)
                w = ws + r * u / np.linalg.norm(u)
                H = _fd_hessian(lambda v: problem.batch_grad(v, X, Y), w)
                sv = np.linalg.svd(eye - gamma * H, compute_uv=False)
                Kbest = max(Kbest, float(sv[0]))
                kbest = min(kbest, float(sv[-1]))
            K[i], k[i] = Kbest, kbest
            psi_norms[i] = np.linalg.norm(
                ws - gamma * problem.batch_grad(ws, X, Y))
        return LipschitzProfile(K, k, psi_norms, ws,
                                flags=["probe_grid_approximation",
                                       "w_star_assumed"])
    raise ValueError(f"unsupported problem kind: {type(problem).__name__}")


def _fd_hessian(grad: Callable, w: np.ndarray, h: float = 1e-5) -> np.ndarray:
    d = w.size
    H = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        H[:, j] = (grad(w + e) - grad(w - e)) / (2 * h)
    return 0.5 * (H + H.T)


@dataclass
class MomentBounds:
    """kappa_p bounds derived from a Lipschitz profile.

    kappa_plus = (|K|_p |w*| + |Psi(w*)|_p) / (1 - |K|_p) is only defined
    when |K|_p < 1 (flagged otherwise); the stationary p-norm of |W| is
    bounded by kappa_plus whenever it is defined.
    """

    p: float
    kappa_minus: float
    kappa_plus: float
    k_norm_p: float
    K_norm_p: float
    psi_norm_p: float
    w_star_norm: float
    flags: list = field(default_factory=list)

    def to_dict(self):
        return {"p": self.p, "kappa_minus": self.kappa_minus,
                "kappa_plus": self.kappa_plus, "k_norm_p": self.k_norm_p,
                "K_norm_p": self.K_norm_p, "psi_norm_p": self.psi_norm_p,
                "w_star_norm": self.w_star_norm, "flags": list(self.flags)}


def _p_norm(samples: np.ndarray, p: float) -> float:
    with np.errstate(divide="ignore"):
        logs = np.log(samples)
    finite = np.isfinite(logs)
    if not finite.any():
        return 0.0
    # zeros contribute exp(-inf) = 0 to the mean
    lse = logsumexp(p * logs[finite])
    return math.exp((lse - math.log(samples.size)) / p)


def moment_bounds(profile: LipschitzProfile, p: float) -> MomentBounds:
    """Evaluate kappa_p^- and kappa_p^+ from the sampled profile."""
    if p <= 0:
        raise ValueError("p must be positive")
    Kp = _p_norm(profile.K_samples, p)
    kp = _p_norm(profile.k_samples, p)
    psip = _p_norm(profile.psi_wstar_norms, p)
    wsn = float(np.linalg.norm(profile.w_star))
    flags = list(profile.flags)
    if Kp < 1.0:
        kplus = (Kp * wsn + psip) / (1.0 - Kp)
    else:
        kplus = math.inf
        flags.append("upper_bound_undefined")
    if kp < 1.0:
        kminus = (kp * wsn + psip) / (1.0 - kp)
    else:
        kminus = math.inf
        flags.append("lower_recursion_expanding")
    return MomentBounds(p, kminus, kplus, kp, Kp, psip, wsn, flags)


# ---------------------------------------------------------------------------
# expansion-probability criterion


@dataclass
class ExpansionReport:
    """inf_w P(|f(Psi(w))| > (1+eps)|f(w)|) estimates over a probe grid."""

    epsilons: tuple
    inf_estimates: dict          # eps -> inf over probes
    probe_estimates: dict        # eps -> per-probe probabilities
    n_mc: int
    witness_epsilon: Optional[float]

    @property
    def satisfied(self) -> bool:
        return self.witness_epsilon is not None

    def to_dict(self):
        return {
            "epsilons": list(self.epsilons),
            "inf_estimates": {str(e): v for e, v in self.inf_estimates.items()},
            "n_mc": self.n_mc,
            "witness_epsilon": self.witness_epsilon,
            "satisfied": self.satisfied,
            "note": "infimum over a finite probe grid (under-approximation)",
        }


def default_probes(dim: int, radii: Sequence[float] = (1.0, 10.0, 1e3, 1e6),
                   rng=0) -> list:
    """Probe states at the given radii (random directions when dim > 1)."""
    rng = _as_rng(rng)
    probes = []
    for r in radii:
        if dim == 1:
            probes.append(np.array([r]))
        else:
            u = rng.standard_normal(dim)
            probes.append(r * u / np.linalg.norm(u))
    return probes


def expansion_probability(step_map: StepMap, f: Optional[Callable] = None,
                          probe_points: Optional[Sequence] = None,
                          n_mc: int = 4000,
                          epsilons: Sequence[float] = (0.05, 0.1, 0.2),
                          seed: int = 0) -> ExpansionReport:
    """Monte Carlo lower-bound check of the expansion criterion.

    For each probe w the per-draw event |f(Psi(w))| > (1+eps)|f(w)| is
    sampled n_mc times; the reported infimum over probes is positive only
    if expansion has positive probability at every probe.  The grid is an
    under-approximation of the true infimum over all states.
    """
    if f is None:
        f = lambda w: float(np.linalg.norm(w))
    if probe_points is None:
        probe_points = default_probes(step_map.dim)
    probe_est: dict = {float(e): [] for e in epsilons}
    for j, w in enumerate(probe_points):
        w = np.asarray(w, dtype=np.float64)
        fw = abs(f(w))
        streams = ChainStreams(seed, j)
        vals = np.empty(n_mc)
        with np.errstate(over="ignore", invalid="ignore"):
            for i in range(n_mc):
                vals[i] = abs(f(step_map.step(w, i, streams)))
        for e in probe_est:
            probe_est[e].append(float(np.mean(vals > (1.0 + e) * fw)))
    inf_est = {e: min(v) for e, v in probe_est.items()}
    witnesses = [e for e, v in inf_est.items() if v > 0]
    witness = max(witnesses) if witnesses else None
    return ExpansionReport(tuple(float(e) for e in epsilons), inf_est,
                           probe_est, n_mc, witness)

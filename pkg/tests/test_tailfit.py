import math

import numpy as np
import pytest

from tailchain.tailfit import (
    bootstrap_ci,
    competitor_fits,
    fit_tail,
    likelihood_ratio_test,
    pareto_mle,
    select_tmin,
)


def pareto_draws(rng, alpha, t_min, n):
    """Inverse-CDF oracle: X = t_min * U^(-1/alpha)."""
    return t_min * rng.random(n) ** (-1.0 / alpha)


# ---------------------------------------------------------------------------
# pareto_mle


def test_pareto_mle_closed_form_case():
    # all samples at t_min * e: sum log = n, so alpha_hat = 1
    x = np.full(500, math.e * 2.0)
    beta, ll = pareto_mle(x, 2.0)
    assert abs(beta - 2.0) < 1e-12  # alpha = beta - 1 = 1
    assert math.isfinite(ll)


def test_pareto_mle_recovers_synthetic_alpha():
    rng = np.random.default_rng(0)
    x = pareto_draws(rng, 2.0, 1.0, 100_000)
    beta, _ = pareto_mle(x, 1.0)
    assert abs((beta - 1.0) - 2.0) < 0.05


def test_pareto_mle_degenerate_flagged_infinite():
    x = np.full(100, 3.0)
    beta, ll = pareto_mle(x, 3.0)
    assert beta == math.inf and ll == -math.inf


def test_pareto_mle_input_validation():
    with pytest.raises(ValueError):
        pareto_mle(np.array([1.0]), 0.5)
    with pytest.raises(ValueError):
        pareto_mle(np.array([1.0, 2.0]), -1.0)


def test_pareto_loglik_maximised_at_mle():
    # monotone-likelihood invariant: MLE beats nearby exponents
    rng = np.random.default_rng(1)
    x = pareto_draws(rng, 1.5, 1.0, 5000)
    t = 1.0
    beta, ll_star = pareto_mle(x, t)
    alpha_star = beta - 1.0
    tail = x[x >= t]
    m = tail.size

    def ll(alpha):
        return (m * math.log(alpha) + m * alpha * math.log(t)
                - (alpha + 1.0) * float(np.sum(np.log(tail))))

    for alpha in (alpha_star * 0.5, alpha_star * 0.9, alpha_star * 1.1,
                  alpha_star * 2.0):
        assert ll(alpha) <= ll_star + 1e-9


# ---------------------------------------------------------------------------
# select_tmin


def test_select_tmin_pure_pareto():
    rng = np.random.default_rng(2)
    x = pareto_draws(rng, 2.0, 1.0, 100_000)
    t, ks = select_tmin(x)
    assert t < 3.0  # within a factor 3 of the true scale 1
    beta, _ = pareto_mle(x, t)
    assert abs((beta - 1) - 2.0) < 0.1
    assert 0 <= ks < 0.05


def test_select_tmin_requires_samples():
    with pytest.raises(ValueError):
        select_tmin(np.ones(50))


def test_select_tmin_spliced_lognormal_body():
    # Pareto(1.5) tail spliced above a lognormal body at t = 10
    rng = np.random.default_rng(3)
    body = np.exp(rng.normal(1.0, 0.8, 200_000))
    body = body[body < 10.0]
    tail = pareto_draws(rng, 1.5, 10.0, 20_000)
    x = np.concatenate([body, tail])
    t, _ = select_tmin(x)
    assert 5.0 <= t <= 30.0
    beta, _ = pareto_mle(x, t)
    assert abs((beta - 1) - 1.5) < 0.15


def test_select_tmin_scale_equivariance():
    # candidates are order statistics at count-determined positions, so
    # rescaling the sample rescales t_min exactly and fixes alpha_hat
    rng = np.random.default_rng(4)
    x = pareto_draws(rng, 2.0, 1.0, 20_000)
    t1, ks1 = select_tmin(x)
    b1, _ = pareto_mle(x, t1)
    for c in (2.0, 0.125, 37.5):
        t2, ks2 = select_tmin(c * x)
        b2, _ = pareto_mle(c * x, t2)
        assert abs(t2 / t1 - c) < 1e-12 * c
        assert abs(b2 - b1) < 1e-9
        assert abs(ks1 - ks2) < 1e-9


def test_exponential_data_not_powerlaw_preferred():
    rng = np.random.default_rng(5)
    x = rng.exponential(1.0, 100_000)
    t, _ = select_tmin(x)
    stat, p = likelihood_ratio_test(x, t, "pareto", "exponential")
    assert not (stat > 0 and p < 0.1)


# ---------------------------------------------------------------------------
# competitor fits


def test_competitor_constant_samples_degenerate():
    x = np.full(200, 5.0)
    out = competitor_fits(x, 5.0)
    assert math.isnan(out["lognormal"])


def test_competitor_exponential_data_prefers_exponential():
    rng = np.random.default_rng(6)
    x = 1.0 + rng.exponential(0.5, 50_000)
    out = competitor_fits(x, 1.0)
    _, ll_pareto = pareto_mle(x, 1.0)
    assert out["exponential"] > ll_pareto


def test_competitor_lognormal_data_prefers_lognormal():
    rng = np.random.default_rng(7)
    x = np.exp(rng.normal(0.0, 1.0, 50_000))
    t, _ = select_tmin(x)
    out = competitor_fits(x, t)
    _, ll_pareto = pareto_mle(x, t)
    assert out["lognormal"] > ll_pareto
    # and the LRT cannot reject lognormal in favour of the power law
    stat, p = likelihood_ratio_test(x, t, "pareto", "lognormal")
    assert not (stat > 0 and p < 0.05)


# ---------------------------------------------------------------------------
# likelihood ratio test


def test_lrt_identical_models():
    rng = np.random.default_rng(8)
    x = pareto_draws(rng, 2.0, 1.0, 1000)
    stat, p = likelihood_ratio_test(x, 1.0, "pareto", "pareto")
    assert stat == 0.0 and p == 1.0


def test_lrt_pareto_data_rejects_exponential():
    rng = np.random.default_rng(9)
    x = pareto_draws(rng, 1.5, 1.0, 100_000)
    stat, p = likelihood_ratio_test(x, 1.0, "pareto", "exponential")
    assert stat > 0
    assert p < 1e-8


def test_lrt_lognormal_not_rejected_on_lognormal_data():
    rng = np.random.default_rng(10)
    x = np.exp(rng.normal(0.0, 1.0, 10_000))
    t, _ = select_tmin(x)
    stat, p = likelihood_ratio_test(x, t, "pareto", "lognormal")
    assert not (stat > 0 and p < 0.05)


# ---------------------------------------------------------------------------
# bootstrap


def test_bootstrap_ci_contains_truth_large_n():
    rng = np.random.default_rng(11)
    x = pareto_draws(rng, 2.0, 1.0, 100_000)
    lo, hi = bootstrap_ci(x, n_boot=200, seed=0)
    assert hi - lo < 0.1
    assert lo < 2.0 < hi


def test_bootstrap_small_sample_is_wide_and_flagged():
    rng = np.random.default_rng(12)
    x = pareto_draws(rng, 2.0, 1.0, 120)
    rep = fit_tail(x, n_boot=200)
    assert "small_sample" in rep.flags
    lo, hi = rep.ci95
    assert hi - lo > 0.3


def test_bootstrap_duplicated_sample_narrows_ci():
    rng = np.random.default_rng(13)
    x = pareto_draws(rng, 2.0, 1.0, 4000)
    lo1, hi1 = bootstrap_ci(x, n_boot=300, seed=2)
    lo2, hi2 = bootstrap_ci(np.repeat(x, 2), n_boot=300, seed=2)
    ratio = (hi2 - lo2) / (hi1 - lo1)
    assert abs(ratio - 1 / math.sqrt(2)) < 0.15


# ---------------------------------------------------------------------------
# full report


def test_fit_tail_report_fields():
    rng = np.random.default_rng(14)
    x = pareto_draws(rng, 2.0, 1.0, 50_000)
    rep = fit_tail(x, n_boot=100, seed=1)
    assert abs(rep.alpha_hat - 2.0) < 0.1
    assert rep.beta_hat == rep.alpha_hat + 1.0
    assert rep.n_tail >= 50
    assert rep.ci_method == "bootstrap"
    assert set(rep.competitor_loglik) == {"exponential", "lognormal"}
    assert set(rep.lrt_pvalues) == {"pareto_vs_exponential",
                                    "pareto_vs_lognormal"}
    d = rep.to_dict()
    assert d["alpha_hat"] == rep.alpha_hat
    text = rep.to_text()
    assert "alpha_hat" in text and "t_min" in text


def test_fit_tail_asymptotic_for_huge_samples():
    rng = np.random.default_rng(15)
    x = pareto_draws(rng, 2.0, 1.0, 60_000)
    rep = fit_tail(x, ci_method="auto", bootstrap_max_n=50_000)
    assert rep.ci_method == "asymptotic"
    lo, hi = rep.ci95
    assert lo < rep.alpha_hat < hi


@pytest.mark.slow
def test_calibration_across_alphas():
    # |alpha_hat - alpha| < 3 bootstrap SE across a range of exponents
    rng = np.random.default_rng(16)
    for alpha in (0.5, 1.0, 2.0, 4.0):
        x = pareto_draws(rng, alpha, 1.0, 100_000)
        rep = fit_tail(x, n_boot=150, seed=3)
        lo, hi = rep.ci95
        se = (hi - lo) / 3.92
        assert abs(rep.alpha_hat - alpha) < 3 * se + 0.02

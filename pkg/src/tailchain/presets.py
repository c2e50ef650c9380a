"""Experiment presets at pinned hyperparameters.

Every preset pins the hyperparameters its experiment calls for; fields the
source experiments leave unstated are filled with recorded defaults and
listed in `assumed`, which run manifests echo.  `scale` multiplies the
step budget (desk-scale runs of the multi-million-step experiments).

Available presets:

* toy1d              1-d synthetic ridge chain w' = (1 - x^2/2) w + xy/2
* wine_linear        ridge on the Wine Quality CSV (gamma 0.3, lam 4, n 1)
* wine_two_layer     two-layer ReLU net on Wine (gamma 0.025, lam 1e-4)
* fig1_{a,b,c}_sigma{2,12,50}   perturbed GD on the wide-basin objective
* fig3_{a,c}_gamma{0.001,0.01,0.1}  perturbed GD on the multi-basin
                     objective, sigma 10
* regime_bounded     bounded data, |A| <= 1 a.s. (light-tail regime)
* regime_gaussian    Gaussian data (intrinsic heavy-tail regime)
* regime_additive_t3 contracting A with unit-variance t(3) additive noise
  (+ _half variant with A scale halved)
"""

from __future__ import annotations

import os
from typing import Optional

from .config import ConfigError, ExperimentConfig

__all__ = ["preset", "preset_names", "wine_csv_path"]

WINE_ENV = "TAILCHAIN_WINE_CSV"


def wine_csv_path(explicit: Optional[str] = None) -> Optional[str]:
    """Locate the user-supplied Wine Quality CSV (never downloaded)."""
    candidates = [explicit, os.environ.get(WINE_ENV),
                  os.path.join(os.getcwd(), "data", "winequality-white.csv")]
    for c in candidates:
        if c and os.path.exists(c):
            return c
    return None


def _cfg(name, problem, optimizer, chain, analysis, assumed=()):
    return ExperimentConfig(
        problem={k: str(v) for k, v in problem.items()},
        optimizer={k: str(v) for k, v in optimizer.items()},
        chain={k: str(v) for k, v in chain.items()},
        analysis={k: str(v) for k, v in analysis.items()},
        output={},
        name=name,
        assumed=tuple(assumed),
    )


def _toy1d(name="toy1d", n_steps=10_000_000, seed=1):
    return _cfg(
        name,
        problem={"kind": "ridge_synthetic", "d": 1, "m": 1, "lam": 0.0,
                 "batch_size": 1, "source": "gaussian"},
        optimizer={"kind": "linear_recurrence", "gamma": 0.5},
        chain={"seed": seed, "n_steps": n_steps, "w0": "zeros"},
        analysis={"tail_fit": True, "theory": True, "kde": True},
        assumed=("chain.seed", "chain.burn_in"),
    )


def _wine_linear(csv_path, seed=1):
    return _cfg(
        "wine_linear",
        problem={"kind": "ridge_dataset", "csv_path": csv_path,
                 "target_column": "quality", "delimiter": ";",
                 "standardize": True, "lam": 4.0, "batch_size": 1,
                 "replacement": True},
        optimizer={"kind": "linear_recurrence", "gamma": 0.3},
        chain={"seed": seed, "n_steps": 2_500_000, "w0": "normal",
               # tail exponent ~0.45: samples legitimately pass 1e12
               "divergence_threshold": 1e100},
        analysis={"tail_fit": True, "theory": True, "kesten_steps": 12,
                  "ci_method": "asymptotic"},
        assumed=("problem.standardize", "problem.replacement", "chain.seed",
                 "chain.burn_in", "chain.divergence_threshold"),
    )


def _wine_two_layer(csv_path, seed=1):
    # 500 epochs of 4898 instances at batch 1: ~2.45M iterations
    return _cfg(
        "wine_two_layer",
        problem={"kind": "two_layer_dataset", "csv_path": csv_path,
                 "target_column": "quality", "delimiter": ";",
                 "standardize": True, "hidden_units": 4, "lam": 1e-4,
                 "batch_size": 1, "replacement": True},
        optimizer={"kind": "sgd", "gamma": 0.025},
        chain={"seed": seed, "n_steps": 2_449_000, "w0": "normal",
               "w0_scale": 0.5},
        analysis={"tail_fit": True, "ci_method": "asymptotic"},
        assumed=("problem.standardize", "problem.replacement", "chain.seed",
                 "chain.burn_in", "chain.w0", "chain.w0_scale"),
    )


def _fig1(variant, sigma, seed=1):
    return _cfg(
        f"fig1_{variant}_sigma{sigma}",
        problem={"kind": "scalar_objective", "objective": "basin_cos"},
        optimizer={"kind": f"perturbed_gd_{variant}", "gamma": 0.01,
                   "sigma": sigma},
        chain={"seed": seed, "n_steps": 1_000_000, "w0": "-4.75"},
        analysis={"tail_fit": False, "basin": True, "basin_radius": 0.2,
                  "kde": True},
        assumed=("chain.seed", "chain.burn_in", "analysis.basin_radius"),
    )


def _fig3(variant, gamma, seed=1):
    # step sizes unstated in the source experiment; decade grid assumed
    return _cfg(
        f"fig3_{variant}_gamma{gamma}",
        problem={"kind": "scalar_objective", "objective": "factor13_cos"},
        optimizer={"kind": f"perturbed_gd_{variant}", "gamma": gamma,
                   "sigma": 10},
        chain={"seed": seed, "n_steps": 1_000_000, "w0": "zeros"},
        analysis={"tail_fit": False, "kde": True, "basin": True},
        assumed=("optimizer.gamma", "chain.seed", "chain.n_steps",
                 "chain.burn_in"),
    )


def _regime_bounded(seed=1):
    # uniform(-1,1) data, gamma = 1/2: A = 1 - x^2/2 in [1/2, 1]
    return _cfg(
        "regime_bounded",
        problem={"kind": "ridge_synthetic", "d": 1, "m": 1, "lam": 0.0,
                 "batch_size": 1, "source": "uniform", "half_width": 1.0},
        optimizer={"kind": "linear_recurrence", "gamma": 0.5},
        chain={"seed": seed, "n_steps": 1_000_000, "w0": "zeros"},
        analysis={"tail_fit": True, "theory": True,
                  "ci_method": "asymptotic"},
        assumed=("chain.seed", "chain.burn_in"),
    )


def _regime_gaussian(seed=1):
    cfg = _toy1d(name="regime_gaussian", n_steps=1_000_000, seed=seed)
    return cfg


def _regime_additive_t3(half=False, seed=1):
    scale = 0.5 if half else 1.0
    return _cfg(
        "regime_additive_t3_half" if half else "regime_additive_t3",
        problem={"kind": "scalar_chain", "a_family": "uniform",
                 "a_offset": 0.4 * scale, "a_scale": 0.2 * scale,
                 "b_family": "student_t3_unit", "b_scale": 1.0},
        optimizer={"kind": "linear_recurrence", "gamma": 1.0},
        chain={"seed": seed, "n_steps": 1_000_000, "w0": "zeros"},
        analysis={"tail_fit": True, "theory": True,
                  "ci_method": "asymptotic"},
        assumed=("problem.a_family", "problem.a_offset", "problem.a_scale",
                 "chain.seed", "chain.burn_in"),
    )


def preset_names() -> list:
    names = ["toy1d", "wine_linear", "wine_two_layer", "regime_bounded",
             "regime_gaussian", "regime_additive_t3",
             "regime_additive_t3_half"]
    names += [f"fig1_{v}_sigma{s}" for v in "abc" for s in (2, 12, 50)]
    names += [f"fig3_{v}_gamma{g}" for v in "ac"
              for g in ("0.001", "0.01", "0.1")]
    return names


def preset(name: str, scale: float = 1.0, seed: Optional[int] = None,
           wine_csv: Optional[str] = None) -> ExperimentConfig:
    """Fully-pinned config for a named preset.

    scale multiplies n_steps (acceptance runs pin the scale they need);
    seed overrides the default chain seed.  Wine presets require the
    dataset CSV (see wine_csv_path) and fail with ConfigError otherwise.
    """
    s = 1 if seed is None else seed
    if name == "toy1d":
        cfg = _toy1d(seed=s)
    elif name in ("wine_linear", "wine_two_layer"):
        path = wine_csv_path(wine_csv)
        if path is None:
            raise ConfigError(
                "Wine Quality CSV not found: pass a path or set "
                f"${WINE_ENV} (the dataset is never downloaded)")
        cfg = (_wine_linear(path, seed=s) if name == "wine_linear"
               else _wine_two_layer(path, seed=s))
    elif name == "regime_bounded":
        cfg = _regime_bounded(seed=s)
    elif name == "regime_gaussian":
        cfg = _regime_gaussian(seed=s)
    elif name == "regime_additive_t3":
        cfg = _regime_additive_t3(seed=s)
    elif name == "regime_additive_t3_half":
        cfg = _regime_additive_t3(half=True, seed=s)
    elif name.startswith("fig1_"):
        try:
            _, variant, sig = name.split("_")
            sigma = int(sig.removeprefix("sigma"))
            assert variant in "abc" and sigma in (2, 12, 50)
        except (ValueError, AssertionError):
            raise ConfigError(f"unknown preset {name!r}") from None
        cfg = _fig1(variant, sigma, seed=s)
    elif name.startswith("fig3_"):
        try:
            _, variant, g = name.split("_")
            gamma = g.removeprefix("gamma")
            assert variant in "ac" and gamma in ("0.001", "0.01", "0.1")
        except (ValueError, AssertionError):
            raise ConfigError(f"unknown preset {name!r}") from None
        cfg = _fig3(variant, gamma, seed=s)
    else:
        raise ConfigError(f"unknown preset {name!r}; one of {preset_names()}")
    if scale != 1.0:
        if scale <= 0:
            raise ConfigError("scale must be positive")
        n = max(int(int(cfg.chain["n_steps"]) * scale), 10)
        cfg = cfg.with_override("chain.n_steps", n)
    return cfg

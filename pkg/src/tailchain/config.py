"""Experiment configuration: flat INI-style files, validation, fingerprints.

A config has five sections (problem, optimizer, chain, analysis, output)
holding scalar key=value entries only.  Values stay strings inside
ExperimentConfig (round-trip exact); `build_experiment` coerces and
validates everything before any compute and raises ConfigError with a
field-level message otherwise.  The fingerprint hashes the canonical
serialisation of all sections except [output], so field order never
matters and renames of the output directory do not change identity.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import os
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .chain import ChainConfig
from .optimizers import (
    KINDS,
    LinearRecurrenceMap,
    OptimizerSpec,
    build_step_map,
)
from .problems import (
    DataSource,
    DatasetSource,
    GaussianSource,
    RidgeCoeffSampler,
    RidgeProblem,
    ScalarAffineSampler,
    TwoLayerReluProblem,
    UniformSource,
    load_csv_dataset,
    scalar_objective_catalog,
)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "SweepSpec",
    "parse_config",
    "serialize_config",
    "config_fingerprint",
    "build_experiment",
    "SWEEPABLE_FACTORS",
]

SECTIONS = ("problem", "optimizer", "chain", "analysis", "output")

PROBLEM_KINDS = ("ridge_synthetic", "ridge_dataset", "scalar_chain",
                 "scalar_objective", "two_layer_dataset")

SWEEPABLE_FACTORS = (
    "optimizer.gamma",
    "optimizer.eta",
    "optimizer.kind",
    "problem.batch_size",
    "problem.lam",
    "problem.smoothing_eps",
)


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Section key-value maps, values kept as strings."""

    problem: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)
    chain: dict = field(default_factory=dict)
    analysis: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    name: str = "experiment"
    assumed: tuple = ()

    def section(self, name: str) -> dict:
        return getattr(self, name)

    def with_override(self, dotted: str, value) -> "ExperimentConfig":
        sec, key = dotted.split(".", 1)
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section {sec!r}")
        new = dict(self.section(sec))
        new[key] = str(value)
        return replace(self, **{sec: new})


def parse_config(text_or_path, name: Optional[str] = None) -> ExperimentConfig:
    """Parse INI text or a file path into an ExperimentConfig."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    text = text_or_path
    if "\n" not in str(text_or_path) and os.path.exists(text_or_path):
        with open(text_or_path, encoding="utf-8") as fh:
            text = fh.read()
        if name is None:
            name = os.path.splitext(os.path.basename(text_or_path))[0]
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"cannot parse config: {e}") from e
    secs = {}
    for sec in cp.sections():
        if sec == "meta":
            name = cp[sec].get("name", name)
            continue
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
        secs[sec] = dict(cp[sec])
    return ExperimentConfig(name=name or "experiment", **secs)


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical text form: fixed section order, sorted keys."""
    buf = io.StringIO()
    buf.write(f"[meta]\nname = {cfg.name}\n\n")
    for sec in SECTIONS:
        entries = cfg.section(sec)
        if not entries:
            continue
        buf.write(f"[{sec}]\n")
        for k in sorted(entries):
            buf.write(f"{k} = {entries[k]}\n")
        buf.write("\n")
    return buf.getvalue()


def config_fingerprint(cfg: ExperimentConfig) -> str:
    """Hash of the canonical serialisation, [output] excluded."""
    blob = []
    for sec in SECTIONS:
        if sec == "output":
            continue
        for k in sorted(cfg.section(sec)):
            blob.append(f"{sec}.{k}={cfg.section(sec)[k]}")
    return hashlib.sha256(";".join(blob).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# coercion helpers


def _get(section: dict, key: str, conv, default=None, *, where=""):
    if key not in section:
        if default is None:
            raise ConfigError(f"missing {where}.{key}")
        return default
    raw = section[key]
    try:
        if conv is bool:
            low = str(raw).strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return conv(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {where}.{key}: {raw!r}") from None


@dataclass
class Experiment:
    """Everything needed to run: built, validated objects."""

    config: ExperimentConfig
    step_map: object
    w0: np.ndarray
    chain_config: ChainConfig
    n_chains: int
    problem: object
    sampler: object            # LinearCoeffSampler or None
    objective: object          # ScalarObjective or None
    analysis: dict
    fingerprint: str


def _build_source(sec: dict) -> DataSource:
    kind = sec.get("kind")
    if kind == "ridge_synthetic":
        family = sec.get("source", "gaussian")
        d = _get(sec, "d", int, 1, where="problem")
        m = _get(sec, "m", int, 1, where="problem")
        if family == "gaussian":
            return GaussianSource(d, m)
        if family == "uniform":
            hw = _get(sec, "half_width", float, 1.0, where="problem")
            return UniformSource(d, m, half_width=hw)
        raise ConfigError(f"unknown synthetic source {family!r}")
    # dataset-backed
    path = sec.get("csv_path", "")
    if not path:
        raise ConfigError("missing problem.csv_path")
    if not os.path.exists(path):
        raise ConfigError(f"dataset file not found: {path}")
    target = sec.get("target_column", "-1")
    try:
        target = int(target)
    except ValueError:
        pass
    ds = load_csv_dataset(
        path,
        target_columns=target,
        delimiter=sec.get("delimiter", ","),
        standardize=_get(sec, "standardize", bool, True, where="problem"),
        standardize_targets=_get(sec, "standardize_targets", bool, False,
                                 where="problem"),
        smoothing_eps=_get(sec, "smoothing_eps", float, 0.0, where="problem"),
        smoothing_seed=_get(sec, "smoothing_seed", int, 0, where="problem"),
        add_intercept=_get(sec, "add_intercept", bool, False, where="problem"),
    )
    return DatasetSource(
        ds,
        replacement=_get(sec, "replacement", bool, True, where="problem"),
        batch_size=_get(sec, "batch_size", int, 1, where="problem"),
    )


def build_experiment(cfg: ExperimentConfig) -> Experiment:
    """Validate the config and construct all runtime objects.

    Raises ConfigError (never touches the filesystem beyond dataset
    loading, and runs no chains).
    """
    psec, osec, csec = cfg.problem, cfg.optimizer, cfg.chain
    pkind = psec.get("kind")
    if pkind not in PROBLEM_KINDS:
        raise ConfigError(f"problem.kind must be one of {PROBLEM_KINDS}")
    okind = osec.get("kind", "")
    if okind not in KINDS + ("linear_recurrence",):
        raise ConfigError(f"unknown optimizer.kind {okind!r}")

    problem = None
    sampler = None
    objective = None

    if pkind in ("ridge_synthetic", "ridge_dataset"):
        source = _build_source(psec)
        problem = RidgeProblem(
            source,
            lam=_get(psec, "lam", float, 0.0, where="problem"),
            gamma=_get(osec, "gamma", float, where="optimizer"),
            batch_size=_get(psec, "batch_size", int, 1, where="problem"),
        )
        sampler = RidgeCoeffSampler(problem)
        if okind in ("perturbed_gd_a", "perturbed_gd_b", "perturbed_gd_c"):
            raise ConfigError("perturbed GD needs problem.kind = "
                              "scalar_objective")
    elif pkind == "scalar_chain":
        if okind != "linear_recurrence":
            raise ConfigError("scalar_chain supports optimizer.kind = "
                              "linear_recurrence only")
        sampler = ScalarAffineSampler(
            a_family=psec.get("a_family", "normal"),
            a_offset=_get(psec, "a_offset", float, 0.0, where="problem"),
            a_scale=_get(psec, "a_scale", float, 1.0, where="problem"),
            b_family=psec.get("b_family", "normal"),
            b_scale=_get(psec, "b_scale", float, 1.0, where="problem"),
        )
    elif pkind == "scalar_objective":
        objective = scalar_objective_catalog(psec.get("objective", "basin_cos"))
        if okind not in ("perturbed_gd_a", "perturbed_gd_b", "perturbed_gd_c"):
            raise ConfigError("scalar_objective needs a perturbed_gd_* "
                              "optimizer")
    else:  # two_layer_dataset
        source = _build_source(psec)
        problem = TwoLayerReluProblem(
            source,
            hidden_units=_get(psec, "hidden_units", int, 4, where="problem"),
            lam=_get(psec, "lam", float, 0.0, where="problem"),
            gamma=_get(osec, "gamma", float, where="optimizer"),
            batch_size=_get(psec, "batch_size", int, 1, where="problem"),
        )
        if okind in ("newton", "linear_recurrence"):
            raise ConfigError(f"{okind} is not available for two-layer "
                              "problems")

    # optimizer spec / step map
    if okind == "linear_recurrence":
        if sampler is None:
            raise ConfigError("linear_recurrence needs a ridge or "
                              "scalar_chain problem")
        step_map = LinearRecurrenceMap(sampler)
    else:
        spec = OptimizerSpec(
            kind=okind,
            gamma=_get(osec, "gamma", float, where="optimizer"),
            eta=_get(osec, "eta", float, 0.0, where="optimizer"),
            beta1=_get(osec, "beta1", float, 0.9, where="optimizer"),
            beta2=_get(osec, "beta2", float, 0.999, where="optimizer"),
            epsilon=_get(osec, "epsilon", float, 1e-8, where="optimizer"),
            sigma=_get(osec, "sigma", float, 0.0, where="optimizer"),
        )
        target = objective if objective is not None else problem
        try:
            step_map = build_step_map(target, spec)
        except ValueError as e:
            raise ConfigError(str(e)) from e

    # chain config
    n_steps = _get(csec, "n_steps", int, where="chain")
    if n_steps < 1:
        raise ConfigError("chain.n_steps must be positive")
    burn_raw = csec.get("burn_in", "")
    burn_in = int(burn_raw) if str(burn_raw).strip() else None
    try:
        chain_config = ChainConfig(
            seed=_get(csec, "seed", int, 1, where="chain"),
            n_steps=n_steps,
            burn_in=burn_in,
            decimation=_get(csec, "decimation", int, 1, where="chain"),
            record_step_norms=_get(csec, "record_step_norms", bool, True,
                                   where="chain"),
            record_iterates=_get(csec, "record_iterates", bool, True,
                                 where="chain"),
            divergence_threshold=_get(csec, "divergence_threshold", float,
                                      1e12, where="chain"),
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e

    # initial state: w0 describes the *weights*; augmented-state maps embed
    # it with zeroed optimizer accumulators
    needs_init = hasattr(step_map, "init_state")
    wdim = problem.n_params if needs_init else step_map.dim
    w0_raw = csec.get("w0", "zeros").strip()
    w0_scale = _get(csec, "w0_scale", float, 1.0, where="chain")
    if w0_raw == "zeros":
        base = np.zeros(wdim)
    elif w0_raw == "normal":
        rng = np.random.default_rng(chain_config.seed)
        base = w0_scale * rng.standard_normal(wdim)
    else:
        try:
            vals = [float(v) for v in w0_raw.split(",")]
        except ValueError:
            raise ConfigError(f"bad chain.w0: {w0_raw!r}") from None
        if len(vals) not in (1, wdim):
            raise ConfigError(f"chain.w0 needs 1 or {wdim} values")
        base = np.full(wdim, vals[0]) if len(vals) == 1 else np.asarray(vals)
    w0 = step_map.init_state(base) if needs_init else base

    asec = dict(cfg.analysis)
    analysis = {
        "tail_fit": _get(asec, "tail_fit", bool, True, where="analysis"),
        "ci_method": asec.get("ci_method", "auto"),
        "n_boot": _get(asec, "n_boot", int, 1000, where="analysis"),
        "theory": _get(asec, "theory", bool, False, where="analysis"),
        "kesten_steps": _get(asec, "kesten_steps", int, 1, where="analysis"),
        "kesten_n_mc": _get(asec, "kesten_n_mc", int, 200_000,
                            where="analysis"),
        "basin": _get(asec, "basin", bool, False, where="analysis"),
        "basin_radius": _get(asec, "basin_radius", float, 0.2,
                             where="analysis"),
        "kde": _get(asec, "kde", bool, False, where="analysis"),
        "kde_factor": _get(asec, "kde_factor", float, 0.25, where="analysis"),
        "pca": _get(asec, "pca", bool, False, where="analysis"),
        "pca_components": asec.get("pca_components", "1,2,3"),
    }
    if analysis["theory"] and sampler is None:
        raise ConfigError("analysis.theory needs a linear-recurrence problem")
    if analysis["basin"] and objective is None:
        raise ConfigError("analysis.basin needs a scalar_objective problem")

    n_chains = _get(csec, "n_chains", int, 1, where="chain")
    if n_chains < 1:
        raise ConfigError("chain.n_chains must be >= 1")

    return Experiment(
        config=cfg,
        step_map=step_map,
        w0=w0,
        chain_config=chain_config,
        n_chains=n_chains,
        problem=problem,
        sampler=sampler,
        objective=objective,
        analysis=analysis,
        fingerprint=config_fingerprint(cfg),
    )


@dataclass(frozen=True)
class SweepSpec:
    """One varied factor over a base config (everything else fixed)."""

    base: ExperimentConfig
    factor: str
    values: tuple

    def __post_init__(self):
        if self.factor not in SWEEPABLE_FACTORS:
            raise ConfigError(
                f"factor must be one of {SWEEPABLE_FACTORS}, got "
                f"{self.factor!r}")
        if len(self.values) < 1:
            raise ConfigError("sweep needs at least one value")

    def configs(self) -> list:
        out = []
        for v in self.values:
            c = self.base.with_override(self.factor, v)
            out.append(replace(
                c, name=f"{self.base.name}_{self.factor.split('.')[1]}_{v}"))
        return out


def parse_sweep(text_or_path) -> SweepSpec:
    """Parse a config carrying an extra [sweep] section."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    text = text_or_path
    if "\n" not in str(text_or_path) and os.path.exists(text_or_path):
        with open(text_or_path, encoding="utf-8") as fh:
            text = fh.read()
    cp.read_string(text)
    if "sweep" not in cp:
        raise ConfigError("missing [sweep] section")
    factor = cp["sweep"].get("factor", "")
    values = tuple(v.strip() for v in cp["sweep"].get("values", "").split(",")
                   if v.strip())
    cp.remove_section("sweep")
    buf = io.StringIO()
    cp.write(buf)
    base = parse_config(buf.getvalue())
    return SweepSpec(base=base, factor=factor, values=values)

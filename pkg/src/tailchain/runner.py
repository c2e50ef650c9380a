"""Experiment execution: chains, analyses, atomic artifact bundles.

A run writes its outputs into a temp directory next to the target and
renames it into place once the manifest is written, so an interrupted run
never leaves a manifest-bearing partial bundle.  The manifest lists every
file with a sha256 digest, the config fingerprint, and the preset fields
that were assumptions rather than pinned values.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import shutil
import tempfile
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import analysis as ana
from . import traceio
from .chain import run_chain, run_ensemble
from .config import (
    ConfigError,
    Experiment,
    ExperimentConfig,
    SweepSpec,
    build_experiment,
    serialize_config,
)
from .problems import ProductCoeffSampler
from .tailfit import fit_tail
from .theory import ergodicity_diagnostic, kesten_solve

__all__ = ["AnalysisError", "ExperimentResult", "run_experiment",
           "run_sweep", "SweepResult"]


class AnalysisError(RuntimeError):
    """A requested analysis could not be completed (CLI exit code 4)."""


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    bundle_dir: Optional[str]
    fingerprint: str
    traces: list
    diverged: bool
    reports: dict = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        return 3 if self.diverged else 0


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if math.isnan(o) if isinstance(o, float) else False:
        return None
    raise TypeError(f"not serialisable: {type(o)}")


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, default=_json_default)
        fh.write("\n")


_PLOT_SCRIPT = """\
#!/usr/bin/env python3
# Companion plot script (generated): density of {what}.
# Reads {csv} from its own directory; requires matplotlib.
import csv as _csv
import os
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
xs, ys = [], []
with open(os.path.join(here, "{csv}")) as fh:
    for row in _csv.reader(fh):
        if row and not row[0].startswith("#"):
            xs.append(float(row[0])); ys.append(float(row[1]))
plt.plot(xs, ys)
plt.xlabel("{what}")
plt.ylabel("density")
plt.title("{title}")
plt.savefig(os.path.join(here, "density.png"), dpi=150)
print("wrote density.png")
"""


def _run_chains(exp: Experiment):
    if exp.n_chains == 1:
        return [run_chain(exp.step_map, exp.w0, exp.chain_config)]
    return run_ensemble(exp.step_map, exp.w0, exp.chain_config, exp.n_chains)


def _analyses(exp: Experiment, traces) -> dict:
    reports = {}
    req = exp.analysis
    pooled_norms = (np.concatenate([t.step_norms for t in traces])
                    if traces[0].step_norms.size else np.empty(0))

    if req["tail_fit"]:
        if pooled_norms.size < 100:
            raise AnalysisError("tail fit needs >= 100 recorded step norms")
        reports["tailfit"] = fit_tail(pooled_norms,
                                      ci_method=req["ci_method"],
                                      n_boot=req["n_boot"])

    if req["theory"]:
        sampler = exp.sampler
        if req["kesten_steps"] > 1:
            sampler = ProductCoeffSampler(sampler, req["kesten_steps"])
        n_mc = req["kesten_n_mc"]
        erg = ergodicity_diagnostic(exp.sampler, n_mc=min(n_mc, 100_000),
                                    rng=exp.chain_config.seed + 101)
        kes = kesten_solve(sampler, n_mc=n_mc,
                           rng=exp.chain_config.seed + 202)
        reports["theory"] = {
            "ergodicity": erg.to_dict(),
            "kesten": kes.to_dict(),
            "kesten_steps": req["kesten_steps"],
        }

    if req["basin"]:
        per_chain = [ana.basin_stats(t, exp.objective, req["basin_radius"])
                     for t in traces]
        sizes = np.array([t.iterates.shape[0] for t in traces], dtype=float)
        wts = sizes / sizes.sum()
        pooled = {
            "occupancy": np.sum([w * b.occupancy for w, b
                                 in zip(wts, per_chain)], axis=0).tolist(),
            "hop_count": int(sum(b.hop_count for b in per_chain)),
            "near_critical_mass": float(sum(w * b.near_critical_mass
                                            for w, b in zip(wts, per_chain))),
            "radius": req["basin_radius"],
            "critical_points": per_chain[0].critical_points.tolist(),
            "critical_labels": list(per_chain[0].critical_labels),
        }
        reports["basin"] = pooled

    if req["kde"]:
        if traces[0].dim == 1 and traces[0].iterates.size:
            samples = np.concatenate([t.iterates[:, 0] for t in traces])
            what = "weights"
        else:
            samples = pooled_norms
            what = "step_norms"
        if samples.size:
            bw = ana.silverman_bandwidth(samples, factor=req["kde_factor"])
            reports["kde"] = ana.kde_1d(samples, bandwidth=bw)
            reports["kde_what"] = what

    if req["pca"] and traces[0].dim > 1:
        comps = tuple(int(c) for c in str(req["pca_components"]).split(","))
        reports["pca"] = ana.pca_project(traces, comps)

    return reports


def _write_bundle(exp: Experiment, traces, reports, out_dir: str) -> str:
    parent = os.path.dirname(os.path.abspath(out_dir)) or "."
    os.makedirs(parent, exist_ok=True)
    final = os.path.abspath(out_dir)
    if os.path.exists(final):
        raise AnalysisError(f"output bundle already exists: {final}")
    tmp = tempfile.mkdtemp(prefix=".bundle-", dir=parent)
    try:
        files = []

        def put(name):
            files.append(name)
            return os.path.join(tmp, name)

        with open(put("config.cfg"), "w", encoding="utf-8") as fh:
            fh.write(serialize_config(exp.config))

        for i, t in enumerate(traces):
            if t.step_norms.size:
                traceio.save_step_norms(t, put(f"stepnorms_{i:03d}.txt"))
            if t.iterates.size and t.iterates.shape[0] <= 200_000:
                traceio.save_iterates(t, put(f"iterates_{i:03d}.csv"))

        if "tailfit" in reports:
            rep = reports["tailfit"]
            _write_json(os.path.join(tmp, "tailfit.json"), rep.to_dict())
            files.append("tailfit.json")
            with open(put("tailfit.txt"), "w", encoding="utf-8") as fh:
                fh.write(rep.to_text() + "\n")
        if "theory" in reports:
            _write_json(put("theory.json"), reports["theory"])
        if "basin" in reports:
            _write_json(put("basin.json"), reports["basin"])
        if "kde" in reports:
            kde = reports["kde"]
            with open(put("kde.csv"), "w", encoding="utf-8") as fh:
                fh.write(f"# bandwidth={kde.bandwidth!r}\n")
                for x, y in zip(kde.grid, kde.density):
                    fh.write(f"{x:.12g},{y:.12g}\n")
            with open(put("plot_density.py"), "w", encoding="utf-8") as fh:
                fh.write(_PLOT_SCRIPT.format(
                    csv="kde.csv", what=reports.get("kde_what", "weights"),
                    title=exp.config.name))
        if "pca" in reports:
            pca = reports["pca"]
            with open(put("pca_scores.csv"), "w", encoding="utf-8") as fh:
                fh.write("# components=" +
                         ",".join(map(str, pca.component_indices)) + "\n")
                np.savetxt(fh, pca.scores, fmt="%.12g", delimiter=",")

        diverged = any(t.diverged for t in traces)
        if diverged:
            _write_json(put("divergence.json"), [
                {"chain": i, "truncated_at": t.truncated_at}
                for i, t in enumerate(traces) if t.diverged])

        manifest = {
            "name": exp.config.name,
            "fingerprint": exp.fingerprint,
            "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
            "assumed": list(exp.config.assumed),
            "diverged": diverged,
            "files": {f: _sha256(os.path.join(tmp, f)) for f in sorted(files)},
        }
        _write_json(os.path.join(tmp, "manifest.json"), manifest)
        os.replace(tmp, final)
        return final
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def run_experiment(cfg: ExperimentConfig, out_dir: Optional[str] = None,
                   write: bool = True) -> ExperimentResult:
    """Run the configured chains and analyses; write the bundle atomically.

    Config problems raise ConfigError before any compute.  Divergence does
    not raise: the result carries the flag (and a partial bundle with a
    divergence report).  out_dir=None with write=True places the bundle
    under $TAILCHAIN_OUT (default ./runs).
    """
    exp = build_experiment(cfg)
    traces = _run_chains(exp)
    diverged = any(t.diverged for t in traces)
    reports = {}
    if not diverged:
        reports = _analyses(exp, traces)
    bundle = None
    if write:
        if out_dir is None:
            root = cfg.output.get("dir") or os.environ.get(
                "TAILCHAIN_OUT", "runs")
            out_dir = os.path.join(root, f"{cfg.name}-{exp.fingerprint[:8]}")
        bundle = _write_bundle(exp, traces, reports, out_dir)
    return ExperimentResult(cfg, bundle, exp.fingerprint, traces,
                            diverged, reports)


@dataclass
class SweepResult:
    spec: SweepSpec
    rows: list                  # dicts: value, alpha_hat, ci, n_tail, ...
    results: list
    table_path: Optional[str]

    @property
    def exit_code(self) -> int:
        return max((r.exit_code for r in self.results), default=0)


def run_sweep(spec: SweepSpec, out_root: Optional[str] = None,
              jobs: int = 1) -> SweepResult:
    """One experiment per factor value; consolidated CSV like a sweep table."""
    configs = spec.configs()
    if out_root is None:
        out_root = os.environ.get("TAILCHAIN_OUT", "runs")

    def one(cfg):
        sub = os.path.join(out_root, cfg.name)
        return run_experiment(cfg, out_dir=sub)

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(one, configs))
    else:
        results = [one(c) for c in configs]

    rows = []
    for cfg, res, value in zip(configs, results, spec.values):
        row = {"factor": spec.factor, "value": value,
               "diverged": res.diverged}
        rep = res.reports.get("tailfit")
        if rep is not None:
            row.update(alpha_hat=rep.alpha_hat, ci_low=rep.ci95[0],
                       ci_high=rep.ci95[1], n_tail=rep.n_tail,
                       t_min=rep.t_min)
        rows.append(row)

    os.makedirs(out_root, exist_ok=True)
    table = os.path.join(out_root, f"sweep_{spec.base.name}.csv")
    cols = ["factor", "value", "alpha_hat", "ci_low", "ci_high", "n_tail",
            "t_min", "diverged"]
    with open(table, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(str(row.get(c, "")) for c in cols) + "\n")
    return SweepResult(spec, rows, results, table)

"""Trace persistence: step-norm files and iterate CSV dumps.

Step-norm files carry `# key=value` header rows (fingerprint, n_steps,
burn_in, seed) followed by one decimal-text float per line with 12
significant digits.  Iterate dumps are plain CSV with the same header
style.
"""

from __future__ import annotations

import numpy as np

from .chain import ChainTrace

__all__ = [
    "save_step_norms",
    "load_step_norms",
    "save_iterates",
]


def _header_lines(trace: ChainTrace) -> list:
    return [
        f"# fingerprint={trace.config_fingerprint}",
        f"# n_steps={trace.n_steps}",
        f"# burn_in={trace.burn_in}",
        f"# seed={trace.seed}",
        f"# diverged={int(trace.diverged)}",
    ]


def save_step_norms(trace: ChainTrace, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in _header_lines(trace):
            fh.write(line + "\n")
        np.savetxt(fh, trace.step_norms, fmt="%.12g")


def load_step_norms(path) -> tuple:
    """(samples, meta) from a step-norm file; meta maps header keys."""
    meta = {}
    with open(path, encoding="utf-8") as fh:
        pos = fh.tell()
        while True:
            line = fh.readline()
            if not line.startswith("#"):
                fh.seek(pos)
                break
            pos = fh.tell()
            body = line[1:].strip()
            if "=" in body:
                k, v = body.split("=", 1)
                meta[k.strip()] = v.strip()
        samples = np.loadtxt(fh, ndmin=1)
    return samples, meta


def save_iterates(trace: ChainTrace, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in _header_lines(trace):
            fh.write(line + "\n")
        fh.write(f"# decimation={trace.decimation}\n")
        np.savetxt(fh, trace.iterates, fmt="%.12g", delimiter=",")

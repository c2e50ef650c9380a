"""Loss models and data sources.

Three problem families:

* ridge regression, whose minibatch SGD step is exactly a random linear
  recurrence w' = A w + B with A = I_m (x) ((1-lam*gamma) I_d -
  gamma/n * sum x x^T) and B = gamma/n * sum y (x) x (Kronecker products,
  row-major vectorisation of the m-by-d weight matrix);
* 1-d synthetic non-convex objectives with analytic derivatives and
  labelled critical points;
* a small two-layer ReLU regression network with hand-written gradients.

Data enters through DataSource objects: a finite Dataset (with or without
replacement) or an endless synthetic sampler.  Sources draw from
counter-based chain streams inside runs and from plain Generators inside
theory Monte Carlo, so coupled step maps (explicit SGD vs. the linear
recurrence) see identical minibatches.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize

from .chain import ChainStreams

__all__ = [
    "Dataset",
    "DatasetError",
    "load_csv_dataset",
    "DataSource",
    "DatasetSource",
    "GaussianSource",
    "UniformSource",
    "RidgeProblem",
    "ridge_closed_form",
    "LinearCoeffSampler",
    "RidgeCoeffSampler",
    "ScalarAffineSampler",
    "ProductCoeffSampler",
    "sample_linear_coeffs",
    "ScalarObjective",
    "scalar_objective_catalog",
    "TwoLayerReluProblem",
    "two_layer_grad",
]


class DatasetError(ValueError):
    """Raised for unusable data files or malformed datasets."""


@dataclass(frozen=True)
class Dataset:
    """Immutable (inputs, targets) pair; rows are instances."""

    inputs: np.ndarray
    targets: np.ndarray
    name: str = "dataset"

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.targets, dtype=np.float64)
        if y.ndim == 1:
            y = y[:, None]
        if x.ndim != 2 or y.ndim != 2:
            raise DatasetError("inputs and targets must be 2-d")
        if x.shape[0] != y.shape[0]:
            raise DatasetError(
                f"row mismatch: {x.shape[0]} inputs vs {y.shape[0]} targets"
            )
        if not (np.isfinite(x).all() and np.isfinite(y).all()):
            raise DatasetError("non-finite entries in dataset")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)

    @property
    def n_instances(self) -> int:
        return self.inputs.shape[0]

    @property
    def d(self) -> int:
        return self.inputs.shape[1]

    @property
    def m(self) -> int:
        return self.targets.shape[1]


def _looks_numeric(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def load_csv_dataset(
    path,
    target_columns: Sequence[int] | Sequence[str] | int | str = -1,
    delimiter: str = ",",
    standardize: bool = False,
    standardize_targets: bool = False,
    smoothing_eps: float = 0.0,
    smoothing_seed: int = 0,
    add_intercept: bool = False,
    name: Optional[str] = None,
) -> Dataset:
    """Load a numeric CSV into a Dataset.

    The header row is auto-detected (any non-numeric cell in the first row).
    target_columns picks targets by index or by header name; the rest become
    inputs.  standardize rescales each input column to zero mean / unit
    variance.  smoothing_eps > 0 adds one-shot N(0, eps^2) noise to the
    inputs at load time.  add_intercept appends a constant-1 input column
    (after standardization).
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh, delimiter=delimiter))
    except OSError as e:
        raise DatasetError(f"cannot read {path}: {e}") from e
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise DatasetError(f"{path}: empty file")

    header = None
    if any(not _looks_numeric(c) for c in rows[0]):
        header = [c.strip() for c in rows[0]]
        rows = rows[1:]
        if not rows:
            raise DatasetError(f"{path}: header but no data rows")

    ncol = len(rows[0])
    data = np.empty((len(rows), ncol))
    for i, row in enumerate(rows):
        if len(row) != ncol:
            raise DatasetError(
                f"{path}: row {i + 1} has {len(row)} cells, expected {ncol}"
            )
        for j, cell in enumerate(row):
            try:
                data[i, j] = float(cell)
            except ValueError:
                raise DatasetError(
                    f"{path}: non-numeric cell at row {i + 1}, column {j + 1}: "
                    f"{cell!r}"
                ) from None
    if not np.isfinite(data).all():
        raise DatasetError(f"{path}: non-finite value in data")

    if isinstance(target_columns, (int, str)):
        target_columns = [target_columns]
    tcols = []
    for c in target_columns:
        if isinstance(c, str):
            if header is None or c not in header:
                raise DatasetError(f"{path}: no column named {c!r}")
            tcols.append(header.index(c))
        else:
            tcols.append(c % ncol)
    icols = [j for j in range(ncol) if j not in tcols]
    if not icols:
        raise DatasetError("no input columns left")

    x = data[:, icols]
    y = data[:, tcols]
    if smoothing_eps > 0:
        rng = np.random.default_rng(smoothing_seed)
        x = x + smoothing_eps * rng.standard_normal(x.shape)
    if standardize:
        mu = x.mean(axis=0)
        sd = x.std(axis=0)
        if np.any(sd == 0):
            raise DatasetError("constant input column cannot be standardized")
        x = (x - mu) / sd
    if standardize_targets:
        sd = y.std(axis=0)
        if np.any(sd == 0):
            raise DatasetError("constant target column cannot be standardized")
        y = (y - y.mean(axis=0)) / sd
    if add_intercept:
        x = np.hstack([x, np.ones((x.shape[0], 1))])
    return Dataset(x, y, name=name or str(path))


# ---------------------------------------------------------------------------
# data sources


class DataSource:
    """Minibatch supplier.  d/m give feature/target widths."""

    d: int
    m: int
    n_instances: Optional[int] = None  # None = endless synthetic stream

    def batch(self, k: int, streams: ChainStreams, n: int):
        """(X, Y) minibatch for step k, drawn from the step-k stream."""
        raise NotImplementedError

    def batch_block(self, k0: int, nb: int, streams: ChainStreams, n: int):
        """(X, Y) for nb consecutive steps: shapes (nb, n, d), (nb, n, m)."""
        raise NotImplementedError

    def draw(self, rng: np.random.Generator, n: int):
        """(X, Y) minibatch from a plain Generator (theory Monte Carlo)."""
        raise NotImplementedError

    def draw_many(self, rng: np.random.Generator, n: int, size: int):
        """size independent minibatches: shapes (size, n, d), (size, n, m)."""
        xs, ys = zip(*(self.draw(rng, n) for _ in range(size)))
        return np.stack(xs), np.stack(ys)

    def second_moments(self):
        """(E[x x^T], E[y x^T]) under the source distribution."""
        raise NotImplementedError

    def fingerprint_fields(self) -> dict:
        return {"source": type(self).__name__, "d": self.d, "m": self.m}


def _indices_from_uniform(u: np.ndarray, count: int) -> np.ndarray:
    # uniforms -> indices with fixed stream consumption (one double each)
    return np.minimum((u * count).astype(np.int64), count - 1)


class DatasetSource(DataSource):
    """Finite dataset; with replacement (iid rows) or epoch shuffling."""

    def __init__(self, dataset: Dataset, replacement: bool = True,
                 batch_size: int = 1):
        if batch_size < 1 or batch_size > dataset.n_instances:
            raise ValueError("batch_size must be in [1, n_instances]")
        self.dataset = dataset
        self.replacement = replacement
        self.batch_size = batch_size
        self.d = dataset.d
        self.m = dataset.m
        self.n_instances = dataset.n_instances

    @property
    def batches_per_epoch(self) -> int:
        return self.dataset.n_instances // self.batch_size

    def _epoch_perm(self, streams: ChainStreams, epoch: int) -> np.ndarray:
        return _cached_perm(streams.key, epoch, self.dataset.n_instances)

    def indices(self, k: int, streams: ChainStreams, n: int) -> np.ndarray:
        if self.replacement:
            u = streams.step_rng(k).random(n)
            return _indices_from_uniform(u, self.dataset.n_instances)
        s = self.batches_per_epoch
        epoch, pos = divmod(k, s)
        perm = self._epoch_perm(streams, epoch)
        return perm[pos * n:(pos + 1) * n]

    def indices_block(self, k0: int, nb: int, streams: ChainStreams,
                      n: int) -> np.ndarray:
        if self.replacement:
            u = streams.block_rng(k0).random((nb, n))
            return _indices_from_uniform(u, self.dataset.n_instances)
        return np.stack([self.indices(k0 + i, streams, n) for i in range(nb)])

    def batch(self, k, streams, n):
        idx = self.indices(k, streams, n)
        return self.dataset.inputs[idx], self.dataset.targets[idx]

    def batch_block(self, k0, nb, streams, n):
        idx = self.indices_block(k0, nb, streams, n)
        return self.dataset.inputs[idx], self.dataset.targets[idx]

    def draw(self, rng, n):
        idx = _indices_from_uniform(rng.random(n), self.dataset.n_instances)
        return self.dataset.inputs[idx], self.dataset.targets[idx]

    def draw_many(self, rng, n, size):
        idx = _indices_from_uniform(rng.random((size, n)),
                                    self.dataset.n_instances)
        return self.dataset.inputs[idx], self.dataset.targets[idx]

    def second_moments(self):
        x, y = self.dataset.inputs, self.dataset.targets
        n = x.shape[0]
        return x.T @ x / n, y.T @ x / n

    def fingerprint_fields(self):
        f = super().fingerprint_fields()
        f.update(
            dataset=self.dataset.name,
            n_instances=self.dataset.n_instances,
            replacement=self.replacement,
        )
        return f


@lru_cache(maxsize=8)
def _cached_perm(key: int, epoch: int, n: int) -> np.ndarray:
    # Deterministic in (chain key, epoch); the cache is pure memoisation.
    return ChainStreams.from_key(key).aux_rng(epoch).permutation(n)


class GaussianSource(DataSource):
    """Endless iid standard-normal (x, y) pairs ("infinite data")."""

    def __init__(self, d: int = 1, m: int = 1):
        self.d = d
        self.m = m

    def batch(self, k, streams, n):
        z = streams.step_rng(k).standard_normal((n, self.d + self.m))
        return z[:, :self.d], z[:, self.d:]

    def batch_block(self, k0, nb, streams, n):
        z = streams.block_rng(k0).standard_normal((nb, n, self.d + self.m))
        return z[..., :self.d], z[..., self.d:]

    def draw(self, rng, n):
        z = rng.standard_normal((n, self.d + self.m))
        return z[:, :self.d], z[:, self.d:]

    def draw_many(self, rng, n, size):
        z = rng.standard_normal((size, n, self.d + self.m))
        return z[..., :self.d], z[..., self.d:]

    def second_moments(self):
        return np.eye(self.d), np.zeros((self.m, self.d))


class UniformSource(DataSource):
    """Endless iid uniform(-half_width, half_width) pairs (bounded data)."""

    def __init__(self, d: int = 1, m: int = 1, half_width: float = 1.0):
        self.d = d
        self.m = m
        self.half_width = float(half_width)

    def _scale(self, u):
        return (2.0 * u - 1.0) * self.half_width

    def batch(self, k, streams, n):
        u = streams.step_rng(k).random((n, self.d + self.m))
        z = self._scale(u)
        return z[:, :self.d], z[:, self.d:]

    def batch_block(self, k0, nb, streams, n):
        u = streams.block_rng(k0).random((nb, n, self.d + self.m))
        z = self._scale(u)
        return z[..., :self.d], z[..., self.d:]

    def draw(self, rng, n):
        z = self._scale(rng.random((n, self.d + self.m)))
        return z[:, :self.d], z[:, self.d:]

    def draw_many(self, rng, n, size):
        z = self._scale(rng.random((size, n, self.d + self.m)))
        return z[..., :self.d], z[..., self.d:]

    def second_moments(self):
        return np.eye(self.d) * self.half_width**2 / 3.0, np.zeros((self.m, self.d))

    def fingerprint_fields(self):
        f = super().fingerprint_fields()
        f["half_width"] = self.half_width
        return f


# ---------------------------------------------------------------------------
# ridge regression


@dataclass
class RidgeProblem:
    """Least squares with L2 penalty: (1/2n) sum |y - M x|^2 + lam/2 |M|_F^2.

    The weight matrix M (m-by-d) is handled in row-major vectorised form, so
    the parameter vector has length d*m and the SGD step matches the
    Kronecker-product recurrence coefficients exactly.
    """

    source: DataSource
    lam: float = 0.0
    gamma: float = 0.1
    batch_size: int = 1

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if (self.source.n_instances is not None
                and self.batch_size > self.source.n_instances):
            raise ValueError("batch_size exceeds dataset size")

    @property
    def d(self) -> int:
        return self.source.d

    @property
    def m(self) -> int:
        return self.source.m

    @property
    def n_params(self) -> int:
        return self.d * self.m

    def unvec(self, w: np.ndarray) -> np.ndarray:
        return w.reshape(self.m, self.d)

    def batch_grad(self, w: np.ndarray, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """Gradient of the minibatch ridge loss at w (vectorised M)."""
        M = self.unvec(w)
        R = X @ M.T - Y          # (n, m) residuals
        G = R.T @ X / X.shape[0] + self.lam * M
        return G.ravel()

    def full_grad(self, w: np.ndarray) -> np.ndarray:
        Sxx, Syx = self.source.second_moments()
        M = self.unvec(w)
        return (M @ (Sxx + self.lam * np.eye(self.d)) - Syx).ravel()

    def fingerprint_fields(self) -> dict:
        f = {"problem": "ridge", "lam": self.lam, "gamma": self.gamma,
             "batch_size": self.batch_size}
        f.update(self.source.fingerprint_fields())
        return f


def ridge_closed_form(p: RidgeProblem) -> np.ndarray:
    """Exact minimiser M* = E[y x^T] (E[x x^T] + lam I)^{-1} (m-by-d)."""
    Sxx, Syx = p.source.second_moments()
    A = Sxx + p.lam * np.eye(p.d)
    try:
        return np.linalg.solve(A.T, Syx.T).T
    except np.linalg.LinAlgError as e:
        raise np.linalg.LinAlgError(
            "E[x x^T] + lam I is singular (lam = 0 with rank-deficient data)"
        ) from e


# ---------------------------------------------------------------------------
# linear recurrence coefficients


class LinearCoeffSampler:
    """Generator of (A, B) pairs for a random linear recurrence w' = A w + B.

    dim is the state dimension; scalar samplers return shape-() A/B arrays
    from `sample` with size=None and 1-d arrays in batches.
    """

    dim: int

    def sample(self, rng: np.random.Generator, size: Optional[int] = None):
        raise NotImplementedError

    def sample_block(self, k0: int, nb: int, streams: ChainStreams):
        """(A, B) arrays for steps k0..k0+nb-1 from the block stream."""
        raise NotImplementedError

    def fingerprint_fields(self) -> dict:
        return {"coeff_sampler": type(self).__name__, "dim": self.dim}


class RidgeCoeffSampler(LinearCoeffSampler):
    """Exact minibatch-SGD coefficients for a ridge problem.

    A = I_m (x) ((1 - lam*gamma) I_d - gamma/n sum_i x_i x_i^T),
    B = gamma/n sum_i y_i (x) x_i.
    """

    def __init__(self, problem: RidgeProblem):
        self.problem = problem
        self.dim = problem.n_params

    def _from_batch(self, X: np.ndarray, Y: np.ndarray):
        p = self.problem
        n = X.shape[0]
        C = (1.0 - p.lam * p.gamma) * np.eye(p.d) - (p.gamma / n) * (X.T @ X)
        A = np.kron(np.eye(p.m), C)
        B = (p.gamma / n) * (Y.T @ X).ravel()
        if p.d == 1 and p.m == 1:
            return A[0, 0], B[0]
        return A, B

    def _from_batches(self, X: np.ndarray, Y: np.ndarray):
        """Vectorised coefficients from stacked batches (size, n, d/m)."""
        p = self.problem
        size = X.shape[0]
        n = p.batch_size
        if p.d == 1 and p.m == 1:
            # scalar fast path: A = 1 - lam*g - g/n sum x^2, B = g/n sum x y
            g = p.gamma / n
            a = (1.0 - p.lam * p.gamma) - g * np.einsum("knd->k", X**2)
            b = g * np.einsum("knd,kne->k", X, Y)
            return a, b
        C = ((1.0 - p.lam * p.gamma) * np.eye(p.d)
             - (p.gamma / n) * np.einsum("kni,knj->kij", X, X))
        A = np.einsum("ab,kij->kaibj", np.eye(p.m), C).reshape(
            size, self.dim, self.dim)
        B = (p.gamma / n) * np.einsum("kna,kni->kai", Y, X).reshape(
            size, self.dim)
        return A, B

    def sample(self, rng, size=None):
        p = self.problem
        if size is None:
            return self._from_batch(*p.source.draw(rng, p.batch_size))
        return self._from_batches(*p.source.draw_many(rng, p.batch_size, size))

    def sample_block(self, k0, nb, streams):
        p = self.problem
        X, Y = p.source.batch_block(k0, nb, streams, p.batch_size)
        return self._from_batches(X, Y)

    def fingerprint_fields(self):
        f = super().fingerprint_fields()
        f.update(self.problem.fingerprint_fields())
        return f


def sample_linear_coeffs(sampler: LinearCoeffSampler, rng: np.random.Generator):
    """Draw one (A, B) pair from the sampler."""
    return sampler.sample(rng)


_NOISE_FAMILIES: dict[str, Callable] = {
    "normal": lambda rng, size, scale: scale * rng.standard_normal(size),
    "uniform": lambda rng, size, scale: scale * (2 * rng.random(size) - 1),
    "constant": lambda rng, size, scale: np.full(size if size else (), scale),
    # Student t(3) scaled to unit variance via ratio of a Gaussian and a
    # chi-square draw (variance of t(3) is 3)
    "student_t3_unit": lambda rng, size, scale: scale
    * rng.standard_normal(size)
    / np.sqrt(rng.chisquare(3, size) / 3.0)
    / math.sqrt(3.0),
}


class ScalarAffineSampler(LinearCoeffSampler):
    """Scalar recurrence w' = a w + b with named noise families.

    a = a_offset + a_scale * xi_a and b = b_scale * xi_b, with xi drawn from
    the named families.  Used for the tail-regime scenario chains.
    """

    dim = 1

    def __init__(self, a_family: str = "normal", a_offset: float = 0.0,
                 a_scale: float = 1.0, b_family: str = "normal",
                 b_scale: float = 1.0):
        for fam in (a_family, b_family):
            if fam not in _NOISE_FAMILIES:
                raise ValueError(f"unknown noise family {fam!r}")
        self.a_family = a_family
        self.a_offset = float(a_offset)
        self.a_scale = float(a_scale)
        self.b_family = b_family
        self.b_scale = float(b_scale)

    def _draw(self, rng, size):
        a = self.a_offset + _NOISE_FAMILIES[self.a_family](rng, size, self.a_scale)
        b = _NOISE_FAMILIES[self.b_family](rng, size, self.b_scale)
        return a, b

    def sample(self, rng, size=None):
        return self._draw(rng, size)

    def sample_block(self, k0, nb, streams):
        return self._draw(streams.block_rng(k0), nb)

    def fingerprint_fields(self):
        return {
            "coeff_sampler": "ScalarAffineSampler",
            "a_family": self.a_family,
            "a_offset": self.a_offset,
            "a_scale": self.a_scale,
            "b_family": self.b_family,
            "b_scale": self.b_scale,
        }


class ProductCoeffSampler(LinearCoeffSampler):
    """Coefficients of the stride-s super-chain: s composed steps.

    W_{k+s} = A^(s) W_k + B^(s) with A^(s) = A_{s-1} ... A_0 and
    B^(s) = sum_l A_{s-1} ... A_{l+1} B_l.  Draws s base pairs per sample.
    """

    def __init__(self, base: LinearCoeffSampler, steps: int):
        if steps < 1:
            raise ValueError("steps must be >= 1")
        self.base = base
        self.steps = steps
        self.dim = base.dim

    def _compose(self, pairs):
        A_tot, B_tot = None, None
        for A, B in pairs:
            if A_tot is None:
                A_tot, B_tot = A, B
            else:
                A_tot = A @ A_tot if self.dim > 1 else A * A_tot
                B_tot = (A @ B_tot if self.dim > 1 else A * B_tot) + B
        return A_tot, B_tot

    def sample(self, rng, size=None):
        if size is None:
            return self._compose(self.base.sample(rng) for _ in range(self.steps))
        # batched composition: draw steps*size base pairs, fold step by step
        A, B = self.base.sample(rng, self.steps * size)
        A = A.reshape(self.steps, size, *A.shape[1:])
        B = B.reshape(self.steps, size, *B.shape[1:])
        A_tot, B_tot = A[0], B[0]
        for l in range(1, self.steps):
            if self.dim > 1:
                B_tot = np.einsum("kij,kj->ki", A[l], B_tot) + B[l]
                A_tot = A[l] @ A_tot
            else:
                B_tot = A[l] * B_tot + B[l]
                A_tot = A[l] * A_tot
        return A_tot, B_tot

    def fingerprint_fields(self):
        f = self.base.fingerprint_fields()
        f.update(coeff_sampler="ProductCoeffSampler", steps=self.steps)
        return f


# ---------------------------------------------------------------------------
# 1-d synthetic objectives


@dataclass(frozen=True)
class ScalarObjective:
    """1-d objective with analytic derivative and labelled critical points."""

    name: str
    f: Callable[[float], float]
    f_prime: Callable[[float], float]
    critical_points: np.ndarray = field(default_factory=lambda: np.empty(0))
    critical_labels: tuple = ()

    def fingerprint_fields(self) -> dict:
        return {"objective": self.name}


def _find_critical_points(f_prime, lo: float, hi: float, n_scan: int = 4001):
    xs = np.linspace(lo, hi, n_scan)
    vals = np.array([f_prime(x) for x in xs])
    points, labels = [], []
    for i in range(len(xs) - 1):
        a, b = vals[i], vals[i + 1]
        if a == 0.0:
            r = xs[i]
        elif a * b < 0:
            r = optimize.brentq(f_prime, xs[i], xs[i + 1], xtol=1e-12)
        else:
            continue
        # f' rising through zero marks a minimum
        labels.append("min" if a < b else "max")
        points.append(r)
    return np.array(points), tuple(labels)


def scalar_objective_catalog(name: str, window: float = 12.0) -> ScalarObjective:
    """Named 1-d objectives.

    basin_cos: f(x) = x^2/10 + 1 - cos(x^2), a wide global minimum at zero
    surrounded by increasingly tight basins.
    factor13_cos: f with derivative f'(x) = x (1 - 4 cos(2x)), strongly
    multimodal with basins of similar width.
    Critical points are located numerically on [-window, window].
    """
    if name == "basin_cos":
        f = lambda x: x * x / 10.0 + 1.0 - np.cos(x * x)
        fp = lambda x: x / 5.0 + 2.0 * x * np.sin(x * x)
    elif name == "factor13_cos":
        f = lambda x: x * x / 2.0 - 2.0 * x * np.sin(2.0 * x) - np.cos(2.0 * x) + 1.0
        fp = lambda x: x * (1.0 - 4.0 * np.cos(2.0 * x))
    else:
        raise ValueError(f"unknown objective {name!r}")
    pts, labels = _find_critical_points(fp, -window, window)
    return ScalarObjective(name=name, f=f, f_prime=fp,
                           critical_points=pts, critical_labels=labels)


# ---------------------------------------------------------------------------
# two-layer ReLU network


@dataclass
class TwoLayerReluProblem:
    """Two-layer ReLU regression net with analytic gradients.

    Parameters are flattened as [W1 (h*d), b1 (h), W2 (m*h), b2 (m)].  Loss
    is the minibatch mean squared error /2 plus lam/2 |w|^2; the ReLU
    subgradient at 0 is taken to be 0.
    """

    source: DataSource
    hidden_units: int = 4
    lam: float = 0.0
    gamma: float = 0.025
    batch_size: int = 1

    def __post_init__(self):
        if self.hidden_units < 1:
            raise ValueError("hidden_units must be >= 1")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")

    @property
    def d(self) -> int:
        return self.source.d

    @property
    def m(self) -> int:
        return self.source.m

    @property
    def n_params(self) -> int:
        h = self.hidden_units
        return h * self.d + h + self.m * h + self.m

    def unpack(self, w: np.ndarray):
        h, d, m = self.hidden_units, self.d, self.m
        i = 0
        W1 = w[i:i + h * d].reshape(h, d); i += h * d
        b1 = w[i:i + h]; i += h
        W2 = w[i:i + m * h].reshape(m, h); i += m * h
        b2 = w[i:i + m]
        return W1, b1, W2, b2

    def predict(self, w: np.ndarray, X: np.ndarray) -> np.ndarray:
        W1, b1, W2, b2 = self.unpack(w)
        H = np.maximum(X @ W1.T + b1, 0.0)
        return H @ W2.T + b2

    def batch_loss(self, w: np.ndarray, X: np.ndarray, Y: np.ndarray) -> float:
        R = self.predict(w, X) - Y
        return 0.5 * float(np.mean(np.sum(R * R, axis=1))) \
            + 0.5 * self.lam * float(w @ w)

    def batch_grad(self, w: np.ndarray, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        W1, b1, W2, b2 = self.unpack(w)
        n = X.shape[0]
        Z = X @ W1.T + b1                 # (n, h) pre-activations
        H = np.maximum(Z, 0.0)
        R = (H @ W2.T + b2 - Y) / n       # (n, m) scaled residuals
        gW2 = R.T @ H
        gb2 = R.sum(axis=0)
        D = (R @ W2) * (Z > 0.0)          # (n, h)
        gW1 = D.T @ X
        gb1 = D.sum(axis=0)
        g = np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2])
        return g + self.lam * w

    def fingerprint_fields(self) -> dict:
        f = {"problem": "two_layer_relu", "hidden_units": self.hidden_units,
             "lam": self.lam, "gamma": self.gamma,
             "batch_size": self.batch_size}
        f.update(self.source.fingerprint_fields())
        return f


def two_layer_grad(p: TwoLayerReluProblem, w: np.ndarray,
                   batch: Sequence[int]) -> np.ndarray:
    """Analytic gradient of the minibatch loss at w for dataset rows batch."""
    src = p.source
    if not isinstance(src, DatasetSource):
        raise ValueError("two_layer_grad needs a dataset-backed problem")
    idx = np.asarray(batch, dtype=np.int64)
    X = src.dataset.inputs[idx]
    Y = src.dataset.targets[idx]
    return p.batch_grad(np.asarray(w, dtype=np.float64), X, Y)

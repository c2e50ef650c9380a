"""Step-map builders for the supported optimizers.

Each builder turns a problem plus an OptimizerSpec into a StepMap whose
state is the flat parameter vector, augmented where the optimizer carries
extra state:

* sgd                w
* momentum           (v, w)            v' = eta v + g,  w' = w - gamma v'
* adam               (b1, b2, m, v, w) geometric bias trackers, so the
                     chain stays time-homogeneous
* adagrad            (acc, w)          acc' = acc + g^2, step g/(sqrt(acc')+eps)
* newton             w                 ridge only, exact blockwise solve
* perturbed_gd_a/b/c w                 1-d objectives; (a) Gaussian additive,
                     (b) unit-variance t(3) additive, (c) Gaussian
                     multiplicative-plus-additive

Gradients are minibatch means including the lam*w regulariser term.  The
perturbed variants draw two standard normals per step and use the second as
the additive noise, so (a) and (c) are trajectory-coupled at sigma = 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chain import ChainStreams, StepMap
from .problems import (
    LinearCoeffSampler,
    RidgeCoeffSampler,
    RidgeProblem,
    ScalarObjective,
    TwoLayerReluProblem,
)

__all__ = [
    "OptimizerSpec",
    "build_step_map",
    "build_sgd",
    "build_momentum",
    "build_adam",
    "build_adagrad",
    "build_newton",
    "build_perturbed_gd",
    "LinearRecurrenceMap",
    "GradientDescentMap",
]

KINDS = ("sgd", "momentum", "adam", "adagrad", "newton",
         "perturbed_gd_a", "perturbed_gd_b", "perturbed_gd_c")


@dataclass(frozen=True)
class OptimizerSpec:
    """Hyperparameters for one optimizer kind."""

    kind: str
    gamma: float
    eta: float = 0.0          # momentum
    beta1: float = 0.9        # adam
    beta2: float = 0.999      # adam
    epsilon: float = 1e-8     # adam / adagrad stabiliser
    sigma: float = 0.0        # perturbed-GD noise scale

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if not 0.0 <= self.eta < 1.0:
            raise ValueError("eta must be in [0, 1)")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("beta1, beta2 must be in [0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")

    def fingerprint_fields(self) -> dict:
        return {
            "optimizer": self.kind, "gamma": self.gamma, "eta": self.eta,
            "beta1": self.beta1, "beta2": self.beta2,
            "epsilon": self.epsilon, "sigma": self.sigma,
        }


class _ProblemStepMap(StepMap):
    """Shared plumbing for maps built from a (problem, spec) pair."""

    def __init__(self, problem, spec: OptimizerSpec):
        self.problem = problem
        self.spec = spec

    def fingerprint_fields(self):
        f = {"step_map": type(self).__name__}
        f.update(self.problem.fingerprint_fields())
        f.update(self.spec.fingerprint_fields())
        return f


class GradientDescentMap(_ProblemStepMap):
    """sgd / momentum / adam / adagrad on any problem with batch_grad."""

    def __init__(self, problem, spec):
        super().__init__(problem, spec)
        p = problem.n_params
        kind = spec.kind
        if kind == "sgd":
            self.dim = p
            self._layout = {"weights": slice(0, p)}
        elif kind == "momentum":
            self.dim = 2 * p
            self._layout = {"velocity": slice(0, p), "weights": slice(p, 2 * p)}
        elif kind == "adagrad":
            self.dim = 2 * p
            self._layout = {"accumulator": slice(0, p),
                            "weights": slice(p, 2 * p)}
        elif kind == "adam":
            self.dim = 2 + 3 * p
            self._layout = {
                "b1": slice(0, 1), "b2": slice(1, 2),
                "m": slice(2, 2 + p), "v": slice(2 + p, 2 + 2 * p),
                "weights": slice(2 + 2 * p, 2 + 3 * p),
            }
        else:
            raise ValueError(f"{kind} is not a gradient-descent kind")

    @property
    def layout(self):
        return dict(self._layout)

    def init_state(self, w0: np.ndarray) -> np.ndarray:
        """Augmented start state: optimizer accumulators zeroed."""
        w0 = np.asarray(w0, dtype=np.float64)
        state = np.zeros(self.dim)
        state[self._layout["weights"]] = w0
        return state

    def _advance(self, state: np.ndarray, X, Y) -> np.ndarray:
        spec = self.spec
        p = self.problem.n_params
        out = np.empty_like(state)
        w = state[self._layout["weights"]]
        g = self.problem.batch_grad(w, X, Y)
        if spec.kind == "sgd":
            out[:] = w - spec.gamma * g
        elif spec.kind == "momentum":
            v = spec.eta * state[:p] + g
            out[:p] = v
            out[p:] = w - spec.gamma * v
        elif spec.kind == "adagrad":
            acc = state[:p] + g * g
            out[:p] = acc
            out[p:] = w - spec.gamma * g / (np.sqrt(acc) + spec.epsilon)
        else:  # adam
            b1 = 1.0 - spec.beta1 * (1.0 - state[0])
            b2 = 1.0 - spec.beta2 * (1.0 - state[1])
            m = spec.beta1 * state[2:2 + p] + (1.0 - spec.beta1) * g
            v = spec.beta2 * state[2 + p:2 + 2 * p] + (1.0 - spec.beta2) * g * g
            out[0], out[1] = b1, b2
            out[2:2 + p] = m
            out[2 + p:2 + 2 * p] = v
            out[2 + 2 * p:] = w - spec.gamma * (m / b1) / (np.sqrt(v / b2)
                                                           + spec.epsilon)
        return out

    def step(self, w, k, streams):
        X, Y = self.problem.source.batch(k, streams, self.problem.batch_size)
        return self._advance(w, X, Y)

    def step_block(self, w, k0, nb, streams):
        X, Y = self.problem.source.batch_block(
            k0, nb, streams, self.problem.batch_size)
        out = np.empty((nb, self.dim))
        state = w
        for i in range(nb):
            state = self._advance(state, X[i], Y[i])
            out[i] = state
        return out


class LinearRecurrenceMap(StepMap):
    """w' = A w + B driven by a LinearCoeffSampler (Kesten-type chain)."""

    def __init__(self, sampler: LinearCoeffSampler):
        self.sampler = sampler
        self.dim = sampler.dim

    def step(self, w, k, streams):
        if hasattr(self.sampler, "sample_block"):
            A, B = self.sampler.sample_block(k, 1, streams)
            A, B = A[0], B[0]
        else:
            A, B = self.sampler.sample(streams.step_rng(k))
        return A @ w + B if self.dim > 1 else np.asarray([A * w[0] + B])

    def step_block(self, w, k0, nb, streams):
        A, B = self.sampler.sample_block(k0, nb, streams)
        out = np.empty((nb, self.dim))
        if self.dim == 1:
            al = A.tolist()
            bl = B.tolist()
            ww = w[0]
            buf = [0.0] * nb
            for i in range(nb):
                ww = al[i] * ww + bl[i]
                buf[i] = ww
            out[:, 0] = buf
        else:
            state = w
            for i in range(nb):
                state = A[i] @ state + B[i]
                out[i] = state
        return out

    def fingerprint_fields(self):
        f = {"step_map": "LinearRecurrenceMap"}
        f.update(self.sampler.fingerprint_fields())
        return f


class NewtonRidgeMap(_ProblemStepMap):
    """Stochastic Newton on ridge: w' = w - gamma H^{-1} g, H exact per batch."""

    def __init__(self, problem: RidgeProblem, spec: OptimizerSpec):
        super().__init__(problem, spec)
        self.dim = problem.n_params

    def _advance(self, w, X, Y):
        p = self.problem
        n = X.shape[0]
        M = p.unvec(w)
        C = X.T @ X / n + p.lam * np.eye(p.d)
        G = (X @ M.T - Y).T @ X / n + p.lam * M
        try:
            S = np.linalg.solve(C.T, G.T).T
        except np.linalg.LinAlgError as e:
            raise np.linalg.LinAlgError(
                "singular minibatch Hessian (lam = 0 with rank-deficient "
                "batch)") from e
        return (M - self.spec.gamma * S).ravel()

    def step(self, w, k, streams):
        X, Y = self.problem.source.batch(k, streams, self.problem.batch_size)
        return self._advance(w, X, Y)

    def step_block(self, w, k0, nb, streams):
        X, Y = self.problem.source.batch_block(
            k0, nb, streams, self.problem.batch_size)
        out = np.empty((nb, self.dim))
        state = w
        for i in range(nb):
            state = self._advance(state, X[i], Y[i])
            out[i] = state
        return out


class PerturbedGdMap(StepMap):
    """The three perturbed-GD variants on a 1-d objective.

    (a, b): w' = w - gamma (f'(w) + (1 + sigma) Z)
    (c):    w' = w - gamma ((1 + sigma Z1) f'(w) + Z2)

    Z is standard normal in (a), unit-variance t(3) in (b).  Every variant
    draws two normals per step and uses the second for the additive slot,
    so trajectories of (a) and (c) coincide when sigma = 0.
    """

    dim = 1

    def __init__(self, objective: ScalarObjective, spec: OptimizerSpec,
                 variant: str):
        if variant not in ("a", "b", "c"):
            raise ValueError("variant must be one of 'a', 'b', 'c'")
        self.objective = objective
        self.spec = spec
        self.variant = variant

    def _noise_block(self, rng, nb):
        z = rng.standard_normal((nb, 2))
        if self.variant == "b":
            t = z[:, 1] / np.sqrt(rng.chisquare(3, nb) / 3.0)
            return z[:, 0], t / np.sqrt(3.0)
        return z[:, 0], z[:, 1]

    def step(self, w, k, streams):
        z1, z2 = self._noise_block(streams.step_rng(k), 1)
        vals = self._scan(w[0], [float(z1[0])], [float(z2[0])])
        return np.asarray([vals[-1]])

    def _scan(self, w0, z1l, z2l):
        gamma, sigma = self.spec.gamma, self.spec.sigma
        fp = self.objective.f_prime
        out = [0.0] * len(z1l)
        w = w0
        if self.variant == "c":
            for i in range(len(z1l)):
                w = w - gamma * ((1.0 + sigma * z1l[i]) * fp(w) + z2l[i])
                out[i] = w
        else:
            amp = 1.0 + sigma
            for i in range(len(z1l)):
                w = w - gamma * (fp(w) + amp * z2l[i])
                out[i] = w
        return out

    def step_block(self, w, k0, nb, streams):
        z1, z2 = self._noise_block(streams.block_rng(k0), nb)
        vals = self._scan(w[0], z1.tolist(), z2.tolist())
        return np.asarray(vals)[:, None]

    def fingerprint_fields(self):
        f = {"step_map": "PerturbedGdMap", "variant": self.variant}
        f.update(self.objective.fingerprint_fields())
        f.update(self.spec.fingerprint_fields())
        return f


def build_sgd(problem, spec: OptimizerSpec) -> GradientDescentMap:
    """One step = w - gamma * (minibatch gradient incl. lam*w term)."""
    return GradientDescentMap(problem, spec)


def build_momentum(problem, spec: OptimizerSpec) -> GradientDescentMap:
    return GradientDescentMap(problem, spec)


def build_adam(problem, spec: OptimizerSpec) -> GradientDescentMap:
    return GradientDescentMap(problem, spec)


def build_adagrad(problem, spec: OptimizerSpec) -> GradientDescentMap:
    return GradientDescentMap(problem, spec)


def build_newton(problem: RidgeProblem, spec: OptimizerSpec) -> NewtonRidgeMap:
    if not isinstance(problem, RidgeProblem):
        raise ValueError("stochastic Newton supports ridge problems only")
    return NewtonRidgeMap(problem, spec)


def build_perturbed_gd(objective: ScalarObjective, spec: OptimizerSpec,
                       variant: str) -> PerturbedGdMap:
    return PerturbedGdMap(objective, spec, variant)


def build_step_map(problem, spec: OptimizerSpec) -> StepMap:
    """Dispatch on spec.kind; perturbed variants need a ScalarObjective."""
    kind = spec.kind
    if kind in ("sgd", "momentum", "adam", "adagrad"):
        if isinstance(problem, ScalarObjective):
            raise ValueError(f"{kind} needs a data-driven problem")
        return GradientDescentMap(problem, spec)
    if kind == "newton":
        return build_newton(problem, spec)
    variant = kind[-1]
    if not isinstance(problem, ScalarObjective):
        raise ValueError("perturbed GD runs on 1-d scalar objectives")
    return build_perturbed_gd(problem, spec, variant)

"""Finite-difference verification of the analytic gradients.

Each check compares tape gradients against central differences on a small
problem and reports the max relative error. :func:`run_suite` bundles them for
the ``gradcheck`` command.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import alignment
from . import diffcore as dc
from .model import PARAM_NAMES, ModelDims, forward_batch, gru_forward, init_params
from .trainer import LOCATIONS, TrainConfig, total_loss

TOLERANCE = 1e-5
TOY_DIMS = ModelDims(d_in=6, t_len=5, d_seq=4, d_emb=4, n_classes=3)


@dataclass(frozen=True)
class CheckResult:
    name: str
    error: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.error <= self.tolerance


@dataclass
class ToyProblem:
    dims: ModelDims
    theta: np.ndarray  # all parameters, flattened in PARAM_NAMES order
    signals: np.ndarray
    subjects: np.ndarray
    labels: np.ndarray


def toy_problem(seed: int, dims: ModelDims = TOY_DIMS, n_subjects: int = 2,
                per_subject: int = 4) -> ToyProblem:
    rng = np.random.default_rng(seed)
    named = init_params(dims, seed).named()
    # nonzero biases so no gradient entry is identically zero by symmetry
    for name, arr in named.items():
        if arr.ndim == 1:
            named[name] = 0.1 * rng.normal(size=arr.shape)
    theta = np.concatenate([named[n].ravel() for n in PARAM_NAMES])
    n = n_subjects * per_subject
    signals = rng.normal(size=(n, dims.d_in, dims.t_len))
    subjects = np.repeat(np.arange(n_subjects), per_subject)
    # subject-dependent offset so the discrepancy is well above the sqrt floor
    signals += subjects[:, None, None] * 0.5
    labels = rng.integers(0, dims.n_classes, size=n)
    return ToyProblem(dims, theta, signals, subjects, labels)


def unflatten(tape: dc.Tape, theta: dc.Node, dims: ModelDims) -> dict[str, dc.Node]:
    out = {}
    offset = 0
    for name, shape in dims.shapes().items():
        size = int(np.prod(shape))
        piece = dc.take_rows(tape, theta, np.arange(offset, offset + size))
        out[name] = dc.reshape(tape, piece, shape)
        offset += size
    return out


def pipeline_error(problem: ToyProblem, location: str, lam: float = 1.0,
                   fused: bool = True, eps: float = 1e-5) -> float:
    """Max relative error of ``d(L_cls + lam * L_disc) / d(theta)``.

    The kernel bandwidths are computed once at the unperturbed point and held
    fixed, matching how training treats them as constants.
    """
    config = TrainConfig(mode="ours", mmd_location=location, lam=lam)
    tape = dc.Tape()
    p = unflatten(tape, tape.leaf(problem.theta), problem.dims)
    fwd = forward_batch(tape, p, problem.signals, problem.subjects, problem.labels, problem.dims)
    feats = fwd.z_features if location == "after_f" else fwd.w_features
    bank = alignment.pooled_bank(feats.value)

    def f(t, theta):
        params = unflatten(t, theta, problem.dims)
        out = forward_batch(t, params, problem.signals, problem.subjects, problem.labels,
                            problem.dims, fused=fused)
        return total_loss(t, out, config, bank)[0]

    return dc.grad_check(f, problem.theta, eps)


def fused_vs_composed(seed: int, dims: ModelDims = TOY_DIMS, batch: int = 3) -> float:
    """Largest absolute difference between fused and primitive-built GRU
    outputs and parameter gradients."""
    rng = np.random.default_rng(seed)
    params = init_params(dims, seed)
    X = rng.normal(size=(batch, dims.d_in, dims.t_len))
    weights = rng.normal(size=(batch, dims.d_seq))
    results = []
    for fused in (True, False):
        tape = dc.Tape()
        p = params.bind(tape)
        h = gru_forward(tape, p, X, dims, fused=fused)
        loss = dc.mean(tape, dc.mul(tape, h, tape.leaf(weights)))
        grads = tape.backward(loss)
        results.append((h.value, [grads[p[n].id] for n in PARAM_NAMES[:9]]))
    (h1, g1), (h2, g2) = results
    return max([float(np.max(np.abs(h1 - h2)))]
               + [float(np.max(np.abs(a - b))) for a, b in zip(g1, g2)])


def run_suite(trials: int = 10, base_seed: int = 0) -> list[CheckResult]:
    results = []

    def timed(name, fn, tol):
        start = time.perf_counter()
        err = fn()
        results.append(CheckResult(name, err, tol, time.perf_counter() - start))

    timed("gru fused vs composed", lambda: max(fused_vs_composed(base_seed + i) for i in range(trials)),
          1e-12)
    for loc in LOCATIONS:
        timed(f"pipeline {loc}",
              lambda loc=loc: max(pipeline_error(toy_problem(base_seed + i), loc)
                                  for i in range(trials)),
              TOLERANCE)
    return results

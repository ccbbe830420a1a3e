"""Multi-kernel maximum mean discrepancy between per-subject feature sets.

The estimator is the biased (V-statistic) form, i.e. the squared RKHS distance
between the empirical mean embeddings, under a convex mixture of RBF kernels
``k(a, b) = exp(-|a - b|^2 / (2 * bandwidth))``.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Mapping

import numpy as np

from . import diffcore as dc
from .errors import ContractError, DimensionError

LADDER = (0.25, 0.5, 1.0, 2.0, 4.0)


@dataclass(frozen=True)
class KernelBank:
    bandwidths: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        bw = np.asarray(self.bandwidths, dtype=float)
        wt = np.asarray(self.weights, dtype=float)
        if bw.ndim != 1 or len(bw) == 0 or bw.shape != wt.shape:
            raise ContractError("bandwidths and weights must be equal-length, non-empty")
        if (bw <= 0).any() or (np.diff(bw) <= 0).any():
            raise ContractError(f"bandwidths must be positive and strictly increasing: {bw}")
        if (wt <= 0).any() or abs(wt.sum() - 1.0) > 1e-12:
            raise ContractError(f"weights must be positive and sum to 1: {wt}")

    @classmethod
    def single(cls, bandwidth: float) -> "KernelBank":
        return cls((float(bandwidth),), (1.0,))

    @classmethod
    def ladder(cls, base: float, factors=LADDER) -> "KernelBank":
        """Geometric bandwidth ladder around ``base`` with equal weights."""
        n = len(factors)
        return cls(tuple(float(base) * f for f in factors), (1.0 / n,) * n)


def median_heuristic(features) -> float:
    """Median off-diagonal squared distance, or 1.0 if all points coincide."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or len(X) < 2:
        raise ContractError(f"median_heuristic needs at least 2 rows, got shape {X.shape}")
    sq = (X * X).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * X @ X.T
    iu = np.triu_indices(len(X), k=1)
    med = float(np.median(np.maximum(d2[iu], 0.0)))
    return med if med > 0 else 1.0


def pooled_bank(features) -> KernelBank:
    return KernelBank.ladder(median_heuristic(features))


def kernel_matrix(tape: dc.Tape, A: dc.Node, B: dc.Node, bank: KernelBank) -> dc.Node:
    if A.value.ndim != 2 or B.value.ndim != 2 or A.shape[1] != B.shape[1]:
        raise DimensionError(f"kernel_matrix: shapes {A.shape} and {B.shape} do not conform")
    d2 = dc.sqdist(tape, A, B)
    K = None
    for bw, wt in zip(bank.bandwidths, bank.weights):
        term = dc.scale(tape, dc.exp(tape, dc.scale(tape, d2, -0.5 / bw)), wt)
        K = term if K is None else dc.add(tape, K, term)
    return K


def _check_pair(Za: dc.Node, Zb: dc.Node):
    for Z in (Za, Zb):
        if Z.value.ndim != 2 or Z.shape[0] < 1:
            raise ContractError(f"mmd needs non-empty 2-D feature sets, got {Z.shape}")
    if Za.shape[1] != Zb.shape[1]:
        raise DimensionError(f"feature dims differ: {Za.shape} vs {Zb.shape}")


def mmd2(tape: dc.Tape, Za: dc.Node, Zb: dc.Node, bank: KernelBank) -> dc.Node:
    _check_pair(Za, Zb)
    # exact sums keep the estimate invariant to row order and argument order
    kaa = dc.mean(tape, kernel_matrix(tape, Za, Za, bank), exact=True)
    kbb = dc.mean(tape, kernel_matrix(tape, Zb, Zb, bank), exact=True)
    kab = dc.mean(tape, kernel_matrix(tape, Za, Zb, bank), exact=True)
    return dc.sub(tape, dc.add(tape, kaa, kbb), dc.scale(tape, kab, 2.0))


def mmd(tape: dc.Tape, Za: dc.Node, Zb: dc.Node, bank: KernelBank) -> dc.Node:
    return dc.sqrt_floor(tape, mmd2(tape, Za, Zb, bank))


def group_rows(tape: dc.Tape, features: dc.Node, subjects) -> dict[int, dc.Node]:
    """Split a ``B x d`` feature node into per-subject row blocks."""
    subjects = np.asarray(subjects)
    return {int(s): dc.take_rows(tape, features, np.flatnonzero(subjects == s))
            for s in np.unique(subjects)}


def discrepancy_loss(tape: dc.Tape, groups: Mapping[int, dc.Node], bank: KernelBank) -> dc.Node:
    """Mean MMD over all unordered subject pairs, summed in ascending pair order."""
    if len(groups) < 2:
        raise ContractError(f"discrepancy_loss needs >= 2 subject groups, got {len(groups)}")
    dims = {Z.shape[1] for Z in groups.values()}
    if len(dims) != 1:
        raise DimensionError(f"subject groups have different feature dims: {sorted(dims)}")
    keys = sorted(groups)
    total = None
    n_pairs = 0
    for si, sj in combinations(keys, 2):
        term = mmd(tape, groups[si], groups[sj], bank)
        total = term if total is None else dc.add(tape, total, term)
        n_pairs += 1
    return dc.scale(tape, total, 1.0 / n_pairs)


# -- independent oracles ----------------------------------------------------

def _k(a, b, bank: KernelBank) -> float:
    d2 = 0.0
    for x, y in zip(a, b):
        d2 += (x - y) * (x - y)
    return sum(w * np.exp(-d2 / (2.0 * bw)) for bw, w in zip(bank.bandwidths, bank.weights))


def mmd2_oracle(Za, Zb, bank: KernelBank) -> float:
    """Biased MMD^2 by explicit index loops; no vectorization."""
    Za = np.atleast_2d(np.asarray(Za, dtype=float))
    Zb = np.atleast_2d(np.asarray(Zb, dtype=float))
    n, m = len(Za), len(Zb)
    saa = sum(_k(Za[i], Za[j], bank) for i in range(n) for j in range(n))
    sbb = sum(_k(Zb[i], Zb[j], bank) for i in range(m) for j in range(m))
    sab = sum(_k(Za[i], Zb[j], bank) for i in range(n) for j in range(m))
    return float(saa / (n * n) + sbb / (m * m) - 2.0 * sab / (n * m))


def mmd2_unbiased_oracle(Za, Zb, bank: KernelBank) -> float:
    """U-statistic MMD^2 (diagonal terms dropped), for comparison only."""
    Za = np.atleast_2d(np.asarray(Za, dtype=float))
    Zb = np.atleast_2d(np.asarray(Zb, dtype=float))
    n, m = len(Za), len(Zb)
    if n < 2 or m < 2:
        raise ContractError("unbiased MMD needs at least 2 rows per set")
    saa = sum(_k(Za[i], Za[j], bank) for i in range(n) for j in range(n) if i != j)
    sbb = sum(_k(Zb[i], Zb[j], bank) for i in range(m) for j in range(m) if i != j)
    sab = sum(_k(Za[i], Zb[j], bank) for i in range(n) for j in range(m))
    return float(saa / (n * (n - 1)) + sbb / (m * (m - 1)) - 2.0 * sab / (n * m))

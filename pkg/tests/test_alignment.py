import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from subjadapt import alignment as al
from subjadapt import diffcore as dc
from subjadapt.errors import ContractError

ONE = al.KernelBank.single(1.0)


def mmd2(Za, Zb, bank=ONE):
    t = dc.Tape()
    return al.mmd2(t, t.leaf(np.atleast_2d(Za)), t.leaf(np.atleast_2d(Zb)), bank).item()


def mmd(Za, Zb, bank=ONE):
    t = dc.Tape()
    return al.mmd(t, t.leaf(np.atleast_2d(Za)), t.leaf(np.atleast_2d(Zb)), bank).item()


def disc(groups, bank=ONE):
    t = dc.Tape()
    return al.discrepancy_loss(t, {s: t.leaf(g) for s, g in groups.items()}, bank).item()


def test_median_heuristic_examples():
    assert al.median_heuristic([[0.0], [2.0]]) == 4.0
    assert al.median_heuristic([[0.0], [1.0], [3.0]]) == 4.0
    assert al.median_heuristic(np.ones((5, 3))) == 1.0
    with pytest.raises(ContractError):
        al.median_heuristic([[1.0, 2.0]])


def test_ladder_bank():
    bank = al.KernelBank.ladder(2.0)
    assert bank.bandwidths == (0.5, 1.0, 2.0, 4.0, 8.0)
    assert bank.weights == (0.2,) * 5
    with pytest.raises(ContractError):
        al.KernelBank((1.0, 0.5), (0.5, 0.5))


def test_kernel_matrix_examples(rng):
    t = dc.Tape()
    K = al.kernel_matrix(t, t.leaf([[0.0]]), t.leaf([[1.0]]), ONE)
    assert K.item() == pytest.approx(math.exp(-0.5), abs=1e-15)
    A, B = rng.normal(size=(4, 3)), rng.normal(size=(5, 3))
    bank = al.KernelBank.ladder(1.3)
    KAB = al.kernel_matrix(t, t.leaf(A), t.leaf(B), bank).value
    KBA = al.kernel_matrix(t, t.leaf(B), t.leaf(A), bank).value
    np.testing.assert_array_equal(KAB, KBA.T)
    KAA = al.kernel_matrix(t, t.leaf(A), t.leaf(A), bank).value
    np.testing.assert_allclose(np.diag(KAA), 1.0, atol=1e-15)


def test_mmd2_closed_form():
    assert abs(mmd2([[0.0]], [[1.0]]) - (2 - 2 * math.exp(-0.5))) <= 1e-12
    assert mmd([[0.0]], [[1.0]]) == pytest.approx(0.887095, abs=1e-6)


def test_mmd_identical_sets(rng):
    Z = rng.normal(size=(6, 3))
    assert abs(mmd2(Z, Z)) <= 1e-10
    assert abs(mmd(Z, Z)) <= 2e-6


def test_mmd_grows_with_gap():
    assert mmd([[0.0]], [[2.0]]) > mmd([[0.0]], [[1.0]])


def test_mmd2_matches_oracle(rng):
    for _ in range(20):
        Za, Zb = rng.normal(size=(5, 3)), rng.normal(size=(4, 3)) + rng.normal()
        bank = al.KernelBank.ladder(al.median_heuristic(np.vstack([Za, Zb])))
        assert abs(mmd2(Za, Zb, bank) - al.mmd2_oracle(Za, Zb, bank)) <= 1e-10


def test_oracle_single_point_collapse():
    a, b = np.array([[0.3, -1.0]]), np.array([[1.0, 0.5]])
    k = math.exp(-((0.7 ** 2 + 1.5 ** 2) / 2))
    assert al.mmd2_oracle(a, b, ONE) == pytest.approx(2 - 2 * k, abs=1e-15)


def test_unbiased_oracle_differs_from_biased(rng):
    Za, Zb = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
    assert al.mmd2_unbiased_oracle(Za, Zb, ONE) != al.mmd2_oracle(Za, Zb, ONE)


def test_mmd_empty_input_rejected():
    t = dc.Tape()
    with pytest.raises(ContractError):
        al.mmd2(t, t.leaf([1.0, 2.0]), t.leaf([[1.0]]), ONE)


point_sets = st.integers(1, 5).flatmap(
    lambda n: arrays(np.float64, (n, 2), elements=st.floats(-3, 3)))


@settings(max_examples=60, deadline=None)
@given(point_sets, point_sets, st.randoms(use_true_random=False))
def test_mmd2_symmetric_permutation_invariant_nonnegative(Za, Zb, rnd):
    base = mmd2(Za, Zb)
    assert base >= -1e-12
    assert mmd2(Zb, Za) == base
    pa = list(range(len(Za)))
    pb = list(range(len(Zb)))
    rnd.shuffle(pa)
    rnd.shuffle(pb)
    assert mmd2(Za[pa], Zb[pb]) == base


@settings(max_examples=40, deadline=None)
@given(point_sets, point_sets, st.floats(0.1, 10))
def test_mmd2_scale_invariance(Za, Zb, c):
    a = mmd2(Za, Zb, ONE)
    b = mmd2(c * Za, c * Zb, al.KernelBank.single(c * c))
    assert abs(a - b) <= 1e-12


def test_discrepancy_two_groups_is_single_mmd(rng):
    A, B = rng.normal(size=(4, 3)), rng.normal(size=(6, 3)) + 1
    assert disc({0: A, 1: B}) == mmd(A, B)


def test_discrepancy_counts_unordered_pairs(rng, monkeypatch):
    groups = {s: rng.normal(size=(3, 2)) + s for s in range(4)}
    calls = []
    real = al.mmd

    def counting(tape, Za, Zb, bank):
        calls.append(1)
        return real(tape, Za, Zb, bank)

    monkeypatch.setattr(al, "mmd", counting)
    got = disc(groups)
    assert len(calls) == 6
    hand = np.mean([mmd(groups[i], groups[j]) for i in range(4) for j in range(i + 1, 4)])
    assert abs(got - hand) <= 1e-12


def test_discrepancy_identical_groups_is_zero(rng):
    Z = rng.normal(size=(5, 3))
    assert abs(disc({0: Z, 1: Z.copy(), 2: Z.copy()})) <= 2e-6


def test_discrepancy_translation_invariant(rng):
    groups = {s: rng.normal(size=(4, 3)) + s for s in range(3)}
    shift = rng.normal(size=3) * 5
    assert abs(disc(groups) - disc({s: g + shift for s, g in groups.items()})) <= 1e-9


def test_discrepancy_needs_two_groups(rng):
    with pytest.raises(ContractError):
        disc({0: rng.normal(size=(3, 2))})


def test_discrepancy_gradient_matches_finite_differences(rng):
    subjects = np.repeat(np.arange(3), 4)
    for _ in range(5):
        Z0 = rng.normal(size=(12, 3)) + subjects[:, None] * 0.7
        bank = al.pooled_bank(Z0)

        def f(t, Z):
            return al.discrepancy_loss(t, al.group_rows(t, Z, subjects), bank)

        assert dc.grad_check(f, Z0) <= 1e-5

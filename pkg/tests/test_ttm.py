from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tuckerfx.fxp import FxFormat, FxProfile, QuantStats, quantize_array
from tuckerfx.perf import HwConfig
from tuckerfx.tensor import DenseTensor, ShapeError, fold, unfold
from tuckerfx.ttm import iteration_ttm_count, plan_iteration, plan_ttm_chain, ttm, ttm_tiled

TF = FxFormat(16, 12)
MF = FxFormat(27, 24)


def oracle(X, k, A, transposed=False):
    """Unfold, multiply, fold."""
    M = np.asarray(A).T if transposed else np.asarray(A)
    shape = list(X.shape)
    shape[k - 1] = M.shape[0]
    return fold(M @ unfold(X, k), k, shape)


def rand(shape, seed):
    return DenseTensor.from_array(np.random.default_rng(seed).standard_normal(shape))


# --- reference ttm ------------------------------------------------------------


def test_identity_product():
    X = rand((3, 4, 2), 0)
    for k in (1, 2, 3):
        assert np.array_equal(ttm(X, k, np.eye(X.shape[k - 1])).data, X.data)


def test_ones_example():
    X = DenseTensor.from_array(np.ones((2, 2, 2)))
    Y = ttm(X, 1, np.ones((2, 1)), transposed=True)
    assert Y.shape == (1, 2, 2) and np.all(Y.data == 2.0)


def test_matches_oracle_each_mode():
    X = rand((4, 3, 2), 1)
    rng = np.random.default_rng(2)
    for k in (1, 2, 3):
        A = rng.standard_normal((5, X.shape[k - 1]))
        Y, R = ttm(X, k, A), oracle(X, k, A)
        assert Y.shape == R.shape
        np.testing.assert_allclose(Y.data, R.data, rtol=1e-12, atol=1e-14)
        At = rng.standard_normal((X.shape[k - 1], 3))
        np.testing.assert_allclose(ttm(X, k, At, transposed=True).data,
                                   oracle(X, k, At, transposed=True).data, rtol=1e-12, atol=1e-14)


def test_elementwise_definition_exact():
    """Each entry is the sum over i_k of x * a, checked with exact rationals."""
    rng = np.random.default_rng(3)
    arr = rng.integers(-5, 6, (2, 3, 2)).astype(float)
    A = rng.integers(-4, 5, (2, 3)).astype(float)
    Y = ttm(DenseTensor.from_array(arr), 2, A).to_array()
    for i1 in range(2):
        for j in range(2):
            for i3 in range(2):
                ref = sum(Fraction(A[j, i]) * Fraction(arr[i1, i, i3]) for i in range(3))
                assert Y[i1, j, i3] == ref


def test_dimension_errors():
    X = rand((3, 4), 0)
    with pytest.raises(ShapeError):
        ttm(X, 1, np.ones((2, 4)))
    with pytest.raises(ShapeError):
        ttm(X, 3, np.ones((2, 3)))
    with pytest.raises(ShapeError):
        ttm(X, 1, np.ones(3))


@settings(max_examples=40, deadline=None)
@given(shape=st.lists(st.integers(1, 5), min_size=2, max_size=4), seed=st.integers(0, 999), data=st.data())
def test_mode_commutativity_on_integers(shape, seed, data):
    j = data.draw(st.integers(1, len(shape)))
    k = data.draw(st.sampled_from([m for m in range(1, len(shape) + 1) if m != j]))
    rng = np.random.default_rng(seed)
    X = DenseTensor.from_array(rng.integers(-9, 10, shape).astype(float))
    A = rng.integers(-9, 10, (3, shape[j - 1])).astype(float)
    B = rng.integers(-9, 10, (2, shape[k - 1])).astype(float)
    left = ttm(ttm(X, j, A), k, B)
    right = ttm(ttm(X, k, B), j, A)
    assert np.array_equal(left.data, right.data)


# --- tiled fixed-point kernel ---------------------------------------------------


def int_operands(shape, rows, k, seed):
    """Small integer values: every product and sum is exact in the default formats."""
    rng = np.random.default_rng(seed)
    Xr = rng.integers(-8, 9, shape) << TF.frac_bits
    Ar = rng.integers(-3, 4, (rows, shape[k - 1])) << MF.frac_bits
    return DenseTensor.from_array(Xr, TF), DenseTensor.from_array(Ar, MF)


@pytest.mark.parametrize("q", [1, 2, 4])
@pytest.mark.parametrize("r", [1, 2, 4])
def test_tiled_bit_exact_vs_reference_on_integers(q, r):
    prof = FxProfile(tensor_fmt=FxFormat(32, 12))
    cfg = HwConfig(q=q, r=r, p=4)
    for k in (1, 2, 3):
        X, A = int_operands((5, 3, 4), 2, k, seed=10 * q + r + k)
        X = DenseTensor(X.shape, X.data, prof.tensor_fmt)
        ref = ttm(X, k, A)
        got = ttm_tiled(X, k, A, cfg, prof)
        assert np.array_equal(got.data, ref.data)
        expect = oracle(DenseTensor.from_array(X.values().reshape(X.shape, order="F")), k, A.values())
        assert np.array_equal(got.values(), expect.values())


@settings(max_examples=25, deadline=None)
@given(q=st.integers(1, 9), r=st.integers(1, 9), m=st.integers(1, 9), seed=st.integers(0, 999))
def test_tiled_invariant_across_tilings(q, r, m, seed):
    prof = FxProfile(tensor_fmt=FxFormat(32, 12))
    X, A = int_operands((7, 3, 5), 3, 2, seed)
    X = DenseTensor(X.shape, X.data, prof.tensor_fmt)
    base = ttm_tiled(X, 2, A, HwConfig(q=1, r=1, p=1), prof)
    got = ttm_tiled(X, 2, A, HwConfig(q=q, r=r, p=4, m=m), prof)
    assert np.array_equal(got.data, base.data)
    X1, A1 = int_operands((7, 3, 5), 3, 1, seed)
    X1 = DenseTensor(X1.shape, X1.data, prof.tensor_fmt)
    assert np.array_equal(ttm_tiled(X1, 1, A1, HwConfig(q=q, r=r, p=4, m=m), prof).data,
                          ttm(X1, 1, A1).data)


def test_tiled_identity_requantizes():
    rng = np.random.default_rng(4)
    arr = rng.uniform(-2, 2, (5, 6, 3))
    X = DenseTensor.from_array(quantize_array(arr, TF), TF)
    for k in (1, 2, 3):
        I = DenseTensor.from_array(quantize_array(np.eye(X.shape[k - 1]), MF), MF)
        for q in (1, 4, 32):
            assert np.array_equal(ttm_tiled(X, k, I, HwConfig(q=q), FxProfile()).data, X.data)


def test_tiled_single_tile_close_to_reference():
    rng = np.random.default_rng(5)
    arr = rng.uniform(-1, 1, (6, 5, 4))
    X = DenseTensor.from_array(quantize_array(arr, TF), TF)
    prof = FxProfile()
    for k in (1, 2, 3):
        Q, _ = np.linalg.qr(rng.standard_normal((X.shape[k - 1], 3)))
        A = DenseTensor.from_array(quantize_array(Q, MF), MF)
        got = ttm_tiled(X, k, A, HwConfig(q=32, r=32), prof, transposed=True)
        ref = ttm(X, k, A, transposed=True)
        # products are rounded to 24 fraction bits before summing: at most one
        # output step apart after the final rounding
        assert np.max(np.abs(got.data - ref.data)) <= 1
        real = oracle(DenseTensor.from_array(arr), k, Q, transposed=True)
        assert np.max(np.abs(got.values() - real.to_array())) < 2 * TF.lsb


def test_tiled_mode1_uses_adder_tree_order():
    # products that saturate the accumulator show the order of reduction
    prof = FxProfile(tensor_fmt=FxFormat(16, 0), matrix_fmt=FxFormat(16, 0),
                     product_fmt=FxFormat(8, 0))
    X = DenseTensor.from_array(np.array([[100], [100], [-100], [-100]]), prof.tensor_fmt)
    A = DenseTensor.from_array(np.array([[1, 1, 1, 1]]), prof.matrix_fmt)
    stats = QuantStats()
    # q=1: one PE accumulates the fiber sequentially, 100+100 saturates at 127
    seq = ttm_tiled(X, 1, A, HwConfig(q=1), prof, stats=stats)
    assert int(seq.data[0]) == 127 - 200
    # q=4: four PEs each hold one product, the adder tree pairs (1,2) and (3,4)
    tree = ttm_tiled(X, 1, A, HwConfig(q=4), prof)
    assert int(tree.data[0]) == 127 - 128
    assert stats.total_saturations > 0


def test_tiled_rejects_real_operands():
    X = rand((2, 2), 0)
    with pytest.raises(TypeError):
        ttm_tiled(X, 1, np.eye(2), HwConfig(), FxProfile())


def test_tiled_counts_output_saturation():
    prof = FxProfile()
    X = DenseTensor.from_array(quantize_array(np.full((8, 2), 7.0), TF), TF)
    A = DenseTensor.from_array(quantize_array(np.ones((1, 8)), MF), MF)
    stats = QuantStats()
    Y = ttm_tiled(X, 1, A, HwConfig(q=4), prof, stats=stats)
    assert np.all(Y.data == TF.raw_max)
    assert stats.saturations["ttm_out"] == 2


# --- chain planner ------------------------------------------------------------


@pytest.mark.parametrize("d, total", [(2, 2), (3, 5), (4, 9), (5, 14), (6, 20)])
def test_iteration_step_counts(d, total):
    assert iteration_ttm_count(d) == total == (d - 1) * (1 + d / 2)
    assert iteration_ttm_count(d, warm_start=True) == total + d


def test_chain_order_and_reuse():
    plan = plan_ttm_chain(3, 2)
    assert [s.mode for s in plan.steps] == [3, 1]
    assert [s.reused for s in plan.steps] == [True, False]
    assert plan.steps[0].output == "X|3" and plan.steps[1].source == "X|3"
    first = plan_ttm_chain(3, 1)
    assert [s.mode for s in first.steps] == [3, 2] and not any(s.reused for s in first.steps)
    warm = plan_ttm_chain(3, 3, warm_start=True)
    assert warm.steps[-1].warm and warm.steps[-1].mode == 3 and not warm.steps[-1].transposed


def test_reused_outputs_exist_earlier():
    for d in range(2, 7):
        produced = {"X"}
        for plan in plan_iteration(d):
            for s in plan.steps:
                if s.reused:
                    assert s.output in produced
                else:
                    assert s.source in produced
                    produced.add(s.output)
            assert all(s.mode != plan.skip for s in plan.steps)
            assert [s.mode for s in plan.steps] == sorted((s.mode for s in plan.steps), reverse=True)


def test_plan_errors():
    with pytest.raises(ShapeError):
        plan_ttm_chain(3, 4)
    with pytest.raises(ValueError):
        plan_ttm_chain(0, 1)

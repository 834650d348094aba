import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tuckerfx.hooi import (
    HooiOptions,
    TuckerModel,
    core_tensor,
    fit_error_fast,
    hooi,
    hosvd_init,
    make_synthetic,
    random_orthonormal_init,
)
from tuckerfx.tensor import DenseTensor, ShapeError, frobenius_norm, relative_error
from tuckerfx.ttm import ttm


def max_ortho_err(A):
    return float(np.max(np.abs(A.T @ A - np.eye(A.shape[1]))))


def projection_residual(X, factors):
    Y = X
    for k, A in enumerate(factors, start=1):
        Y = ttm(Y, k, A @ A.T)
    return float(np.linalg.norm(X.data - Y.data) / np.linalg.norm(X.data))


# --- initialization -----------------------------------------------------------


def test_random_init_contract():
    fs = random_orthonormal_init((7, 5, 4), (3, 5, 2), seed=1)
    assert [A.shape for A in fs] == [(7, 3), (5, 5), (4, 2)]
    assert all(max_ortho_err(A) <= 1e-10 for A in fs)
    again = random_orthonormal_init((7, 5, 4), (3, 5, 2), seed=1)
    assert all(np.array_equal(a, b) for a, b in zip(fs, again))
    sq = fs[1]
    assert np.max(np.abs(sq @ sq.T - np.eye(5))) <= 1e-10
    other = random_orthonormal_init((7, 5, 4), (3, 5, 2), seed=2)
    assert not np.array_equal(fs[0], other[0])


def test_random_init_rank_errors():
    with pytest.raises(ShapeError):
        random_orthonormal_init((4, 4), (5, 1))
    with pytest.raises(ShapeError):
        random_orthonormal_init((4, 4), (2,))
    with pytest.raises(ShapeError):
        random_orthonormal_init((4, 4), (0, 1))


def test_hosvd_exact_low_rank():
    X = make_synthetic((10, 9, 8), (3, 2, 4), seed=3)
    fs = hosvd_init(X, (3, 2, 4))
    assert all(max_ortho_err(A) <= 1e-10 for A in fs)
    assert projection_residual(X, fs) <= 1e-10
    G = core_tensor(X, fs)
    assert relative_error(X, TuckerModel(G, fs)) < 1e-8


def test_hosvd_superdiagonal():
    n = 5
    arr = np.zeros((n, n, n))
    for i, v in enumerate([5.0, 4.0, 3.0, 2.0, 1.0]):
        arr[i, i, i] = v
    fs = hosvd_init(DenseTensor.from_array(arr), (2, 2, 2))
    for A in fs:
        np.testing.assert_allclose(np.abs(A), np.eye(n)[:, :2], atol=1e-12)


def test_hosvd_full_rank_exact():
    X = DenseTensor.from_array(np.random.default_rng(4).standard_normal((4, 3, 5)))
    fs = hosvd_init(X, X.shape)
    assert relative_error(X, TuckerModel(core_tensor(X, fs), fs)) < 1e-10


# --- core and error -----------------------------------------------------------


def test_core_tensor_examples():
    rng = np.random.default_rng(5)
    X = DenseTensor.from_array(rng.standard_normal((4, 3, 5)))
    eye = [np.eye(n) for n in X.shape]
    assert np.array_equal(core_tensor(X, eye).data, X.data)
    fs = random_orthonormal_init(X.shape, (2, 2, 2), seed=0)
    assert frobenius_norm(core_tensor(X, fs)) <= frobenius_norm(X)
    with pytest.raises(ShapeError):
        core_tensor(X, fs[:2])


def test_core_of_exact_low_rank_reconstructs():
    rng = np.random.default_rng(6)
    G = DenseTensor.from_array(rng.standard_normal((2, 3, 2)))
    fs = [np.linalg.qr(rng.standard_normal((n, r)))[0] for n, r in zip((6, 7, 5), (2, 3, 2))]
    X = TuckerModel(G, fs).reconstruct()
    Gc = core_tensor(X, fs)
    np.testing.assert_allclose(Gc.data, G.data, atol=1e-12)
    assert relative_error(X, TuckerModel(Gc, fs)) <= 1e-10


def test_fit_error_fast_examples():
    X = DenseTensor.from_array(np.random.default_rng(7).standard_normal((4, 4, 4)))
    nsq = frobenius_norm(X) ** 2
    assert fit_error_fast(nsq, X) == 0.0
    assert fit_error_fast(nsq, DenseTensor.zeros((2, 2, 2))) == 100.0
    with pytest.raises(ValueError):
        fit_error_fast(0.0, X)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_fit_error_fast_agrees_with_reconstruction(seed):
    rng = np.random.default_rng(seed)
    shape = tuple(int(n) for n in rng.integers(2, 7, 3))
    rank = tuple(int(rng.integers(1, n + 1)) for n in shape)
    X = DenseTensor.from_array(rng.standard_normal(shape))
    fs = random_orthonormal_init(shape, rank, seed)
    G = core_tensor(X, fs)
    fast = fit_error_fast(frobenius_norm(X) ** 2, G)
    full = relative_error(X, TuckerModel(G, fs))
    assert fast == pytest.approx(full, rel=1e-8)


# --- synthetic data -----------------------------------------------------------


def test_make_synthetic_determinism_and_noise():
    a = make_synthetic((6, 5, 4), (2, 2, 2), 0.5, seed=9)
    b = make_synthetic((6, 5, 4), (2, 2, 2), 0.5, seed=9)
    assert np.array_equal(a.data, b.data)
    clean = make_synthetic((30, 30, 30), (3, 3, 3), 0.0, seed=9)
    noisy = make_synthetic((30, 30, 30), (3, 3, 3), 0.5, seed=9)
    ratio = np.var(noisy.data - clean.data) / np.var(clean.data)
    assert ratio == pytest.approx(0.5, rel=0.05)
    with pytest.raises(ValueError):
        make_synthetic((4, 4), (2, 2), -1.0)


# --- HOOI ---------------------------------------------------------------------


def test_noiseless_16_cubed():
    X = make_synthetic((16, 16, 16), (4, 4, 4), seed=0)
    model, stats = hooi(X, (4, 4, 4))
    assert stats.errors[-1] < 1e-6
    assert relative_error(X, model) < 1e-6
    assert stats.converged
    assert model.rank == [4, 4, 4] and model.shape == [16, 16, 16]


@pytest.mark.parametrize("warm", [False, True])
def test_full_rank_is_exact(warm):
    X = DenseTensor.from_array(np.random.default_rng(10).standard_normal((5, 4, 3)))
    model, stats = hooi(X, X.shape, warm_start=warm, max_iters=3)
    assert relative_error(X, model) < 1e-8


def test_hooi_errors():
    X = make_synthetic((5, 5, 5), (2, 2, 2))
    with pytest.raises(ShapeError):
        hooi(X, (6, 2, 2))
    bad = DenseTensor(X.shape, np.where(np.arange(X.size) == 3, np.nan, X.data))
    with pytest.raises(ValueError, match="non-finite"):
        hooi(bad, (2, 2, 2))
    with pytest.raises(ValueError):
        hooi(DenseTensor.zeros((3, 3)), (1, 1))
    with pytest.raises(ValueError):
        HooiOptions(init="svd")
    with pytest.raises(ValueError):
        HooiOptions(max_iters=0)


def test_stats_consistency_and_ttm_counts():
    X = make_synthetic((8, 7, 6), (2, 3, 2), 0.3, seed=11)
    for warm, per_iter in ((False, 5), (True, 8)):
        _, stats = hooi(X, (2, 3, 2), warm_start=warm, tol=0.0)
        assert stats.iterations == 8 == len(stats.errors) == len(stats.sweeps)
        assert all(len(s) == 3 for s in stats.sweeps)
        assert stats.ttm_steps == per_iter * stats.iterations
        if warm:
            assert all(s == 1 for it in stats.sweeps for s in it)


@settings(max_examples=12, deadline=None)
@given(seed=st.integers(0, 10 ** 6), warm=st.booleans())
def test_monotone_fit_and_orthonormal_factors(seed, warm):
    rng = np.random.default_rng(seed)
    shape = tuple(int(n) for n in rng.integers(4, 9, 3))
    rank = tuple(int(rng.integers(1, n)) for n in shape)
    X = make_synthetic(shape, rank, 1.0, seed=seed)
    model, stats = hooi(X, rank, tol=0.0, max_iters=6, warm_start=warm)
    if not warm:
        # ALS: each mode update solves its subproblem exactly
        assert all(b <= a + 1e-10 for a, b in zip(stats.errors, stats.errors[1:]))
    assert all(max_ortho_err(A) <= 1e-10 for A in model.factors)


def test_warm_and_standard_agree():
    X = make_synthetic((24, 20, 16), (4, 4, 4), 0.5, seed=12)
    _, cold = hooi(X, (4, 4, 4), warm_start=False)
    _, warm = hooi(X, (4, 4, 4), warm_start=True)
    assert warm.converged and warm.iterations <= 8
    assert abs(warm.errors[-1] - cold.errors[-1]) <= 0.1
    assert warm.total_sweeps < cold.total_sweeps


def test_hosvd_init_option():
    X = make_synthetic((10, 10, 10), (3, 3, 3), 0.2, seed=13)
    _, a = hooi(X, (3, 3, 3), init="hosvd")
    _, b = hooi(X, (3, 3, 3))
    assert a.errors[-1] == pytest.approx(b.errors[-1], abs=1e-2)
    assert a.iterations <= b.iterations


def test_factors0_and_option_override():
    X = make_synthetic((6, 6, 6), (2, 2, 2), seed=14)
    f0 = random_orthonormal_init(X.shape, (2, 2, 2), seed=99)
    _, s1 = hooi(X, (2, 2, 2), factors0=f0, max_iters=2, tol=0.0)
    _, s2 = hooi(X, (2, 2, 2), HooiOptions(seed=99, tol=0.0), max_iters=2)
    assert s1.errors == s2.errors


def test_fixed_path_small():
    X = make_synthetic((12, 10, 8), (3, 3, 2), seed=15)
    real, rs = hooi(X, (3, 3, 2))
    model, fs = hooi(X, (3, 3, 2), numeric="fixed")
    assert fs.quant is not None and fs.quant.total_saturations == 0
    assert fs.errors[-1] - rs.errors[-1] <= 2.0
    assert relative_error(X, model) == pytest.approx(fs.errors[-1])
    assert all(max_ortho_err(A) <= 2.0 ** -(24 - 8) for A in model.factors)
    assert "quantization" in fs.to_dict()


def test_fixed_path_is_deterministic():
    X = make_synthetic((8, 8, 8), (2, 2, 2), 0.1, seed=16)
    a = hooi(X, (2, 2, 2), numeric="fixed", warm_start=True, max_iters=3)[1]
    b = hooi(X, (2, 2, 2), numeric="fixed", warm_start=True, max_iters=3)[1]
    assert a.errors == b.errors and a.to_dict() == b.to_dict()


def test_fixed_input_scale_bounds_norm():
    X = make_synthetic((10, 10, 10), (3, 3, 3), 0.5, seed=17)
    _, stats = hooi(X, (3, 3, 3), numeric="fixed", max_iters=1)
    from tuckerfx.fxp import FxProfile
    tf = FxProfile().tensor_fmt
    assert frobenius_norm(X) * stats.input_scale <= tf.max_value
    assert np.max(np.abs(X.data)) * stats.input_scale <= 1.0

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import bcirc, dft_loops, svt, tnn_full, tprod_bcirc, tsvt_full, unfold_loops
from strpca.tensor import (
    TSvdError,
    dft3,
    fold,
    identity_tensor,
    idft3,
    read_tensor,
    soft,
    tnn,
    tprod,
    tsvd,
    tsvt,
    ttranspose,
    unfold,
    write_tensor,
)

dims = st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5))


@settings(max_examples=60, deadline=None)
@given(dims, st.integers(0, 2**31 - 1), st.sampled_from([1, 2, 3]))
def test_fold_inverts_unfold(shape, seed, mode):
    t = np.random.default_rng(seed).standard_normal(shape)
    m = unfold(t, mode)
    assert np.array_equal(fold(m, mode, shape), t)
    assert np.array_equal(unfold(fold(m, mode, shape), mode), m)


@pytest.mark.parametrize("mode", [1, 2, 3])
def test_unfold_index_layout(rng, mode):
    t = rng.standard_normal((3, 4, 5))
    assert np.array_equal(unfold(t, mode), unfold_loops(t, mode))


def test_unfold_mode3_columns_are_frames(rng):
    t = rng.standard_normal((3, 4, 5))
    m = unfold(t, 3)
    for k in range(5):
        assert np.array_equal(m[:, k], t[:, :, k].ravel(order="F"))


def test_fold_rejects_wrong_shape():
    with pytest.raises(ValueError):
        fold(np.zeros((5, 3)), 3, (2, 2, 3))
    with pytest.raises(ValueError):
        unfold(np.zeros((2, 2, 2)), 4)


def test_dft_matches_defining_sum(rng):
    t = rng.standard_normal((3, 2, 6))
    np.testing.assert_allclose(dft3(t), dft_loops(t), atol=1e-12)
    np.testing.assert_allclose(idft3(dft3(t)), t, atol=1e-12)


def test_bcirc_oracle_self_check(rng):
    # bcirc of the identity tensor is the identity matrix
    np.testing.assert_array_equal(bcirc(identity_tensor(3, 4)), np.eye(12))


def test_tprod_matches_block_circulant(rng):
    a = rng.standard_normal((3, 4, 5))
    b = rng.standard_normal((4, 2, 5))
    np.testing.assert_allclose(tprod(a, b), tprod_bcirc(a, b), atol=1e-12)


def test_tprod_identity_and_transpose(rng):
    a = rng.standard_normal((3, 4, 5))
    b = rng.standard_normal((4, 2, 5))
    np.testing.assert_allclose(tprod(identity_tensor(3, 5), a), a, atol=1e-12)
    np.testing.assert_allclose(ttranspose(tprod(a, b)), tprod(ttranspose(b), ttranspose(a)), atol=1e-12)
    # bcirc(A^T) = bcirc(A)^T
    np.testing.assert_allclose(bcirc(ttranspose(a)), bcirc(a).T, atol=0)


def test_tprod_dimension_mismatch(rng):
    with pytest.raises(ValueError):
        tprod(rng.standard_normal((3, 4, 5)), rng.standard_normal((3, 2, 5)))


@pytest.mark.parametrize("shape", [(4, 3, 5), (3, 5, 4), (2, 2, 1), (5, 5, 2)])
def test_tsvd_reconstructs_with_orthogonal_factors(rng, shape):
    t = rng.standard_normal(shape)
    fac = tsvd(t)
    np.testing.assert_allclose(fac.reconstruct(), t, atol=1e-10)
    u, s, v = fac.spatial()
    np.testing.assert_allclose(tprod(tprod(u, s), ttranspose(v)), t, atol=1e-10)
    r = min(shape[:2])
    np.testing.assert_allclose(tprod(ttranspose(u), u), identity_tensor(r, shape[2]), atol=1e-10)
    np.testing.assert_allclose(tprod(ttranspose(v), v), identity_tensor(r, shape[2]), atol=1e-10)
    assert np.all(np.diff(fac.S, axis=0) <= 1e-12)


def test_tnn_matches_full_spectrum(rng):
    t = rng.standard_normal((4, 3, 6))
    assert tnn(t) == pytest.approx(tnn_full(t), rel=1e-12)


def test_tnn_of_single_frame_is_nuclear_norm(rng):
    m = rng.standard_normal((5, 4))
    assert tnn(m[:, :, None]) == pytest.approx(np.linalg.svd(m, compute_uv=False).sum())


@pytest.mark.parametrize("n", [1, 2, 5, 6])
def test_tsvt_matches_full_complex_oracle(rng, n):
    z = rng.standard_normal((4, 3, n))
    np.testing.assert_allclose(tsvt(z, 0.7), tsvt_full(z, 0.7), atol=1e-10)


def test_tsvt_is_prox_of_tnn(rng):
    # tsvt(z, tau) minimizes tau*TNN(B) + 1/2 ||B - z||^2: no random
    # perturbation may lower the objective
    z = rng.standard_normal((4, 4, 5))
    tau = 0.8
    b = tsvt(z, tau)
    obj = lambda y: tau * tnn(y) + 0.5 * np.sum((y - z) ** 2)  # noqa: E731
    base = obj(b)
    for scale in (1e-1, 1e-2, 1e-3):
        for _ in range(40):
            assert obj(b + scale * rng.standard_normal(z.shape)) >= base - 1e-12


def test_tsvt_single_frame_equals_svt(rng):
    m = rng.standard_normal((6, 4))
    np.testing.assert_allclose(tsvt(m[:, :, None], 1.1)[:, :, 0], svt(m, 1.1), atol=1e-12)


def test_tsvt_large_tau_gives_zero(rng):
    z = rng.standard_normal((3, 3, 4))
    assert np.all(tsvt(z, 1e6) == 0)
    with pytest.raises(ValueError):
        tsvt(z, 0.0)


def test_soft_threshold():
    np.testing.assert_array_equal(soft(np.array([-2.0, -0.5, 0.0, 0.5, 3.0]), 1.0), [-1.0, 0.0, 0.0, 0.0, 2.0])
    with pytest.raises(ValueError):
        soft(np.zeros(2), -1.0)


def test_svd_failure_names_slice(monkeypatch, rng):
    def boom(*a, **k):
        raise np.linalg.LinAlgError("no convergence")

    monkeypatch.setattr(np.linalg, "svd", boom)
    with pytest.raises(TSvdError) as exc:
        tsvt(rng.standard_normal((2, 2, 3)), 0.1)
    assert exc.value.slice_index == 0


def test_tensor_dump_round_trip(tmp_path, rng):
    t = rng.standard_normal((3, 4, 5))
    p = tmp_path / "t.t3"
    write_tensor(p, t)
    assert p.read_bytes()[:2] == b"T3"
    assert p.stat().st_size == 2 + 12 + 8 * t.size
    assert np.array_equal(read_tensor(p), t)
    (tmp_path / "bad").write_bytes(b"XX")
    with pytest.raises(ValueError):
        read_tensor(tmp_path / "bad")

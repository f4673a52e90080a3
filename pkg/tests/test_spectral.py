import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

import oracle
from freqgsp.sparse import ParameterError, normalize
from freqgsp.spectral import (
    BasisCache,
    fix_signs,
    matrix_hash,
    principal_angles,
    read_basis,
    spectrum,
    truncated_svd_bottom,
    truncated_svd_top,
    write_basis,
)

METHODS = ("dense", "iterative")


def up_to_sign(v, w):
    return min(np.abs(v - w).max(), np.abs(v + w).max())


@pytest.mark.parametrize("method", METHODS)
def test_rank_one_top_and_bottom(method):
    A = np.array([[1.0, 0.0], [0.0, 0.0]])
    top = truncated_svd_top(A, 1, method=method)
    np.testing.assert_allclose(top.singular_values, [1.0])
    assert up_to_sign(top.item_vectors[:, 0], np.array([1.0, 0.0])) < 1e-12
    bottom = truncated_svd_bottom(A, 1, method=method)
    assert up_to_sign(bottom.item_vectors[:, 0], np.array([0.0, 1.0])) < 1e-12
    assert bottom.singular_values[0] < 1e-12


def test_identity_top_two():
    b = truncated_svd_top(np.eye(3), 2)
    np.testing.assert_allclose(b.singular_values, [1.0, 1.0])
    for v in b.item_vectors.T:
        assert np.linalg.norm(np.eye(3) @ v - v) < 1e-8


@pytest.mark.parametrize("method", METHODS)
def test_diagonal_bottom(method):
    b = truncated_svd_bottom(np.diag([1.0, 0.5]), 1, method=method)
    assert up_to_sign(b.item_vectors[:, 0], np.array([0.0, 1.0])) < 1e-10
    np.testing.assert_allclose(b.singular_values, [0.5])


@pytest.mark.parametrize("method", METHODS)
def test_toy_matches_dense(toy, method):
    Rn = oracle.normalize(toy)
    s, V = oracle.right_vectors(Rn)
    top = truncated_svd_top(normalize(toy), 2, method=method)
    np.testing.assert_allclose(top.singular_values, s[:2], atol=1e-8)
    bottom = truncated_svd_bottom(normalize(toy), 2, method=method)
    np.testing.assert_allclose(bottom.singular_values, s[-2:], atol=1e-8)
    assert principal_angles(bottom.item_vectors, V[-2:].T).max() < 1e-6


def test_toy_singular_values_frozen(toy):
    # frozen from the dense oracle
    s = truncated_svd_top(normalize(toy), 4, method="dense").singular_values
    np.testing.assert_allclose(s, [1.0, 0.8424, 0.4847, 0.0], atol=5e-5)


@pytest.mark.parametrize("k", [0, 5])
def test_k_out_of_range(toy, k):
    with pytest.raises(ParameterError):
        truncated_svd_top(toy, k)
    with pytest.raises(ParameterError):
        truncated_svd_bottom(toy, k)


def test_unknown_method(toy):
    with pytest.raises(ParameterError):
        truncated_svd_top(toy, 1, method="magic")


def random_normalized(seed, max_dim=20):
    rng = np.random.default_rng(seed)
    m, n = rng.integers(2, max_dim + 1, 2)
    return normalize(oracle.random_interactions(rng, m, n, rng.uniform(0.15, 0.5)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.data())
def test_basis_invariants(seed, data):
    Rn = random_normalized(seed)
    r = min(Rn.shape)
    k = data.draw(st.integers(1, r))
    for f in (truncated_svd_top, truncated_svd_bottom):
        b = f(Rn, k)
        W = b.item_vectors
        assert W.shape == (Rn.shape[1], k)
        np.testing.assert_allclose(W.T @ W, np.eye(k), atol=1e-8)
        assert np.all(np.diff(b.singular_values) <= 1e-15)
        assert b.singular_values.min() >= 0 and b.singular_values.max() <= 1 + 1e-8
        P = b.projector()
        assert np.linalg.norm(P @ P - P) < 1e-8


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.data())
def test_top_and_bottom_orthogonal(seed, data):
    Rn = random_normalized(seed)
    s, _ = spectrum(Rn)
    r = len(s)
    kt = data.draw(st.integers(1, r - 1))
    kb = data.draw(st.integers(1, r - kt))
    # a singular value shared by both ends makes the split ambiguous
    if s[kt - 1] - s[r - kb] > 1e-6:
        Wt = truncated_svd_top(Rn, kt).item_vectors
        Wb = truncated_svd_bottom(Rn, kb).item_vectors
        assert np.linalg.norm(Wt.T @ Wb) < 1e-6


def test_fix_signs_largest_entry_nonnegative():
    V = fix_signs(np.array([[0.1, -0.2], [-0.9, 0.1]]))
    np.testing.assert_array_equal(V, [[-0.1, 0.2], [0.9, -0.1]])


def test_deterministic_for_fixed_seed():
    Rn = random_normalized(3, 40)
    a = truncated_svd_bottom(Rn, 3, method="iterative")
    b = truncated_svd_bottom(Rn, 3, method="iterative")
    np.testing.assert_array_equal(a.item_vectors, b.item_vectors)


def test_wide_matrix_bottom_iterative():
    rng = np.random.default_rng(7)
    Rn = normalize(oracle.random_interactions(rng, 12, 30, 0.4))
    s, V = spectrum(Rn)
    b = truncated_svd_bottom(Rn, 3, method="iterative")
    np.testing.assert_allclose(b.singular_values, s[-3:], atol=1e-8)
    assert principal_angles(b.item_vectors, V[:, -3:]).max() < 1e-6


def test_cache_roundtrip_and_reuse(tmp_path, toy):
    cache = BasisCache(tmp_path)
    A = normalize(toy).values
    first = truncated_svd_top(A, 2, cache=cache)
    files = list(tmp_path.iterdir())
    assert len(files) == 1 and files[0].name == f"{matrix_hash(A)}_top_2.bin"
    second = truncated_svd_top(A, 2, cache=cache)
    np.testing.assert_array_equal(first.item_vectors, second.item_vectors)
    np.testing.assert_array_equal(first.singular_values, second.singular_values)


def test_cache_file_layout(tmp_path, toy):
    b = truncated_svd_bottom(normalize(toy), 2)
    p = tmp_path / "b.bin"
    write_basis(p, b, 4)
    raw = p.read_bytes()
    assert raw[:8] == b"FGSPBAS\x00"
    assert len(raw) == 8 + 4 + 3 * 8 + 8 * (2 + 4 * 2)
    back = read_basis(p, "bottom")
    np.testing.assert_array_equal(back.item_vectors, b.item_vectors)
    p.write_bytes(b"garbage" + raw[7:])
    with pytest.raises(ValueError):
        read_basis(p, "bottom")


def test_matrix_hash_sparse_and_content_sensitive(toy):
    a = matrix_hash(sp.csr_matrix(toy))
    t = toy.copy()
    t[0, 3] = 1
    assert a != matrix_hash(sp.csr_matrix(t))
    assert a == matrix_hash(sp.csr_matrix(toy))


def test_iterative_breakdown_on_identity_falls_back():
    # I - Rn^T Rn vanishes for the identity, so ARPACK has no Krylov space to build
    b = truncated_svd_bottom(np.eye(3), 1, method="iterative")
    np.testing.assert_allclose(b.singular_values, [1.0])
    np.testing.assert_allclose(np.linalg.norm(b.item_vectors), 1.0)

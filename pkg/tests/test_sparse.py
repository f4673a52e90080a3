import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

import oracle
from freqgsp.sparse import (
    ParameterError,
    build_interaction_matrix,
    column_quantile,
    cooccurrence_item,
    cooccurrence_user,
    denormalize,
    inv_sqrt,
    nearest_rank,
    normalize,
)


def binary_matrices(max_m=8, max_n=8):
    return st.integers(1, max_m).flatmap(
        lambda m: st.integers(1, max_n).flatmap(
            lambda n: st.lists(st.booleans(), min_size=m * n, max_size=m * n).map(
                lambda bits: np.array(bits, dtype=float).reshape(m, n)
            )
        )
    )


def test_build_toy(toy_triplets, toy):
    R = build_interaction_matrix(toy_triplets)
    assert R.user_ids == ("u1", "u2", "u3", "u4")
    assert R.item_ids == ("i1", "i2", "i3", "i4")
    np.testing.assert_array_equal(R.toarray(), toy)
    assert R.nnz == 8


def test_duplicates_collapse_to_one():
    R = build_interaction_matrix([(1, 2), (1, 2, 5.0), (2, 1)])
    np.testing.assert_array_equal(R.toarray(), [[0, 1], [1, 0]])


def test_integer_ids_sort_numerically():
    R = build_interaction_matrix([(10, 1), (9, 1), (2, 1)])
    assert R.user_ids == (2, 9, 10)


def test_fixed_id_universe_keeps_empty_rows():
    R = build_interaction_matrix([("a", "x")], user_ids=["a", "b"], item_ids=["x", "y"])
    assert R.shape == (2, 2)
    assert R.pairs() == [(0, 0)]
    assert R.triplets() == [("a", "x")]


def test_empty_input_rejected():
    with pytest.raises(ValueError, match="no interactions"):
        build_interaction_matrix([])


def test_normalize_matches_dense(toy):
    Rn = normalize(toy)
    np.testing.assert_allclose(Rn.toarray(), oracle.normalize(toy), atol=1e-15)
    np.testing.assert_array_equal(Rn.user_degrees, [3, 2, 1, 2])
    np.testing.assert_array_equal(Rn.item_degrees, [2, 2, 3, 1])


def test_zero_degree_convention():
    R = np.array([[1.0, 0, 0], [0, 0, 0]])
    Rn = normalize(R)
    assert np.all(np.isfinite(Rn.toarray()))
    np.testing.assert_array_equal(Rn.toarray(), [[1, 0, 0], [0, 0, 0]])
    np.testing.assert_array_equal(inv_sqrt([0.0, 4.0]), [0.0, 0.5])


def test_denormalize_roundtrip(toy):
    np.testing.assert_allclose(denormalize(normalize(toy)).toarray(), toy, atol=1e-14)


@settings(max_examples=60, deadline=None)
@given(binary_matrices())
def test_cooccurrence_spectrum_in_unit_interval(R):
    Rn = normalize(R)
    for O in (cooccurrence_item(Rn), cooccurrence_user(Rn)):
        np.testing.assert_allclose(O, O.T, atol=1e-14)
        lam = np.linalg.eigvalsh(O)
        assert lam.min() >= -1e-12 and lam.max() <= 1 + 1e-12


def test_cooccurrence_sparse_and_dense_agree(toy):
    Rn = normalize(toy)
    assert sp.issparse(cooccurrence_item(Rn, dense=False))
    np.testing.assert_allclose(cooccurrence_item(Rn, dense=False).toarray(), cooccurrence_item(Rn))


@pytest.mark.parametrize("q,m,rank", [(0.7, 10, 7), (0.65, 4, 3), (0.6, 5, 3), (0.8, 5, 4),
                                      (0.0, 5, 1), (1.0, 5, 5), (0.01, 3, 1)])
def test_nearest_rank(q, m, rank):
    assert nearest_rank(q, m) == rank


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=30),
    st.sampled_from([0.0, 0.6, 0.65, 0.7, 0.75, 0.8, 1.0]),
)
def test_column_quantile_matches_sorting(col, q):
    thr = column_quantile(np.array(col)[:, None], q)
    assert thr[0] == oracle.nearest_rank_threshold(col, q)


def test_column_quantile_includes_zero_entries():
    S = np.array([[0.0], [0.0], [0.0], [0.9]])
    assert column_quantile(S, 0.7)[0] == 0.0
    # restricted to the support only the stored value is ranked
    assert column_quantile(S, 0.7, support=S != 0)[0] == 0.9


def test_column_quantile_empty_support_is_inf():
    S = np.ones((3, 2))
    sup = np.array([[1, 0], [0, 0], [1, 0]], dtype=bool)
    thr = column_quantile(S, 0.5, support=sup)
    assert thr[0] == 1.0 and thr[1] == np.inf


@pytest.mark.parametrize("q", [-0.1, 1.5])
def test_column_quantile_rejects_bad_q(q):
    with pytest.raises(ParameterError):
        column_quantile(np.ones((2, 2)), q)

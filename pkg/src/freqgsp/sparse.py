"""Interaction matrices, degree normalization and co-occurrence products.

Everything here is built on ``scipy.sparse`` CSR matrices.  Score matrices
are plain dense ``numpy`` arrays of shape ``(n_users, n_items)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class ParameterError(ValueError):
    """Raised when a hyperparameter or argument is outside its domain."""


def id_sort_key(x):
    # integers sort numerically and before strings, so "10" does not precede "9"
    if isinstance(x, (int, np.integer)):
        return (0, int(x), "")
    return (1, 0, str(x))


@dataclass(frozen=True)
class InteractionMatrix:
    """Binary user x item matrix with bidirectional ID maps."""

    matrix: sp.csr_matrix
    user_ids: tuple
    item_ids: tuple
    user_index: dict = field(repr=False, compare=False, default=None)
    item_index: dict = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        m, n = self.matrix.shape
        if len(self.user_ids) != m or len(self.item_ids) != n:
            raise ValueError("ID maps do not match matrix shape")
        if self.user_index is None:
            object.__setattr__(self, "user_index", {u: k for k, u in enumerate(self.user_ids)})
        if self.item_index is None:
            object.__setattr__(self, "item_index", {i: k for k, i in enumerate(self.item_ids)})

    @property
    def n_users(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_items(self) -> int:
        return self.matrix.shape[1]

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def pairs(self) -> list[tuple[int, int]]:
        """Index pairs ``(u, i)`` of all stored interactions, row-major."""
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return list(zip(coo.row[order].tolist(), coo.col[order].tolist()))

    def triplets(self) -> list[tuple[Hashable, Hashable]]:
        """External-ID pairs of all stored interactions."""
        return [(self.user_ids[u], self.item_ids[i]) for u, i in self.pairs()]

    def with_pairs(self, pairs: Iterable[tuple[int, int]]) -> "InteractionMatrix":
        """New matrix over the same ID maps holding the given index pairs."""
        return InteractionMatrix(
            _binary_csr(pairs, self.shape), self.user_ids, self.item_ids,
            self.user_index, self.item_index,
        )


@dataclass(frozen=True)
class NormalizedMatrix:
    """Symmetrically degree-normalized interactions ``D_U^-1/2 R D_I^-1/2``."""

    values: sp.csr_matrix
    user_degrees: np.ndarray
    item_degrees: np.ndarray

    @property
    def shape(self):
        return self.values.shape

    def toarray(self) -> np.ndarray:
        return self.values.toarray()


@dataclass(frozen=True)
class EnhancedMatrix:
    """Interactions with the high-pass selected ones up-weighted by ``alpha1``."""

    values: sp.csr_matrix
    mask: sp.csr_matrix
    alpha1: float


def _binary_csr(pairs, shape) -> sp.csr_matrix:
    pairs = list(pairs)
    if pairs:
        rows, cols = (np.asarray(a, dtype=np.int64) for a in zip(*pairs))
    else:
        rows = cols = np.empty(0, dtype=np.int64)
    mat = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=shape)
    mat.sum_duplicates()
    mat.data[:] = 1.0
    return mat


def build_interaction_matrix(
    triplets: Iterable[Sequence],
    user_ids: Iterable[Hashable] | None = None,
    item_ids: Iterable[Hashable] | None = None,
) -> InteractionMatrix:
    """Build a deduplicated binary interaction matrix.

    ``triplets`` holds ``(user_id, item_id, ...)`` tuples; anything after the
    first two fields is ignored.  Indices follow the sorted external IDs.
    Passing ``user_ids``/``item_ids`` fixes the ID universe, which is how a
    training matrix keeps rows for users that only appear in the test split.
    """
    pairs = [(t[0], t[1]) for t in triplets]
    if not pairs:
        raise ValueError("no interactions")
    users = set(user_ids) if user_ids is not None else set()
    items = set(item_ids) if item_ids is not None else set()
    users.update(u for u, _ in pairs)
    items.update(i for _, i in pairs)
    uids = tuple(sorted(users, key=id_sort_key))
    iids = tuple(sorted(items, key=id_sort_key))
    uix = {u: k for k, u in enumerate(uids)}
    iix = {i: k for k, i in enumerate(iids)}
    mat = _binary_csr(((uix[u], iix[i]) for u, i in pairs), (len(uids), len(iids)))
    return InteractionMatrix(mat, uids, iids, uix, iix)


def inv_sqrt(d: np.ndarray) -> np.ndarray:
    """Elementwise ``d**-1/2`` with the convention ``0**-1/2 = 0``."""
    d = np.asarray(d, dtype=float)
    out = np.zeros_like(d)
    pos = d > 0
    out[pos] = 1.0 / np.sqrt(d[pos])
    return out


def degrees(R) -> tuple[np.ndarray, np.ndarray]:
    """Row and column sums of a (possibly weighted) interaction matrix."""
    R = as_csr(R)
    return np.asarray(R.sum(axis=1)).ravel(), np.asarray(R.sum(axis=0)).ravel()


def as_csr(R) -> sp.csr_matrix:
    if isinstance(R, (InteractionMatrix, NormalizedMatrix)):
        R = R.matrix if isinstance(R, InteractionMatrix) else R.values
    elif isinstance(R, EnhancedMatrix):
        R = R.values
    if sp.issparse(R):
        return sp.csr_matrix(R, dtype=float)
    return sp.csr_matrix(np.asarray(R, dtype=float))


def normalize(R) -> NormalizedMatrix:
    """Return ``D_U^-1/2 R D_I^-1/2`` together with the degree vectors.

    Works on binary and weighted matrices alike; for weighted inputs the
    degrees are the row/column sums of the weights.
    """
    R = as_csr(R)
    du, di = degrees(R)
    values = sp.diags(inv_sqrt(du)) @ R @ sp.diags(inv_sqrt(di))
    values = sp.csr_matrix(values)
    values.eliminate_zeros()
    return NormalizedMatrix(values, du, di)


def denormalize(Rn: NormalizedMatrix) -> sp.csr_matrix:
    """Invert :func:`normalize` on the stored support."""
    return sp.csr_matrix(
        sp.diags(np.sqrt(Rn.user_degrees)) @ Rn.values @ sp.diags(np.sqrt(Rn.item_degrees))
    )


def cooccurrence_item(Rn: NormalizedMatrix, dense: bool = True):
    """Item-item co-occurrence ``O_I = Rn^T Rn``."""
    O = (Rn.values.T @ Rn.values).tocsr()
    return O.toarray() if dense else O


def cooccurrence_user(Rn: NormalizedMatrix, dense: bool = True):
    """User-user co-occurrence ``O_U = Rn Rn^T``."""
    O = (Rn.values @ Rn.values.T).tocsr()
    return O.toarray() if dense else O


def nearest_rank(q: float, m: int) -> int:
    """1-based rank ``ceil(q*m)`` clamped to ``[1, m]``."""
    # round first: 0.7 * 10 evaluates to 7.000000000000001
    return min(max(math.ceil(round(q * m, 9)), 1), m)


def column_quantile(S: np.ndarray, q: float, support=None) -> np.ndarray:
    """Per-column nearest-rank quantile.

    The threshold of column ``i`` is the ``ceil(q * m)``-th smallest entry
    (1-based, clamped to the first element when ``q * m < 1``).  With
    ``support`` (a boolean/sparse matrix of the same shape) only the entries
    inside the support of each column are ranked; columns with an empty
    support get ``+inf``.
    """
    if not 0.0 <= q <= 1.0:
        raise ParameterError(f"quantile q must lie in [0, 1], got {q}")
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.size == 0:
        raise ParameterError("score matrix must be a nonempty 2-d array")
    if support is None:
        rank = nearest_rank(q, S.shape[0])
        return np.partition(S, rank - 1, axis=0)[rank - 1]

    mask = support.toarray() if sp.issparse(support) else np.asarray(support)
    mask = mask.astype(bool)
    out = np.full(S.shape[1], np.inf)
    for i in range(S.shape[1]):
        col = S[mask[:, i], i]
        if col.size:
            rank = nearest_rank(q, col.size)
            out[i] = np.partition(col, rank - 1)[rank - 1]
    return out

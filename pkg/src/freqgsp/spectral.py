"""Truncated SVD of a normalized interaction matrix at either spectral end.

Right singular vectors are stored column-wise (``n_items x k``).  Small and
medium problems go through a dense economy SVD; large ones use ARPACK.  The
bottom end is always taken among the ``min(m, n)`` economy triplets, so for
wide matrices the null space of ``Rn`` beyond the rank bound is never
returned.
"""
from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .sparse import NormalizedMatrix, ParameterError

DENSE_LIMIT = 4096
DEFAULT_TOL = 1e-10
DEFAULT_MAXITER = 1000
DEFAULT_SEED = 42


class ConvergenceError(ArithmeticError):
    """An iterative eigensolver failed to reach the requested tolerance."""


@dataclass(frozen=True)
class SpectralBasis:
    singular_values: np.ndarray  # descending
    item_vectors: np.ndarray  # n_items x k, orthonormal columns
    end: str  # "top" or "bottom"

    @property
    def k(self) -> int:
        return self.item_vectors.shape[1]

    def projector(self) -> np.ndarray:
        W = self.item_vectors
        return W @ W.T


def _matrix(Rn):
    if isinstance(Rn, NormalizedMatrix):
        return Rn.values
    return Rn if sp.issparse(Rn) else np.asarray(Rn, dtype=float)


def fix_signs(V: np.ndarray) -> np.ndarray:
    """Flip columns so each one's largest-magnitude entry is nonnegative."""
    V = np.array(V, dtype=float, copy=True)
    if V.size == 0:
        return V
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def _check_k(k, shape):
    if not 1 <= k <= min(shape):
        raise ParameterError(f"k={k} outside [1, {min(shape)}] for a {shape[0]}x{shape[1]} matrix")


def _dense_economy(A):
    A = A.toarray() if sp.issparse(A) else A
    _, s, Vt = np.linalg.svd(A, full_matrices=False)
    return s, Vt.T


def _use_dense(method, shape, k):
    if method == "dense":
        return True
    if method == "iterative":
        # ARPACK needs k < dimension of the operator
        return k >= min(shape) - 1
    if method == "auto":
        return min(shape) <= DENSE_LIMIT or k >= min(shape) - 1
    raise ParameterError(f"unknown method {method!r}")


def _verify(A, s, V, tol=1e-6):
    # ||A v_j|| must equal sigma_j for a right singular pair
    norms = np.linalg.norm(A @ V, axis=0)
    err = np.max(np.abs(norms - s)) if s.size else 0.0
    if err > tol:
        raise ConvergenceError(f"singular triplets failed verification (max residual {err:.3e})")


def truncated_svd_top(
    Rn,
    k: int,
    method: str = "auto",
    tol: float = DEFAULT_TOL,
    maxiter: int = DEFAULT_MAXITER,
    seed: int = DEFAULT_SEED,
    cache: "BasisCache | None" = None,
) -> SpectralBasis:
    """Top-``k`` right singular subspace of ``Rn``."""
    A = _matrix(Rn)
    _check_k(k, A.shape)
    if cache is not None:
        hit = cache.get(A, k, "top")
        if hit is not None:
            return hit
    if _use_dense(method, A.shape, k):
        s, V = _dense_economy(A)
        s, V = s[:k], V[:, :k]
    else:
        v0 = np.random.default_rng(seed).standard_normal(min(A.shape))
        try:
            _, s, Vt = spla.svds(sp.csr_matrix(A), k=k, which="LM", tol=tol,
                                 maxiter=maxiter, v0=v0, solver="arpack")
        except spla.ArpackNoConvergence as exc:
            raise ConvergenceError(
                f"ARPACK did not converge for top-{k} SVD: {len(exc.eigenvalues)} of {k} "
                f"values converged within {maxiter} iterations (tol={tol})"
            ) from exc
        except spla.ArpackError as exc:
            s, Vt = _breakdown_fallback(A, exc)
            s, Vt = s[:k], Vt[:, :k].T
        order = np.argsort(-s, kind="stable")
        s, V = s[order], Vt.T[:, order]
    s = np.clip(s, 0.0, None)
    V = fix_signs(V)
    _verify(A, s, V)
    basis = SpectralBasis(s, V, "top")
    if cache is not None:
        cache.put(A, basis)
    return basis


def _breakdown_fallback(A, exc):
    # ARPACK stops when the start vector lies in an invariant subspace (e.g. an
    # operator that vanishes); small problems are then solved densely
    if min(A.shape) > DENSE_LIMIT:
        raise ConvergenceError(f"ARPACK breakdown: {exc}") from exc
    return _dense_economy(A)


def _bottom_iterative(A, k, tol, maxiter, seed):
    m, n = A.shape
    A = sp.csr_matrix(A)
    rng = np.random.default_rng(seed)
    if n <= m:
        # largest eigenpairs of I - Rn^T Rn are the smallest right singular pairs
        op = spla.LinearOperator((n, n), matvec=lambda x: x - A.T @ (A @ x), dtype=float)
        dim = n
    else:
        op = spla.LinearOperator((m, m), matvec=lambda x: x - A @ (A.T @ x), dtype=float)
        dim = m
    try:
        mu, X = spla.eigsh(op, k=k, which="LA", tol=tol, maxiter=maxiter,
                           v0=rng.standard_normal(dim))
    except spla.ArpackNoConvergence as exc:
        raise ConvergenceError(
            f"ARPACK did not converge for bottom-{k} subspace: {len(exc.eigenvalues)} of {k} "
            f"values converged within {maxiter} iterations (tol={tol})"
        ) from exc
    except spla.ArpackError as exc:
        s, V = _breakdown_fallback(A, exc)
        return s[-k:], V[:, -k:]
    s = np.sqrt(np.clip(1.0 - mu, 0.0, None))
    order = np.argsort(-s, kind="stable")
    s, X = s[order], X[:, order]
    if n <= m:
        # sqrt(1 - mu) loses half the digits near zero; ||A v|| does not
        return np.linalg.norm(A @ X, axis=0), X
    # wide matrix: eigenvectors are left vectors, map them to the item side
    if np.any(s < 1e-8):
        raise ConvergenceError(
            "bottom subspace of a wide matrix contains zero singular values; "
            "right vectors are undetermined, use method='dense'"
        )
    return s, (A.T @ X) / s


def truncated_svd_bottom(
    Rn,
    k: int,
    method: str = "auto",
    tol: float = DEFAULT_TOL,
    maxiter: int = DEFAULT_MAXITER,
    seed: int = DEFAULT_SEED,
    cache: "BasisCache | None" = None,
) -> SpectralBasis:
    """Right singular vectors of the ``k`` smallest economy singular values.

    Columns are ordered by descending singular value, so the last column is
    the highest graph frequency.
    """
    A = _matrix(Rn)
    _check_k(k, A.shape)
    if cache is not None:
        hit = cache.get(A, k, "bottom")
        if hit is not None:
            return hit
    if _use_dense(method, A.shape, k):
        s, V = _dense_economy(A)
        s, V = s[-k:], V[:, -k:]
    else:
        s, V = _bottom_iterative(A, k, tol, maxiter, seed)
    s = np.clip(s, 0.0, None)
    V = fix_signs(V)
    _verify(A, s, V)
    basis = SpectralBasis(s, V, "bottom")
    if cache is not None:
        cache.put(A, basis)
    return basis


def spectrum(Rn) -> tuple[np.ndarray, np.ndarray]:
    """Full dense economy SVD: descending singular values and item vectors.

    Handy when many ``k`` are needed from one matrix; slice the columns.
    """
    s, V = _dense_economy(_matrix(Rn))
    return np.clip(s, 0.0, None), fix_signs(V)


def principal_angles(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Principal angles (radians) between the column spans of ``A`` and ``B``."""
    Qa, _ = np.linalg.qr(A)
    Qb, _ = np.linalg.qr(B)
    c = np.linalg.svd(Qa.T @ Qb, compute_uv=False)
    return np.arccos(np.clip(c, -1.0, 1.0))


_MAGIC = b"FGSPBAS\x00"
_VERSION = 1
_HEADER = struct.Struct("<8sIQQQ")


def matrix_hash(A) -> str:
    h = hashlib.sha256()
    if sp.issparse(A):
        A = sp.csr_matrix(A)
        A.sort_indices()
        parts = (np.asarray(A.shape, "<i8"), A.indptr.astype("<i8"),
                 A.indices.astype("<i8"), A.data.astype("<f8"))
    else:
        A = np.ascontiguousarray(A, dtype="<f8")
        parts = (np.asarray(A.shape, "<i8"), A)
    for p in parts:
        h.update(p.tobytes())
    return h.hexdigest()


class BasisCache:
    """On-disk cache of spectral bases keyed by (matrix hash, k, end).

    Each file is a fixed little-endian header ``(magic, version, m, n, k)``
    followed by ``k`` singular values and the ``n x k`` vector block in
    row-major float64.
    """

    def __init__(self, directory):
        self.directory = Path(directory)

    def path(self, A, k, end) -> Path:
        return self.directory / f"{matrix_hash(A)}_{end}_{k}.bin"

    def get(self, A, k, end) -> SpectralBasis | None:
        p = self.path(A, k, end)
        if not p.exists():
            return None
        return read_basis(p, end)

    def put(self, A, basis: SpectralBasis):
        self.directory.mkdir(parents=True, exist_ok=True)
        p = self.path(A, basis.k, basis.end)
        tmp = p.with_suffix(f".tmp{os.getpid()}")
        write_basis(tmp, basis, A.shape[0])
        tmp.replace(p)


def write_basis(path, basis: SpectralBasis, m: int):
    n, k = basis.item_vectors.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, m, n, k))
        fh.write(np.asarray(basis.singular_values, "<f8").tobytes())
        fh.write(np.ascontiguousarray(basis.item_vectors, "<f8").tobytes())


def read_basis(path, end: str) -> SpectralBasis:
    raw = Path(path).read_bytes()
    magic, version, m, n, k = _HEADER.unpack_from(raw)
    if magic != _MAGIC or version != _VERSION:
        raise ValueError(f"{path}: not a basis cache file (magic={magic!r}, version={version})")
    off = _HEADER.size
    s = np.frombuffer(raw, "<f8", count=k, offset=off).copy()
    V = np.frombuffer(raw, "<f8", count=n * k, offset=off + 8 * k).reshape(n, k).copy()
    return SpectralBasis(s, V, end)

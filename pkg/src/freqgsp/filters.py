"""Graph filters for implicit-feedback recommendation.

The frequency-aware recommender blends three score matrices::

    P = alpha2 * P1 + P2 + P3

``P1`` comes from the cascaded module (an ideal high-pass filter selects
interactions that carry item-specific signal, those are up-weighted, then an
ideal low-pass filter predicts on the enhanced matrix).  ``P2``/``P3`` are
polynomial neighborhood filters ``I - (I - O)^k`` on the item and user side.

GF-CF and PGSP baselines and the graph smoothness diagnostic live here too.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np
import scipy.sparse as sp

from .sparse import (
    EnhancedMatrix,
    InteractionMatrix,
    NormalizedMatrix,
    ParameterError,
    as_csr,
    column_quantile,
    cooccurrence_item,
    cooccurrence_user,
    inv_sqrt,
    normalize,
)
from .spectral import DENSE_LIMIT, SpectralBasis, spectrum, truncated_svd_bottom, truncated_svd_top

COMPONENTS = ("ihf", "ilf", "ihnf", "uhnf")


@dataclass(frozen=True)
class FilterConfig:
    p1: int = 64  # high-frequency components
    p2: int = 64  # low-frequency components
    q: float = 0.7
    alpha1: float = 0.5
    alpha2: float = 0.5
    k1: int = 4
    k2: int = 4
    ihf: bool = True
    ilf: bool = True
    ihnf: bool = True
    uhnf: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self, shape=None):
        if self.ilf and self.ihf and self.p1 < 1:
            raise ParameterError(f"p1 must be >= 1, got {self.p1}")
        if self.ilf and self.p2 < 1:
            raise ParameterError(f"p2 must be >= 1, got {self.p2}")
        if not 0.0 <= self.q <= 1.0:
            raise ParameterError(f"q must lie in [0, 1], got {self.q}")
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ParameterError("alpha1 and alpha2 must be nonnegative")
        if self.k1 < 1 or self.k2 < 1:
            raise ParameterError("k1 and k2 must be >= 1")
        if shape is not None:
            r = min(shape)
            if self.ilf and self.p2 > r:
                raise ParameterError(f"p2={self.p2} exceeds min(m, n)={r}")
            if self.ilf and self.ihf and self.p1 > r:
                raise ParameterError(f"p1={self.p1} exceeds min(m, n)={r}")
        return self

    def without(self, *components: str) -> "FilterConfig":
        """Switch off the named components (``"ihf"``, ``"ilf"``, ...)."""
        bad = set(components) - set(COMPONENTS)
        if bad:
            raise ParameterError(f"unknown components {sorted(bad)}")
        return replace(self, **{c: False for c in components})

    def only(self, *components: str) -> "FilterConfig":
        return self.without(*[c for c in COMPONENTS if c not in components])

    def effective_alpha1(self) -> float:
        return self.alpha1 if self.ihf else 0.0

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FilterConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def _dense(R) -> np.ndarray:
    if isinstance(R, (InteractionMatrix, NormalizedMatrix, EnhancedMatrix)) or sp.issparse(R):
        return as_csr(R).toarray()
    return np.asarray(R, dtype=float)


def degree_conjugated_projection(signal, W: np.ndarray, item_degrees: np.ndarray) -> np.ndarray:
    """``signal @ D^-1/2 W W^T D^1/2`` without forming the n x n filter."""
    left = W * inv_sqrt(item_degrees)[:, None]
    right = W.T * np.sqrt(np.clip(item_degrees, 0.0, None))[None, :]
    S = as_csr(signal) if sp.issparse(signal) or not isinstance(signal, np.ndarray) else signal
    return np.asarray(S @ left) @ right


def ideal_highpass_scores(R, Rn: NormalizedMatrix, basis_bottom: SpectralBasis) -> np.ndarray:
    """``R* = R D_I^-1/2 W W^T D_I^1/2`` for the bottom singular basis ``W``."""
    if basis_bottom.end != "bottom":
        raise ValueError("ideal high-pass filter needs a bottom-end basis")
    R = as_csr(R)
    if basis_bottom.item_vectors.shape[0] != R.shape[1] or Rn.shape != R.shape:
        raise ValueError(
            f"dimension mismatch: R {R.shape}, Rn {Rn.shape}, basis {basis_bottom.item_vectors.shape}"
        )
    return degree_conjugated_projection(R, basis_bottom.item_vectors, Rn.item_degrees)


def select_unique_interactions(R, Rstar: np.ndarray, q: float, support_only: bool = False) -> sp.csr_matrix:
    """Mask of observed interactions whose high-pass score reaches the column q-quantile."""
    R = as_csr(R)
    Rstar = np.asarray(Rstar, dtype=float)
    if Rstar.shape != R.shape:
        raise ValueError(f"shape mismatch: R {R.shape} vs R* {Rstar.shape}")
    thr = column_quantile(Rstar, q, support=R if support_only else None)
    coo = R.tocoo()
    keep = (coo.data > 0) & (Rstar[coo.row, coo.col] >= thr[coo.col])
    mask = sp.csr_matrix(
        (np.ones(int(keep.sum())), (coo.row[keep], coo.col[keep])), shape=R.shape
    )
    return mask


def enhance(R, mask, alpha1: float) -> EnhancedMatrix:
    """``R_hat = R + alpha1 * mask``."""
    if alpha1 < 0:
        raise ParameterError(f"alpha1 must be nonnegative, got {alpha1}")
    R = as_csr(R)
    mask = as_csr(mask)
    if (mask - mask.multiply(R > 0)).count_nonzero():
        raise ValueError("mask selects entries outside the interaction support")
    values = (R + alpha1 * mask).tocsr()
    values.eliminate_zeros()
    return EnhancedMatrix(values, mask, float(alpha1))


def enhanced_signal(R, cfg: FilterConfig, method: str = "auto") -> EnhancedMatrix:
    """Run the high-pass half of the cascade and return the enhanced matrix."""
    R = as_csr(R)
    alpha1 = cfg.effective_alpha1()
    if alpha1 == 0.0:
        return EnhancedMatrix(R.copy(), sp.csr_matrix(R.shape), 0.0)
    Rn = normalize(R)
    basis = truncated_svd_bottom(Rn, cfg.p1, method=method)
    Rstar = ideal_highpass_scores(R, Rn, basis)
    return enhance(R, select_unique_interactions(R, Rstar, cfg.q), alpha1)


def ideal_lowpass_predict(signal, p2: int, method: str = "auto") -> np.ndarray:
    """``S D^-1/2 V V^T D^1/2`` with ``V`` the top-``p2`` basis of the normalized ``S``."""
    S = as_csr(signal)
    Sn = normalize(S)
    basis = truncated_svd_top(Sn, p2, method=method)
    return degree_conjugated_projection(S, basis.item_vectors, Sn.item_degrees)


def cascaded_predict(R, cfg: FilterConfig, method: str = "auto") -> np.ndarray:
    """Cascaded module output ``P1`` (zeros when the low-pass filter is disabled)."""
    R = as_csr(R)
    cfg.validate(R.shape)
    if not cfg.ilf:
        return np.zeros(R.shape)
    Rhat = enhanced_signal(R, cfg, method=method)
    return ideal_lowpass_predict(Rhat.values, cfg.p2, method=method)


def neighborhood_filter(O: np.ndarray, k: int) -> np.ndarray:
    """Polynomial low-pass filter ``I - (I - O)^k`` (dense)."""
    if k < 1:
        raise ParameterError(f"filter order must be >= 1, got {k}")
    O = np.asarray(O.toarray() if sp.issparse(O) else O, dtype=float)
    if k == 1:
        return O.copy()  # I - (I - O) is O, but not bit-for-bit in floating point
    L = np.eye(O.shape[0]) - O
    return np.eye(O.shape[0]) - np.linalg.matrix_power(L, k)


def neighborhood_filter_item(O_I, k1: int) -> np.ndarray:
    return neighborhood_filter(O_I, k1)


def neighborhood_filter_user(O_U, k2: int) -> np.ndarray:
    return neighborhood_filter(O_U, k2)


def item_neighborhood_scores(R, Rn: NormalizedMatrix, k1: int, materialize: str = "auto") -> np.ndarray:
    """``R F_I``; matrix-free as ``R - R (I - O_I)^k1`` when not materialized."""
    R = as_csr(R)
    if _materialize(materialize, R.shape):
        return np.asarray(R @ neighborhood_filter(cooccurrence_item(Rn), k1))
    A = Rn.values
    X = R.toarray()
    for _ in range(k1):
        X = X - np.asarray(A.T @ (A @ X.T)).T
    return R.toarray() - X


def user_neighborhood_scores(R, Rn: NormalizedMatrix, k2: int, materialize: str = "auto") -> np.ndarray:
    """``F_U R``; matrix-free as ``R - (I - O_U)^k2 R`` when not materialized."""
    R = as_csr(R)
    if _materialize(materialize, R.shape):
        return neighborhood_filter(cooccurrence_user(Rn), k2) @ R.toarray()
    A = Rn.values
    Y = R.toarray()
    for _ in range(k2):
        Y = Y - np.asarray(A @ (A.T @ Y))
    return R.toarray() - Y


def _materialize(mode, shape):
    if mode == "dense":
        return True
    if mode == "matrix-free":
        return False
    if mode == "auto":
        return min(shape) <= DENSE_LIMIT
    raise ParameterError(f"unknown materialize mode {mode!r}")


def parallel_predict(R, Rn: NormalizedMatrix, cfg: FilterConfig, materialize: str = "auto"):
    """Parallel module outputs ``(P2, P3)``; disabled terms are zero matrices."""
    R = as_csr(R)
    P2 = item_neighborhood_scores(R, Rn, cfg.k1, materialize) if cfg.ihnf else np.zeros(R.shape)
    P3 = user_neighborhood_scores(R, Rn, cfg.k2, materialize) if cfg.uhnf else np.zeros(R.shape)
    return P2, P3


def blend(P1, P2, P3, alpha2: float) -> np.ndarray:
    P1, P2, P3 = (np.asarray(P, dtype=float) for P in (P1, P2, P3))
    if not P1.shape == P2.shape == P3.shape:
        raise ValueError(f"shape mismatch: {P1.shape}, {P2.shape}, {P3.shape}")
    return alpha2 * P1 + P2 + P3


def predict(R, cfg: FilterConfig, method: str = "auto", materialize: str = "auto") -> np.ndarray:
    """Full frequency-aware score matrix for interaction matrix ``R``."""
    R = as_csr(R)
    cfg.validate(R.shape)
    Rn = normalize(R)
    P1 = cascaded_predict(R, cfg, method=method)
    P2, P3 = parallel_predict(R, Rn, cfg, materialize)
    return blend(P1, P2, P3, cfg.alpha2)


def gfcf_predict(R, Rn: NormalizedMatrix, alpha: float, k: int, method: str = "auto") -> np.ndarray:
    """GF-CF baseline: ``R (alpha D^-1/2 V_k V_k^T D^1/2 + O_I)``."""
    R = as_csr(R)
    linear = np.asarray((R @ Rn.values.T) @ Rn.values.toarray())
    if alpha == 0:
        return linear
    basis = truncated_svd_top(Rn, k, method=method)
    return linear + alpha * degree_conjugated_projection(R, basis.item_vectors, Rn.item_degrees)


def augmented_adjacency(Rn: NormalizedMatrix) -> np.ndarray:
    """``[[O_U, Rn], [Rn^T, O_I]]`` as a dense symmetric matrix."""
    A = Rn.toarray()
    return np.block([[A @ A.T, A], [A.T, A.T @ A]])


def pgsp_predict(R, Rn: NormalizedMatrix, phi: float, k: int) -> np.ndarray:
    """PGSP-style baseline on the augmented user+item graph.

    Each user's signal is the concatenation of their row of ``O_U`` and their
    interaction row; the filtered item block is returned.
    """
    if not 0.0 <= phi <= 1.0:
        raise ParameterError(f"phi must lie in [0, 1], got {phi}")
    R = as_csr(R)
    m, n = R.shape
    if not 1 <= k <= m + n:
        raise ParameterError(f"k={k} outside [1, {m + n}]")
    A = augmented_adjacency(Rn)
    signal = np.hstack([A[:m, :m], R.toarray()])
    out = phi * (signal @ A[:, m:])
    if phi < 1.0:
        _, U = np.linalg.eigh(np.eye(m + n) - A)  # ascending eigenvalues
        V = U[:, :k]
        out += (1.0 - phi) * ((signal @ V) @ V[m:].T)
    return out


def smoothness(L, x, squared_norm: bool = False) -> float:
    """Graph quadratic form ``x^T L x / ||x||``.

    With ``squared_norm=True`` the denominator is ``x^T x`` (the Rayleigh
    quotient), which is the quantity the filter monotonicity results are
    stated for.
    """
    x = np.asarray(x, dtype=float).ravel()
    nrm = np.linalg.norm(x)
    if nrm == 0:
        raise ValueError("smoothness is undefined for the zero signal")
    L = L.toarray() if sp.issparse(L) else np.asarray(L, dtype=float)
    quad = float(x @ L @ x)
    return quad / (nrm * nrm if squared_norm else nrm)


def response(lam, k: int):
    """Frequency response ``1 - lam**k`` of the order-``k`` neighborhood filter."""
    return 1.0 - np.asarray(lam, dtype=float) ** k


class FrequencyAwareModel:
    """Cached evaluator of the blended filter for many configurations.

    Spectra, enhanced matrices and neighborhood powers are computed once per
    distinct key and reused, which is what makes grid sweeps cheap.  Outputs
    equal :func:`predict` up to floating point reassociation.
    """

    def __init__(self, R, cache=None):
        self.cache = cache
        self.R = as_csr(R)
        self.Rd = self.R.toarray()
        self.Rn = normalize(self.R)
        self._bottom = None
        self._highpass = {}
        self._lowpass = {}
        self._item_powers = [self.Rd]  # R (I - O_I)^j
        self._user_powers = [self.Rd]  # (I - O_U)^j R

    @property
    def shape(self):
        return self.R.shape

    def _spectrum(self, Sn):
        if self.cache is None:
            return spectrum(Sn)
        b = truncated_svd_top(Sn, min(Sn.shape), method="dense", cache=self.cache)
        return b.singular_values, b.item_vectors

    def bottom_spectrum(self):
        if self._bottom is None:
            self._bottom = self._spectrum(self.Rn)
        return self._bottom

    def highpass_scores(self, p1: int) -> np.ndarray:
        if p1 not in self._highpass:
            s, V = self.bottom_spectrum()
            basis = SpectralBasis(s[-p1:], V[:, -p1:], "bottom")
            self._highpass[p1] = ideal_highpass_scores(self.R, self.Rn, basis)
        return self._highpass[p1]

    def enhanced(self, p1: int, q: float, alpha1: float) -> sp.csr_matrix:
        if alpha1 == 0.0:
            return self.R
        mask = select_unique_interactions(self.R, self.highpass_scores(p1), q)
        return enhance(self.R, mask, alpha1).values

    def _lowpass_spectrum(self, key, Rhat):
        if key not in self._lowpass:
            Sn = normalize(Rhat)
            s, V = self._spectrum(Sn)
            self._lowpass[key] = (Rhat, Sn.item_degrees, V)
        return self._lowpass[key]

    def cascaded(self, cfg: FilterConfig) -> np.ndarray:
        if not cfg.ilf:
            return np.zeros(self.shape)
        a1 = cfg.effective_alpha1()
        key = (0, 0.0, 0.0) if a1 == 0.0 else (cfg.p1, cfg.q, a1)
        Rhat, deg, V = self._lowpass_spectrum(key, self.enhanced(cfg.p1, cfg.q, a1))
        return degree_conjugated_projection(Rhat, V[:, : cfg.p2], deg)

    def item_term(self, k1: int) -> np.ndarray:
        A = self.Rn.values
        while len(self._item_powers) <= k1:
            X = self._item_powers[-1]
            self._item_powers.append(X - np.asarray(A.T @ (A @ X.T)).T)
        return self.Rd - self._item_powers[k1]

    def user_term(self, k2: int) -> np.ndarray:
        A = self.Rn.values
        while len(self._user_powers) <= k2:
            Y = self._user_powers[-1]
            self._user_powers.append(Y - np.asarray(A @ (A.T @ Y)))
        return self.Rd - self._user_powers[k2]

    def components(self, cfg: FilterConfig):
        cfg.validate(self.shape)
        zero = np.zeros(self.shape)
        P1 = self.cascaded(cfg)
        P2 = self.item_term(cfg.k1) if cfg.ihnf else zero
        P3 = self.user_term(cfg.k2) if cfg.uhnf else zero
        return P1, P2, P3

    def predict(self, cfg: FilterConfig) -> np.ndarray:
        P1, P2, P3 = self.components(cfg)
        return blend(P1, P2, P3, cfg.alpha2)


def retained_fraction(k: int, level: float = 0.999) -> float:
    """Largest ``lam`` with ``1 - lam**k >= level``; how much of the low band passes."""
    return math.pow(1.0 - level, 1.0 / k)

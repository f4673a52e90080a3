"""Top-K ranking, F1/MRR/NDCG, and category-distribution KL consistency."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .sparse import InteractionMatrix, as_csr


def _row_sets(x, n_rows: int | None = None) -> list[np.ndarray]:
    """Per-user sorted item index arrays from a matrix or an iterable of sets."""
    if x is None:
        return [np.empty(0, dtype=np.int64)] * (n_rows or 0)
    if isinstance(x, InteractionMatrix) or sp.issparse(x):
        M = as_csr(x)
        M.sort_indices()
        return [M.indices[M.indptr[u]:M.indptr[u + 1]].astype(np.int64) for u in range(M.shape[0])]
    if isinstance(x, np.ndarray) and x.ndim == 2:
        return [np.flatnonzero(row) for row in x]
    return [np.array(sorted(s), dtype=np.int64) for s in x]


def rank_topk(P: np.ndarray, exclude=None, K: int = 20) -> np.ndarray:
    """Per-user top-``K`` item indices, best first.

    Excluded items never appear.  Ties are broken by ascending item index.
    Rows with fewer than ``K`` rankable items are padded with ``-1``.
    """
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    P = np.array(P, dtype=float, copy=True)
    m, n = P.shape
    for u, items in enumerate(_row_sets(exclude, m)):
        P[u, items] = -np.inf
    out = np.full((m, K), -1, dtype=np.int64)
    kk = min(K, n)
    for u in range(m):
        row = P[u]
        if kk < n:
            thr = np.partition(row, n - kk)[n - kk]
            cand = np.flatnonzero(row >= thr)
        else:
            cand = np.arange(n)
        cand = cand[np.lexsort((cand, -row[cand]))][:kk]
        cand = cand[np.isfinite(row[cand])]
        out[u, : len(cand)] = cand
    return out


def _discounts(K):
    return 1.0 / np.log2(np.arange(2, K + 2))


def user_metrics(ranked: Sequence[int], truth: Iterable[int], K: int, ndcg_variant: str = "standard"):
    """``(f1, mrr, ndcg)`` for a single user; ``None`` when ``truth`` is empty.

    ``ndcg_variant="hit-normalized"`` divides the DCG by the ideal DCG of the
    hits actually retrieved instead of ``min(K, |truth|)`` relevant items.
    """
    truth = set(int(t) for t in truth)
    if not truth:
        return None
    top = [int(i) for i in ranked[:K] if i >= 0]
    hits = np.array([i in truth for i in top] + [False] * (K - len(top)), dtype=float)
    nh = hits.sum()
    if nh == 0:
        return 0.0, 0.0, 0.0
    prec, rec = nh / K, nh / len(truth)
    f1 = 2 * prec * rec / (prec + rec)
    mrr = 1.0 / (np.argmax(hits) + 1)
    disc = _discounts(K)
    dcg = float(hits @ disc)
    if ndcg_variant == "standard":
        ideal = disc[: min(K, len(truth))].sum()
    elif ndcg_variant == "hit-normalized":
        ideal = disc[: int(nh)].sum()
    else:
        raise ValueError(f"unknown ndcg variant {ndcg_variant!r}")
    return f1, mrr, dcg / ideal


@dataclass
class MetricReport:
    f1: dict = field(default_factory=dict)
    mrr: dict = field(default_factory=dict)
    ndcg: dict = field(default_factory=dict)
    n_evaluated_users: int = 0
    # ndcg normalized by the retrieved hits, a common alternative normalization
    ndcg_hit_normalized: dict = field(default_factory=dict)

    def get(self, name: str) -> float:
        """Look up ``"ndcg@10"``-style metric names."""
        metric, K = name.lower().split("@")
        table = {"f1": self.f1, "mrr": self.mrr, "ndcg": self.ndcg,
                 "ndcg_hit_normalized": self.ndcg_hit_normalized}[metric]
        return table[int(K)]

    def as_dict(self) -> dict:
        d = {"n_evaluated_users": self.n_evaluated_users}
        for name in ("f1", "mrr", "ndcg", "ndcg_hit_normalized"):
            for K, v in sorted(getattr(self, name).items()):
                d[f"{name}@{K}"] = v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        rep = cls(n_evaluated_users=int(d.get("n_evaluated_users", 0)))
        for key, v in d.items():
            if "@" in key:
                name, K = key.split("@")
                getattr(rep, name)[int(K)] = float(v)
        return rep

    def to_json(self, **extra) -> str:
        return json.dumps({**extra, "metrics": self.as_dict()}, indent=2, sort_keys=True)

    def to_text(self) -> str:
        Ks = sorted(self.ndcg)
        rows = [["metric"] + [f"@{K}" for K in Ks]]
        for name in ("f1", "mrr", "ndcg", "ndcg_hit_normalized"):
            rows.append([name] + [f"{getattr(self, name)[K]:.4f}" for K in Ks])
        width = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, width)).rstrip() for r in rows]
        lines.append(f"users evaluated: {self.n_evaluated_users}")
        return "\n".join(lines)


def metrics(ranked, truth, Ks=(10, 20)) -> MetricReport:
    """Average F1/MRR/NDCG at each ``K`` over users with nonempty truth."""
    Ks = (Ks,) if isinstance(Ks, int) else tuple(Ks)
    ranked = np.asarray(ranked, dtype=np.int64)
    m = ranked.shape[0]
    truth_sets = _row_sets(truth, m)
    sizes = np.array([len(t) for t in truth_sets])
    users = np.flatnonzero(sizes > 0)
    width = max(max(Ks), ranked.shape[1])
    hits = np.zeros((len(users), width))
    for r, u in enumerate(users):
        row = ranked[u]
        valid = row >= 0
        hits[r, : len(row)] = valid & np.isin(row, truth_sets[u])
    sizes = sizes[users].astype(float)
    rep = MetricReport(n_evaluated_users=len(users))
    for K in Ks:
        h = hits[:, :K]
        nh = h.sum(axis=1)
        prec, rec = nh / K, nh / np.maximum(sizes, 1)
        with np.errstate(invalid="ignore", divide="ignore"):
            f1 = np.where(nh > 0, 2 * prec * rec / (prec + rec), 0.0)
        first = np.argmax(h, axis=1)
        mrr = np.where(nh > 0, 1.0 / (first + 1), 0.0)
        disc = _discounts(K)
        cum = np.concatenate([[1.0], np.cumsum(disc)])  # cum[0] guards division when nh == 0
        dcg = h @ disc
        ideal = np.cumsum(disc)[np.minimum(sizes, K).astype(int) - 1]
        ideal_hits = cum[nh.astype(int)]
        ndcg = dcg / ideal
        ndcg_h = np.where(nh > 0, dcg / ideal_hits, 0.0)
        # fixed-order means keep reports bit-stable
        mean = lambda a: float(a.mean()) if len(a) else 0.0
        rep.f1[K], rep.mrr[K], rep.ndcg[K] = mean(f1), mean(mrr), mean(ndcg)
        rep.ndcg_hit_normalized[K] = mean(ndcg_h)
    return rep


def evaluate_scores(P, exclude, truth, Ks=(10, 20)) -> MetricReport:
    ranked = rank_topk(P, exclude, max(Ks))
    return metrics(ranked, truth, Ks)


def ndcg_at(P, exclude, truth, K: int = 10) -> float:
    return evaluate_scores(P, exclude, truth, (K,)).ndcg[K]


@dataclass(frozen=True)
class PreferenceDistribution:
    """Per-user category counts; probabilities are derived on demand."""

    counts: np.ndarray  # n_users x L

    @property
    def valid(self) -> np.ndarray:
        return self.counts.sum(axis=1) > 0

    def probabilities(self, categories=None) -> np.ndarray:
        C = self.counts if categories is None else self.counts[:, categories]
        tot = C.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(tot > 0, C / np.where(tot > 0, tot, 1.0), 0.0)


def preference_distributions(items, indicator: np.ndarray) -> PreferenceDistribution:
    """Category appearance counts over each user's items.

    ``items`` is an interaction matrix (history) or a ranked index array
    (predictions, ``-1`` padding ignored).  ``indicator`` is the
    ``n_items x L`` category matrix; multi-label items count once per label.
    """
    indicator = np.asarray(indicator, dtype=float)
    if isinstance(items, np.ndarray) and items.ndim == 2 and items.dtype.kind in "iu":
        counts = np.zeros((items.shape[0], indicator.shape[1]))
        for u, row in enumerate(items):
            row = row[row >= 0]
            counts[u] = indicator[row].sum(axis=0)
    else:
        counts = np.asarray(as_csr(items) @ indicator)
    return PreferenceDistribution(counts)


def top_categories(hist: PreferenceDistribution, K: int) -> np.ndarray:
    """Indices of the ``K`` most frequent categories in the history (ties by index)."""
    totals = hist.counts.sum(axis=0)
    order = np.lexsort((np.arange(len(totals)), -totals))
    return np.sort(order[:K])


def kl_divergence_rows(p: np.ndarray, q: np.ndarray, eps: float = 1e-9) -> np.ndarray:
    """Row-wise ``sum_l p ln(p / q)`` with ``eps`` added to ``q`` then renormalized."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if eps:
        q = q + eps
        q = q / q.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p / q), 0.0)
    return terms.sum(axis=1)


def kl_consistency(p: PreferenceDistribution, q: PreferenceDistribution,
                   n_categories: int | None = None, eps: float = 1e-9) -> float:
    """Mean KL(p_u || q_u) over users with history in the retained categories.

    When ``n_categories`` is given both distributions are restricted to the
    most frequent historical categories and renormalized.
    """
    cats = None if n_categories is None else top_categories(p, n_categories)
    P = p.probabilities(cats)
    Q = q.probabilities(cats)
    keep = P.sum(axis=1) > 0
    if not keep.any():
        return 0.0
    return float(kl_divergence_rows(P[keep], Q[keep], eps).mean())


def write_kl_csv(rows: Iterable[tuple], path):
    """``rows`` of ``(K, kl_value, filter_combination)``."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["K", "kl_value", "filter_combination"])
        for K, v, name in rows:
            w.writerow([K, repr(float(v)), name])

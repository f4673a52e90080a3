"""Dataset ingestion, deterministic splits and item category tables."""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterable, Sequence

import numpy as np

from .sparse import InteractionMatrix, ParameterError, build_interaction_matrix, id_sort_key

ML100K_GENRES = (
    "unknown", "Action", "Adventure", "Animation", "Children's", "Comedy", "Crime",
    "Documentary", "Drama", "Fantasy", "Film-Noir", "Horror", "Musical", "Mystery",
    "Romance", "Sci-Fi", "Thriller", "War", "Western",
)

_HEADER_NAMES = {
    "user", "users", "user_id", "userid", "uid", "item", "items", "item_id", "itemid",
    "iid", "movie", "movie_id", "movieid", "rating", "timestamp",
}


class DataError(ValueError):
    """Malformed or empty dataset file."""


@dataclass(frozen=True)
class RatingRecord:
    user_id: Hashable
    item_id: Hashable
    rating: float | None = None
    timestamp: int | None = None

    def __post_init__(self):
        if self.user_id == "" or self.item_id == "":
            raise DataError("user and item ids must be nonempty")


def parse_id(token: str):
    token = token.strip()
    try:
        return int(token)
    except ValueError:
        return token


def _is_number(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


def _record(fields: Sequence[str], path, lineno: int, default_rating=None) -> RatingRecord:
    if len(fields) < 2 or not fields[0].strip() or not fields[1].strip():
        raise DataError(f"{path}:{lineno}: expected at least user and item columns, got {fields!r}")
    try:
        rating = float(fields[2]) if len(fields) > 2 and fields[2].strip() else default_rating
        ts = int(float(fields[3])) if len(fields) > 3 and fields[3].strip() else None
    except ValueError:
        raise DataError(f"{path}:{lineno}: non-numeric rating/timestamp in {fields!r}") from None
    return RatingRecord(parse_id(fields[0]), parse_id(fields[1]), rating, ts)


def load_movielens_100k(path) -> list[RatingRecord]:
    """Read a tab-separated ``user item rating timestamp`` file (``u.data``).

    ``path`` may also be the directory holding ``u.data``.
    """
    path = Path(path)
    if path.is_dir():
        path = path / "u.data"
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split("\t")
            if len(fields) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(fields)}")
            records.append(_record(fields, path, lineno))
    if not records:
        raise DataError(f"{path}: no interactions")
    return records


def _looks_like_header(fields: Sequence[str]) -> bool:
    names = [f.strip().lower() for f in fields]
    if any(n in _HEADER_NAMES for n in names[:2]):
        return True
    return any(f.strip() and not _is_number(f) for f in fields[2:4])


def load_triplets_csv(path, delimiter: str = ",") -> list[RatingRecord]:
    """Read ``user, item[, rating[, timestamp]]`` rows; a header row is optional.

    Missing ratings default to 1.
    """
    path = Path(path)
    records = []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, fields in enumerate(csv.reader(fh, delimiter=delimiter), 1):
            if not fields or not any(f.strip() for f in fields):
                continue
            if lineno == 1 and _looks_like_header(fields):
                continue
            records.append(_record(fields, path, lineno, default_rating=1.0))
    if not records:
        raise DataError(f"{path}: no interactions")
    return records


def filter_min_rating(records: Iterable[RatingRecord], min_rating: float | None) -> list[RatingRecord]:
    """Keep records rated at least ``min_rating``; unrated records always pass."""
    records = list(records)
    if min_rating is None:
        return records
    return [r for r in records if r.rating is None or r.rating >= min_rating]


def load_records(path, fmt: str = "ml100k", delimiter: str = ",") -> list[RatingRecord]:
    if fmt == "ml100k":
        return load_movielens_100k(path)
    if fmt in ("csv", "triplets"):
        return load_triplets_csv(path, delimiter)
    if fmt == "tsv":
        return load_triplets_csv(path, "\t")
    raise ParameterError(f"unknown dataset format {fmt!r}")


def export_triplets(R: InteractionMatrix, path, delimiter: str = "\t"):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        for u, i in R.triplets():
            w.writerow([u, i])


def file_hash(path) -> str:
    path = Path(path)
    if path.is_dir():
        path = path / "u.data"
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass(frozen=True)
class SplitDataset:
    """Train matrix plus held-out index pairs over the full-dataset ID maps."""

    train: InteractionMatrix
    validation: list
    test: list
    seed: int
    ratios: tuple = (0.72, 0.08, 0.20)
    stratified: bool = False

    @property
    def shape(self):
        return self.train.shape

    def validation_matrix(self) -> InteractionMatrix:
        return self.train.with_pairs(self.validation)

    def test_matrix(self) -> InteractionMatrix:
        return self.train.with_pairs(self.test)

    def train_plus_validation(self) -> InteractionMatrix:
        return self.train.with_pairs(self.train.pairs() + list(self.validation))


def _cut_sizes(total: int, ratios) -> tuple[int, int]:
    n_train = math.floor(total * ratios[0] + 0.5)
    n_val = math.floor(total * ratios[1] + 0.5)
    return n_train, min(n_val, total - n_train)


def unique_pairs(records: Iterable) -> list[tuple]:
    """Deduplicated ``(user_id, item_id)`` pairs in sorted order."""
    pairs = {(r.user_id, r.item_id) if isinstance(r, RatingRecord) else (r[0], r[1]) for r in records}
    return sorted(pairs, key=lambda p: (id_sort_key(p[0]), id_sort_key(p[1])))


def split(records, ratios=(0.72, 0.08, 0.20), seed: int = 0, stratify: bool = False) -> SplitDataset:
    """Shuffle interactions with ``seed`` and cut them into train/validation/test.

    The default is one global shuffle over all unique interactions.  With
    ``stratify=True`` every user's interactions are shuffled and cut
    separately.  ID maps always cover the whole dataset, so users or items
    absent from training keep (empty) rows and columns.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ParameterError(f"split ratios must be three nonnegative numbers summing to 1, got {ratios}")
    pairs = unique_pairs(records)
    if not pairs:
        raise DataError("no interactions")
    full = build_interaction_matrix(pairs)
    idx = [(full.user_index[u], full.item_index[i]) for u, i in pairs]
    rng = np.random.default_rng(seed)

    if not stratify:
        perm = rng.permutation(len(idx))
        n_train, n_val = _cut_sizes(len(idx), ratios)
        parts = (perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:])
        train, val, test = ([idx[j] for j in sorted(p)] for p in parts)
    else:
        by_user: dict[int, list] = {}
        for p in idx:
            by_user.setdefault(p[0], []).append(p)
        train, val, test = [], [], []
        for u in sorted(by_user):
            items = by_user[u]
            perm = rng.permutation(len(items))
            n_train, n_val = _cut_sizes(len(items), ratios)
            train += [items[j] for j in sorted(perm[:n_train])]
            val += [items[j] for j in sorted(perm[n_train:n_train + n_val])]
            test += [items[j] for j in sorted(perm[n_train + n_val:])]

    return SplitDataset(full.with_pairs(train), val, test, seed, ratios, stratify)


def save_split(ds: SplitDataset, directory, source_hash: str = ""):
    """Persist a split as three triplet files plus ``meta.txt`` (key=value)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    tr = ds.train
    export_triplets(tr, d / "train.tsv")
    for name, pairs in (("validation", ds.validation), ("test", ds.test)):
        with open(d / f"{name}.tsv", "w", encoding="utf-8") as fh:
            for u, i in pairs:
                fh.write(f"{tr.user_ids[u]}\t{tr.item_ids[i]}\n")
    meta = {
        "seed": ds.seed,
        "ratios": ",".join(repr(r) for r in ds.ratios),
        "stratified": str(ds.stratified).lower(),
        "n_users": tr.n_users,
        "n_items": tr.n_items,
        "n_train": tr.nnz,
        "n_validation": len(ds.validation),
        "n_test": len(ds.test),
        "source_sha256": source_hash,
    }
    (d / "meta.txt").write_text("".join(f"{k}={v}\n" for k, v in meta.items()), encoding="utf-8")


def read_meta(path) -> dict:
    meta = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key=value")
        k, v = line.split("=", 1)
        meta[k.strip()] = v.strip()
    return meta


def load_split(directory) -> SplitDataset:
    d = Path(directory)
    meta = read_meta(d / "meta.txt")
    parts = {}
    for name in ("train", "validation", "test"):
        p = d / f"{name}.tsv"
        parts[name] = [(r.user_id, r.item_id) for r in load_triplets_csv(p, "\t")] if p.stat().st_size else []
    everything = parts["train"] + parts["validation"] + parts["test"]
    full = build_interaction_matrix(everything)
    to_idx = lambda ps: [(full.user_index[u], full.item_index[i]) for u, i in ps]
    return SplitDataset(
        full.with_pairs(to_idx(parts["train"])),
        to_idx(parts["validation"]),
        to_idx(parts["test"]),
        int(meta["seed"]),
        tuple(float(x) for x in meta["ratios"].split(",")),
        meta.get("stratified", "false") == "true",
    )


@dataclass(frozen=True)
class CategoryTable:
    """Item -> category labels (multi-label)."""

    labels: tuple
    item_categories: dict = field(repr=False)  # external item id -> frozenset of label indices

    @property
    def L(self) -> int:
        return len(self.labels)

    def indicator(self, item_ids: Sequence[Hashable]) -> np.ndarray:
        """``n_items x L`` 0/1 matrix aligned with the given item order."""
        out = np.zeros((len(item_ids), self.L))
        for k, item in enumerate(item_ids):
            for c in self.item_categories.get(item, ()):
                out[k, c] = 1.0
        return out


def load_categories_ml100k(path) -> CategoryTable:
    """Parse the pipe-separated ``u.item`` file with its 19 trailing genre flags.

    ``path`` may be the ``u.item`` file or its directory.
    """
    path = Path(path)
    if path.is_dir():
        path = path / "u.item"
    if not path.exists():
        raise DataError(f"{path}: category file not found")
    nflags = len(ML100K_GENRES)
    table = {}
    with open(path, encoding="latin-1") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            fields = line.rstrip("\r\n").split("|")
            flags = fields[-nflags:]
            if len(fields) < nflags + 2 or any(f not in ("0", "1") for f in flags):
                raise DataError(f"{path}:{lineno}: expected item id, metadata and {nflags} genre flags")
            table[parse_id(fields[0])] = frozenset(k for k, f in enumerate(flags) if f == "1")
    if not table:
        raise DataError(f"{path}: no items")
    return CategoryTable(ML100K_GENRES, table)

"""Reproducible experiments: single runs, ablations, sweeps and KL consistency.

Every persisted artifact carries the resolved configuration and the SHA-256
of the input data, and contains nothing time-dependent, so two runs with the
same configuration write byte-identical files.
"""
from __future__ import annotations

import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import data as data_mod
from .evaluation import (
    MetricReport,
    evaluate_scores,
    kl_consistency,
    metrics,
    preference_distributions,
    rank_topk,
    write_kl_csv,
)
from .filters import (
    FilterConfig,
    FrequencyAwareModel,
    degree_conjugated_projection,
    gfcf_predict,
    pgsp_predict,
)
from .sparse import ParameterError, as_csr, normalize
from .spectral import BasisCache, spectrum

log = logging.getLogger(__name__)

HYPERPARAMETERS = ("p1", "p2", "q", "alpha1", "alpha2", "k1", "k2")
MODELS = ("frequency-aware", "gfcf", "pgsp")

# ablation rows: label -> components switched off
ABLATIONS = {
    "full": (),
    "w/o IHF": ("ihf",),
    "w/o IHF+ILF": ("ihf", "ilf"),
    "w/o IHNF": ("ihnf",),
    "w/o UHNF": ("uhnf",),
    "w/o IHNF+UHNF": ("ihnf", "uhnf"),
}

# filter combinations of the consistency analysis, in the order they are introduced
COMBINATIONS = {
    "ILF": ("ilf",),
    "ILF+IHF": ("ilf", "ihf"),
    "ILF+IHF+UHNF": ("ilf", "ihf", "uhnf"),
    "ILF+IHF+UHNF+IHNF": ("ilf", "ihf", "uhnf", "ihnf"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = ""
    format: str = "ml100k"
    delimiter: str = ","
    min_rating: float | None = None
    categories: str = ""
    ratios: tuple = (0.72, 0.08, 0.20)
    seed: int = 0
    stratify: bool = False
    model: str = "frequency-aware"
    filters: FilterConfig = field(default_factory=FilterConfig)
    gfcf_alpha: float = 0.3
    gfcf_k: int = 64
    pgsp_phi: float = 0.5
    pgsp_k: int = 128
    topk: tuple = (10, 20)
    exclude: str = "history"  # items hidden at test time: "history" (train+validation) or "train"
    out: str = ""
    cache: bool = False
    save_ranked: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.model not in MODELS:
            raise ParameterError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.format not in ("ml100k", "csv", "tsv", "triplets"):
            raise ParameterError(f"unknown dataset format {self.format!r}")
        if len(self.ratios) != 3 or abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ParameterError(f"ratios must be three numbers summing to 1, got {self.ratios}")
        if not self.topk or min(self.topk) < 1:
            raise ParameterError(f"topk must be positive integers, got {self.topk}")
        if self.exclude not in ("history", "train"):
            raise ParameterError(f"exclude must be 'history' or 'train', got {self.exclude!r}")
        if not 0.0 <= self.pgsp_phi <= 1.0:
            raise ParameterError(f"pgsp_phi must lie in [0, 1], got {self.pgsp_phi}")
        self.filters.validate()
        return self

    def with_filters(self, **kw) -> "ExperimentConfig":
        return replace(self, filters=replace(self.filters, **kw))

    def as_flat(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "filters"}
        d.update(self.filters.as_dict())
        return d

    def to_text(self) -> str:
        return "".join(f"{k}={_format_value(v)}\n" for k, v in sorted(self.as_flat().items()))

    @classmethod
    def from_flat(cls, d: dict) -> "ExperimentConfig":
        filter_names = {f.name for f in fields(FilterConfig)}
        own = {f.name: f for f in fields(cls)}
        fkw, kw = {}, {}
        for key, raw in d.items():
            key = key.replace("-", "_")
            if key in filter_names:
                fkw[key] = _coerce(raw, type(getattr(FilterConfig(), key)))
            elif key in own and key != "filters":
                default = getattr(cls(), key) if key not in ("ratios", "topk") else None
                if key == "ratios":
                    kw[key] = tuple(float(x) for x in _split_list(raw))
                elif key == "topk":
                    kw[key] = tuple(int(x) for x in _split_list(raw))
                elif key == "min_rating":
                    kw[key] = None if raw in (None, "", "none", "None") else float(raw)
                else:
                    kw[key] = _coerce(raw, type(default))
            else:
                raise ParameterError(f"unknown configuration key {key!r}")
        return cls(filters=FilterConfig(**fkw), **kw)


def _split_list(raw):
    if isinstance(raw, (list, tuple)):
        return raw
    return [x for x in str(raw).replace(" ", "").split(",") if x]


def _format_value(v):
    if isinstance(v, (tuple, list)):
        return ",".join(_format_value(x) for x in v)
    if isinstance(v, bool):
        return str(v).lower()
    if v is None:
        return "none"
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(raw, typ):
    if not isinstance(raw, str):
        return typ(raw) if typ in (int, float) else raw
    if typ is bool:
        low = raw.strip().lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ParameterError(f"expected a boolean, got {raw!r}")
        return low in ("true", "1", "yes")
    try:
        return typ(raw.strip())
    except ValueError:
        raise ParameterError(f"cannot parse {raw!r} as {typ.__name__}") from None


def read_config(path) -> ExperimentConfig:
    """Parse a flat ``key = value`` file (``#`` comments, optional quotes)."""
    d = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line or line.startswith("["):
            continue
        if "=" not in line:
            raise ParameterError(f"{path}:{lineno}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        d[k] = v.strip("\"'").strip("[]")
    return ExperimentConfig.from_flat(d)


def write_config(config: ExperimentConfig, path):
    Path(path).write_text(config.to_text(), encoding="utf-8")


# ---------------------------------------------------------------------------
# data preparation


@dataclass
class Prepared:
    """A split plus the derived matrices every experiment needs."""

    split: data_mod.SplitDataset
    data_hash: str
    categories: data_mod.CategoryTable | None = None

    @property
    def train(self):
        return self.split.train

    def history(self):
        return self.split.train_plus_validation()


def prepare(config: ExperimentConfig) -> Prepared:
    records = data_mod.load_records(config.dataset, config.format, config.delimiter)
    records = data_mod.filter_min_rating(records, config.min_rating)
    ds = data_mod.split(records, config.ratios, config.seed, config.stratify)
    cats = data_mod.load_categories_ml100k(config.categories) if config.categories else None
    return Prepared(ds, data_mod.file_hash(config.dataset), cats)


def load_prepared(directory, categories: str = "") -> Prepared:
    """Reload a split written by :func:`save_prepared`."""
    ds = data_mod.load_split(directory)
    meta = data_mod.read_meta(Path(directory) / "meta.txt")
    saved = Path(directory) / "config.txt"
    if not categories and saved.exists():
        categories = read_config(saved).categories
    cats =data_mod.load_categories_ml100k(categories) if categories else None
    return Prepared(ds, meta.get("source_sha256", ""), cats)


def save_prepared(config: ExperimentConfig, prep: Prepared):
    out = Path(config.out)
    data_mod.save_split(prep.split, out, prep.data_hash)
    write_config(config, out / "config.txt")


def basis_cache(config: ExperimentConfig):
    if not config.cache:
        return None
    return BasisCache(Path(config.out or ".") / ".basis-cache")


def score_matrix(config: ExperimentConfig, R, model: FrequencyAwareModel | None = None) -> np.ndarray:
    """Scores from the configured model fitted on interaction matrix ``R``."""
    if config.model == "frequency-aware":
        model = model or FrequencyAwareModel(R.matrix, basis_cache(config))
        return model.predict(config.filters)
    Rn = normalize(R)
    if config.model == "gfcf":
        return gfcf_predict(R, Rn, config.gfcf_alpha, config.gfcf_k)
    return pgsp_predict(R, Rn, config.pgsp_phi, config.pgsp_k)


def evaluate_test(config, prep: Prepared, model=None, scores=None):
    """Fit on train+validation, rank unseen items, score against the test split."""
    hist = prep.history()
    P = score_matrix(config, hist, model) if scores is None else scores
    ranked = rank_topk(P, hist if config.exclude == "history" else prep.train, max(config.topk))
    return metrics(ranked, prep.split.test_matrix(), config.topk), ranked


def evaluate_validation(config, prep: Prepared, model=None) -> MetricReport:
    """Fit on train only and score against the validation split."""
    P = score_matrix(config, prep.train, model)
    return evaluate_scores(P, prep.train, prep.split.validation_matrix(), config.topk)


def _provenance(config, prep, **extra):
    return {"config": config.as_flat(), "data_sha256": prep.data_hash, **extra}


def _dump(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n",
                          encoding="utf-8")


def _json_default(o):
    if isinstance(o, tuple):
        return list(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(f"not serializable: {type(o)}")


def run(config: ExperimentConfig, prep: Prepared | None = None) -> MetricReport:
    """Single test-split evaluation; writes ``report.json``/``report.txt`` to ``config.out``."""
    config.validate()
    prep = prep or prepare(config)
    report, ranked = evaluate_test(config, prep)
    if config.out:
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        _dump(out / "report.json", _provenance(config, prep, metrics=report.as_dict()))
        (out / "report.txt").write_text(report.to_text() + "\n", encoding="utf-8")
        write_config(config, out / "config.txt")
        if config.save_ranked:
            tr = prep.train
            with open(out / "ranked.tsv", "w", encoding="utf-8") as fh:
                for u, row in enumerate(ranked):
                    items = "\t".join(str(tr.item_ids[i]) for i in row if i >= 0)
                    fh.write(f"{tr.user_ids[u]}\t{items}\n")
    return report


def ablate(config: ExperimentConfig, rows=None, prep: Prepared | None = None) -> dict:
    """One test evaluation per ablation row; returns ``{label: MetricReport}``."""
    prep = prep or prepare(config)
    rows = list(ABLATIONS) if rows is None else list(rows)
    model = FrequencyAwareModel(prep.history().matrix, basis_cache(config))
    results = {}
    for label in rows:
        cfg = replace(config, model="frequency-aware", filters=config.filters.without(*ABLATIONS[label]))
        results[label], _ = evaluate_test(cfg, prep, model)
    if config.out:
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        _dump(out / "ablation.json",
              _provenance(config, prep, rows={k: v.as_dict() for k, v in results.items()}))
        (out / "ablation.txt").write_text(format_table(results) + "\n", encoding="utf-8")
    return results


def format_table(results: dict, names=None) -> str:
    if names is None:
        Ks = sorted(next(iter(results.values())).ndcg)
        names = [f"{m}@{K}" for K in Ks for m in ("mrr", "ndcg")]
    label_w = max(len(k) for k in results)
    lines = [" " * label_w + "  " + "  ".join(f"{n:>8}" for n in names)]
    for label, rep in results.items():
        lines.append(label.ljust(label_w) + "  " + "  ".join(f"{rep.get(n):8.4f}" for n in names))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# sweeps


def frange(lo, hi, step):
    n = int(round((hi - lo) / step))
    return tuple(round(lo + j * step, 10) for j in range(n + 1))


@dataclass(frozen=True)
class SweepGrid:
    """Per-hyperparameter candidate values; unspecified ones stay at the base config."""

    values: dict

    def __post_init__(self):
        if not self.values or any(len(v) == 0 for v in self.values.values()):
            raise ParameterError("sweep grid must be nonempty in every dimension")
        bad = set(self.values) - set(HYPERPARAMETERS)
        if bad:
            raise ParameterError(f"unknown hyperparameters in grid: {sorted(bad)}")

    @property
    def names(self) -> tuple:
        return tuple(n for n in HYPERPARAMETERS if n in self.values)

    @property
    def size(self) -> int:
        return int(np.prod([len(self.values[n]) for n in self.names]))

    def points(self):
        for combo in itertools.product(*(self.values[n] for n in self.names)):
            yield dict(zip(self.names, combo))

    @classmethod
    def default_grid(cls, max_components: int = 256) -> "SweepGrid":
        lo = 16 if max_components <= 256 else 32
        comps = tuple(2 ** j for j in range(int(np.log2(lo)), int(np.log2(max_components)) + 1))
        alphas = frange(0.1, 1.0, 0.05)
        return cls({
            "p1": comps, "p2": comps, "q": (0.6, 0.65, 0.7, 0.75, 0.8),
            "alpha1": alphas, "alpha2": alphas,
            "k1": tuple(range(2, 15)), "k2": tuple(range(2, 15)),
        })


@dataclass
class SweepResult:
    best: FilterConfig
    best_value: float
    rows: list  # (point dict, metric value) in grid order
    metric: str

    def to_csv(self, path):
        names = list(HYPERPARAMETERS)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(names + [self.metric]) + "\n")
            for cfg, v in self.rows:
                fh.write(",".join(repr(getattr(cfg, n)) for n in names) + f",{v!r}\n")


def _tuple(cfg: FilterConfig):
    return tuple(getattr(cfg, n) for n in HYPERPARAMETERS)


def select_best(rows):
    """Argmax of the metric; ties go to the lexicographically smallest tuple."""
    return min(rows, key=lambda r: (-r[1], _tuple(r[0])))


_WORKER = {}


def _init_worker(config, train_matrix, val_matrix):
    _WORKER.update(config=config, model=FrequencyAwareModel(train_matrix), train=train_matrix,
                   val=val_matrix)


def _score_chunk(cfgs, metric):
    w = _WORKER
    out = []
    for cfg in cfgs:
        P = w["model"].predict(cfg)
        K = int(metric.split("@")[1])
        out.append(evaluate_scores(P, w["train"], w["val"], (K,)).get(metric))
    return out


def sweep(config: ExperimentConfig, grid: SweepGrid, metric: str = "ndcg@10",
          prep: Prepared | None = None, model: FrequencyAwareModel | None = None,
          workers: int = 1) -> SweepResult:
    """Score every grid point on the validation split and pick the best.

    The model is fitted on the training split only.  With ``workers > 1``
    contiguous chunks of the grid are scored in separate processes; results
    are gathered back in grid order.
    """
    prep = prep or prepare(config)
    if not prep.split.validation:
        raise ParameterError("sweep needs a nonempty validation split")
    K = int(metric.split("@")[1])
    cfgs = []
    for point in grid.points():
        try:
            cfgs.append(replace(config.filters, **point).validate(prep.train.shape))
        except ParameterError as exc:
            log.info("skipping grid point %s: %s", point, exc)
    if not cfgs:
        raise ParameterError("no valid grid point for this dataset")
    log.info("sweeping %d of %d grid points on %s", len(cfgs), grid.size, metric)
    val = prep.split.validation_matrix().matrix
    if workers > 1 and len(cfgs) > 1:
        chunks = [list(c) for c in np.array_split(np.array(cfgs, dtype=object), workers) if len(c)]
        with ProcessPoolExecutor(workers, initializer=_init_worker,
                                 initargs=(config, prep.train.matrix, val)) as ex:
            values = [v for part in ex.map(_score_chunk, chunks, [metric] * len(chunks)) for v in part]
    else:
        model = model or FrequencyAwareModel(prep.train.matrix)
        values = []
        for cfg in cfgs:
            P = model.predict(cfg)
            values.append(evaluate_scores(P, prep.train, val, (K,)).get(metric))
    rows = list(zip(cfgs, values))
    best, value = select_best(rows)
    result = SweepResult(best, value, rows, metric)
    if config.out:
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        result.to_csv(out / "sweep.csv")
        _dump(out / "best.json", _provenance(replace(config, filters=best), prep,
                                             validation_metric={metric: value}))
    return result


def gfcf_sweep(config: ExperimentConfig, alphas=None, ks=None, metric: str = "ndcg@10",
               prep: Prepared | None = None):
    """Validation grid over the GF-CF baseline's ``(alpha, k)``.

    Returns ``(config with the best pair, best value, [(alpha, k, value)])``;
    ties go to the smallest ``(alpha, k)``.
    """
    prep = prep or prepare(config)
    alphas = frange(0.1, 1.0, 0.05) if alphas is None else tuple(alphas)
    ks = (16, 32, 64, 128, 256) if ks is None else tuple(ks)
    R = prep.train
    Rn = normalize(R)
    ks = tuple(k for k in ks if k <= min(R.shape))
    if not ks or not alphas:
        raise ParameterError("empty GF-CF grid")
    K = int(metric.split("@")[1])
    val = prep.split.validation_matrix().matrix
    A = Rn.values
    linear = np.asarray((as_csr(R) @ A.T) @ A.toarray())
    _, V = spectrum(Rn)
    rows = []
    for k in ks:
        ideal = degree_conjugated_projection(R.matrix, V[:, :k], Rn.item_degrees)
        for a in alphas:
            rows.append((a, k, evaluate_scores(linear + a * ideal, R, val, (K,)).get(metric)))
    a, k, value = min(rows, key=lambda r: (-r[2], r[0], r[1]))
    return replace(config, model="gfcf", gfcf_alpha=a, gfcf_k=k), value, rows


def refine_around(best, coarse):
    """Integer values strictly between ``best`` and its neighbors in ``coarse``."""
    coarse = sorted(coarse)
    j = coarse.index(best)
    lo = coarse[j - 1] if j > 0 else best
    hi = coarse[j + 1] if j + 1 < len(coarse) else best
    return tuple(v for v in range(lo + 1, hi) if v not in coarse)


def hierarchical_sweep(config: ExperimentConfig, stages, metric: str = "ndcg@10",
                       prep: Prepared | None = None, refine=("k1", "k2"),
                       workers: int = 1) -> SweepResult:
    """Coordinate-wise search: each stage's winner seeds the next stage.

    Integer hyperparameters listed in ``refine`` get a fine pass between the
    coarse neighbors of their winner right after the stage that set them.
    """
    prep = prep or prepare(config)
    model = FrequencyAwareModel(prep.train.matrix) if workers == 1 else None
    base = config
    rows = []
    for stage in stages:
        grid = stage if isinstance(stage, SweepGrid) else SweepGrid(stage)
        res = sweep(replace(base, out=""), grid, metric, prep, model, workers)
        rows += res.rows
        base = replace(base, filters=res.best)
        for name in grid.names:
            if name in refine:
                fine = refine_around(getattr(res.best, name), grid.values[name])
                if fine:
                    res = sweep(replace(base, out=""), SweepGrid({name: fine + (getattr(res.best, name),)}),
                                metric, prep, model, workers)
                    rows += res.rows
                    base = replace(base, filters=res.best)
    best, value = select_best(rows)
    result = SweepResult(best, value, rows, metric)
    if config.out:
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        result.to_csv(out / "sweep.csv")
        _dump(out / "best.json", _provenance(replace(config, filters=best), prep,
                                             validation_metric={metric: value}))
    return result


def default_stages(grid: SweepGrid | None = None) -> list:
    """Stage order for :func:`hierarchical_sweep` over the default grids.

    Neighborhood orders first (coarse ``2, 6, 10, 14`` then refined), then the
    low-pass width and blend weight, then the high-pass selection.
    """
    g = (grid or SweepGrid.default_grid()).values
    coarse_k = tuple(k for k in (2, 6, 10, 14) if k in g["k1"])
    return [
        {"k1": coarse_k, "k2": coarse_k},
        {"p2": g["p2"]},
        {"alpha2": g["alpha2"]},
        {"p1": g["p1"], "q": g["q"]},
        {"alpha1": g["alpha1"]},
        {"alpha2": g["alpha2"]},
    ]


# ---------------------------------------------------------------------------
# preference consistency


def consistency(config: ExperimentConfig, Ks=(6, 8, 10, 14, 18), list_size: int = 20,
                prep: Prepared | None = None) -> list:
    """KL divergence between historical and predicted category distributions.

    Returns ``(K, kl_value, combination)`` rows for every filter combination
    in :data:`COMBINATIONS` and every number of retained categories ``K``.
    Predictions are each user's top-``list_size`` unseen items.
    """
    prep = prep or prepare(config)
    if prep.categories is None:
        raise ParameterError("consistency analysis needs a category table (--categories)")
    hist = prep.history()
    ind = prep.categories.indicator(hist.item_ids)
    p = preference_distributions(hist.matrix, ind)
    model = FrequencyAwareModel(hist.matrix, basis_cache(config))
    rows = []
    for name, comps in COMBINATIONS.items():
        P = model.predict(config.filters.only(*comps))
        q = preference_distributions(rank_topk(P, hist, list_size), ind)
        for K in Ks:
            rows.append((K, kl_consistency(p, q, K), name))
    if config.out:
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        write_kl_csv(rows, out / "kl_consistency.csv")
    return rows


def kl_trend(rows) -> dict:
    """``{K: [kl per combination in introduction order]}`` from consistency rows."""
    order = list(COMBINATIONS)
    table = {}
    for K, v, name in rows:
        table.setdefault(K, [None] * len(order))[order.index(name)] = v
    return table

import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

import oracle
from freqgsp.data import file_hash
from freqgsp.evaluation import evaluate_scores, user_metrics
from freqgsp.experiment import (
    ABLATIONS,
    COMBINATIONS,
    ExperimentConfig,
    SweepGrid,
    ablate,
    consistency,
    default_stages,
    evaluate_test,
    evaluate_validation,
    gfcf_sweep,
    hierarchical_sweep,
    kl_trend,
    load_prepared,
    prepare,
    read_config,
    refine_around,
    run,
    save_prepared,
    select_best,
    sweep,
    write_config,
)
from freqgsp.filters import FilterConfig, FrequencyAwareModel, gfcf_predict
from freqgsp.sparse import ParameterError, normalize

FILTERS = FilterConfig(p1=4, p2=6, q=0.7, alpha1=0.5, alpha2=0.5, k1=2, k2=2)


@pytest.fixture
def config(small_dataset, tmp_path):
    return ExperimentConfig(dataset=str(small_dataset), categories=str(small_dataset), seed=3,
                            filters=FILTERS, topk=(3, 5), out=str(tmp_path / "out"))


@pytest.fixture
def prep(config):
    return prepare(config)


def test_config_validation():
    with pytest.raises(ParameterError):
        ExperimentConfig(model="nope")
    with pytest.raises(ParameterError):
        ExperimentConfig(ratios=(0.5, 0.5, 0.5))
    with pytest.raises(ParameterError):
        ExperimentConfig(topk=(0,))
    with pytest.raises(ParameterError):
        ExperimentConfig(exclude="all")
    with pytest.raises(ParameterError):
        ExperimentConfig.from_flat({"q": "1.5"})
    with pytest.raises(ParameterError):
        ExperimentConfig.from_flat({"bogus": "1"})
    with pytest.raises(ParameterError):
        ExperimentConfig.from_flat({"cache": "maybe"})


def test_config_text_roundtrip(tmp_path, config):
    cfg = replace(config, min_rating=4.0, stratify=True).with_filters(ihnf=False)
    write_config(cfg, tmp_path / "c.txt")
    assert read_config(tmp_path / "c.txt") == cfg


def test_config_file_comments_and_quotes(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('# experiment\n[run]\ndataset = "data/x"  # path\np1 = 32\ntopk = [10, 20]\nmin_rating = none\n')
    cfg = read_config(p)
    assert cfg.dataset == "data/x" and cfg.filters.p1 == 32 and cfg.topk == (10, 20)
    p.write_text("p1\n")
    with pytest.raises(ParameterError):
        read_config(p)


def test_run_matches_fixture_oracle(config, prep):
    rep = run(config, prep)
    out = config.out
    for name in ("report.json", "report.txt", "config.txt"):
        assert Path(out, name).exists()
    hist = prep.history().toarray()
    f = FILTERS
    P = oracle.full_model(hist, f.p1, f.q, f.alpha1, f.p2, f.alpha2, f.k1, f.k2)
    test = prep.split.test_matrix().toarray()
    for K in (3, 5):
        rows = []
        for u in range(hist.shape[0]):
            order = sorted((i for i in range(hist.shape[1]) if hist[u, i] == 0), key=lambda i: (-P[u, i], i))
            r = user_metrics(order, np.flatnonzero(test[u]), K)
            if r is not None:
                rows.append(r)
        np.testing.assert_allclose([rep.f1[K], rep.mrr[K], rep.ndcg[K]], np.mean(rows, axis=0), atol=1e-12)


def test_run_is_byte_identical_and_has_provenance(config, small_dataset, tmp_path):
    a = replace(config, out=str(tmp_path / "a"), save_ranked=True)
    names = ("report.json", "report.txt", "config.txt", "ranked.tsv")
    run(a)
    first = {n: (tmp_path / "a" / n).read_bytes() for n in names}
    run(a)
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == first[n]
    doc = json.loads((tmp_path / "a" / "report.json").read_text())
    assert doc["data_sha256"] == file_hash(small_dataset)
    assert doc["config"]["p1"] == 4 and doc["config"]["seed"] == 3


def test_exclude_train_only_can_recommend_validation_items(config, prep):
    rep_h = run(replace(config, out=""), prep)
    rep_t = run(replace(config, out="", exclude="train"), prep)
    assert rep_h.n_evaluated_users == rep_t.n_evaluated_users


def test_other_models_run(config, prep):
    for model in ("gfcf", "pgsp"):
        rep = run(replace(config, out="", model=model, gfcf_k=4, pgsp_k=8), prep)
        assert 0 <= rep.ndcg[5] <= 1


def test_ablation_rows(config, prep):
    res = ablate(config, prep=prep)
    assert list(res) == list(ABLATIONS)
    assert res["full"] == run(replace(config, out=""), prep)
    doc = json.loads(open(f"{config.out}/ablation.json").read())
    assert set(doc["rows"]) == set(ABLATIONS)


def test_ablation_linear_degeneracy(config, prep):
    # with both filter modules reduced to first order the ablated model is R O_I + O_U R
    cfg = config.with_filters(k1=1, k2=1)
    res = ablate(replace(cfg, out=""), ["w/o IHF+ILF"], prep)
    hist = prep.history().toarray()
    A = oracle.normalize(hist)
    expect, _ = evaluate_test(cfg, prep, scores=hist @ A.T @ A + A @ A.T @ hist)
    assert res["w/o IHF+ILF"] == expect


def test_sweep_single_point(config, prep):
    res = sweep(config, SweepGrid({"k1": (3,)}), prep=prep)
    assert res.best == replace(FILTERS, k1=3) and len(res.rows) == 1


def test_sweep_two_points_match_direct_evaluation(config, prep):
    res = sweep(config, SweepGrid({"p2": (2, 8)}), "ndcg@3", prep=prep)
    direct = {p2: evaluate_validation(config.with_filters(p2=p2), prep).get("ndcg@3")
              for p2 in (2, 8)}
    assert [v for _, v in res.rows] == pytest.approx([direct[2], direct[8]], abs=1e-12)
    assert res.best.p2 == max(direct, key=lambda p: (direct[p], -p))
    assert (Path(config.out) / "sweep.csv").exists()


def test_sweep_skips_invalid_points(config, prep):
    res = sweep(config, SweepGrid({"p2": (4, 10_000)}), prep=prep)
    assert len(res.rows) == 1


def test_sweep_workers_match_serial(config, prep):
    grid = SweepGrid({"k1": (1, 2, 3), "alpha2": (0.2, 0.8)})
    a = sweep(replace(config, out=""), grid, prep=prep)
    b = sweep(replace(config, out=""), grid, prep=prep, workers=2)
    assert a.rows == b.rows and a.best == b.best


def test_select_best_tie_break():
    rows = [(FilterConfig(k1=5), 0.3), (FilterConfig(k1=2), 0.3), (FilterConfig(k1=9), 0.1)]
    assert select_best(rows)[0].k1 == 2


def test_grid_validation_and_size():
    with pytest.raises(ParameterError):
        SweepGrid({})
    with pytest.raises(ParameterError):
        SweepGrid({"k1": ()})
    with pytest.raises(ParameterError):
        SweepGrid({"zeta": (1,)})
    g = SweepGrid.default_grid()
    assert g.values["p1"] == (16, 32, 64, 128, 256)
    assert SweepGrid.default_grid(1024).values["p2"] == (32, 64, 128, 256, 512, 1024)
    assert g.values["alpha1"][0] == 0.1 and g.values["alpha1"][-1] == 1.0 and len(g.values["alpha1"]) == 19
    assert g.values["k1"] == tuple(range(2, 15))
    assert g.size == 5 * 5 * 5 * 19 * 19 * 13 * 13


def test_refine_around():
    assert refine_around(10, (2, 6, 10, 14)) == (7, 8, 9, 11, 12, 13)
    assert refine_around(14, (2, 6, 10, 14)) == (11, 12, 13)
    assert refine_around(2, (2, 6, 10, 14)) == (3, 4, 5)


def test_hierarchical_coarse_then_fine(config, prep):
    stages = [{"k1": (2, 6, 10, 14)}]
    res = hierarchical_sweep(config, stages, "ndcg@3", prep)
    tried = [cfg.k1 for cfg, _ in res.rows]
    assert tried[:4] == [2, 6, 10, 14]
    coarse_best = select_best(res.rows[:4])[0].k1
    assert set(tried[4:]) == set(refine_around(coarse_best, (2, 6, 10, 14))) | {coarse_best}
    assert res.best_value == max(v for _, v in res.rows)


def test_default_stages_cover_every_hyperparameter():
    names = set()
    for stage in default_stages():
        names |= set(stage)
    assert names == {"p1", "p2", "q", "alpha1", "alpha2", "k1", "k2"}
    assert default_stages()[0] == {"k1": (2, 6, 10, 14), "k2": (2, 6, 10, 14)}


def test_gfcf_sweep_matches_direct(config, prep):
    cfg, value, rows = gfcf_sweep(config, alphas=(0.1, 0.5), ks=(2, 4), metric="ndcg@3", prep=prep)
    assert len(rows) == 4
    R = prep.train
    for a, k, v in rows:
        P = gfcf_predict(R, normalize(R), a, k)
        assert v == pytest.approx(evaluate_scores(P, R, prep.split.validation_matrix(), (3,)).ndcg[3], abs=1e-12)
    assert value == max(r[2] for r in rows) and cfg.model == "gfcf"


def test_consistency_rows_and_csv(config, prep):
    rows = consistency(config, Ks=(2, 4), list_size=5, prep=prep)
    assert len(rows) == 2 * len(COMBINATIONS)
    assert all(v >= 0 for _, v, _ in rows)
    table = kl_trend(rows)
    assert set(table) == {2, 4} and all(len(v) == 4 for v in table.values())
    lines = open(f"{config.out}/kl_consistency.csv").read().splitlines()
    assert lines[0] == "K,kl_value,filter_combination" and len(lines) == 9


def test_consistency_needs_categories(config, prep):
    prep.categories = None
    with pytest.raises(ParameterError):
        consistency(config, prep=prep)


def test_prepared_roundtrip(config, prep, tmp_path):
    cfg = replace(config, out=str(tmp_path / "split"))
    save_prepared(cfg, prep)
    back = load_prepared(tmp_path / "split", config.categories)
    assert back.data_hash == prep.data_hash
    assert back.train.nnz == prep.train.nnz and len(back.split.test) == len(prep.split.test)
    a = run(replace(config, out=""), prep)
    b = run(replace(config, out=""), back)
    assert a.ndcg == pytest.approx(b.ndcg, abs=1e-12)

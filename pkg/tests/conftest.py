import os
from pathlib import Path

import numpy as np
import pytest

import oracle

ROOT = Path(__file__).resolve().parents[1]
ML100K = Path(os.environ.get("FREQGSP_ML100K", ROOT / "data" / "ml-100k"))


@pytest.fixture
def toy():
    return oracle.TOY.copy()


@pytest.fixture
def toy_triplets():
    names = {0: "u1", 1: "u2", 2: "u3", 3: "u4"}
    return [(names[u], f"i{i + 1}", 1.0) for u, i in zip(*np.nonzero(oracle.TOY))]


@pytest.fixture(scope="session")
def ml100k_dir():
    if not (ML100K / "u.data").exists():
        pytest.fail(
            f"MovieLens 100K not found at {ML100K}; run scripts/fetch_ml100k.py "
            "or point FREQGSP_ML100K at a directory holding u.data and u.item"
        )
    return ML100K


def write_synthetic_ml100k(directory, n_users=40, n_items=30, density=0.3, seed=0):
    """Small dataset in the ``u.data``/``u.item`` layout with block structure and genres."""
    rng = np.random.default_rng(seed)
    directory.mkdir(parents=True, exist_ok=True)
    # two taste groups so the filters have something to find
    group = rng.integers(0, 2, n_users)
    lines = []
    for u in range(n_users):
        for i in range(n_items):
            p = density * (1.6 if (i < n_items // 2) == (group[u] == 0) else 0.4)
            if rng.random() < p:
                lines.append(f"{u + 1}\t{i + 1}\t{rng.integers(1, 6)}\t{880000000 + len(lines)}\n")
    (directory / "u.data").write_text("".join(lines), encoding="utf-8")
    rows = []
    for i in range(n_items):
        flags = ["0"] * 19
        for g in rng.choice(19, size=rng.integers(1, 3), replace=False):
            flags[g] = "1"
        rows.append(f"{i + 1}|Film {i + 1} (1995)|01-Jan-1995||http://example|" + "|".join(flags) + "\n")
    (directory / "u.item").write_text("".join(rows), encoding="latin-1")
    return directory


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    return write_synthetic_ml100k(tmp_path_factory.mktemp("small") / "ml")


# --- acceptance summary --------------------------------------------------------
# Tests marked ``acceptance`` attach ``criterion``/``detail`` user properties;
# the summary prints one pass/fail line per criterion.

_ACCEPTANCE = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if item.get_closest_marker("acceptance") is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        props = dict(item.user_properties)
        _ACCEPTANCE.append((props.get("criterion", item.name), rep.outcome, props.get("detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for name, outcome, detail in _ACCEPTANCE:
        status = {"passed": "PASS", "failed": "FAIL"}.get(outcome, outcome.upper())
        tr.write_line(f"{status:5} {name}" + (f"  [{detail}]" if detail else ""))
    n_pass = sum(o == "passed" for _, o, _ in _ACCEPTANCE)
    tr.write_line(f"{n_pass}/{len(_ACCEPTANCE)} acceptance criteria passed")

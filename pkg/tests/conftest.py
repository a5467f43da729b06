import numpy as np
import pytest

from modalreg.data import Dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_dataset(rng, n, d, y_scale=1.0):
    X = rng.uniform(-1.0, 1.0, size=(n, d))
    y = X.sum(axis=1) / d + y_scale * rng.normal(size=n)
    return Dataset(X, y)


def rel_err(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


M1_NOISES = ("gauss", "outlier", "skewed", "nonstationary")

# one verdict line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def m1_benchmark(tmp_path_factory):
    """Desk-scale M1 benchmark through the command line: d=1, four noises, 10 seeds.

    Shared by every test that needs it so the benchmark runs once per session.
    """
    import json

    from modalreg import cli

    import time

    out = tmp_path_factory.mktemp("m1bench") / "m1.json"
    t0 = time.perf_counter()
    code = cli.main(["benchmark", "--targets", "M1", "--noises", ",".join(M1_NOISES),
                     "--dims", "1", "--methods", "krr,lad,mrkde,dmrk", "--seeds", "0-9",
                     "--n", "500", "--n-te", "10000", "--out", str(out)])
    assert code == 0
    elapsed = time.perf_counter() - t0
    with open(out, encoding="utf-8") as fh:
        report = json.load(fh)
    report["elapsed_seconds"] = elapsed
    return report


def cell_of(report, noise, method):
    for row in report["rows"]:
        if row["row"].get("noise") == noise:
            for c in row["cells"]:
                if c["method"] == method:
                    return c
    raise KeyError((noise, method))

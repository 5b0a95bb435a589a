import numpy as np
import pytest

from mempredict.workload import JobRecord, SyntheticConfig, generate_synthetic


def make_job(i=0, **kw):
    base = dict(
        job_id=f"j{i:05d}", user="alice", group="g0", queue="normal", cwd="/home/alice",
        resreq="select[x86]", command="./sim", priority=10, submit_time=1_000_000 + 60 * i,
        req_time=3600, req_procs=4, finish_time=1_000_000 + 60 * i + 600, max_mem_mib=700.0,
    )
    base.update(kw)
    return JobRecord(**base)


@pytest.fixture
def job_factory():
    return make_job


@pytest.fixture(scope="session")
def small_trace():
    return generate_synthetic(SyntheticConfig(n_jobs=3000, seed=11))


@pytest.fixture
def clouds():
    """Three well separated Gaussian clouds: 600 train / 300 test rows."""
    rng = np.random.default_rng(5)
    centers = np.array([[0.0, 0.0, 0.0], [10.0, 0.0, 0.0], [0.0, 10.0, 0.0]])

    def draw(n):
        y = np.repeat(np.arange(3), n // 3)
        X = centers[y] + rng.normal(0.0, 1.0, size=(len(y), 3))
        return X, y

    return draw(600), draw(300)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])

import numpy as np

from hopmix.bench import measure_throughput, random_index, thread_count
from hopmix.hops import MixParams


def _queries(n, dim, seed=0):
    return np.random.default_rng(seed).normal(size=(n, 2, dim))


def test_report_fields_and_stages():
    idx = random_index(2000, 32, seed=1)
    assert idx.n_entries == 2000
    rep = measure_throughput(idx, _queries(100, 32), MixParams.random(32, 0))
    assert rep["n_queries"] == 100 and rep["batch"] == 8 and rep["threads"] == 1 and not rep["parallel"]
    assert set(rep["stages"]) == {"score", "mix", "update"}
    assert sum(rep["stages"].values()) <= rep["seconds"]
    assert rep["qps"] > 0


def test_stable_band():
    idx = random_index(2000, 32, seed=1)
    p = MixParams.random(32, 0)
    measure_throughput(idx, _queries(100, 32), p)  # warm-up
    a = min(measure_throughput(idx, _queries(200, 32), p)["qps"] for _ in range(2))
    b = min(measure_throughput(idx, _queries(200, 32), p)["qps"] for _ in range(2))
    assert max(a, b) / min(a, b) < 3


def test_bigger_index_not_faster():
    p = MixParams.random(64, 0)
    small = random_index(5000, 64, seed=1)
    big = random_index(10000, 64, seed=1)
    q = _queries(300, 64)
    measure_throughput(small, q[:50], p)
    qs = max(measure_throughput(small, q, p)["qps"] for _ in range(3))
    qb = min(measure_throughput(big, q, p)["qps"] for _ in range(3))
    assert qb <= qs


def test_deferred_index_runs():
    idx = random_index(500, 16, seed=2, deferred=True)
    assert idx.deferred
    assert measure_throughput(idx, _queries(100, 16), MixParams.random(16, 0), batch=4)["qps"] > 0


def test_thread_count(monkeypatch):
    monkeypatch.setenv("HOPMIX_THREADS", "3")
    assert thread_count(False) == 1
    assert thread_count(True) == 3

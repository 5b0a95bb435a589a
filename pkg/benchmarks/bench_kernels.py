"""Time the compiled kernels against the NumPy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 3]

Inputs are sized like one training window (9,000 rows).  Each kernel is
run on both backends with identical inputs and the outputs are checked for
agreement before the timings are printed.
"""

import argparse
import time

import numpy as np
import scipy.sparse as sp

from mempredict import kernels
from mempredict.learners import forest
from mempredict.learners.forest import RandomForest, xlogx_table


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def split_case(rng, n=9000, d=60, n_classes=20):
    X = np.round(rng.normal(size=(n, d)), 2)
    X[:, : d // 2] = (X[:, : d // 2] > 0.8).astype(float)  # one-hot-like columns
    y = rng.integers(0, n_classes, size=n).astype(np.intp)
    rows = np.arange(n, dtype=np.intp)
    cols = rng.permutation(d).astype(np.intp)
    table = xlogx_table(n)
    return lambda impl: impl.best_split(X, rows, y, n_classes, cols, 8, 32, table)


def pegasos_case(rng, n=9000, d=120, n_classes=20, epochs=2):
    X = sp.random(n, d, density=0.1, format="csr", random_state=np.random.RandomState(0))
    X = sp.hstack([X, np.ones((n, 1))]).tocsr()
    y = rng.integers(0, n_classes, size=n)
    ysign = -np.ones((n, n_classes))
    ysign[np.arange(n), y] = 1.0
    order = np.concatenate([rng.permutation(n) for _ in range(epochs)]).astype(np.intp)
    args = (X.indptr.astype(np.intp), X.indices.astype(np.intp), X.data.astype(np.float64), ysign, order, 1e-3)

    def run(impl):
        V, scale, norm2 = np.zeros((n_classes, d + 1)), np.ones(n_classes), np.zeros(n_classes)
        impl.pegasos_linear(V, scale, norm2, *args)
        return scale[:, None] * V
    return run


def csr_case(rng, n=9000, d=120, supports=2000):
    X = sp.random(n, d, density=0.1, format="csr", random_state=np.random.RandomState(1))
    ST = rng.normal(size=(d, supports))
    rows = rng.choice(n, size=1000).astype(np.intp)
    args = (X.indptr.astype(np.intp), X.indices.astype(np.intp), X.data.astype(np.float64), rows, ST, supports)
    return lambda impl: impl.csr_rows_dot(*args)


def forest_case(rng, n=9000, d=40, n_classes=20):
    X = np.round(rng.normal(size=(n, d)), 2)
    y = (np.abs(X[:, 0] * 7 + X[:, 1] * 3).astype(np.intp)) % n_classes

    def run(impl):
        saved = forest.kernels.best_split
        forest.kernels.best_split = impl.best_split
        try:
            f = RandomForest(n_trees=5).fit(X, y, n_classes, np.random.default_rng(0))
            return f.predict_index(X)
        finally:
            forest.kernels.best_split = saved
    return run


def _same(a, b):
    if isinstance(a, tuple):
        return a == b
    return np.allclose(a, b, rtol=1e-10, atol=1e-12)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled core not built; only the python backend is available")
    rng = np.random.default_rng(0)
    cases = [("best_split", split_case(rng)), ("pegasos_linear", pegasos_case(rng)),
             ("csr_rows_dot", csr_case(rng)), ("forest fit (5 trees)", forest_case(rng))]
    print(f"{'kernel':<22}" + "".join(f"{name:>12}" for name in backends) + f"{'speedup':>10}  agree")
    for label, case in cases:
        timings, outputs = {}, {}
        for name, impl in backends.items():
            timings[name], outputs[name] = _best(lambda: case(impl), args.repeat)
        speed = timings["python"] / timings["cython"] if "cython" in timings else float("nan")
        agree = "cython" not in outputs or _same(outputs["python"], outputs["cython"])
        cells = "".join(f"{timings[n] * 1e3:10.1f}ms" for n in backends)
        print(f"{label:<22}{cells}{speed:9.1f}x  {agree}")


if __name__ == "__main__":
    main()

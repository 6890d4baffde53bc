"""Compare the compiled tree kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--rows 20000] [--repeat 5]

Also times a full boosted fit and threshold-stealing run with each backend
swapped in, and checks both backends agree bit for bit on the inputs used.
"""
import argparse
import time

import numpy as np

from fedleak.protocols import DesignMatrix
from fedleak.tree import attack as TA
from fedleak.tree import ensemble as E
from fedleak.tree import kernels as K


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def _inputs(rows, seed=0):
    rng = np.random.default_rng(seed)
    bins = rng.integers(0, 32, rows).astype(np.int32)
    g, h = rng.standard_normal(rows), rng.uniform(0.1, 1.0, rows)
    sel = np.sort(rng.choice(rows, rows // 2, replace=False)).astype(np.int64)
    x = rng.uniform(0, 10, (rows, 8))
    # a complete depth-6 tree over 8 features
    n_int = 2 ** 6 - 1
    feat = rng.integers(0, 8, 2 ** 7 - 1).astype(np.int32)
    thr = rng.uniform(0, 10, 2 ** 7 - 1)
    left = np.full(2 ** 7 - 1, -1, np.int32)
    right = np.full(2 ** 7 - 1, -1, np.int32)
    left[:n_int] = 2 * np.arange(n_int) + 1
    right[:n_int] = 2 * np.arange(n_int) + 2
    feat[n_int:] = -1
    return bins, g, h, sel, x, feat, thr, left, right


def _kernel_table(impls, rows, repeat):
    bins, g, h, sel, x, feat, thr, left, right = _inputs(rows)
    out = {}
    for name, mod in impls.items():
        gs, hs = mod.bucket_sums(bins, g, h, sel, 32)
        out[name] = {
            "bucket_sums": _best(lambda: mod.bucket_sums(bins, g, h, sel, 32), repeat),
            "best_split": _best(lambda: [mod.best_split(gs, hs, 1.0, 1.0) for _ in range(1000)],
                                repeat) / 1000,
            "leaf_ids": _best(lambda: mod.leaf_ids(x, feat, thr, left, right), repeat),
        }
    if len(impls) == 2:
        a, b = impls["cython"], impls["python"]
        assert np.array_equal(a.bucket_sums(bins, g, h, sel, 32)[0],
                              b.bucket_sums(bins, g, h, sel, 32)[0])
        assert np.array_equal(a.leaf_ids(x, feat, thr, left, right),
                              b.leaf_ids(x, feat, thr, left, right))
    return out


def _swap(mod):
    # ensemble code resolves kernels.<name> at call time
    for name in ("bucket_sums", "best_split", "leaf_ids"):
        setattr(K, name, getattr(mod, name))


def _pipeline(rows, repeat):
    rng = np.random.default_rng(1)
    x = rng.uniform(0, 10, (rows, 6))
    y = np.sin(x[:, 0]) + x[:, 4] - 0.3 * x[:, 5] + 0.1 * rng.standard_normal(rows)
    parties = [DesignMatrix(x[:, :3], "B"), DesignMatrix(x[:, 3:], "A")]

    def fit():
        return E.secureboost_train(parties, y, "B", n_trees=10, max_depth=4)

    def steal():
        ens = fit()
        info = TA.tree_info(ens, "B")
        TA.steal_thresholds(TA.LeafOracle(ens), info, TA.AttackConfig(1e-6), ens.parties, "B")

    return {"fit": _best(fit, repeat), "fit+steal": _best(steal, repeat)}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    impls = {"python": K.fallback}
    if K.compiled is not None:
        impls = {"cython": K.compiled, **impls}
    else:
        print("compiled extension unavailable (not built, or FEDLEAK_PURE_PYTHON set); timing the fallback only")

    print(f"kernel timings, {args.rows} rows (best of {args.repeat}, seconds)")
    table = _kernel_table(impls, args.rows, args.repeat)
    for kern in ("bucket_sums", "best_split", "leaf_ids"):
        cells = "  ".join(f"{n}={table[n][kern]:.2e}" for n in impls)
        ratio = ""
        if len(impls) == 2:
            ratio = f"  speedup x{table['python'][kern] / table['cython'][kern]:.1f}"
        print(f"  {kern:<12} {cells}{ratio}")

    print(f"end to end, {min(args.rows, 5000)} rows")
    original = {n: getattr(K, n) for n in ("bucket_sums", "best_split", "leaf_ids")}
    try:
        for name, mod in impls.items():
            _swap(mod)
            res = _pipeline(min(args.rows, 5000), max(1, args.repeat // 2))
            print(f"  {name:<7} " + "  ".join(f"{k}={v:.3f}s" for k, v in res.items()))
    finally:
        for n, f in original.items():
            setattr(K, n, f)


if __name__ == "__main__":
    main()

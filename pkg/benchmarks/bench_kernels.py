"""Compare the compiled and numpy kernel backends.

Usage::

    python benchmarks/bench_kernels.py [--repeat 20] [--rows 2048] [--cols 500]

Times each fused kernel on training-sized arrays, then one full training
step of the common component under each backend.
"""
import argparse
import importlib
import os
import subprocess
import sys
import timeit

import numpy as np

from twoview import kernels

STEP_SNIPPET = """
import time
import numpy as np
from twoview import autodiff as ad
from twoview.common import CommonComponent, common_batch_loss
from twoview.config import TrainConfig
from twoview.optim import Adam
rng = np.random.default_rng(0)
cfg = TrainConfig(k=50, lambda1=1, lambda2=1)
X1, X2 = rng.random((2048, 392)), rng.random((2048, 392))
comp = CommonComponent.create(392, 392, cfg)
params = comp.parameters()
opt = Adam(params)
def step():
    loss, _ = common_batch_loss(comp, X1, X2, cfg)
    opt.step([g.data for g in ad.grad(loss, params)])
step()
t = time.perf_counter()
for _ in range({reps}):
    step()
print((time.perf_counter() - t) / {reps})
"""


def bench_kernels(mod, rows, cols, repeat):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((rows, cols))
    g = rng.standard_normal((rows, cols))
    p = rng.standard_normal((cols, cols // 2))
    gp = rng.standard_normal(p.shape)
    m, v = np.zeros_like(p), np.zeros_like(p)
    cases = {
        "relu": lambda: mod.relu(x),
        "relu_mask": lambda: mod.relu_mask(g, x),
        "col_moments": lambda: mod.col_moments(x),
        "adam_update": lambda: mod.adam_update(p, gp, m, v, 2e-4, 0.9, 0.999, 1e-8, 0.1, 0.001),
    }
    return {name: min(timeit.repeat(fn, number=1, repeat=repeat)) for name, fn in cases.items()}


def bench_step(backend, reps):
    env = dict(os.environ, TWOVIEW_KERNELS=backend, OMP_NUM_THREADS="1", OPENBLAS_NUM_THREADS="1")
    out = subprocess.run([sys.executable, "-c", STEP_SNIPPET.format(reps=reps)], env=env,
                         capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--rows", type=int, default=2048)
    ap.add_argument("--cols", type=int, default=500)
    ap.add_argument("--steps", type=int, default=3, help="training steps timed per backend (0 to skip)")
    args = ap.parse_args(argv)

    mods = {"python": kernels.load_backend("python")}
    try:
        mods["cython"] = kernels.load_backend("cython")
    except ImportError:
        print("compiled kernels not built; timing the numpy fallback only", file=sys.stderr)

    results = {name: bench_kernels(mod, args.rows, args.cols, args.repeat) for name, mod in mods.items()}
    names = list(results["python"])
    print(f"{'kernel':<14}" + "".join(f"{b:>12}" for b in results) + ("   speedup" if len(results) > 1 else ""))
    for n in names:
        row = f"{n:<14}" + "".join(f"{results[b][n] * 1e3:>10.3f}ms" for b in results)
        if "cython" in results:
            row += f"   {results['python'][n] / results['cython'][n]:6.2f}x"
        print(row)
    if args.steps:
        print()
        for b in mods:
            print(f"train step ({b:>6}): {bench_step(b, args.steps) * 1e3:8.1f} ms")


if __name__ == "__main__":
    importlib.invalidate_caches()
    main()

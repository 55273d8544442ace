"""Compare the compiled kernels with the numpy fallback.

Kernel timings call both backends directly and also check that they agree.
The end-to-end timing runs a short training job in a subprocess per backend
because the backend is chosen once, at import.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--epochs 3]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from ci_stonet import _kernels_py

try:
    from ci_stonet import _kernels as _kernels_c
except ImportError:
    _kernels_c = None

LAM, S0, S1 = 1e-6, 1e-2, 1e-1


def _cases(rng):
    theta = rng.normal(0.0, 0.05, size=200_000)
    n, d = 2000, 32
    Z = rng.normal(size=(n, d))
    v = rng.normal(size=(n, d))
    rows = np.sort(rng.choice(n, size=64, replace=False))
    grad = rng.normal(size=(64, d))
    noise = rng.normal(size=(64, d))
    act = np.tanh(rng.normal(size=(2000, 64)))
    delta = rng.normal(size=(2000, 64))
    return {
        "mixture_logpdf_grad": lambda k: k.mixture_logpdf_grad(theta, LAM, S0, S1),
        "slab_mask": lambda k: k.slab_mask(theta, LAM, S0, S1),
        "sghmc_update": lambda k: k.sghmc_update(Z.copy(), v.copy(), grad, noise, rows, 1e-3, 1.0, False),
        "tanh_backward": lambda k: k.tanh_backward(delta, act),
    }


def _agree(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_agree(x, y) for x, y in zip(a, b))
    return bool(np.allclose(np.asarray(a), np.asarray(b), rtol=1e-12, atol=1e-12))


def bench_kernels(repeat: int) -> list:
    cases = _cases(np.random.default_rng(0))
    rows = []
    for name, call in cases.items():
        t_py = min(timeit.repeat(lambda: call(_kernels_py), number=1, repeat=repeat))
        if _kernels_c is None:
            rows.append((name, t_py, float("nan"), None))
            continue
        t_c = min(timeit.repeat(lambda: call(_kernels_c), number=1, repeat=repeat))
        rows.append((name, t_py, t_c, _agree(call(_kernels_py), call(_kernels_c))))
    return rows


_E2E = """
import json, time
from dataclasses import replace
from ci_stonet import kernels
from ci_stonet.config import preset
from ci_stonet.pipeline import fit, load_splits
cfg = preset("misspec_basic_proxy")
cfg = replace(cfg, schedule=replace(cfg.schedule, pretrain_epochs={e}, train_epochs={e}, finetune_epochs={e}))
data = load_splits(cfg, 0).train
t = time.perf_counter()
model, log = fit(cfg, data, 0)
print(json.dumps({{"backend": kernels.BACKEND, "seconds": time.perf_counter() - t,
                  "log_density": log.records[-1].log_density}}))
"""


def bench_end_to_end(epochs: int) -> list:
    out = []
    for pure in ("1", "0"):
        env = dict(os.environ, CI_STONET_PURE_PYTHON=pure)
        res = subprocess.run([sys.executable, "-c", _E2E.format(e=epochs)], env=env,
                             capture_output=True, text=True, check=True)
        out.append(json.loads(res.stdout.strip().splitlines()[-1]))
    return out


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=20)
    p.add_argument("--epochs", type=int, default=3, help="epochs per training stage in the end-to-end run")
    args = p.parse_args(argv)

    print(f"{'kernel':<22}{'python [ms]':>13}{'cython [ms]':>13}{'speedup':>9}  agree")
    for name, t_py, t_c, ok in bench_kernels(args.repeat):
        print(f"{name:<22}{1e3 * t_py:>13.3f}{1e3 * t_c:>13.3f}{t_py / t_c:>9.2f}  {ok}")

    print()
    runs = bench_end_to_end(args.epochs)
    for r in runs:
        print(f"end-to-end fit ({args.epochs}+{args.epochs}+{args.epochs} epochs), {r['backend']:<7}: "
              f"{r['seconds']:.2f} s  final log density {r['log_density']:.6g}")
    if len(runs) == 2 and runs[1]["seconds"] > 0:
        print(f"end-to-end speedup: {runs[0]['seconds'] / runs[1]['seconds']:.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())

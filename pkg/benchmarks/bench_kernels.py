"""Compare the numba and NumPy/SciPy kernel backends.

Two measurements:

* micro: residual/Jacobian assembly and the banded solve, timed on inputs
  captured from a real 3C charge of the default bilayer;
* end to end: the same charge run in a fresh interpreter per backend, with
  ``MDFN_DISABLE_NUMBA`` selecting the path (numba compile time excluded by
  a warm-up run).

Usage: ``python benchmarks/bench_kernels.py [--repeat N] [--nodes N]``
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from mdfn import kernels, presets
from mdfn.design import SolverConfig
from mdfn.kernels import _numba, _numpy
from mdfn.protocol import evaluate

END_TO_END = """
import json, time
from mdfn import kernels, presets
from mdfn.design import SolverConfig
from mdfn.protocol import evaluate
cfg = SolverConfig(nodes_per_region={nodes})
d = presets.default_bilayer()
evaluate(d, 3.0, cfg, snapshot_count=1)
t = time.perf_counter()
m = evaluate(d, 3.0, cfg, snapshot_count=1)
print(json.dumps({{"backend": kernels.BACKEND, "seconds": time.perf_counter() - t,
                  "capacity": m.achieved_capacity}}))
"""


def capture_inputs(nodes: int):
    """Arguments of one mid-run assemble call."""
    calls = []
    original = kernels.assemble

    def spy(*args):
        calls.append(tuple(np.copy(a) if isinstance(a, np.ndarray) else a for a in args))
        return original(*args)

    kernels.assemble = spy
    try:
        evaluate(presets.default_bilayer(), 3.0, SolverConfig(nodes_per_region=nodes), snapshot_count=1)
    finally:
        kernels.assemble = original
    return calls[len(calls) // 2]


def micro(args, repeat: int) -> dict:
    res, ab = _numpy.assemble(*args)
    _numba.assemble(*args)
    _numba.solve_banded(ab.copy(), -res)  # compile outside the timing
    out = {}
    for name, mod in (("numpy", _numpy), ("numba", _numba)):
        t_asm = min(timeit.repeat(lambda: mod.assemble(*args), number=20, repeat=repeat)) / 20
        t_sol = min(timeit.repeat(lambda: mod.solve_banded(ab.copy(), -res), number=20, repeat=repeat)) / 20
        out[name] = {"assemble_us": t_asm * 1e6, "solve_us": t_sol * 1e6}
    r_np, ab_np = _numpy.assemble(*args)
    r_nb, ab_nb = _numba.assemble(*args)
    x_np = _numpy.solve_banded(ab_np.copy(), -r_np)
    x_nb = _numba.solve_banded(ab_nb.copy(), -r_nb)
    out["max_residual_diff"] = float(np.max(np.abs(r_np - r_nb)))
    out["max_jacobian_diff"] = float(np.max(np.abs(ab_np - ab_nb)))
    out["max_solution_rel_diff"] = float(np.max(np.abs(x_np - x_nb)) / max(np.max(np.abs(x_np)), 1e-300))
    return out


def end_to_end(nodes: int) -> list[dict]:
    rows = []
    for disable in ("1", "0"):
        env = dict(os.environ, MDFN_DISABLE_NUMBA=disable)
        proc = subprocess.run([sys.executable, "-c", END_TO_END.format(nodes=nodes)], env=env,
                              capture_output=True, text=True, check=True)
        rows.append(json.loads(proc.stdout.strip().splitlines()[-1]))
    return rows


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--nodes", type=int, default=30, help="nodes per region")
    p.add_argument("--skip-end-to-end", action="store_true")
    a = p.parse_args(argv)

    args = capture_inputs(a.nodes)
    m = micro(args, a.repeat)
    n = args[2].size
    print(f"mesh nodes: {n}, unknowns: {4 * n}")
    print(f"{'backend':<8} {'assemble [us]':>14} {'solve [us]':>12}")
    for name in ("numpy", "numba"):
        print(f"{name:<8} {m[name]['assemble_us']:>14.1f} {m[name]['solve_us']:>12.1f}")
    print(f"speedup  {m['numpy']['assemble_us'] / m['numba']['assemble_us']:>14.1f}"
          f" {m['numpy']['solve_us'] / m['numba']['solve_us']:>12.1f}")
    print(f"agreement: residual {m['max_residual_diff']:.2e}, jacobian {m['max_jacobian_diff']:.2e}, "
          f"solution (rel) {m['max_solution_rel_diff']:.2e}")
    if not a.skip_end_to_end:
        rows = end_to_end(a.nodes)
        for r in rows:
            print(f"3C charge, {r['backend']:<6}: {r['seconds']:.2f} s, capacity {r['capacity']:.6f} mAh/cm^2")
        print(f"end-to-end speedup: {rows[0]['seconds'] / rows[1]['seconds']:.1f}x")


if __name__ == "__main__":
    main()

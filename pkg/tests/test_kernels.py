import json
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdfn import kernels, presets
from mdfn.design import SolverConfig
from mdfn.kernels import _numba, _numpy
from mdfn.protocol import evaluate

KL = KU = kernels.KL


@pytest.fixture(scope="module")
def captured():
    calls = []
    original = kernels.assemble

    def spy(*args):
        calls.append(tuple(np.copy(a) if isinstance(a, np.ndarray) else a for a in args))
        return original(*args)

    kernels.assemble = spy
    try:
        evaluate(presets.default_bilayer(), 3.0, SolverConfig(nodes_per_region=8, radial_shells=6),
                 snapshot_count=1)
    finally:
        kernels.assemble = original
    return [calls[0], calls[len(calls) // 2], calls[-1]]


def _to_dense(ab, n):
    A = np.zeros((n, n))
    for i in range(n):
        for j in range(max(0, i - KL), min(n, i + KU + 1)):
            A[i, j] = ab[KU + i - j, j]
    return A


def test_backends_assemble_identically(captured):
    for args in captured:
        r1, ab1 = _numpy.assemble(*args)
        r2, ab2 = _numba.assemble(*args)
        assert np.allclose(r1, r2, rtol=1e-12, atol=1e-14)
        assert np.allclose(ab1, ab2, rtol=1e-12, atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.integers(8, 60), st.integers(0, 2**31 - 1))
def test_banded_solvers_agree(n, seed):
    rng = np.random.default_rng(seed)
    ab = rng.standard_normal((KL + KU + 1, n))
    ab[KU] = np.sign(ab[KU]) * (np.abs(ab).sum(axis=0) + 1.0)  # diagonally dominant
    b = rng.standard_normal(n)
    x_np = _numpy.solve_banded(ab.copy(), b.copy())
    x_nb = _numba.solve_banded(ab.copy(), b.copy())
    A = _to_dense(ab, n)
    assert np.allclose(A @ x_np, b, atol=1e-10)
    assert np.allclose(x_nb, x_np, rtol=1e-9, atol=1e-12)


SNIPPET = """
import json
from mdfn import kernels, presets
from mdfn.protocol import evaluate
m = evaluate(presets.default_bilayer(), 3.0, snapshot_count=1)
print(json.dumps({"backend": kernels.BACKEND, "capacity": m.achieved_capacity}))
"""


def _run(flag):
    env = dict(os.environ)
    env.pop("MDFN_DISABLE_NUMBA", None)
    if flag is not None:
        env["MDFN_DISABLE_NUMBA"] = flag
    out = subprocess.run([sys.executable, "-c", SNIPPET], env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def test_environment_flag_selects_backend_and_results_agree():
    fast = _run(None)
    slow = _run("1")
    assert fast["backend"] == "numba" and slow["backend"] == "numpy"
    assert slow["capacity"] == pytest.approx(fast["capacity"], rel=1e-8)

"""The numba path and the pure-numpy fallback must be bit-identical."""

import hashlib
import os
import subprocess
import sys

from ranloop import accel

_SIM_SNIPPET = """
import hashlib
from ranloop import accel
from ranloop.e2_wire import serialize_kpm_payload
from ranloop.ran_sim import BaseStation, SimConfig

assert accel.NUMBA_ENABLED == {expect_numba}, "wrong kernel path selected"
bs = BaseStation(SimConfig(n_bs=1, rng_seed=99))
chunks = []
for _ in range(40):
    bs.step_window()
    chunks.append(serialize_kpm_payload(bs.collect_kpms()))
digest = hashlib.sha256("\\n".join(chunks).encode()).hexdigest()
print(digest)
"""


def run_sim_subprocess(numba_flag: str) -> str:
    env = dict(os.environ, RANLOOP_NUMBA=numba_flag)
    expect = numba_flag != "0"
    code = _SIM_SNIPPET.format(expect_numba=expect)
    result = subprocess.run(
        [sys.executable, "-c", code], capture_output=True, text=True, env=env
    )
    assert result.returncode == 0, result.stderr
    return result.stdout.strip()


def test_env_flag_selects_fallback_and_streams_match():
    with_numba = run_sim_subprocess("1")
    without_numba = run_sim_subprocess("0")
    assert with_numba == without_numba
    assert len(with_numba) == 64


def test_current_process_uses_numba_by_default():
    assert os.environ.get(accel.ENV_FLAG, "1") != "0"
    assert accel.NUMBA_ENABLED


def test_scheduler_kernels_identical_on_both_paths():
    # the jitted kernel keeps its pure-python source as py_func
    import numpy as np

    from ranloop.schedulers import _pf_kernel, _rr_kernel, _wf_kernel

    if not accel.NUMBA_ENABLED:
        return
    rng = np.random.default_rng(3)
    for _ in range(200):
        n = int(rng.integers(1, 7))
        queue = rng.integers(0, 100_000, n).astype(np.int64)
        bits = np.array([40, 360, 1500], dtype=np.int64)[rng.integers(0, 3, n)]
        cap1 = bits // 8
        pf = rng.uniform(0.0, 10.0, n)
        quota = np.int64(rng.integers(0, 30))

        g1 = np.zeros(n, dtype=np.int64)
        g2 = np.zeros(n, dtype=np.int64)
        d1 = np.zeros(n, dtype=np.int64)
        d2 = np.zeros(n, dtype=np.int64)
        c1 = _rr_kernel(queue, cap1, quota, np.int64(0), g1, d1)
        c2 = _rr_kernel.py_func(queue, cap1, quota, np.int64(0), g2, d2)
        assert list(g1) == list(g2) and c1 == c2

        _wf_kernel(queue, bits, cap1, quota, g1, d1)
        _wf_kernel.py_func(queue, bits, cap1, quota, g2, d2)
        assert list(g1) == list(g2)

        _pf_kernel(queue, cap1, pf, quota, g1, d1)
        _pf_kernel.py_func(queue, cap1, pf, quota, g2, d2)
        assert list(g1) == list(g2)

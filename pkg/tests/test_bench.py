import os
import subprocess
import sys

import pytest

from quadfuse import kernels

BENCH = os.path.join(os.path.dirname(__file__), os.pardir, "benchmarks", "bench_kernels.py")


@pytest.mark.skipif(kernels.compiled_backend is None, reason="extension not built")
def test_benchmark_runs_and_backends_agree():
    proc = subprocess.run([sys.executable, BENCH, "--repeat", "1", "--number", "1"],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    rows = proc.stdout.strip().splitlines()[1:]
    assert len(rows) == 4
    assert all(r.endswith("True") for r in rows)

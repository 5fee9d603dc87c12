import os
import subprocess
import sys

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from intention_tuning import _kernels_py, kernels

try:
    from intention_tuning import _kernels
except ImportError:
    _kernels = None

needs_ext = pytest.mark.skipif(_kernels is None, reason="compiled extension not built")


@needs_ext
@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(0.0, 1e6, allow_nan=False), min_size=0, max_size=80))
def test_variance_split_parity(values):
    values = sorted(values)
    k_py, cost_py = _kernels_py.variance_split(values)
    k_cy, cost_cy = _kernels.variance_split(values)
    assert k_py == k_cy
    assert cost_cy == pytest.approx(cost_py, rel=1e-12, abs=1e-300)


@needs_ext
@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(0, 5), max_size=40), st.lists(st.integers(0, 5), max_size=40))
def test_lcs_parity(a, b):
    assert _kernels.lcs_length(a, b) == _kernels_py.lcs_length(a, b)


def test_variance_split_reference_cases():
    assert _kernels_py.variance_split([]) == (0, 0.0)
    assert _kernels_py.variance_split([1.0, 1.0, 1.0])[0] == 0
    k, cost = _kernels_py.variance_split([0.0, 0.0, 10.0, 10.0])
    assert k == 2 and cost == 0.0
    # equal costs at k=1 and k=2 resolve to the larger lower side
    assert _kernels_py.variance_split([0.0, 1.0, 2.0])[0] == 2


def test_lcs_reference_cases():
    assert _kernels_py.lcs_length([1, 2, 3, 4], [2, 4, 3]) == 2
    assert _kernels_py.lcs_length([], [1]) == 0


def test_pure_python_fallback_selected_by_environment():
    code = "from intention_tuning import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, INTENTION_TUNING_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
    forced = os.environ.get("INTENTION_TUNING_PURE_PYTHON") == "1"
    assert kernels.BACKEND == ("cython" if _kernels is not None and not forced else "python")


def test_benchmark_script_runs():
    if _kernels is None:
        pytest.skip("compiled extension not built")
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    out = subprocess.run([sys.executable, os.path.join(root, "benchmarks", "bench_kernels.py"), "--repeat", "1"],
                         capture_output=True, text=True, check=True)
    assert "variance_split" in out.stdout and "lcs_length" in out.stdout

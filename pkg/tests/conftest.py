"""Shared fixtures and independent oracles (finite differences, triple-loop
matmul, straight-line chain interpreter helpers live in oracles.py)."""

from __future__ import annotations

import numpy as np
import pytest

from depthmoe import kernels

ACCEPTANCE_RESULTS: dict[int, tuple[str, bool]] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=kernels.available_backends())
def kernel_backend(request):
    """Run a test under every available kernel backend, then restore auto."""
    kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend("auto")


@pytest.fixture
def numpy_kernels():
    """Pin the numpy backend (golden-value tests)."""
    kernels.set_backend("numpy")
    yield
    kernels.set_backend("auto")


def record_acceptance(number: int, name: str, passed: bool):
    ACCEPTANCE_RESULTS[number] = (name, passed)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        name, passed = ACCEPTANCE_RESULTS[number]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} {name}: {status}")

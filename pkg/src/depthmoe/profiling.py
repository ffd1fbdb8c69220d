"""Exact compute metering.

A ``Profiler`` counts multiply-accumulates (MACs) and allocated activation
floats while active. Counters are exact integers: every matrix product of
shapes (m, p) x (p, q) adds m*p*q, and every op output adds its element
count to the activation tally. Elementwise work (norms, activations,
softmax) is deliberately not counted as MACs; cost reports therefore match
the analytic per-block formulas with integer equality.

Profilers nest: an op credits every profiler on the stack, so an outer
counter's delta over any inner region equals that region's own total. Each
thread has its own stack (an inference context owns its counters).
"""

import threading
from contextlib import contextmanager

_tls = threading.local()


def _stack():
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = []
        _tls.stack = stack
    return stack


class Profiler:
    __slots__ = ("macs", "activation_floats")

    def __init__(self):
        self.macs = 0
        self.activation_floats = 0

    def merge(self, other: "Profiler"):
        self.macs += other.macs
        self.activation_floats += other.activation_floats


@contextmanager
def profile():
    """Activate a fresh Profiler on this thread's stack and yield it."""
    prof = Profiler()
    stack = _stack()
    stack.append(prof)
    try:
        yield prof
    finally:
        stack.pop()


def add_macs(n: int):
    for prof in _stack():
        prof.macs += n


def add_activation(n: int):
    for prof in _stack():
        prof.activation_floats += n


def profiling_active() -> bool:
    return bool(_stack())

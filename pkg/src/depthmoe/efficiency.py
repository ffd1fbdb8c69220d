"""Exact MAC accounting and the uniform-depth comparison.

MACs are the canonical unit (reports also print 2*MAC as FLOPs). Only matrix
products count, so the analytic per-block formula

    block(n) = (4 + 2*ffn_mult) * n * d^2  +  2 * n^2 * d

equals the profiler's measured count for one block with integer equality.
Savings are reported against a uniform-depth transformer at matched block
dims: savings = 1 - chain_total / udt_total.

The canonical chain families below are the representative escalation mixes
(always containing a shallow expert for the paper-band set) used by the
scaled savings checks; arbitrary mixes can fall outside any fixed band
because chain depth ranges from k to 4k blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import TraceError
from .experts import ExpertKind, KIND_DEPTH
from .routing import ChainTrace

# representative escalation chains (>=1 SPE) for the d=24 paper-band check
PAPER_BAND_CHAINS = {
    2: ("SPE", "LIE"),
    3: ("SPE", "CRE", "LIE"),
    4: ("SPE", "SPE", "CRE", "MIE"),
    5: ("SPE", "SPE", "CRE", "MIE", "MCE"),
}

# representative desk-scale chains for the d=8 check
DESK_BAND_CHAINS = {
    2: ("SPE", "SPE"),
    3: ("SPE", "SPE", "CRE"),
    4: ("SPE", "SPE", "CRE", "MCE"),
    5: ("SPE", "SPE", "CRE", "MCE", "MCE"),
}

PAPER_BAND = (0.70, 0.80)
DESK_BAND = (0.35, 0.80)


@dataclass
class CostModel:
    d_model: int = 64
    ffn_mult: int = 4
    n_classes: int = 16
    n_experts: int = 10
    mem_slots: int = 16

    @property
    def feature_dim(self) -> int:
        return self.d_model + 4

    def block_macs(self, n: int) -> int:
        d = self.d_model
        return (4 + 2 * self.ffn_mult) * n * d * d + 2 * n * n * d

    def cross_attention_macs(self, n: int, slot_rows: int) -> int:
        d = self.d_model
        return 2 * n * d * d + 2 * slot_rows * d * d + 2 * n * slot_rows * d

    def mce_macs(self) -> int:
        return 4 * self.d_model  # halt head (d) + 3-way depth head (3d)

    def expert_macs(self, kind: ExpertKind, n: int, slot_rows: int = 2) -> int:
        if kind is ExpertKind.MCE:
            return self.mce_macs()
        macs = KIND_DEPTH[kind] * self.block_macs(n)
        if kind is ExpertKind.MIE:
            macs += self.cross_attention_macs(n, slot_rows)
        return macs

    def router_macs(self) -> int:
        return self.n_experts * self.feature_dim

    def head_macs(self) -> int:
        return self.n_classes * self.d_model

    def overhead_macs(self) -> int:
        return self.router_macs() + self.head_macs()


def uniform_cost(d: int, n: int, cm: CostModel) -> int:
    """Exact MACs for a uniform-depth trunk: d blocks at sequence length n."""
    return d * cm.block_macs(n)


@dataclass
class CostReport:
    variant: str
    n: int
    depth_or_k: int
    total_macs: int
    routing_macs: int
    per_step_macs: list[int]
    activated_block_params: int
    shared_params: int
    activated_params: int
    peak_activation_floats: int
    memory_slot_floats: int
    baseline_macs: int
    savings: float
    flops: int = field(init=False)

    def __post_init__(self):
        self.flops = 2 * self.total_macs


def chain_cost(trace: ChainTrace, baseline_macs: int, n: int,
               activated_block_params: int = 0, shared_params: int = 0,
               peak_activation_floats: int = 0, memory_slot_floats: int = 0,
               variant: str = "dsmoe") -> CostReport:
    """Assemble the cost report for one traced chain vs a uniform baseline."""
    if trace.total_macs != trace.routing_macs + sum(s.macs for s in trace.steps):
        raise TraceError("trace total does not equal steps + routing overhead")
    if baseline_macs <= 0:
        raise TraceError("baseline MACs must be positive")
    savings = 1.0 - trace.total_macs / baseline_macs
    return CostReport(
        variant=variant,
        n=n,
        depth_or_k=len(trace.selected),
        total_macs=trace.total_macs,
        routing_macs=trace.routing_macs,
        per_step_macs=[s.macs for s in trace.steps],
        activated_block_params=activated_block_params,
        shared_params=shared_params,
        activated_params=activated_block_params + shared_params,
        peak_activation_floats=peak_activation_floats,
        memory_slot_floats=memory_slot_floats,
        baseline_macs=baseline_macs,
        savings=savings,
    )


def memory_report(peak_activation_floats: int, activated_block_params: int,
                  shared_params: int, used_memory: bool, cm: CostModel) -> dict:
    """Activation/parameter footprint; MIE contributes exactly its slot floats."""
    return {
        "peak_activation_floats": peak_activation_floats,
        "activated_block_params": activated_block_params,
        "shared_params": shared_params,
        "activated_params": activated_block_params + shared_params,
        "memory_slot_floats": cm.mem_slots * cm.d_model if used_memory else 0,
    }


COST_CSV_HEADER = ("variant,n,depth_or_k,macs,routing_macs,activated_params,"
                   "activated_block_params,peak_activations,savings")


def cost_csv_line(report: CostReport) -> str:
    return (f"{report.variant},{report.n},{report.depth_or_k},{report.total_macs},"
            f"{report.routing_macs},{report.activated_params},"
            f"{report.activated_block_params},{report.peak_activation_floats},"
            f"{report.savings!r}")


def analytic_chain_macs(kinds: list[str], n: int, cm: CostModel) -> int:
    """Closed-form chain cost for a kind list (fresh memory, one segment)."""
    total = cm.overhead_macs()
    for kind in kinds:
        total += cm.expert_macs(ExpertKind(kind), n)
    return total


def analytic_savings(kinds: list[str], n: int, udt_depth: int, cm: CostModel) -> float:
    chain = analytic_chain_macs(kinds, n, cm)
    baseline = uniform_cost(udt_depth, n, cm) + cm.head_macs()
    return 1.0 - chain / baseline

"""Routing: input features, expert probabilities, sparse selection, and
dynamic chain composition.

The feature vector is [mean-pool(h0), d_syn, c_sem, r, C] (length
d_model + 4); a single weight matrix maps it to per-expert logits and a
softmax yields the routing distribution. Exactly the k most probable experts
are selected (descending probability, ties to the lower id) and applied in
that order; steps after the first add a residual connection. MCE experts in
the chain act as supervisors (halt / extend / shrink) instead of
transforming the hidden state.

Gradient flows into the routing weights two ways: the routing loss on the
probabilities, and each executed expert's output scaled by its probability
renormalized over the selected set. Selection itself is non-differentiable
and no straight-through estimator is used.

The depth policy maps the complexity score to k in [2, 5] through three
calibrated thresholds (the 40th/75th/95th percentiles of training-corpus
scores, mirroring the 40/35/20/5 data mix).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import profiling
from .autograd import (
    Tensor, add, add_scalars, cmul, concat, gather, matvec, mean_axis0, mul,
    reciprocal, reshape, scale, softmax,
)
from .complexity import ComplexityFeatures
from .errors import CalibrationError, ConfigError, ContractError
from .experts import ExpertKind, ExpertModule, MemoryState, expert_apply, mce_supervise

FEATURE_EXTRAS = 4  # d_syn, c_sem, r, C

K_MIN = 2
K_MAX = 5
TAU_HALT = 0.9


class RoutingNetwork:
    """Trainable map from input features to expert logits."""

    def __init__(self, n_experts: int, d_model: int, rng: np.random.Generator,
                 std: float = 0.05):
        self.n_experts = n_experts
        self.feature_dim = d_model + FEATURE_EXTRAS
        self.W = Tensor(
            rng.normal(0.0, std, size=(n_experts, self.feature_dim)),
            requires_grad=True,
            name="router.W",
        )

    def params(self) -> list[Tensor]:
        return [self.W]


def phi(features: ComplexityFeatures, h0: Tensor, score: Tensor) -> Tensor:
    """Feature representation: pooled embedding plus the complexity block."""
    pooled = mean_axis0(h0)
    consts = Tensor(np.array([float(features.d_syn), float(features.c_sem), float(features.r)]))
    return concat([pooled, consts, reshape(score, (1,))])


def routing_probs(router: RoutingNetwork, feat: Tensor) -> Tensor:
    """Softmax over expert logits; differentiable into W and the features."""
    return softmax(matvec(router.W, feat))


def select_top_k(probs, k: int) -> list[int]:
    """Ids of the k most probable experts, descending; ties to the lower id."""
    p = probs.data if isinstance(probs, Tensor) else np.asarray(probs)
    m = p.shape[0]
    if not 1 <= k <= m:
        raise ConfigError(f"k={k} out of range [1, {m}]")
    order = sorted(range(m), key=lambda j: (-p[j], j))
    return order[:k]


@dataclass
class RoutingDecision:
    probs: np.ndarray
    selected: list[int]
    k: int


class DepthPolicy:
    """Piecewise-constant map from complexity score to chain width k."""

    def __init__(self, thresholds: tuple[float, float, float] | None = None,
                 k_min: int = K_MIN, k_max: int = K_MAX):
        self.thresholds = thresholds
        self.k_min = k_min
        self.k_max = k_max

    def calibrate(self, scores) -> "DepthPolicy":
        scores = np.asarray(list(scores), dtype=np.float64)
        t1, t2, t3 = np.percentile(scores, [40.0, 75.0, 95.0])
        self.thresholds = (float(t1), float(t2), float(t3))
        return self

    def choose_k(self, score: float) -> int:
        if self.thresholds is None:
            raise CalibrationError("depth policy used before calibration")
        t1, t2, t3 = self.thresholds
        if score <= t1:
            k = 2
        elif score <= t2:
            k = 3
        elif score <= t3:
            k = 4
        else:
            k = 5
        return max(self.k_min, min(self.k_max, k))


def choose_k(score: float, policy: DepthPolicy) -> int:
    return policy.choose_k(score)


@dataclass
class ChainStep:
    expert_id: int
    kind: str
    macs: int
    halt_prob: float | None = None


@dataclass
class ChainTrace:
    """Per-inference interpretability record; the JSONL export schema is
    normative (extra `routing_macs` documents non-expert overhead)."""

    input_id: str
    tier: int | None
    d_syn: int
    c_sem: float
    r: int
    C: float
    probs: list[float]
    selected: list[int]
    steps: list[ChainStep]
    routing_macs: int
    total_macs: int
    correct: bool | None = None

    def to_json_obj(self) -> dict:
        return {
            "input_id": self.input_id,
            "tier": self.tier,
            "d_syn": self.d_syn,
            "c_sem": self.c_sem,
            "r": self.r,
            "C": self.C,
            "probs": self.probs,
            "selected": self.selected,
            "steps": [
                {"expert_id": s.expert_id, "kind": s.kind, "macs": s.macs,
                 "halt_prob": s.halt_prob}
                for s in self.steps
            ],
            "routing_macs": self.routing_macs,
            "total_macs": self.total_macs,
            "correct": self.correct,
        }


@dataclass
class ChainResult:
    h_out: Tensor
    steps: list[ChainStep]
    executed: list[int]
    supervisor_signals: list = field(default_factory=list)


def compose_chain(
    experts: list[ExpertModule],
    selected: list[int],
    h0: Tensor,
    probs: Tensor | None = None,
    mem: MemoryState | None = None,
    mask: np.ndarray | None = None,
    segments: list[tuple[int, int]] | None = None,
    mce_enabled: bool = True,
    tau_halt: float = TAU_HALT,
    k_max: int = K_MAX,
    detach_gating: bool = False,
) -> ChainResult:
    """Execute a selected expert chain on h0 (Phase 3 of the forward pass).

    h_1 = w_1 * E_1(h_0); for t > 1, h_t = w_t * E_t(h_{t-1}) + h_{t-1},
    where w_t is the expert's probability renormalized over the selected set
    (w_t = 1 when no probabilities are supplied or gating is detached from
    the graph). Residual indexing counts transforming steps only; MCE steps
    supervise instead of transforming and never leave the chain empty.
    """
    if not selected:
        raise ContractError("compose_chain requires a nonempty selection")

    # gate weights renormalized over the *selected* set; an extension expert
    # reuses the same denominator so gradients stay deterministic
    inv_denom: Tensor | None = None
    gate_cache: dict[int, Tensor | float] = {}
    if probs is not None:
        inv_denom = reciprocal(add_scalars([gather(probs, j) for j in selected]))

    def gate_weight(j: int) -> Tensor | float | None:
        if probs is None:
            return None
        if j not in gate_cache:
            if detach_gating:
                gate_cache[j] = float(probs.data[j]) * float(inv_denom.data)
            else:
                gate_cache[j] = mul(gather(probs, j), inv_denom)
        return gate_cache[j]

    pending = list(selected)
    executed: list[int] = []
    steps: list[ChainStep] = []
    signals = []
    h = h0
    transforms = 0
    extension_granted = False
    non_mce_total = sum(1 for j in selected if experts[j].kind is not ExpertKind.MCE)

    while pending and len(steps) < k_max + 1:
        j = pending.pop(0)
        e = experts[j]
        halt_prob = None
        with profiling.profile() as prof:
            if e.kind is ExpertKind.MCE:
                if mce_enabled:
                    sig = mce_supervise(e, h, len(steps) + 1)
                    signals.append(sig)
                    halt_prob = sig.halt_prob
                # supervisor disabled: identity pass-through, no control flow
            else:
                out = expert_apply(
                    e, h, mask=mask,
                    mem=mem if e.kind is ExpertKind.MIE else None,
                    segments=segments,
                )
                w = gate_weight(j)
                if isinstance(w, Tensor):
                    out = scale(out, w)
                elif w is not None:
                    out = cmul(out, w)
                transforms += 1
                h = out if transforms == 1 else add(out, h)
        steps.append(ChainStep(j, e.kind.value, prof.macs, halt_prob))
        executed.append(j)

        if halt_prob is None:
            continue
        # apply the supervisor's decisions to the pending queue
        sig = signals[-1]
        if sig.depth_adjust == +1 and not extension_granted and non_mce_total < k_max:
            ranked = select_top_k(probs, len(experts)) if probs is not None else []
            for cand in ranked:
                if cand not in executed and cand not in pending:
                    pending.append(cand)
                    extension_granted = True
                    if experts[cand].kind is not ExpertKind.MCE:
                        non_mce_total += 1
                    break
        elif sig.depth_adjust == -1 and pending:
            last = pending[-1]
            non_mce_pending = sum(1 for p in pending if experts[p].kind is not ExpertKind.MCE)
            removable = (
                experts[last].kind is ExpertKind.MCE
                or transforms > 0
                or non_mce_pending > 1
            )
            if removable:
                pending.pop()
                if experts[last].kind is not ExpertKind.MCE:
                    non_mce_total -= 1
        if sig.halt_prob > tau_halt:
            if transforms == 0:
                # truncation must never leave the chain without a transformer
                keep = next((p for p in pending if experts[p].kind is not ExpertKind.MCE), None)
                pending = [keep] if keep is not None else []
            else:
                pending = []

    return ChainResult(h_out=h, steps=steps, executed=executed, supervisor_signals=signals)

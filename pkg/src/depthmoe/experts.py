"""The five expert families as parameterized hidden-state transformers.

Every expert maps (n, d_model) -> (n, d_model) through pre-norm transformer
blocks (windowed self-attention, then a GELU feed-forward, both residual).
Family depths: SPE=1 block, CRE=2, LIE=4, MIE=2 plus a memory pass, MCE is a
supervisory unit whose hidden-state transform is the identity.

MIE memory: after its blocks, an MIE writes one mean-pooled summary per
input segment to the memory slots (cursor advances modulo capacity), then
every token cross-attends over slots written *earlier* (plus an always-
visible zero sentinel so the softmax is defined). The cross-attention value
projection is zero-initialized, so an untouched value path contributes
exactly nothing — fresh models are bit-neutral to memory.

MCE control heads (zero-initialized): a sigmoid halt head and a 3-way
depth-adjust head read the mean-pooled hidden state; at init halt_prob is
exactly 0.5 and the adjust head ties, which maps to "no adjustment".
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .autograd import (
    Tensor, add, add_indexed, cadd, cmul, concat_cols, layernorm, matmul,
    matvec, mean_axis0, gelu, sigmoid, slice_cols, slice_rows, softmax,
    stack_rows, transpose,
)
from .errors import ConfigError, ContractError, NumericError

MASK_NEG = -1e30

# learned relative-position attention bias, clipped to +-REL_SPAN offsets
REL_SPAN = 16

_offset_cache: dict[int, np.ndarray] = {}


def relative_offsets(n: int) -> np.ndarray:
    """Constant (n, n) matrix of clipped relative offsets, shifted to >= 0."""
    cached = _offset_cache.get(n)
    if cached is None:
        idx = np.arange(n)
        rel = np.clip(idx[:, None] - idx[None, :], -REL_SPAN, REL_SPAN) + REL_SPAN
        cached = rel.astype(np.int64)
        _offset_cache[n] = cached
    return cached


class ExpertKind(str, Enum):
    SPE = "SPE"
    CRE = "CRE"
    LIE = "LIE"
    MIE = "MIE"
    MCE = "MCE"


KIND_DEPTH = {
    ExpertKind.SPE: 1,
    ExpertKind.CRE: 2,
    ExpertKind.LIE: 4,
    ExpertKind.MIE: 2,
    ExpertKind.MCE: 1,
}

FAMILY_ORDER = [ExpertKind.SPE, ExpertKind.CRE, ExpertKind.LIE, ExpertKind.MIE, ExpertKind.MCE]


def _normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)


class Block:
    """One pre-norm transformer block: x + MHA(LN(x)), then x + FFN(LN(x)).

    Multi-head attention with head dims partitioning d_model, plus a learned
    per-head relative-position bias (zero-initialized) on the scores. The
    per-block MAC count is independent of the head count.
    """

    def __init__(self, rng: np.random.Generator, d_model: int, ffn_mult: int,
                 std: float, prefix: str, n_heads: int = 4):
        d = d_model
        h = ffn_mult * d_model
        if d_model % n_heads:
            raise ConfigError(f"d_model {d_model} not divisible by {n_heads} heads")
        self.d_model = d_model
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.scale = 1.0 / math.sqrt(self.head_dim)
        self.ln1_g = Tensor(np.ones(d), requires_grad=True, name=f"{prefix}.ln1_g")
        self.ln1_b = Tensor(np.zeros(d), requires_grad=True, name=f"{prefix}.ln1_b")
        self.wq = Tensor(_normal(rng, (d, d), std), requires_grad=True, name=f"{prefix}.wq")
        self.wk = Tensor(_normal(rng, (d, d), std), requires_grad=True, name=f"{prefix}.wk")
        self.wv = Tensor(_normal(rng, (d, d), std), requires_grad=True, name=f"{prefix}.wv")
        self.wo = Tensor(_normal(rng, (d, d), std), requires_grad=True, name=f"{prefix}.wo")
        self.ln2_g = Tensor(np.ones(d), requires_grad=True, name=f"{prefix}.ln2_g")
        self.ln2_b = Tensor(np.zeros(d), requires_grad=True, name=f"{prefix}.ln2_b")
        self.w1 = Tensor(_normal(rng, (d, h), std), requires_grad=True, name=f"{prefix}.w1")
        self.w2 = Tensor(_normal(rng, (h, d), std), requires_grad=True, name=f"{prefix}.w2")
        # zero-init: positional attention preferences are learned, not imposed
        self.rel_bias = Tensor(np.zeros(n_heads * (2 * REL_SPAN + 1)), requires_grad=True,
                               name=f"{prefix}.rel_bias")

    def params(self) -> list[Tensor]:
        return [self.ln1_g, self.ln1_b, self.wq, self.wk, self.wv, self.wo,
                self.ln2_g, self.ln2_b, self.w1, self.w2, self.rel_bias]

    def forward(self, h: Tensor, mask: np.ndarray | None) -> Tensor:
        n = h.shape[0]
        a = layernorm(h, self.ln1_g, self.ln1_b)
        q = matmul(a, self.wq)
        k = matmul(a, self.wk)
        v = matmul(a, self.wv)
        offsets = relative_offsets(n)
        span = 2 * REL_SPAN + 1
        ctx_heads = []
        for head in range(self.n_heads):
            lo = head * self.head_dim
            hi = lo + self.head_dim
            scores = cmul(matmul(slice_cols(q, lo, hi), transpose(slice_cols(k, lo, hi))),
                          self.scale)
            scores = add_indexed(scores, self.rel_bias, offsets + head * span)
            if mask is not None:
                scores = cadd(scores, mask)
            att = softmax(scores)
            ctx_heads.append(matmul(att, slice_cols(v, lo, hi)))
        ctx = concat_cols(ctx_heads) if self.n_heads > 1 else ctx_heads[0]
        h = add(h, matmul(ctx, self.wo))
        f = layernorm(h, self.ln2_g, self.ln2_b)
        return add(h, matmul(gelu(matmul(f, self.w1)), self.w2))


class CrossAttention:
    """Memory read head: tokens attend over slot summaries."""

    def __init__(self, rng: np.random.Generator, d_model: int, std: float, prefix: str):
        d = d_model
        self.scale = 1.0 / math.sqrt(d_model)
        self.ln_g = Tensor(np.ones(d), requires_grad=True, name=f"{prefix}.ln_g")
        self.ln_b = Tensor(np.zeros(d), requires_grad=True, name=f"{prefix}.ln_b")
        self.wq = Tensor(_normal(rng, (d, d), std), requires_grad=True, name=f"{prefix}.wq")
        self.wk = Tensor(_normal(rng, (d, d), std), requires_grad=True, name=f"{prefix}.wk")
        # zero value path: fresh models read exactly nothing from memory
        self.wv = Tensor(np.zeros((d, d)), requires_grad=True, name=f"{prefix}.wv")
        self.wo = Tensor(_normal(rng, (d, d), std), requires_grad=True, name=f"{prefix}.wo")

    def params(self) -> list[Tensor]:
        return [self.ln_g, self.ln_b, self.wq, self.wk, self.wv, self.wo]

    def forward(self, h: Tensor, slots: Tensor, read_mask: np.ndarray) -> Tensor:
        a = layernorm(h, self.ln_g, self.ln_b)
        q = matmul(a, self.wq)
        k = matmul(slots, self.wk)
        v = matmul(slots, self.wv)
        scores = cadd(cmul(matmul(q, transpose(k)), self.scale), read_mask)
        att = softmax(scores)
        return matmul(matmul(att, v), self.wo)


class MemoryState:
    """Slot memory for MIE: capacity-bounded summaries with a write cursor.

    Slots are held as written (order, vector) entries; the cursor is the next
    write position and wraps modulo capacity. Non-MIE experts never touch it.
    """

    def __init__(self, n_slots: int, d_model: int):
        self.n_slots = n_slots
        self.d_model = d_model
        self.write_count = 0
        self._slots: list[tuple[int, Tensor] | None] = [None] * n_slots

    @property
    def cursor(self) -> int:
        return self.write_count % self.n_slots

    def write(self, vec: Tensor):
        if vec.shape != (self.d_model,):
            raise ContractError(f"memory summary must be ({self.d_model},), got {tuple(vec.shape)}")
        self._slots[self.cursor] = (self.write_count, vec)
        self.write_count += 1

    def entries_before(self, order: int) -> list[tuple[int, Tensor]]:
        live = [e for e in self._slots if e is not None and e[0] < order]
        return sorted(live, key=lambda e: e[0])

    def slots_array(self) -> np.ndarray:
        out = np.zeros((self.n_slots, self.d_model))
        for i, entry in enumerate(self._slots):
            if entry is not None:
                out[i] = entry[1].data
        return out

    @property
    def slot_floats(self) -> int:
        return self.n_slots * self.d_model


@dataclass
class SupervisorSignal:
    halt_prob: float
    depth_adjust: int  # -1, 0, +1
    halt_prob_tensor: Tensor | None = None
    depth_logits_tensor: Tensor | None = None


class ExpertModule:
    """One expert: family kind, internal depth, named parameters."""

    def __init__(self, expert_id: int, kind: ExpertKind, d_model: int,
                 rng: np.random.Generator, ffn_mult: int = 4, std: float = 0.05):
        self.expert_id = expert_id
        self.kind = kind
        self.d_model = d_model
        self.internal_depth = KIND_DEPTH[kind]
        prefix = f"experts.{expert_id}"
        self.blocks: list[Block] = []
        self.cross: CrossAttention | None = None
        self.halt_w: Tensor | None = None
        self.depth_w: Tensor | None = None
        if kind is ExpertKind.MCE:
            # identity transform; only control heads (zero-init: halt=0.5, ties->no adjust)
            self.halt_w = Tensor(np.zeros((1, d_model)), requires_grad=True, name=f"{prefix}.halt_w")
            self.depth_w = Tensor(np.zeros((3, d_model)), requires_grad=True, name=f"{prefix}.depth_w")
        else:
            for b in range(self.internal_depth):
                self.blocks.append(Block(rng, d_model, ffn_mult, std, f"{prefix}.blocks.{b}"))
            if kind is ExpertKind.MIE:
                self.cross = CrossAttention(rng, d_model, std, f"{prefix}.cross")

    def params(self) -> list[Tensor]:
        out: list[Tensor] = []
        for block in self.blocks:
            out.extend(block.params())
        if self.cross is not None:
            out.extend(self.cross.params())
        if self.halt_w is not None:
            out.extend([self.halt_w, self.depth_w])
        return out

    def named_params(self) -> dict[str, Tensor]:
        return {p.name: p for p in self.params()}

    def param_count(self) -> int:
        return sum(p.size for p in self.params())

    def checksum(self) -> int:
        crc = 0
        for p in self.params():
            crc = zlib.crc32(np.ascontiguousarray(p.data).tobytes(), crc)
        return crc


def window_mask(n: int, window: int | None) -> np.ndarray | None:
    """Additive attention mask limiting each token to +-window positions."""
    if window is None or window >= n:
        return None
    idx = np.arange(n)
    dist = np.abs(idx[:, None] - idx[None, :])
    return np.where(dist <= window, 0.0, MASK_NEG)


def apply_blocks(e: ExpertModule, h: Tensor, mask: np.ndarray | None) -> Tensor:
    for block in e.blocks:
        h = block.forward(h, mask)
    return h


def expert_apply(e: ExpertModule, h: Tensor, mask: np.ndarray | None = None,
                 mem: MemoryState | None = None,
                 segments: list[tuple[int, int]] | None = None) -> Tensor:
    """Apply one expert to a hidden state; shape-preserving.

    MIE experts require a MemoryState (and optionally explicit segments);
    providing memory to any other kind is a contract violation.
    """
    if h.ndim != 2 or h.shape[1] != e.d_model:
        raise ConfigError(
            f"hidden state {tuple(h.shape)} does not match expert d_model {e.d_model}"
        )
    if not np.all(np.isfinite(h.data)):
        raise NumericError("hidden state contains NaN or Inf")
    if (mem is not None) != (e.kind is ExpertKind.MIE):
        raise ContractError("memory state must be provided iff the expert is MIE")
    if e.kind is ExpertKind.MCE:
        return h
    if e.kind is ExpertKind.MIE:
        out, _ = mie_update(e, h, mem, mask=mask, segments=segments)
        return out
    return apply_blocks(e, h, mask)


def mie_update(e: ExpertModule, h: Tensor, mem: MemoryState,
               mask: np.ndarray | None = None,
               segments: list[tuple[int, int]] | None = None
               ) -> tuple[Tensor, MemoryState]:
    """MIE forward: blocks, then write per-segment summaries, then a causal
    cross-attention read (segment j sees only slots written before it)."""
    if e.kind is not ExpertKind.MIE:
        raise ContractError(f"mie_update called on {e.kind.value} expert")
    n = h.shape[0]
    if not segments:
        segments = [(0, n)]
    h = apply_blocks(e, h, mask)

    base = mem.write_count
    for a, b in segments:
        mem.write(mean_axis0(slice_rows(h, a, b)))

    visible = mem.entries_before(base + len(segments))
    rows: list[Tensor] = [Tensor(np.zeros(e.d_model))]  # sentinel, always attendable
    orders: list[int] = [-1]
    for order, vec in visible:
        rows.append(vec)
        orders.append(order)
    slots = stack_rows(rows)

    # token in segment j may read entries written before base + j
    read_mask = np.full((n, len(rows)), MASK_NEG)
    read_mask[:, 0] = 0.0
    for j, (a, b) in enumerate(segments):
        for col, order in enumerate(orders):
            if 0 <= order < base + j:
                read_mask[a:b, col] = 0.0

    h = add(h, e.cross.forward(h, slots, read_mask))
    return h, mem


def mce_supervise(e: ExpertModule, h: Tensor, step: int) -> SupervisorSignal:
    """Supervisory read-out: halt probability and a 3-way depth adjustment.

    Head output order is (none, extend, shrink) so a zero-initialized tied
    argmax means no adjustment.
    """
    if e.kind is not ExpertKind.MCE:
        raise ContractError(f"mce_supervise called on {e.kind.value} expert")
    pooled = mean_axis0(h)
    halt = sigmoid(matvec(e.halt_w, pooled))
    depth_logits = matvec(e.depth_w, pooled)
    choice = int(np.argmax(depth_logits.data))
    adjust = {0: 0, 1: +1, 2: -1}[choice]
    return SupervisorSignal(
        halt_prob=float(halt.data[0]),
        depth_adjust=adjust,
        halt_prob_tensor=halt,
        depth_logits_tensor=depth_logits,
    )


def build_expert_pool(families: list[ExpertKind], per_family: int, d_model: int,
                      rng: np.random.Generator, ffn_mult: int = 4, std: float = 0.05
                      ) -> list[ExpertModule]:
    """Experts grouped family-by-family in FAMILY_ORDER, ids contiguous."""
    pool: list[ExpertModule] = []
    for kind in FAMILY_ORDER:
        if kind not in families:
            continue
        for _ in range(per_family):
            pool.append(ExpertModule(len(pool), kind, d_model, rng, ffn_mult=ffn_mult, std=std))
    return pool


def expert_registry(experts: list[ExpertModule]) -> list[dict]:
    """Registry rows emitted alongside checkpoints."""
    return [
        {
            "id": e.expert_id,
            "kind": e.kind.value,
            "internal_depth": e.internal_depth,
            "d_model": e.d_model,
            "checksum": e.checksum(),
        }
        for e in experts
    ]

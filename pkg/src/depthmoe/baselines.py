"""Cost-comparison baselines.

UniformTransformer (UDT): every input traverses all d blocks; the block
internals (and therefore per-block MACs) match the expert blocks exactly so
savings comparisons are at matched dims.

WidthMoeTransformer (W-MoE): the same trunk with every feed-forward replaced
by a top-1-of-4 gated feed-forward (per-token switch, output scaled by the
gate probability). Exists to populate the comparison report.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import profiling, vocab
from .autograd import (
    Tensor, add, cadd, cmul, embedding, gelu, layernorm, matmul, matvec,
    mul_col, reshape, scatter_rows, slice_rows, softmax, take_rows, transpose,
)
from .experts import Block, window_mask
from .model import TokenEmbedding
from .taskgen import SampleRecord


@dataclass
class BaselineConfig:
    depth: int = 8
    d_model: int = 64
    ffn_mult: int = 4
    window: int | None = 12
    n_classes: int = vocab.N_ANSWER_CLASSES
    vocab_size: int = vocab.VOCAB_SIZE
    max_len: int = 112
    init_std: float = 0.05
    seed: int = 0
    ffn_experts: int = 4  # W-MoE only


class UniformTransformer:
    """Fixed-depth trunk: embed -> d blocks -> last-position head."""

    variant = "udt"

    def __init__(self, cfg: BaselineConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        d = cfg.d_model
        self.blocks = [
            Block(rng, d, cfg.ffn_mult, cfg.init_std, f"udt.blocks.{i}")
            for i in range(cfg.depth)
        ]
        self.embedding = TokenEmbedding(rng, d, cfg.max_len, cfg.init_std)
        self.head_w = Tensor(rng.normal(0, cfg.init_std, (cfg.n_classes, d)),
                             requires_grad=True, name="head.w")
        self.head_b = Tensor(np.zeros(cfg.n_classes), requires_grad=True, name="head.b")

    def named_params(self) -> dict[str, Tensor]:
        out = {p.name: p for p in self.embedding.params()}
        out.update({"head.w": self.head_w, "head.b": self.head_b})
        for block in self.blocks:
            for p in block.params():
                out[p.name] = p
        return out

    def forward(self, record: SampleRecord):
        tokens = record.tokens
        n = len(tokens)
        mask = window_mask(n, self.cfg.window)
        with profiling.profile() as prof:
            h = self.embedding.forward(tokens)
            for block in self.blocks:
                h = block.forward(h, mask)
            last = reshape(slice_rows(h, n - 1, n), (self.cfg.d_model,))
            logits = add(matvec(self.head_w, last), self.head_b)
        return logits, prof.macs, prof.activation_floats


class SwitchBlock:
    """Attention sublayer plus a per-token top-1-of-E gated feed-forward."""

    def __init__(self, rng: np.random.Generator, d: int, ffn_mult: int,
                 n_experts: int, std: float, prefix: str):
        import math

        self.d = d
        self.scale = 1.0 / math.sqrt(d)
        self.n_experts = n_experts
        self.ln1_g = Tensor(np.ones(d), requires_grad=True, name=f"{prefix}.ln1_g")
        self.ln1_b = Tensor(np.zeros(d), requires_grad=True, name=f"{prefix}.ln1_b")
        self.wq = Tensor(rng.normal(0, std, (d, d)), requires_grad=True, name=f"{prefix}.wq")
        self.wk = Tensor(rng.normal(0, std, (d, d)), requires_grad=True, name=f"{prefix}.wk")
        self.wv = Tensor(rng.normal(0, std, (d, d)), requires_grad=True, name=f"{prefix}.wv")
        self.wo = Tensor(rng.normal(0, std, (d, d)), requires_grad=True, name=f"{prefix}.wo")
        self.ln2_g = Tensor(np.ones(d), requires_grad=True, name=f"{prefix}.ln2_g")
        self.ln2_b = Tensor(np.zeros(d), requires_grad=True, name=f"{prefix}.ln2_b")
        self.gate = Tensor(rng.normal(0, std, (d, n_experts)), requires_grad=True,
                           name=f"{prefix}.gate")
        h = ffn_mult * d
        self.w1 = [Tensor(rng.normal(0, std, (d, h)), requires_grad=True,
                          name=f"{prefix}.ffn{e}.w1") for e in range(n_experts)]
        self.w2 = [Tensor(rng.normal(0, std, (h, d)), requires_grad=True,
                          name=f"{prefix}.ffn{e}.w2") for e in range(n_experts)]

    def params(self) -> list[Tensor]:
        out = [self.ln1_g, self.ln1_b, self.wq, self.wk, self.wv, self.wo,
               self.ln2_g, self.ln2_b, self.gate]
        out.extend(self.w1)
        out.extend(self.w2)
        return out

    def forward(self, h: Tensor, mask: np.ndarray | None) -> Tensor:
        a = layernorm(h, self.ln1_g, self.ln1_b)
        q = matmul(a, self.wq)
        k = matmul(a, self.wk)
        v = matmul(a, self.wv)
        scores = cmul(matmul(q, transpose(k)), self.scale)
        if mask is not None:
            scores = cadd(scores, mask)
        att = softmax(scores)
        h = add(h, matmul(matmul(att, v), self.wo))

        f = layernorm(h, self.ln2_g, self.ln2_b)
        gate_probs = softmax(matmul(f, self.gate))  # (n, E)
        assign = np.argmax(gate_probs.data, axis=1)
        n = h.shape[0]
        ffn_out = None
        for e in range(self.n_experts):
            rows = np.nonzero(assign == e)[0]
            if rows.size == 0:
                continue
            part = take_rows(f, rows)
            part = matmul(gelu(matmul(part, self.w1[e])), self.w2[e])
            gates = take_rows(gate_probs, rows)
            gcol = np.zeros((self.n_experts, 1))
            gcol[e, 0] = 1.0
            gsel = matmul(gates, Tensor(gcol))  # (rows, 1) gate prob of the chosen expert
            part = mul_col(part, gsel)
            placed = scatter_rows(part, rows, n)
            ffn_out = placed if ffn_out is None else add(ffn_out, placed)
        return add(h, ffn_out)


class WidthMoeTransformer:
    variant = "wmoe"

    def __init__(self, cfg: BaselineConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        d = cfg.d_model
        self.blocks = [
            SwitchBlock(rng, d, cfg.ffn_mult, cfg.ffn_experts, cfg.init_std, f"wmoe.blocks.{i}")
            for i in range(cfg.depth)
        ]
        self.embedding = TokenEmbedding(rng, d, cfg.max_len, cfg.init_std)
        self.head_w = Tensor(rng.normal(0, cfg.init_std, (cfg.n_classes, d)),
                             requires_grad=True, name="head.w")
        self.head_b = Tensor(np.zeros(cfg.n_classes), requires_grad=True, name="head.b")

    def named_params(self) -> dict[str, Tensor]:
        out = {p.name: p for p in self.embedding.params()}
        out.update({"head.w": self.head_w, "head.b": self.head_b})
        for block in self.blocks:
            for p in block.params():
                out[p.name] = p
        return out

    def forward(self, record: SampleRecord):
        tokens = record.tokens
        n = len(tokens)
        mask = window_mask(n, self.cfg.window)
        with profiling.profile() as prof:
            h = self.embedding.forward(tokens)
            for block in self.blocks:
                h = block.forward(h, mask)
            last = reshape(slice_rows(h, n - 1, n), (self.cfg.d_model,))
            logits = add(matvec(self.head_w, last), self.head_b)
        return logits, prof.macs, prof.activation_floats


def measure_udt_macs(n: int, depth: int, d_model: int = 64, window: int | None = 12,
                     seed: int = 0) -> int:
    """Profile one UDT forward at the given dims (the savings denominator)."""
    cfg = BaselineConfig(depth=depth, d_model=d_model, window=window, seed=seed)
    model = UniformTransformer(cfg)
    tokens = [vocab.QUERY] * n
    rec = SampleRecord(uid="udt-probe", tier=0, tokens=tokens,
                       markers=vocab.markers_for(tokens), answer=0, hint="SPE", seed=seed)
    _, macs, _ = model.forward(rec)
    return macs


def measure_udt_peak_activations(n: int, depth: int, d_model: int = 64,
                                 window: int | None = 12, seed: int = 0) -> int:
    cfg = BaselineConfig(depth=depth, d_model=d_model, window=window, seed=seed)
    model = UniformTransformer(cfg)
    tokens = [vocab.QUERY] * n
    rec = SampleRecord(uid="udt-probe", tier=0, tokens=tokens,
                       markers=vocab.markers_for(tokens), answer=0, hint="SPE", seed=seed)
    _, _, floats = model.forward(rec)
    return floats

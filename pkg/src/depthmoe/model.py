"""The composed adaptive-depth model and its forward pass.

One inference: extract complexity features, embed tokens, build the routing
features, pick k from the calibrated depth policy, select the top-k experts,
execute the chain (with fresh per-input memory for MIE), and read the answer
logits off the final position. Every inference is metered: per-step MACs,
router+head overhead MACs, and allocated activation floats, all of which
land in the ChainTrace.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import profiling, vocab
from .autograd import Tensor, add, embedding, matvec, mul_row, reshape, slice_rows
from .checkpoint import param_checksum
from .complexity import (
    ComplexityFeatures, ComplexityWeights, TokenSequence, complexity_score,
    extract_features, score_value,
)
from .errors import ConfigError
from .experts import (
    ExpertKind, ExpertModule, MemoryState, build_expert_pool, expert_registry,
    window_mask,
)
from .routing import (
    ChainResult, ChainStep, ChainTrace, DepthPolicy, RoutingNetwork,
    compose_chain, phi, routing_probs, select_top_k,
)
from .taskgen import SampleRecord

DESK_D_MODEL = 64
DESK_EXPERTS_PER_FAMILY = 2
DESK_WINDOW = 12
DESK_MEM_SLOTS = 16
DESK_UDT_DEPTH = 8
PAPER_UDT_DEPTH = 24


@dataclass
class ModelConfig:
    d_model: int = DESK_D_MODEL
    experts_per_family: int = DESK_EXPERTS_PER_FAMILY
    ffn_mult: int = 4
    window: int | None = DESK_WINDOW
    mem_slots: int = DESK_MEM_SLOTS
    k_min: int = 2
    k_max: int = 5
    tau_halt: float = 0.9
    n_classes: int = vocab.N_ANSWER_CLASSES
    vocab_size: int = vocab.VOCAB_SIZE
    max_len: int = 112
    init_std: float = 0.05
    seed: int = 0
    families: tuple[str, ...] = ("SPE", "CRE", "LIE", "MIE", "MCE")
    mce_enabled: bool = True
    fixed_chain: tuple[str, ...] | None = None  # kinds; set for the no-routing variant

    def family_kinds(self) -> list[ExpertKind]:
        return [ExpertKind(f) for f in self.families]


@dataclass
class ForwardResult:
    logits: Tensor
    probs: Tensor | None
    selected: list[int]
    k: int
    steps: list[ChainStep]
    executed: list[int]
    features: ComplexityFeatures
    score: float
    routing_macs: int
    total_macs: int
    activation_floats: int
    trace: ChainTrace | None
    supervisor_signals: list = field(default_factory=list)

    @property
    def predicted(self) -> int:
        return int(np.argmax(self.logits.data))


class TokenEmbedding:
    """Token + position embeddings with compositional record tokens.

    Composed records (fact pairs, pointer links) embed as masked sums of
    their component embeddings: m_left * wte[left] + m_right * wte[right].
    The masks start as complementary halves, so atomic tokens embed as their
    plain rows and records carry their components in disjoint subspaces;
    both masks are trainable.
    """

    def __init__(self, rng: np.random.Generator, d_model: int, max_len: int, std: float):
        self.wte = Tensor(rng.normal(0, std, (vocab.ATOMIC_SIZE, d_model)),
                          requires_grad=True, name="embed.wte")
        self.wpe = Tensor(rng.normal(0, std, (max_len, d_model)),
                          requires_grad=True, name="embed.wpe")
        half = np.zeros(d_model)
        half[: d_model // 2] = 1.0
        self.m_left = Tensor(half.copy(), requires_grad=True, name="embed.m_left")
        self.m_right = Tensor(1.0 - half, requires_grad=True, name="embed.m_right")
        self._left = np.asarray(vocab.LEFT_COMPONENT, dtype=np.int64)
        self._right = np.asarray(vocab.RIGHT_COMPONENT, dtype=np.int64)

    def params(self) -> list[Tensor]:
        return [self.wte, self.wpe, self.m_left, self.m_right]

    def forward(self, tokens: list[int]) -> Tensor:
        ids = np.asarray(tokens, dtype=np.int64)
        pos = np.arange(len(tokens), dtype=np.int64)
        base = add(
            mul_row(embedding(self.wte, self._left[ids]), self.m_left),
            mul_row(embedding(self.wte, self._right[ids]), self.m_right),
        )
        return add(base, embedding(self.wpe, pos))


def segments_from_tokens(tokens: list[int]) -> list[tuple[int, int]]:
    """Half-open spans between BREAK tokens (the BREAKs themselves excluded)."""
    spans = []
    start = 0
    for i, t in enumerate(tokens):
        if t == vocab.BREAK:
            if i > start:
                spans.append((start, i))
            start = i + 1
    if len(tokens) > start:
        spans.append((start, len(tokens)))
    return spans


class DepthMoeModel:
    """Expert pool + router + complexity weights + embedding and output head."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        d = cfg.d_model
        self.experts = build_expert_pool(
            cfg.family_kinds(), cfg.experts_per_family, d, rng,
            ffn_mult=cfg.ffn_mult, std=cfg.init_std,
        )
        self.router = RoutingNetwork(len(self.experts), d, rng, std=cfg.init_std)
        self.cweights = ComplexityWeights()
        self.embedding = TokenEmbedding(rng, d, cfg.max_len, cfg.init_std)
        self.head_w = Tensor(rng.normal(0, cfg.init_std, (cfg.n_classes, d)),
                             requires_grad=True, name="head.w")
        self.head_b = Tensor(np.zeros(cfg.n_classes), requires_grad=True, name="head.b")
        self.policy = DepthPolicy(k_min=cfg.k_min, k_max=cfg.k_max)
        if cfg.fixed_chain is not None:
            self._fixed_ids = [self._first_of_kind(k) for k in cfg.fixed_chain]
        else:
            self._fixed_ids = None

    def _first_of_kind(self, kind: str) -> int:
        for e in self.experts:
            if e.kind.value == kind:
                return e.expert_id
        raise ConfigError(f"fixed chain kind {kind} not present in expert pool")

    # -- parameter bookkeeping ------------------------------------------------

    def named_params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {p.name: p for p in self.embedding.params()}
        out.update({
            "router.W": self.router.W,
            "complexity.alpha": self.cweights.alpha,
            "complexity.beta": self.cweights.beta,
            "complexity.gamma": self.cweights.gamma,
            "head.w": self.head_w,
            "head.b": self.head_b,
        })
        for e in self.experts:
            out.update(e.named_params())
        return out

    def param_groups(self) -> dict[str, list[Tensor]]:
        groups = {
            "embed": self.embedding.params(),
            "router": [self.router.W, *self.cweights.params()],
            "head": [self.head_w, self.head_b],
        }
        for e in self.experts:
            groups[f"expert.{e.expert_id}"] = e.params()
        return groups

    def group_checksums(self) -> dict[str, int]:
        return {
            name: param_checksum(np.concatenate([p.data.reshape(-1) for p in params]))
            for name, params in self.param_groups().items()
        }

    def experts_of_kind(self, kind: ExpertKind) -> list[ExpertModule]:
        return [e for e in self.experts if e.kind is kind]

    def family_matrix(self) -> tuple[list[str], np.ndarray]:
        """Constant (families, m) indicator matrix for family marginals."""
        fams = [k.value for k in self.cfg.family_kinds()]
        mat = np.zeros((len(fams), len(self.experts)))
        for row, fam in enumerate(fams):
            for e in self.experts:
                if e.kind.value == fam:
                    mat[row, e.expert_id] = 1.0
        return fams, mat

    def registry(self) -> list[dict]:
        return expert_registry(self.experts)

    # -- forward ---------------------------------------------------------------

    def embed(self, tokens: list[int]) -> Tensor:
        if len(tokens) > self.cfg.max_len:
            raise ConfigError(f"sequence length {len(tokens)} exceeds max_len {self.cfg.max_len}")
        return self.embedding.forward(tokens)

    def forward(
        self,
        record: SampleRecord,
        force_k: int | None = None,
        force_chain: list[int] | None = None,
        detach_gating: bool = False,
        collect_trace: bool = True,
        mce_enabled: bool | None = None,
    ) -> ForwardResult:
        cfg = self.cfg
        seq = TokenSequence(record.tokens, record.markers)
        features = extract_features(seq)
        n = len(record.tokens)
        mask = window_mask(n, cfg.window)
        segments = segments_from_tokens(record.tokens)

        with profiling.profile() as total_prof:
            score_t = complexity_score(features, self.cweights)
            score = float(score_t.data)
            h0 = self.embed(record.tokens)

            with profiling.profile() as route_prof:
                feat = phi(features, h0, score_t)
                probs = routing_probs(self.router, feat)

            if force_chain is not None:
                selected = list(force_chain)
                gate_probs = None
            elif self._fixed_ids is not None:
                selected = list(self._fixed_ids)
                gate_probs = None
            else:
                k = force_k if force_k is not None else self.policy.choose_k(score)
                k = min(k, len(self.experts))
                selected = select_top_k(probs, k)
                gate_probs = probs

            mem = None
            if any(self.experts[j].kind is ExpertKind.MIE for j in selected):
                mem = MemoryState(cfg.mem_slots, cfg.d_model)

            chain: ChainResult = compose_chain(
                self.experts, selected, h0,
                probs=gate_probs, mem=mem, mask=mask, segments=segments,
                mce_enabled=cfg.mce_enabled if mce_enabled is None else mce_enabled,
                tau_halt=cfg.tau_halt, k_max=cfg.k_max,
                detach_gating=detach_gating,
            )

            with profiling.profile() as head_prof:
                last = reshape(slice_rows(chain.h_out, n - 1, n), (cfg.d_model,))
                logits = add(matvec(self.head_w, last), self.head_b)

        routing_macs = route_prof.macs + head_prof.macs
        step_macs = sum(s.macs for s in chain.steps)
        total_macs = routing_macs + step_macs

        trace = None
        if collect_trace:
            correct = None
            if record.answer is not None:
                correct = bool(int(np.argmax(logits.data)) == record.answer)
            trace = ChainTrace(
                input_id=record.uid,
                tier=record.tier,
                d_syn=features.d_syn,
                c_sem=features.c_sem,
                r=features.r,
                C=score,
                probs=[float(p) for p in probs.data],
                selected=list(selected),
                steps=chain.steps,
                routing_macs=routing_macs,
                total_macs=total_macs,
                correct=correct,
            )

        return ForwardResult(
            logits=logits,
            probs=probs,
            selected=list(selected),
            k=len(selected),
            steps=chain.steps,
            executed=chain.executed,
            features=features,
            score=score,
            routing_macs=routing_macs,
            total_macs=total_macs,
            activation_floats=total_prof.activation_floats,
            trace=trace,
            supervisor_signals=chain.supervisor_signals,
        )

    def calibrate_policy(self, records: list[SampleRecord]):
        weights = self.cweights.values()
        scores = [
            score_value(extract_features(TokenSequence(r.tokens, r.markers)), weights)
            for r in records
        ]
        self.policy.calibrate(scores)
        return self.policy.thresholds

    def shared_param_count(self) -> int:
        shared = [*self.embedding.params(), self.router.W, *self.cweights.params(),
                  self.head_w, self.head_b]
        return sum(p.size for p in shared)

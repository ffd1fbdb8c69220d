"""Joint loss and the four-stage curriculum.

Loss: L = L_task + lambda1 * L_routing + lambda2 * L_balance, where the task
term is answer cross-entropy, the routing term is cross-entropy between the
family-marginalized routing distribution and the hinted family, and the
balance term is the utilization product m * sum_j fbar_j * pbar_j (fbar from
hard top-k counts, pbar the mean routing probability, differentiable through
pbar only).

Curriculum stages, in order:

1. PretrainExperts   — each family alone on its tier stream (temporary head);
                       MCE trains only its control heads, supervised by
                       complexity quantiles of the mixed stream.
2. IntegrateRouting  — router weights and complexity weights only, experts
                       frozen, samples fed in ascending complexity order.
3. ChainTraining     — experts, embedding and head unfrozen; router frozen.
4. JointEndToEnd     — everything trainable on the full 40/35/20/5 mix.

Freezing is enforced (not just assumed): group checksums are verified at
every stage boundary and a violation raises.
"""

from __future__ import annotations

import math
import random
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import profiling, vocab
from .autograd import (
    Tape, Tensor, add, add_scalars, cadd, cmul, cross_entropy, gather, log,
    matvec, mean_axis0, mul, reshape, sigmoid, slice_rows, stack_rows, sum_all,
)
from .complexity import TokenSequence, extract_features, score_value
from .errors import ConfigError, ContractError, DataError, LabelError
from .experts import ExpertKind, expert_apply, mce_supervise, window_mask
from .model import DepthMoeModel, ModelConfig, segments_from_tokens
from .optim import OptimizerState, optimizer_step, zero_grads
from .taskgen import PAPER_MIX, SampleRecord, TierSpec, generate

TIER_FOR_KIND = {"SPE": 0, "CRE": 1, "LIE": 2, "MIE": 3, "MCE": 4}


@dataclass
class LossWeights:
    lambda1: float = 0.5
    lambda2: float = 0.01

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0 or not (
            math.isfinite(self.lambda1) and math.isfinite(self.lambda2)
        ):
            raise ConfigError("loss weights must be finite and nonnegative")


@dataclass
class LabeledBatch:
    records: list[SampleRecord]

    def __post_init__(self):
        for r in self.records:
            if r.answer is None or r.hint is None:
                raise DataError("labeled batch requires answers and routing hints")

    def __len__(self):
        return len(self.records)


class CurriculumStage(Enum):
    PretrainExperts = "PretrainExperts"
    IntegrateRouting = "IntegrateRouting"
    ChainTraining = "ChainTraining"
    JointEndToEnd = "JointEndToEnd"


STAGE_ORDER = [
    CurriculumStage.PretrainExperts,
    CurriculumStage.IntegrateRouting,
    CurriculumStage.ChainTraining,
    CurriculumStage.JointEndToEnd,
]


@dataclass
class StageBudgets:
    pretrain_per_family: int = 1200
    integrate: int = 4000
    chain: int = 4800
    joint: int = 5200

    def total(self, n_families: int = 5) -> int:
        return self.pretrain_per_family * n_families + self.integrate + self.chain + self.joint

    def validate(self):
        for v in (self.pretrain_per_family, self.integrate, self.chain, self.joint):
            if v < 1:
                raise ConfigError("every stage budget must be positive")


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    budgets: StageBudgets = field(default_factory=StageBudgets)
    batch_size: int = 16
    loss_weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    lr: float = 1e-3
    tier34_split: float = 0.5
    hint_remap: dict[str, str] = field(default_factory=dict)
    calibration_samples: int = 2000


@dataclass
class StageRecord:
    stage: str
    steps: int
    trainable_groups: list[str]
    frozen_groups: list[str]


@dataclass
class TrainResult:
    model: DepthMoeModel
    metrics: list[dict]
    stage_records: list[StageRecord]


# ---------------------------------------------------------------------------
# loss terms
# ---------------------------------------------------------------------------


def balance_loss(probs_list: list[Tensor], selections: list[list[int]], n_experts: int) -> Tensor:
    """Utilization product m * sum_j fbar_j * pbar_j; minimized at uniform."""
    counts = np.zeros(n_experts)
    total = 0
    for sel in selections:
        total += len(sel)
        for j in sel:
            counts[j] += 1.0
    fbar = Tensor(counts / max(1, total))
    pbar = mean_axis0(stack_rows(probs_list))
    return cmul(sum_all(mul(pbar, fbar)), float(n_experts))


def routing_loss(probs_list: list[Tensor], hints: list[str],
                 families: list[str], fam_matrix: np.ndarray) -> Tensor:
    """Cross-entropy between family-marginalized probs and the hinted family."""
    fam_index = {f: i for i, f in enumerate(families)}
    mat = Tensor(fam_matrix)
    losses = []
    for probs, hint in zip(probs_list, hints):
        if hint not in fam_index:
            raise LabelError(f"routing hint {hint!r} not among model families {families}")
        fam_probs = matvec(mat, probs)
        losses.append(cmul(log(gather(fam_probs, fam_index[hint])), -1.0))
    return cmul(add_scalars(losses), 1.0 / len(losses))


def joint_loss(task: Tensor, routing: Tensor, balance: Tensor, w: LossWeights) -> Tensor:
    """Exact weighted sum of the three terms."""
    for t in (task, routing, balance):
        if not np.isfinite(float(t.data)):
            raise ConfigError("joint loss terms must be finite")
    return add_scalars([task, cmul(routing, w.lambda1), cmul(balance, w.lambda2)])


# ---------------------------------------------------------------------------
# deterministic data streams
# ---------------------------------------------------------------------------


def _stream_seeds(base_seed: int, tag: int, n: int) -> np.ndarray:
    ss = np.random.SeedSequence([base_seed, tag])
    return ss.generate_state(max(1, n))


def _mixed_batch(step_seed: int, batch_size: int, tier34_split: float) -> list[SampleRecord]:
    """One mixed batch: tiers drawn per item from the 40/35/20/5 weights."""
    rng = random.Random(int(step_seed))
    r0, r1, r2, r34 = PAPER_MIX
    weights = [r0, r1, r2, r34 * tier34_split, r34 * (1.0 - tier34_split)]
    tiers = rng.choices(range(5), weights=weights, k=batch_size)
    records = []
    for i, tier in enumerate(tiers):
        recs = generate(TierSpec(tier=tier, seed=int(step_seed) * 16 + i), 1)
        records.append(recs[0])
    return records


def _tier_batch(step_seed: int, tier: int, batch_size: int,
                params: dict | None = None) -> list[SampleRecord]:
    return generate(TierSpec(tier=tier, seed=int(step_seed), params=params or {}),
                    batch_size)


# ---------------------------------------------------------------------------
# stage 1: per-family pretraining
# ---------------------------------------------------------------------------


def pretrain_expert(model: DepthMoeModel, kind: ExpertKind, spec: TierSpec,
                    steps: int, batch_size: int = 16, lr: float = 1e-3,
                    metrics: list | None = None, stage_label: str = "PretrainExperts",
                    step_offset: int = 0) -> int:
    """Train one family alone on its tier with a temporary output head.

    Returns the number of steps run. Non-family expert parameters are
    untouched (verified by the caller's checksums). The MIE variant runs its
    full memory machinery; MCE trains only its control heads against
    complexity-quantile targets.
    """
    expected_tier = TIER_FOR_KIND[kind.value]
    if spec.tier != expected_tier:
        raise ConfigError(f"{kind.value} pretrains on tier {expected_tier}, got tier {spec.tier}")

    cfg = model.cfg
    experts = model.experts_of_kind(kind)
    if not experts:
        raise ConfigError(f"model has no {kind.value} experts")

    seeds = _stream_seeds(spec.seed, 100 + expected_tier, steps)

    if kind is ExpertKind.MCE:
        return _pretrain_mce(model, experts, spec, steps, seeds, batch_size, lr,
                             metrics, stage_label, step_offset)

    rng_head = np.random.default_rng(spec.seed + 17)
    temp_w = Tensor(rng_head.normal(0, cfg.init_std, (cfg.n_classes, cfg.d_model)),
                    requires_grad=True, name="pretrain.head_w")
    temp_b = Tensor(np.zeros(cfg.n_classes), requires_grad=True, name="pretrain.head_b")

    params = [*model.embedding.params(), temp_w, temp_b]
    for e in experts:
        params.extend(e.params())
    opt = OptimizerState(params, lr=lr)

    from .experts import MemoryState

    for step in range(steps):
        batch = _tier_batch(int(seeds[step]), spec.tier, batch_size, spec.params)
        with profiling.profile() as prof:
            with Tape() as tape:
                logits_rows = []
                for i, rec in enumerate(batch):
                    expert = experts[i % len(experts)]
                    n = len(rec.tokens)
                    h = model.embed(rec.tokens)
                    mask = window_mask(n, cfg.window)
                    mem = MemoryState(cfg.mem_slots, cfg.d_model) if kind is ExpertKind.MIE else None
                    out = expert_apply(expert, h, mask=mask, mem=mem,
                                       segments=segments_from_tokens(rec.tokens))
                    last = reshape(slice_rows(out, n - 1, n), (cfg.d_model,))
                    logits_rows.append(add(matvec(temp_w, last), temp_b))
                logits = stack_rows(logits_rows)
                task = cross_entropy(logits, [r.answer for r in batch])
                tape.backward(task)
        optimizer_step(opt)
        zero_grads(params)
        if metrics is not None:
            acc = float(np.mean(np.argmax(logits.data, axis=1) == [r.answer for r in batch]))
            metrics.append(_metrics_row(
                step=step_offset + step, stage=stage_label, loss=float(task.data),
                task=float(task.data), routing=0.0, balance=0.0, routing_acc=acc,
                entropy=0.0, mean_k=1.0, mean_chain=1.0, macs=prof.macs,
            ))
    return steps


def _pretrain_mce(model, experts, spec, steps, seeds, batch_size, lr,
                  metrics, stage_label, step_offset) -> int:
    """Control heads learn halt-if-easy / extend-if-hard from C quantiles."""
    calib = [score_value(extract_features(TokenSequence(r.tokens, r.markers)))
             for r in generate(TierSpec(tier=4, seed=spec.seed + 999), 512)]
    q_low, q_med, q_high = np.percentile(calib, [33.0, 50.0, 66.0])

    params = []
    for e in experts:
        params.extend([e.halt_w, e.depth_w])
    opt = OptimizerState(params, lr=lr)
    cfg = model.cfg

    for step in range(steps):
        batch = _tier_batch(int(seeds[step]), 4, batch_size, spec.params)
        with profiling.profile() as prof:
            with Tape() as tape:
                losses = []
                for i, rec in enumerate(batch):
                    e = experts[i % len(experts)]
                    h = model.embed(rec.tokens).detach()
                    score = score_value(extract_features(TokenSequence(rec.tokens, rec.markers)))
                    pooled = mean_axis0(h)
                    halt_p = sigmoid(matvec(e.halt_w, pooled))
                    halt_target = 1.0 if score <= q_med else 0.0
                    if halt_target > 0.5:
                        halt_nll = cmul(log(halt_p), -1.0)
                    else:
                        halt_nll = cmul(log(cadd(cmul(halt_p, -1.0), 1.0)), -1.0)
                    depth_logits = matvec(e.depth_w, pooled)
                    # head order: (none, extend, shrink)
                    if score <= q_low:
                        target = 2
                    elif score >= q_high:
                        target = 1
                    else:
                        target = 0
                    depth_nll = cross_entropy(reshape(depth_logits, (1, 3)), [target])
                    losses.append(add_scalars([sum_all(halt_nll), depth_nll]))
                loss = cmul(add_scalars(losses), 1.0 / len(losses))
                tape.backward(loss)
        optimizer_step(opt)
        zero_grads(params)
        if metrics is not None:
            metrics.append(_metrics_row(
                step=step_offset + step, stage=stage_label, loss=float(loss.data),
                task=float(loss.data), routing=0.0, balance=0.0, routing_acc=0.0,
                entropy=0.0, mean_k=1.0, mean_chain=1.0, macs=prof.macs,
            ))
    return steps


# ---------------------------------------------------------------------------
# stages 2-4: routed training
# ---------------------------------------------------------------------------


def _metrics_row(step, stage, loss, task, routing, balance, routing_acc, entropy,
                 mean_k, mean_chain, macs, wall_clock=None) -> dict:
    return {
        "step": step, "stage": stage, "L": loss, "L_task": task, "L_routing": routing,
        "L_balance": balance, "routing_acc": routing_acc, "util_entropy": entropy,
        "mean_k": mean_k, "mean_chain_len": mean_chain, "macs_per_step": macs,
        "wall_clock_s": wall_clock,
    }


def utilization_entropy(counts: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    u = counts[counts > 0] / total
    return float(-(u * np.log(u)).sum())


def _routed_step(model: DepthMoeModel, batch: list[SampleRecord], lw: LossWeights,
                 hint_remap: dict[str, str], opt: OptimizerState, params: list[Tensor]):
    """One optimization step over a routed batch; returns a metrics dict body."""
    fams, fam_matrix = model.family_matrix()
    m = len(model.experts)
    with profiling.profile() as prof:
        with Tape() as tape:
            results = [model.forward(rec, collect_trace=False) for rec in batch]
            logits = stack_rows([r.logits for r in results])
            targets = [rec.answer for rec in batch]
            task = cross_entropy(logits, targets)
            probs_list = [r.probs for r in results]
            hints = [hint_remap.get(rec.hint, rec.hint) for rec in batch]
            routing = routing_loss(probs_list, hints, fams, fam_matrix)
            selections = [r.selected for r in results]
            balance = balance_loss(probs_list, selections, m)
            total = joint_loss(task, routing, balance, lw)
            tape.backward(total)
    optimizer_step(opt)
    zero_grads(params)

    fam_of = {e.expert_id: e.kind.value for e in model.experts}
    top1_fam = [fam_of[int(np.argmax(r.probs.data))] for r in results]
    routing_acc = float(np.mean([t == h for t, h in zip(top1_fam, hints)]))
    counts = np.zeros(m)
    for sel in selections:
        for j in sel:
            counts[j] += 1
    return {
        "loss": float(total.data), "task": float(task.data),
        "routing": float(routing.data), "balance": float(balance.data),
        "routing_acc": routing_acc,
        "entropy": utilization_entropy(counts),
        "mean_k": float(np.mean([r.k for r in results])),
        "mean_chain": float(np.mean([len(r.steps) for r in results])),
        "macs": prof.macs,
    }


def _set_trainable(model: DepthMoeModel, trainable_groups: list[str]):
    groups = model.param_groups()
    for name, params in groups.items():
        flag = name in trainable_groups
        for p in params:
            p.requires_grad = flag
    return [name for name in groups if name not in trainable_groups]


def _restore_trainable(model: DepthMoeModel):
    for params in model.param_groups().values():
        for p in params:
            p.requires_grad = True


def run_curriculum(model: DepthMoeModel, cfg: TrainConfig,
                   timings: bool = False) -> TrainResult:
    """Execute the four curriculum stages in order. Returns metrics and
    per-stage records; raises if a frozen group changed during its stage."""
    cfg.budgets.validate()
    metrics: list[dict] = []
    stage_records: list[StageRecord] = []
    families = [ExpertKind(f) for f in model.cfg.families]
    group_names = list(model.param_groups().keys())

    def run_stage(stage: CurriculumStage, trainable: list[str], body,
                  record: bool = True):
        frozen = [g for g in group_names if g not in trainable]
        before = model.group_checksums()
        _set_trainable(model, trainable)
        t0 = time.perf_counter()
        steps = body()
        elapsed = time.perf_counter() - t0
        _restore_trainable(model)
        after = model.group_checksums()
        for g in frozen:
            if before[g] != after[g]:
                raise ContractError(f"frozen group {g!r} changed during {stage.value}")
        if record:
            stage_records.append(StageRecord(
                stage=stage.value, steps=steps, trainable_groups=sorted(trainable),
                frozen_groups=sorted(frozen),
            ))
        if timings and metrics:
            metrics[-1]["wall_clock_s"] = elapsed
        return steps

    # stage 1: per-family pretraining; each family is freeze-verified on its
    # own, but the curriculum reports one PretrainExperts record
    offset = 0
    stage1_steps = 0
    stage1_groups: set[str] = set()
    for kind in families:
        tier = TIER_FOR_KIND[kind.value]
        family_experts = model.experts_of_kind(kind)
        trainable = [f"expert.{e.expert_id}" for e in family_experts]
        if kind is not ExpertKind.MCE:
            trainable.append("embed")
        stage1_groups.update(trainable)

        def body(kind=kind, tier=tier):
            spec = TierSpec(tier=tier, seed=cfg.seed * 100 + tier)
            return pretrain_expert(
                model, kind, spec, cfg.budgets.pretrain_per_family,
                batch_size=cfg.batch_size, lr=cfg.lr, metrics=metrics,
                stage_label=CurriculumStage.PretrainExperts.value,
                step_offset=offset,
            )

        stage1_steps += run_stage(CurriculumStage.PretrainExperts, trainable, body,
                                  record=False)
        offset += cfg.budgets.pretrain_per_family
    stage_records.append(StageRecord(
        stage=CurriculumStage.PretrainExperts.value, steps=stage1_steps,
        trainable_groups=sorted(stage1_groups),
        frozen_groups=sorted(g for g in group_names if g not in stage1_groups),
    ))

    # calibrate the depth policy before any routed stage
    calib_specs = [TierSpec(tier=t, seed=cfg.seed * 50 + t) for t in range(5)]
    r0, r1, r2, r34 = PAPER_MIX
    ratios = [r0, r1, r2, r34 * cfg.tier34_split, r34 * (1.0 - cfg.tier34_split)]
    from .taskgen import mix_corpus

    calib = mix_corpus(calib_specs, ratios, cfg.calibration_samples, seed=cfg.seed + 7)
    model.calibrate_policy(calib)

    # stage 2: routing integration, ascending complexity
    def stage2():
        steps = cfg.budgets.integrate
        pool: list[SampleRecord] = []
        seeds = _stream_seeds(cfg.seed, 200, steps)
        for s in range(steps):
            pool.extend(_mixed_batch(int(seeds[s]), cfg.batch_size, cfg.tier34_split))
        weights = model.cweights.values()
        pool.sort(key=lambda rec: (
            score_value(extract_features(TokenSequence(rec.tokens, rec.markers)), weights),
            rec.uid,
        ))
        params = _trainable_params(model)
        opt = OptimizerState(params, lr=cfg.lr)
        for s in range(steps):
            batch = pool[s * cfg.batch_size:(s + 1) * cfg.batch_size]
            body = _routed_step(model, batch, cfg.loss_weights, cfg.hint_remap, opt, params)
            metrics.append(_metrics_row(step=offset + s,
                                        stage=CurriculumStage.IntegrateRouting.value, **_mk(body)))
        return steps

    run_stage(CurriculumStage.IntegrateRouting, ["router"], stage2)
    offset += cfg.budgets.integrate

    # stage 3: chain training (experts unfrozen, router frozen)
    def stage3():
        steps = cfg.budgets.chain
        seeds = _stream_seeds(cfg.seed, 300, steps)
        params = _trainable_params(model)
        opt = OptimizerState(params, lr=cfg.lr)
        for s in range(steps):
            batch = _mixed_batch(int(seeds[s]), cfg.batch_size, cfg.tier34_split)
            body = _routed_step(model, batch, cfg.loss_weights, cfg.hint_remap, opt, params)
            metrics.append(_metrics_row(step=offset + s,
                                        stage=CurriculumStage.ChainTraining.value, **_mk(body)))
        return steps

    trainable3 = ["embed", "head"] + [f"expert.{e.expert_id}" for e in model.experts]
    run_stage(CurriculumStage.ChainTraining, trainable3, stage3)
    offset += cfg.budgets.chain

    # stage 4: joint end-to-end
    def stage4():
        steps = cfg.budgets.joint
        seeds = _stream_seeds(cfg.seed, 400, steps)
        params = _trainable_params(model)
        opt = OptimizerState(params, lr=cfg.lr)
        for s in range(steps):
            batch = _mixed_batch(int(seeds[s]), cfg.batch_size, cfg.tier34_split)
            body = _routed_step(model, batch, cfg.loss_weights, cfg.hint_remap, opt, params)
            metrics.append(_metrics_row(step=offset + s,
                                        stage=CurriculumStage.JointEndToEnd.value, **_mk(body)))
        return steps

    run_stage(CurriculumStage.JointEndToEnd, group_names, stage4)

    return TrainResult(model=model, metrics=metrics, stage_records=stage_records)


def _mk(body: dict) -> dict:
    return dict(
        loss=body["loss"], task=body["task"], routing=body["routing"],
        balance=body["balance"], routing_acc=body["routing_acc"],
        entropy=body["entropy"], mean_k=body["mean_k"],
        mean_chain=body["mean_chain"], macs=body["macs"],
    )


def _trainable_params(model: DepthMoeModel) -> list[Tensor]:
    return [p for p in model.named_params().values() if p.requires_grad]


METRICS_CSV_HEADER = ("step,stage,L,L_task,L_routing,L_balance,routing_acc,"
                      "util_entropy,mean_k,mean_chain_len,macs_per_step,wall_clock_s")


def metrics_csv_lines(rows: list[dict]) -> list[str]:
    lines = [METRICS_CSV_HEADER]
    for r in rows:
        wc = r.get("wall_clock_s")
        wc_s = "" if wc is None else repr(wc)
        lines.append(
            f"{r['step']},{r['stage']},{r['L']!r},{r['L_task']!r},{r['L_routing']!r},"
            f"{r['L_balance']!r},{r['routing_acc']!r},{r['util_entropy']!r},"
            f"{r['mean_k']!r},{r['mean_chain_len']!r},{r['macs_per_step']},{wc_s}"
        )
    return lines

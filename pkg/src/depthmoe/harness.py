"""Run orchestration: training runs, evaluation, the six-variant ablation
sweep, report aggregation, and trace inspection.

Every run directory is self-describing: resolved config, metrics CSV,
checkpoint + expert registry + depth-policy thresholds, evaluation CSV,
trace JSONL, and a feature dump for the evaluation corpus. All outputs are
byte-deterministic for a fixed (config, seed, platform); wall-clock values
are written only when timings are explicitly requested.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import vocab
from .autograd import Tape, Tensor, add, cross_entropy, stack_rows
from .baselines import BaselineConfig, UniformTransformer, WidthMoeTransformer, measure_udt_macs
from .checkpoint import load_checkpoint, restore_into, save_checkpoint
from .complexity import (
    FEATURE_CSV_HEADER, TokenSequence, extract_features, feature_csv_row, score_value,
)
from .efficiency import CostModel, uniform_cost
from .errors import ConfigError, DataError
from .model import DESK_UDT_DEPTH, DepthMoeModel, ModelConfig
from .optim import OptimizerState, optimizer_step, zero_grads
from .routing import ChainTrace
from .taskgen import (
    SampleRecord, TierSpec, mix_corpus, paper_mix_specs, read_corpus, write_corpus,
)
from .training import (
    LossWeights, StageBudgets, TrainConfig, metrics_csv_lines, run_curriculum,
    utilization_entropy,
)

VARIANTS = ("dsmoe", "udt", "wmoe")
ABLATION_NAMES = ("full", "no-routing", "no-mce", "no-mie", "shallow-only", "deep-only")

ALL_FAMILIES = ("SPE", "CRE", "LIE", "MIE", "MCE")

ABLATIONS: dict[str, dict] = {
    "full": {},
    "no-routing": {"fixed_chain": ("SPE", "CRE", "MIE", "LIE"), "mce_enabled": False},
    "no-mce": {"mce_enabled": False},
    "no-mie": {"families": ("SPE", "CRE", "LIE", "MCE"), "hint_remap": {"MIE": "LIE"}},
    "shallow-only": {
        "families": ("SPE", "CRE"),
        "hint_remap": {"LIE": "CRE", "MIE": "CRE", "MCE": "CRE"},
    },
    "deep-only": {
        "families": ("LIE",),
        "hint_remap": {"SPE": "LIE", "CRE": "LIE", "MIE": "LIE", "MCE": "LIE"},
    },
}


@dataclass
class RunConfig:
    variant: str = "dsmoe"
    ablation: str = "full"
    seed: int = 0
    d_model: int = 64
    experts_per_family: int = 2
    udt_depth: int = DESK_UDT_DEPTH
    window: int = 12
    mem_slots: int = 16
    batch_size: int = 16
    pretrain_steps: int = 1200
    integrate_steps: int = 4000
    chain_steps: int = 4800
    joint_steps: int = 5200
    lambda1: float = 0.5
    lambda2: float = 0.01
    lr: float = 1e-3
    tier34_split: float = 0.5
    eval_per_tier: int = 300
    out_dir: str = "runs/default"
    timings: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.ablation not in ABLATION_NAMES:
            raise ConfigError(f"unknown ablation {self.ablation!r}; expected one of {ABLATION_NAMES}")

    def budgets(self) -> StageBudgets:
        return StageBudgets(
            pretrain_per_family=self.pretrain_steps,
            integrate=self.integrate_steps,
            chain=self.chain_steps,
            joint=self.joint_steps,
        )

    def model_config(self) -> ModelConfig:
        ab = ABLATIONS[self.ablation]
        return ModelConfig(
            d_model=self.d_model,
            experts_per_family=self.experts_per_family,
            window=self.window,
            mem_slots=self.mem_slots,
            seed=self.seed,
            families=ab.get("families", ALL_FAMILIES),
            mce_enabled=ab.get("mce_enabled", True),
            fixed_chain=ab.get("fixed_chain"),
        )

    def hint_remap(self) -> dict[str, str]:
        return dict(ABLATIONS[self.ablation].get("hint_remap", {}))

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            model=self.model_config(),
            budgets=self.budgets(),
            batch_size=self.batch_size,
            loss_weights=LossWeights(self.lambda1, self.lambda2),
            seed=self.seed,
            lr=self.lr,
            tier34_split=self.tier34_split,
            hint_remap=self.hint_remap(),
        )


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

EVAL_CSV_HEADER = ("variant,tier,accuracy,macs,activated_params,peak_activations,"
                   "mean_chain_len,routing_acc,util_entropy,wall_clock_s")


@dataclass
class MetricsRow:
    variant: str
    tier: int
    accuracy: float
    macs: float
    activated_params: float
    peak_activations: float
    mean_chain_len: float
    routing_acc: float
    util_entropy: float
    wall_clock_s: float | None = None

    def csv(self) -> str:
        wc = "" if self.wall_clock_s is None else repr(self.wall_clock_s)
        return (f"{self.variant},{self.tier},{self.accuracy!r},{self.macs!r},"
                f"{self.activated_params!r},{self.peak_activations!r},"
                f"{self.mean_chain_len!r},{self.routing_acc!r},{self.util_entropy!r},{wc}")


COST_CSV_HEADER = ("variant,tier,mean_n,mean_k,macs,routing_macs,activated_params,"
                   "peak_activations,udt_macs,savings")


def evaluate(model: DepthMoeModel, records: list[SampleRecord], variant: str = "dsmoe",
             hint_remap: dict[str, str] | None = None, timings: bool = False,
             udt_depth: int = DESK_UDT_DEPTH
             ) -> tuple[list[MetricsRow], list[ChainTrace], list[str]]:
    """Per-tier metrics, one ChainTrace per input, and cost-report CSV lines.

    Savings are against the analytic uniform baseline at each record's own
    sequence length (matched block dims, plus the output head)."""
    hint_remap = hint_remap or {}
    fam_of = {e.expert_id: e.kind.value for e in model.experts}
    shared = model.shared_param_count()
    cm = CostModel(d_model=model.cfg.d_model, ffn_mult=model.cfg.ffn_mult,
                   n_classes=model.cfg.n_classes, n_experts=len(model.experts),
                   mem_slots=model.cfg.mem_slots)
    per_tier: dict[int, dict] = {}
    traces: list[ChainTrace] = []
    for rec in records:
        t0 = time.perf_counter() if timings else None
        fwd = model.forward(rec, collect_trace=True)
        elapsed = (time.perf_counter() - t0) if timings else None
        activated = shared + sum({j: model.experts[j].param_count() for j in fwd.executed}.values())
        bucket = per_tier.setdefault(rec.tier, {
            "n": 0, "correct": 0, "macs": 0, "routing_macs": 0, "act_params": 0,
            "peak": 0, "chain": 0, "k": 0, "seq_n": 0, "udt": 0, "route_hits": 0,
            "counts": np.zeros(len(model.experts)), "wall": 0.0,
        })
        bucket["n"] += 1
        bucket["correct"] += int(fwd.predicted == rec.answer)
        bucket["macs"] += fwd.total_macs
        bucket["routing_macs"] += fwd.routing_macs
        bucket["act_params"] += activated
        bucket["peak"] += fwd.activation_floats
        bucket["chain"] += len(fwd.steps)
        bucket["k"] += fwd.k
        bucket["seq_n"] += len(rec.tokens)
        bucket["udt"] += uniform_cost(udt_depth, len(rec.tokens), cm) + cm.head_macs()
        hint = hint_remap.get(rec.hint, rec.hint)
        top1 = fam_of[int(np.argmax(fwd.probs.data))]
        bucket["route_hits"] += int(top1 == hint)
        for j in fwd.selected:
            bucket["counts"][j] += 1
        if elapsed is not None:
            bucket["wall"] += elapsed
        traces.append(fwd.trace)
    rows = []
    cost_lines = [COST_CSV_HEADER]
    for tier in sorted(per_tier):
        b = per_tier[tier]
        n = b["n"]
        rows.append(MetricsRow(
            variant=variant,
            tier=tier,
            accuracy=b["correct"] / n,
            macs=b["macs"] / n,
            activated_params=b["act_params"] / n,
            peak_activations=b["peak"] / n,
            mean_chain_len=b["chain"] / n,
            routing_acc=b["route_hits"] / n,
            util_entropy=utilization_entropy(b["counts"]),
            wall_clock_s=(b["wall"] / n) if timings else None,
        ))
        savings = 1.0 - (b["macs"] / n) / (b["udt"] / n)
        cost_lines.append(
            f"{variant},{tier},{b['seq_n'] / n!r},{b['k'] / n!r},{b['macs'] / n!r},"
            f"{b['routing_macs'] / n!r},{b['act_params'] / n!r},{b['peak'] / n!r},"
            f"{b['udt'] / n!r},{savings!r}"
        )
    return rows, traces, cost_lines


def evaluate_baseline(model, records: list[SampleRecord], timings: bool = False
                      ) -> list[MetricsRow]:
    per_tier: dict[int, dict] = {}
    depth = model.cfg.depth
    params = sum(p.size for p in model.named_params().values())
    for rec in records:
        t0 = time.perf_counter() if timings else None
        logits, macs, floats = model.forward(rec)
        elapsed = (time.perf_counter() - t0) if timings else None
        bucket = per_tier.setdefault(rec.tier, {
            "n": 0, "correct": 0, "macs": 0, "peak": 0, "wall": 0.0,
        })
        bucket["n"] += 1
        bucket["correct"] += int(int(np.argmax(logits.data)) == rec.answer)
        bucket["macs"] += macs
        bucket["peak"] += floats
        if elapsed is not None:
            bucket["wall"] += elapsed
    rows = []
    for tier in sorted(per_tier):
        b = per_tier[tier]
        n = b["n"]
        rows.append(MetricsRow(
            variant=model.variant, tier=tier, accuracy=b["correct"] / n,
            macs=b["macs"] / n, activated_params=float(params),
            peak_activations=b["peak"] / n, mean_chain_len=float(depth),
            routing_acc=0.0, util_entropy=0.0,
            wall_clock_s=(b["wall"] / n) if timings else None,
        ))
    return rows


def eval_corpus(seed: int, per_tier: int, tier34_split: float = 0.5) -> list[SampleRecord]:
    specs = [TierSpec(tier=t, seed=seed * 10 + t) for t in range(5)]
    ratios = [0.2] * 5
    return mix_corpus(specs, ratios, per_tier * 5, seed=seed)


# ---------------------------------------------------------------------------
# run directories
# ---------------------------------------------------------------------------


def _write_text(path: Path, lines: list[str]):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_traces(traces: list[ChainTrace], path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for tr in traces:
            fh.write(json.dumps(tr.to_json_obj(), sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def read_traces(path) -> list[dict]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def write_features_csv(records: list[SampleRecord], path: Path):
    lines = [FEATURE_CSV_HEADER]
    for rec in records:
        seq = TokenSequence(rec.tokens, rec.markers)
        f = extract_features(seq)
        lines.append(feature_csv_row(rec.uid, seq, f, score_value(f), rec.tier))
    _write_text(path, lines)


def run_training(cfg: RunConfig) -> dict:
    """Full curriculum for one variant/ablation; writes the run directory."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(
        json.dumps(asdict(cfg), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )

    if cfg.variant == "dsmoe":
        model = DepthMoeModel(cfg.model_config())
        result = run_curriculum(model, cfg.train_config(), timings=cfg.timings)
        _write_text(out / "metrics.csv", metrics_csv_lines(result.metrics))
        save_checkpoint(out / "checkpoint.dmck", model.named_params())
        (out / "registry.json").write_text(
            json.dumps(model.registry(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        (out / "policy.json").write_text(
            json.dumps({"thresholds": list(model.policy.thresholds)}, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        (out / "stages.json").write_text(
            json.dumps([asdict(s) for s in result.stage_records], sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )
    else:
        model = _train_baseline(cfg)
        save_checkpoint(out / "checkpoint.dmck", model.named_params())

    # held-out evaluation
    records = eval_corpus(cfg.seed + 10_000, cfg.eval_per_tier, cfg.tier34_split)
    write_corpus(records, out / "eval_corpus.jsonl")
    write_features_csv(records, out / "features.csv")
    if cfg.variant == "dsmoe":
        rows, traces, cost_lines = evaluate(
            model, records, variant=_variant_label(cfg),
            hint_remap=cfg.hint_remap(), timings=cfg.timings, udt_depth=cfg.udt_depth,
        )
        write_traces(traces, out / "traces.jsonl")
        _write_text(out / "cost.csv", cost_lines)
    else:
        rows = evaluate_baseline(model, records, timings=cfg.timings)
    _write_text(out / "eval.csv", [EVAL_CSV_HEADER] + [r.csv() for r in rows])
    return {"out_dir": str(out), "rows": rows}


def _variant_label(cfg: RunConfig) -> str:
    return cfg.variant if cfg.ablation == "full" else f"dsmoe/{cfg.ablation}"


def _train_baseline(cfg: RunConfig):
    bcfg = BaselineConfig(depth=cfg.udt_depth, d_model=cfg.d_model, window=cfg.window,
                          seed=cfg.seed)
    model = UniformTransformer(bcfg) if cfg.variant == "udt" else WidthMoeTransformer(bcfg)
    steps = cfg.pretrain_steps + cfg.integrate_steps + cfg.chain_steps + cfg.joint_steps
    params = list(model.named_params().values())
    opt = OptimizerState(params, lr=cfg.lr)
    from .training import _mixed_batch, _stream_seeds

    seeds = _stream_seeds(cfg.seed, 900, steps)
    for s in range(steps):
        batch = _mixed_batch(int(seeds[s]), cfg.batch_size, cfg.tier34_split)
        with Tape() as tape:
            logits = stack_rows([model.forward(r)[0] for r in batch])
            loss = cross_entropy(logits, [r.answer for r in batch])
            tape.backward(loss)
        optimizer_step(opt)
        zero_grads(params)
    return model


def load_trained(run_dir) -> DepthMoeModel:
    """Reconstruct a trained dsmoe model from its run directory."""
    run_dir = Path(run_dir)
    cfg_obj = json.loads((run_dir / "config.json").read_text(encoding="utf-8"))
    run_cfg = RunConfig(**cfg_obj)
    model = DepthMoeModel(run_cfg.model_config())
    restore_into(model.named_params(), load_checkpoint(run_dir / "checkpoint.dmck"))
    policy = json.loads((run_dir / "policy.json").read_text(encoding="utf-8"))
    model.policy.thresholds = tuple(policy["thresholds"])
    return model


# ---------------------------------------------------------------------------
# ablation sweep / report / interpretability
# ---------------------------------------------------------------------------


def run_ablation(base: RunConfig) -> dict:
    """Run all six Table-style variants with shared seeds/budgets and a shared
    held-out corpus; returns per-variant rows and writes ablation.csv."""
    out = Path(base.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    all_rows: list[MetricsRow] = []
    results = {}
    for name in ABLATION_NAMES:
        sub = RunConfig(**{**asdict(base), "ablation": name,
                           "out_dir": str(out / name.replace("-", "_"))})
        res = run_training(sub)
        results[name] = res
        all_rows.extend(res["rows"])
    _write_text(out / "ablation.csv", [EVAL_CSV_HEADER] + [r.csv() for r in all_rows])
    return {"out_dir": str(out), "results": results}


def build_report(run_dirs: list[str], out_dir: str) -> Path:
    """Aggregate eval and cost CSVs from several runs into one comparison."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows: list[str] = []
    cost_rows: list[str] = []
    header = None
    for rd in run_dirs:
        rd = Path(rd)
        candidates = [rd / "eval.csv", rd / "ablation.csv"]
        found = [p for p in candidates if p.exists()]
        if not found:
            found = sorted(rd.glob("*/eval.csv"))
        if not found:
            raise DataError(f"no eval.csv or ablation.csv under {rd}")
        for path in found:
            lines = path.read_text(encoding="utf-8").strip().split("\n")
            if header is None:
                header = lines[0]
            rows.extend(lines[1:])
        for path in [rd / "cost.csv", *sorted(rd.glob("*/cost.csv"))]:
            if path.exists():
                cost_rows.extend(path.read_text(encoding="utf-8").strip().split("\n")[1:])
    _write_text(out / "report.csv", [header] + rows)
    if cost_rows:
        _write_text(out / "cost_report.csv", [COST_CSV_HEADER] + cost_rows)

    md = ["| variant | tier | accuracy | MACs | chain len | routing acc |",
          "|---|---|---|---|---|---|"]
    for line in rows:
        parts = line.split(",")
        md.append(f"| {parts[0]} | {parts[1]} | {float(parts[2]):.3f} | "
                  f"{float(parts[3]):.0f} | {float(parts[6]):.2f} | {float(parts[7]):.3f} |")
    _write_text(out / "report.md", md)
    return out / "report.csv"


def interpretability_dump(traces: list[dict]) -> dict:
    """Chain summaries plus family-by-tier routing heatmap data."""
    summaries = []
    heat: dict[int, dict[str, float]] = {}
    for tr in traces:
        chain = " -> ".join(
            f"{s['kind']}#{s['expert_id']}"
            + (f" (halt={s['halt_prob']:.2f})" if s["halt_prob"] is not None else "")
            for s in tr["steps"]
        )
        flag = {True: "correct", False: "wrong", None: "unlabeled"}[tr["correct"]]
        summaries.append(
            f"{tr['input_id']} [tier {tr['tier']}, C={tr['C']:.2f}, k={len(tr['selected'])}] "
            f"{chain} | {tr['total_macs']} MACs | {flag}"
        )
        tier_bucket = heat.setdefault(tr["tier"], {})
        for s in tr["steps"]:
            tier_bucket[s["kind"]] = tier_bucket.get(s["kind"], 0.0) + 1.0
    for tier, bucket in heat.items():
        total = sum(bucket.values())
        for kind in bucket:
            bucket[kind] /= total
    return {"summaries": summaries, "heatmap": heat}


def format_trace(tr: dict) -> str:
    lines = [
        f"input {tr['input_id']}  tier={tr['tier']}  "
        f"C={tr['C']:.3f} (d_syn={tr['d_syn']}, c_sem={tr['c_sem']:.2f}, r={tr['r']})",
        f"  selected: {tr['selected']}   routing+head MACs: {tr['routing_macs']}",
    ]
    for i, s in enumerate(tr["steps"], 1):
        halt = "" if s["halt_prob"] is None else f"  halt_prob={s['halt_prob']:.3f}"
        lines.append(f"  step {i}: {s['kind']}#{s['expert_id']}  {s['macs']} MACs{halt}")
    lines.append(f"  total: {tr['total_macs']} MACs  correct: {tr['correct']}")
    return "\n".join(lines)

"""Command-line interface.

Subcommands: gen, train, eval, ablate, trace, report. A JSON config file
(--config) holds the same keys as the flags; config values override flags.
Unknown flags exit 2 (argparse); invariant failures mid-run print a
diagnostic and exit 1.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, fields
from pathlib import Path

from .errors import ConfigError, DepthMoeError
from .harness import (
    EVAL_CSV_HEADER, RunConfig, build_report, evaluate, format_trace,
    interpretability_dump, load_trained, read_traces, run_ablation, run_training,
    write_traces, _write_text,
)
from .taskgen import mix_corpus, paper_mix_specs, read_corpus, write_corpus


def _add_run_flags(p: argparse.ArgumentParser):
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool" or isinstance(f.default, bool):
            p.add_argument(flag, action="store_true", default=f.default)
        else:
            p.add_argument(flag, type=type(f.default), default=f.default)


def _run_config(args, overrides: dict) -> RunConfig:
    values = {f.name: getattr(args, f.name) for f in fields(RunConfig)}
    for key, val in overrides.items():
        if key in values:
            values[key] = val
    return RunConfig(**values)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="depthmoe",
                                     description="adaptive-depth expert chains")
    parser.add_argument("--config", type=str, default=None,
                        help="JSON file whose keys override flags")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="write a mixed corpus JSONL")
    p_gen.add_argument("--out", type=str, required=True)
    p_gen.add_argument("--total", type=int, default=1000)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--tier34-split", type=float, default=0.5)

    p_train = sub.add_parser("train", help="run the staged curriculum")
    _add_run_flags(p_train)

    p_eval = sub.add_parser("eval", help="evaluate a trained run on a corpus")
    p_eval.add_argument("--run-dir", type=str, required=True)
    p_eval.add_argument("--corpus", type=str, required=True)
    p_eval.add_argument("--out-dir", type=str, required=True)
    p_eval.add_argument("--timings", action="store_true")

    p_ablate = sub.add_parser("ablate", help="run the six ablation variants")
    _add_run_flags(p_ablate)

    p_trace = sub.add_parser("trace", help="pretty-print stored chain traces")
    p_trace.add_argument("--traces", type=str, required=True)
    p_trace.add_argument("--input-id", type=str, default=None)
    p_trace.add_argument("--summary", action="store_true",
                         help="print chain summaries and the routing heatmap")

    p_report = sub.add_parser("report", help="aggregate run metrics")
    p_report.add_argument("--runs", type=str, nargs="+", required=True)
    p_report.add_argument("--out-dir", type=str, required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides: dict = {}
    if args.config:
        overrides = json.loads(Path(args.config).read_text(encoding="utf-8"))

    try:
        if args.command == "gen":
            total = overrides.get("total", args.total)
            seed = overrides.get("seed", args.seed)
            split = overrides.get("tier34_split", args.tier34_split)
            specs, ratios = paper_mix_specs(seed, split)
            records = mix_corpus(specs, ratios, total, seed=seed)
            write_corpus(records, overrides.get("out", args.out))
            print(f"wrote {len(records)} samples to {args.out}")

        elif args.command == "train":
            cfg = _run_config(args, overrides)
            result = run_training(cfg)
            print(f"run complete: {result['out_dir']}")
            for row in result["rows"]:
                print(f"  tier {row.tier}: acc={row.accuracy:.3f} "
                      f"macs={row.macs:.0f} chain={row.mean_chain_len:.2f}")

        elif args.command == "eval":
            model = load_trained(args.run_dir)
            records = read_corpus(args.corpus)
            run_cfg = json.loads((Path(args.run_dir) / "config.json").read_text())
            remap = RunConfig(**run_cfg).hint_remap()
            rows, traces, cost_lines = evaluate(
                model, records, hint_remap=remap, timings=args.timings,
            )
            out = Path(args.out_dir)
            out.mkdir(parents=True, exist_ok=True)
            _write_text(out / "eval.csv", [EVAL_CSV_HEADER] + [r.csv() for r in rows])
            _write_text(out / "cost.csv", cost_lines)
            write_traces(traces, out / "traces.jsonl")
            for row in rows:
                print(f"tier {row.tier}: acc={row.accuracy:.3f} macs={row.macs:.0f}")

        elif args.command == "ablate":
            cfg = _run_config(args, overrides)
            result = run_ablation(cfg)
            print(f"ablation sweep complete: {result['out_dir']}")
            for name, res in result["results"].items():
                accs = {r.tier: round(r.accuracy, 3) for r in res["rows"]}
                print(f"  [{name}] per-tier accuracy: {accs}")

        elif args.command == "trace":
            traces = read_traces(args.traces)
            if args.input_id is not None:
                traces = [t for t in traces if t["input_id"] == args.input_id]
            if args.summary:
                dump = interpretability_dump(traces)
                for line in dump["summaries"]:
                    print(line)
                print("\nrouting heatmap (tier -> family share):")
                for tier in sorted(dump["heatmap"]):
                    print(f"  tier {tier}: {dump['heatmap'][tier]}")
            else:
                for tr in traces:
                    print(format_trace(tr))
                    print()

        elif args.command == "report":
            path = build_report(args.runs, args.out_dir)
            print(f"report written: {path}")

    except DepthMoeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``rqmoe <command> [flags]``.

Exit codes: 0 success, 1 runtime or data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .analysis import DISPATCHED, LAYER, ImportanceReport, sample_calibration, wanda_expert_scores
from .errors import RQError
from .io import (dumps_json, load_json, load_model, load_tokens, load_trace, save_model, save_tokens,
                 save_trace, sha256_file, trace_rows, write_csv, TRACE_HEADER)
from .metrics import INSTANCE, ORIGIN, RoutingTrace, gap_matrix, lis_all
from .model import run_layers
from .quantization import PrecisionScheme
from .streaming import CUMULATIVE, STRATEGIES, StreamConfig, build_adversarial_stream, run_stream, split_segments
from .transform import RQPlan, apply_plan, build_plan, memory_report
from .workload import SkewSpec, gen_model, gen_tokens

log = logging.getLogger("rqmoe")

SCHEMES = [s.value for s in PrecisionScheme]
INPUT_FLAGS = ("model", "tokens", "trace", "compare", "plan")


class UsageError(Exception):
    pass


def _default_seed() -> int:
    raw = os.environ.get("RQ_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        return 0


def _common(p: argparse.ArgumentParser, formats=("json", "csv")):
    p.add_argument("--seed", type=int, default=_default_seed(), help="RNG seed (default $RQ_SEED or 0)")
    p.add_argument("-o", "--output", help="output path; stdout when absent")
    p.add_argument("--format", choices=formats, default=formats[0])
    p.add_argument("--no-timestamp", action="store_true", help="omit the provenance timestamp")
    p.add_argument("-v", "--verbose", action="store_true")


def _figure_flags(p: argparse.ArgumentParser):
    p.add_argument("--figure", help="figure path (default: output path with .png suffix)")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--gnuplot-style", action="store_true",
                   help="space-delimited blocks separated by blank lines, one block per layer")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rqmoe", description="Load imbalance analysis and Replicate-and-Quantize for toy SMoE models.")
    parser.add_argument("--version", action="version", version=f"rqmoe {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic model and token set")
    _common(p, ("json",))
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--experts", type=int, default=8)
    p.add_argument("--topk", type=int, default=1)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--tokens", type=int, default=1000)
    p.add_argument("--skew", choices=["uniform", "zipf", "directional"], default="uniform")
    p.add_argument("--zipf-exponent", type=float, default=1.0)
    p.add_argument("--bias-strength", type=float, default=0.0)
    p.add_argument("--base-scheme", choices=["full32", "half16"], default="full32")
    p.add_argument("--name", default="synthetic")
    p.add_argument("--tokens-output", help="token CSV path (default: <output stem>.tokens.csv)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("trace", help="route tokens and write per-instance counts")
    _common(p, ("csv", "json"))
    p.add_argument("--model", required=True)
    p.add_argument("--tokens", required=True)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("lis", help="load imbalance score per layer")
    _common(p)
    p.add_argument("--trace", help="trace CSV")
    p.add_argument("--model", help="route --tokens through this model instead of reading a trace")
    p.add_argument("--tokens")
    p.add_argument("--granularity", choices=[INSTANCE, ORIGIN], default=INSTANCE)
    p.set_defaults(func=cmd_lis)

    p = sub.add_parser("plan", help="pick heavy-hitter and less-important experts")
    _common(p, ("json",))
    p.add_argument("--model", required=True)
    p.add_argument("--tokens", required=True)
    p.add_argument("--calib-fraction", type=float, default=0.1)
    p.add_argument("--sparsity", type=float, default=0.5)
    p.add_argument("--replica-scheme", choices=SCHEMES[1:], help="default: one level below the base scheme")
    p.add_argument("--quant-scheme", choices=SCHEMES[1:], help="default: one level below the base scheme")
    p.add_argument("--activations", choices=[DISPATCHED, LAYER], default=DISPATCHED)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("apply", help="apply a plan and report memory")
    _common(p, ("json",))
    p.add_argument("--model", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--memory-report", help="default: <output stem>.memory.json, stderr without --output")
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("stream", help="streaming simulation with per-timestep replication")
    _common(p, ("csv", "json"))
    _figure_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--tokens", required=True)
    p.add_argument("--plan", help="take quantized experts from this plan instead of recalibrating")
    p.add_argument("--timesteps", type=int, default=10)
    p.add_argument("--strategy", choices=list(STRATEGIES), default=CUMULATIVE)
    p.add_argument("--warm-start-replica", action="store_true",
                   help="replicate the calibration heavy-hitter at the first timestep")
    p.add_argument("--no-adversarial", action="store_true", help="split tokens as given, without filtering")
    p.add_argument("--calib-fraction", type=float, default=0.1)
    p.add_argument("--sparsity", type=float, default=0.5)
    p.add_argument("--replica-scheme", choices=SCHEMES[1:])
    p.add_argument("--quant-scheme", choices=SCHEMES[1:])
    p.add_argument("--activations", choices=[DISPATCHED, LAYER], default=DISPATCHED)
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("report", help="expert gap matrices")
    _common(p, ("csv", "json"))
    _figure_flags(p)
    p.add_argument("--trace", required=True)
    p.add_argument("--compare", help="second trace (e.g. after R&Q) drawn beside the first")
    p.set_defaults(func=cmd_report)
    return parser


# helpers ----------------------------------------------------------------------

def provenance(args) -> dict:
    flags = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    inputs = {}
    for key in INPUT_FLAGS:
        path = flags.get(key)
        if isinstance(path, str) and Path(path).is_file():
            inputs[path] = sha256_file(path)
    out = {"tool": "rqmoe", "version": __version__, "command": args.command, "flags": flags, "inputs": inputs}
    if not args.no_timestamp:
        out["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    return out


def emit(args, text: str, path: str | None = None):
    path = path if path is not None else args.output
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def figure_path(args) -> str | None:
    if args.no_figures:
        return None
    if args.figure:
        return args.figure
    if args.output:
        return str(Path(args.output).with_suffix(".png"))
    return None


def _check_fraction(name: str, v: float):
    if not 0 < v <= 1:
        raise UsageError(f"{name} must lie in (0, 1], got {v}")


def _default_scheme(base: PrecisionScheme, given: str | None) -> PrecisionScheme:
    if given:
        return PrecisionScheme.parse(given)
    return PrecisionScheme.HALF16 if base is PrecisionScheme.FULL32 else PrecisionScheme.INT8SYM


def _gnuplot(header: list[str], rows, block=lambda r: r[0]) -> str:
    lines = ["# " + " ".join(header)]
    prev = None
    for r in rows:
        if prev is not None and block(r) != prev:
            lines += ["", ""]
        prev = block(r)
        lines.append(" ".join("NaN" if v is None else repr(float(v)) if isinstance(v, float) else str(v) for v in r))
    return "\n".join(lines) + "\n"


def _table(args, header, rows, prov, block=lambda r: r[0]) -> str:
    rows = list(rows)
    if args.format == "json":
        return dumps_json({"columns": header, "rows": rows, "provenance": prov})
    if getattr(args, "gnuplot_style", False):
        return _gnuplot(header, rows, block)
    return write_csv(None, header, rows, prov)


# commands ---------------------------------------------------------------------

def cmd_gen(args) -> int:
    if not 1 <= args.topk < args.experts:
        raise UsageError(f"need 1 <= --topk < --experts, got topk={args.topk}, experts={args.experts}")
    if args.layers < 1 or args.dim < 1 or args.tokens < 1:
        raise UsageError("--layers, --dim and --tokens must be positive")
    if args.zipf_exponent < 0 or args.bias_strength < 0:
        raise UsageError("skew parameters must be non-negative")
    skew = SkewSpec(args.skew, args.zipf_exponent if args.skew == "zipf" else 0.0, args.bias_strength)
    model = gen_model(args.seed, args.layers, args.experts, args.topk, args.dim, skew, args.base_scheme, args.name)
    tokens = gen_tokens(args.seed, args.tokens, args.dim)
    prov = provenance(args)
    prov["skew"] = skew.to_dict()
    if args.output:
        save_model(model, args.output, prov)
    else:
        from .io import model_to_dict
        sys.stdout.write(dumps_json(model_to_dict(model, prov)))
    tok_path = args.tokens_output or (str(Path(args.output).with_suffix("")) + ".tokens.csv" if args.output else None)
    if tok_path:
        save_tokens(tokens, tok_path, prov)
    log.info("model p=%d m=%d k=%d d=%d; %d tokens", args.layers, args.experts, args.topk, args.dim, args.tokens)
    return 0


def _trace_from(model_path, tokens_path) -> RoutingTrace:
    model = load_model(model_path)
    tokens = load_tokens(tokens_path)
    trace = RoutingTrace.for_model(model)
    run_layers(model, tokens, trace)
    return trace


def cmd_trace(args) -> int:
    trace = _trace_from(args.model, args.tokens)
    emit(args, _table(args, TRACE_HEADER, trace_rows(trace), provenance(args)))
    return 0


def cmd_lis(args) -> int:
    if args.trace:
        trace = load_trace(args.trace)
    elif args.model and args.tokens:
        trace = _trace_from(args.model, args.tokens)
    else:
        raise UsageError("lis needs --trace, or --model together with --tokens")
    scores = lis_all(trace, args.granularity)
    mean = sum(scores) / len(scores)
    prov = provenance(args)
    if args.format == "json":
        text = dumps_json({"granularity": args.granularity, "layers": {str(i): s for i, s in enumerate(scores)},
                           "mean": mean, "provenance": prov})
    else:
        text = write_csv(None, ["layer", "lis"], [[i, s] for i, s in enumerate(scores)] + [["mean", mean]], prov)
    emit(args, text)
    return 0


def _calibrate(args, model, tokens):
    _check_fraction("--calib-fraction", args.calib_fraction)
    _check_fraction("--sparsity", args.sparsity)
    calib = sample_calibration(tokens, args.calib_fraction, args.seed)
    return calib, {"fraction": args.calib_fraction, "seed": args.seed, "tokens": calib.rows}


def cmd_plan(args) -> int:
    model = load_model(args.model)
    tokens = load_tokens(args.tokens)
    calib, meta = _calibrate(args, model, tokens)
    base = model.layers[0].base_scheme
    if base is PrecisionScheme.INT8SYM:
        raise UsageError("base model is already int8; no lower scheme is available")
    schemes = (_default_scheme(base, args.replica_scheme), _default_scheme(base, args.quant_scheme))
    importance = wanda_expert_scores(model, calib, args.sparsity, args.activations)
    importance.calibration.update(meta)
    plan = build_plan(model, calib, args.sparsity, schemes, importance)
    for li, lp in enumerate(plan.layers):
        for s in (lp.replica_scheme, lp.quant_scheme):
            if not s.lower_than(model.layers[li].base_scheme):
                raise UsageError(f"scheme {s.value} is not below the base scheme {model.layers[li].base_scheme.value}")
        if lp.replicate_id == lp.quantize_id:
            log.warning("layer %d: expert %d is both the heavy-hitter and the least important", li, lp.replicate_id)
    plan.provenance = dict(provenance(args), calibration=meta, sparsity=args.sparsity)
    doc = plan.to_dict()
    doc["importance"] = importance.to_dict()
    emit(args, dumps_json(doc))
    return 0


def _load_plan(path) -> tuple[RQPlan, ImportanceReport | None]:
    doc = load_json(path)
    try:
        plan = RQPlan.from_dict(doc)
        imp = ImportanceReport.from_dict(doc["importance"]) if "importance" in doc else None
    except (KeyError, TypeError, ValueError) as exc:
        from .errors import DataFormatError
        raise DataFormatError(path, None, f"invalid plan file: {exc}") from None
    return plan, imp


def cmd_apply(args) -> int:
    model = load_model(args.model)
    plan, _ = _load_plan(args.plan)
    after = apply_plan(model, plan)
    report = memory_report(model, after)
    prov = provenance(args)
    if args.output:
        save_model(after, args.output, prov)
    else:
        from .io import model_to_dict
        sys.stdout.write(dumps_json(model_to_dict(after, prov)))
    mem = dumps_json(dict(report.to_dict(), provenance=prov))
    mem_path = args.memory_report or (str(Path(args.output).with_suffix("")) + ".memory.json" if args.output else None)
    if mem_path:
        Path(mem_path).write_text(mem, encoding="utf-8")
    else:
        sys.stderr.write(mem)
    if not report.within_budget:
        log.warning("transformed experts use %d bytes, %d more than before (int8 scale overhead)",
                    report.bytes_after, report.bytes_after - report.bytes_before)
    return 0


STREAM_HEADER = ["timestep", "layer", "variant", "strategy", "cumulative_lis", "instant_lis", "replica_origin"]


def cmd_stream(args) -> int:
    if args.timesteps < 2:
        raise UsageError("--timesteps must be at least 2")
    model = load_model(args.model)
    tokens = load_tokens(args.tokens)
    base = model.layers[0].base_scheme
    if base is PrecisionScheme.INT8SYM:
        raise UsageError("base model is already int8; no lower scheme is available")
    replica_scheme = _default_scheme(base, args.replica_scheme)
    quant_scheme = _default_scheme(base, args.quant_scheme)
    calib, meta = _calibrate(args, model, tokens)
    importance = None
    if args.plan:
        plan, importance = _load_plan(args.plan)
        if importance is None:
            importance = ImportanceReport([[] for _ in plan.layers], [lp.quantize_id for lp in plan.layers], args.sparsity)
    else:
        importance = wanda_expert_scores(model, calib, args.sparsity, args.activations)
    warm = None
    if args.warm_start_replica:
        from .analysis import find_heavy_hitters
        warm = find_heavy_hitters(model, calib)
    if args.no_adversarial:
        segments = split_segments(tokens, args.timesteps)
    else:
        segments = build_adversarial_stream(model, tokens, args.timesteps, args.seed)
    cfg = StreamConfig(args.timesteps, args.strategy, importance, replica_scheme, quant_scheme, warm)
    report = run_stream(model, segments, cfg)
    rows = [[r.timestep, r.layer, r.variant, r.strategy, r.cumulative_lis, r.instant_lis, r.replica_origin]
            for r in sorted(report.rows, key=lambda r: (r.layer, r.variant, r.timestep))]
    prov = dict(provenance(args), calibration=meta, quantize_ids=list(importance.chosen),
                segment_sizes=[s.rows for s in segments])
    emit(args, _table(args, STREAM_HEADER, rows, prov, block=lambda r: (r[1], r[2])))
    fig = figure_path(args)
    if fig:
        from .plotting import plot_stream
        plot_stream(report, fig)
    return 0


GAP_HEADER = ["trace", "layer", "rank", "instance", "origin", "is_replica", "count", "gap", "normalized_gap"]


def _gap_rows(label, trace):
    for li, (lt, g) in enumerate(zip(trace.layers, gap_matrix(trace))):
        for r, (inst, c) in enumerate(zip(g.order, g.sorted_counts)):
            gap = int(g.gaps[r]) if r < len(g.gaps) else None
            norm = float(g.normalized[r]) if r < len(g.gaps) else None
            yield [label, li, r + 1, int(inst), lt.origins[inst], int(lt.is_replica[inst]), int(c), gap, norm]


def cmd_report(args) -> int:
    traces = {"base": load_trace(args.trace)}
    if args.compare:
        traces["compare"] = load_trace(args.compare)
    rows = [r for label, tr in traces.items() for r in _gap_rows(label, tr)]
    if args.gnuplot_style and args.format == "csv":
        text = _gnuplot(GAP_HEADER, rows, block=lambda r: (r[0], r[1]))
    else:
        text = _table(args, GAP_HEADER, rows, provenance(args))
    emit(args, text)
    fig = figure_path(args)
    if fig:
        from .plotting import plot_gaps
        plot_gaps({label: [g.normalized for g in gap_matrix(tr)] for label, tr in traces.items()}, fig)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"rqmoe {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (RQError, OSError, ValueError) as exc:
        print(f"rqmoe {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

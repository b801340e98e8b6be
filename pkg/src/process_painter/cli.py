# process_painter/cli.py

import argparse
import json
import logging
import os
import sys

from . import DEFAULT_OUTPUT_DIR, __version__
from .dataset_builder import compare_stats, emit_dataset, load_manifest, stats
from .errors import ConfigError, JudgeError, ProcessPainterError
from .evalharness import sweep, write_report
from .flowmath import format_checks, verify_math
from .judge import make_judge
from .logger import log, set_level, setup_logging
from .microworld import RasterImage
from .orchestrator import RunConfig, run_trajectory
from .seqcodec import encode, loss_mask
from .settings import deep_update, load_settings, uniform_fault_model, validate_settings
from .task_runner import TaskRunner

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


# --- Parser ---
def _add_common(p):
    p.add_argument("--config", help="JSON config file (default: $PROCESS_PAINTER_CONFIG)")
    p.add_argument("--seed", type=int, help="Master seed")
    p.add_argument("--workers", type=int, help="Worker processes")
    p.add_argument("--out", help=f"Output directory (default: {DEFAULT_OUTPUT_DIR})")
    verbosity = p.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    verbosity.add_argument("--quiet", "-q", action="store_true", help="Warnings only, no progress bars")


def build_parser():
    p = argparse.ArgumentParser(prog="process-painter", description="Process-driven scene drawing toolkit")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-dataset", help="Emit the multi-turn, conflict and alignment subsets")
    _add_common(gen)
    gen.add_argument("--scale", type=float, help="Multiplier on the full-size subset targets")
    gen.add_argument("--subsets", nargs="+", choices=("multiturn", "conflict", "alignment"), help="Subsets to build")

    run = sub.add_parser("run", help="Run one prompt through the plan/sketch/inspect/refine cycle")
    _add_common(run)
    run.add_argument("--prompt", required=True, help="Scene in the DSL")
    run.add_argument("--fault-rate", type=float, help="Sketch fault rate, split evenly over the fault kinds")
    run.add_argument("--plan-fault-rate", type=float, help="Plan fault rate, split evenly over the fault kinds")
    run.add_argument("--refine-rounds", type=int, help="Refinement rounds per step")
    run.add_argument("--initial", help="JSON file holding a starting image (editing mode)")
    run.add_argument("--judge-url", help="Remote judge base URL for plan checks")

    ev = sub.add_parser("eval", help="Compare process-driven and single-pass generation")
    _add_common(ev)
    ev.add_argument("--n", type=int, help="Prompts per category")
    ev.add_argument("--fault-rate", type=float, help="Single sketch fault rate")
    ev.add_argument("--fault-rates", type=float, nargs="+", help="Sketch fault rates to sweep")
    ev.add_argument("--refine-rounds", type=int, help="Refinement rounds per step")

    st = sub.add_parser("stats", help="Recompute dataset statistics and check them against the manifest")
    _add_common(st)
    st.add_argument("--no-check", action="store_true", help="Only print the recomputed statistics")

    vm = sub.add_parser("verify-math", help="Check the flow and loss formulas numerically")
    _add_common(vm)
    vm.add_argument("--instances", type=int, default=100, help="Random instances per property")

    sj = sub.add_parser("serve-judge", help="Serve the exact judge over HTTP (local use)")
    _add_common(sj)
    sj.add_argument("--host", default="127.0.0.1")
    sj.add_argument("--port", type=int, default=8765)
    return p


# --- Settings ---
def resolve_settings(args):
    """Config file over defaults, then flags over both."""
    settings = load_settings(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.out is not None:
        overrides["output_dir"] = args.out
    if getattr(args, "scale", None) is not None:
        overrides["scale"] = args.scale
    fault_rate = getattr(args, "fault_rate", None)
    if args.command == "run":
        if fault_rate is not None:
            overrides.setdefault("faults", {})["sketch"] = uniform_fault_model(fault_rate)
        if args.plan_fault_rate is not None:
            overrides.setdefault("faults", {})["plan"] = uniform_fault_model(args.plan_fault_rate)
        if args.refine_rounds is not None:
            overrides["run"] = {"max_refine_rounds": args.refine_rounds}
        if args.judge_url:
            overrides["judge"] = {"url": args.judge_url}
    if args.command == "eval":
        ev = {}
        if args.n is not None:
            ev["n"] = args.n
        if args.fault_rates:
            ev["fault_rates"] = args.fault_rates
        elif fault_rate is not None:
            ev["fault_rates"] = [fault_rate]
        if args.refine_rounds is not None:
            ev["max_refine_rounds"] = args.refine_rounds
        if ev:
            overrides["eval"] = ev
    return validate_settings(deep_update(settings, overrides))


def _configure_logging(args, settings):
    setup_logging(log_file=settings["logging"]["log_file"])
    if args.verbose:
        set_level(logging.DEBUG)
    elif args.quiet:
        set_level(logging.WARNING)
    else:
        set_level(getattr(logging, str(settings["logging"]["level"]).upper(), logging.INFO))


# --- Commands ---
def format_trajectory(t):
    lines = [f"prompt: {t.prompt}"]
    for n, segment in enumerate(t.segments):
        if segment.kind == "plan":
            lines.append(f"{n:>3} P  <ins> {segment.ins_text} </ins> <des> {segment.des_text} </des>")
        elif segment.kind == "vision":
            lines.append(f"{n:>3} V")
            lines.extend("      " + row for row in segment.image.ascii().splitlines())
        else:
            lines.append(f"{n:>3} {segment.code}  {segment.text}")
    lines.append(f"success: {str(t.success).lower()}")
    return "\n".join(lines)


def cmd_run(args, settings):
    initial = None
    if args.initial:
        try:
            with open(args.initial, encoding="utf-8") as f:
                initial = RasterImage.from_list(json.load(f))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"could not read initial image {args.initial}: {e}") from e
    # Augmentation only shapes training programs.
    cfg = RunConfig.from_settings(settings, augmentation_ratio=0.0)
    judge = make_judge(settings) if settings["judge"]["url"] else None
    if judge is not None and not judge.health():
        judge.close()
        raise JudgeError(f"judge at {settings['judge']['url']} failed its health check")
    try:
        t = run_trajectory(args.prompt, cfg, initial=initial, judge=judge)
    finally:
        if judge is not None:
            judge.close()
    stream = encode(t)
    mask = loss_mask(stream)
    print(format_trajectory(t))
    print(json.dumps({"meta": t.meta, "tokens": list(stream.tokens), "ce_positions": mask.ce_count}, sort_keys=True))

    os.makedirs(settings["output_dir"], exist_ok=True)
    path = os.path.join(settings["output_dir"], f"trajectory_{cfg.seed}.json")
    record = {
        "prompt": t.prompt,
        "tokens": list(stream.tokens),
        "images": [img.to_list() for img in stream.images],
        "meta": t.meta,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(record, f, sort_keys=True, separators=(",", ":"))
    log.info(f"CLI: Trajectory stream written to {path}.")
    return EXIT_OK


def cmd_gen_dataset(args, settings, runner):
    subsets = tuple(args.subsets) if args.subsets else ("multiturn", "conflict", "alignment")
    manifest = emit_dataset(settings, settings["seed"], settings["output_dir"], runner, subsets)
    print(json.dumps({name: vars(s) for name, s in manifest.subsets.items()}, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_eval(args, settings, runner):
    tables = sweep(settings, runner=runner)
    json_path, text_path = write_report(tables, settings["output_dir"])
    with open(text_path, encoding="utf-8") as f:
        print(f.read())
    log.info(f"CLI: Report written to {json_path} and {text_path}.")
    return EXIT_OK


def cmd_stats(args, settings):
    out_dir = settings["output_dir"]
    recomputed = stats(out_dir)
    print(json.dumps({name: vars(s) for name, s in recomputed.items()}, indent=2, sort_keys=True))
    if args.no_check:
        return EXIT_OK
    mismatches = compare_stats(recomputed, load_manifest(out_dir))
    for line in mismatches:
        log.error(f"CLI: Stats mismatch: {line}")
    return EXIT_RUNTIME if mismatches else EXIT_OK


def cmd_verify_math(args, settings):
    results = verify_math(settings["seed"], args.instances, settings["flow"]["lambda_ce"])
    print(format_checks(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


def cmd_serve_judge(args, settings):
    from .judge_server import serve_judge

    serve_judge(args.host, args.port)
    return EXIT_OK


# --- Entry point ---
def main(argv=None):
    """
    Parses argv, runs one subcommand and returns its exit status.

    0 on success, 1 for usage errors, 2 for configuration errors and 3 for any other failure.
    Failures also print a one-line JSON error record on stderr.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE

    try:
        settings = resolve_settings(args)
        _configure_logging(args, settings)
        runner = TaskRunner(settings["workers"], progress=not args.quiet)
        log.debug(f"CLI: {args.command} with seed {settings['seed']}.")
        if args.command == "gen-dataset":
            return cmd_gen_dataset(args, settings, runner)
        if args.command == "run":
            return cmd_run(args, settings)
        if args.command == "eval":
            return cmd_eval(args, settings, runner)
        if args.command == "stats":
            return cmd_stats(args, settings)
        if args.command == "verify-math":
            return cmd_verify_math(args, settings)
        return cmd_serve_judge(args, settings)
    except ConfigError as e:
        log.error(f"CLI: Configuration error: {e}")
        print(json.dumps(e.to_record()), file=sys.stderr)
        return EXIT_CONFIG
    except ProcessPainterError as e:
        log.error(f"CLI: {args.command} failed: {e}", exc_info=True)
        print(json.dumps(e.to_record()), file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as e:
        log.error(f"CLI: {args.command} failed: {e}", exc_info=True)
        print(json.dumps({"error": "io", "message": str(e)}), file=sys.stderr)
        return EXIT_RUNTIME

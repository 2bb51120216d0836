"""Command-line entry point.

Subcommands: synth, train-gen, train-clf, optimize, eval, plot, serve.
Exit codes: 0 success, 1 usage error, 2 runtime failure. Every run writes
a run_manifest.json into --out recording the arguments, the resolved
config hash, and content hashes of inputs and outputs, so identical
invocations are verifiably identical.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import persist
from .classifier import save_classifier, train_phase2
from .cohort import generate_cohort
from .config import RunConfig, merge_dicts, tiny_config
from .evaluation import evaluate_phase1, evaluate_phase2, evaluate_phase3
from .generator import load_generator, predict_study, save_generator, train_phase1
from .optimizer import FrozenStack, optimize_params
from .panels import emit_panels
from .study import list_cohort, read_cohort, read_study


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _load_config(args) -> RunConfig:
    """Resolve defaults < tiny profile < config file < explicit flags."""
    base = tiny_config() if getattr(args, "tiny", False) else RunConfig()
    if getattr(args, "config", None):
        base = RunConfig.from_dict(merge_dicts(base.to_dict(),
                                               persist.read_json(args.config)))
    overrides: dict = {}
    if getattr(args, "seed", None) is not None:
        overrides = merge_dicts(overrides, {"generator": {"seed": args.seed},
                                            "classifier": {"seed": args.seed}})
    if getattr(args, "epochs", None) is not None:
        overrides = merge_dicts(overrides, {"generator": {"epochs": args.epochs},
                                            "classifier": {"epochs": args.epochs}})
    if getattr(args, "input_mode", None) is not None:
        overrides = merge_dicts(overrides, {"generator": {"input_mode": args.input_mode}})
    if getattr(args, "steps", None) is not None:
        overrides = merge_dicts(overrides, {"optimizer": {"max_steps": args.steps}})
    if getattr(args, "eta", None) is not None:
        overrides = merge_dicts(overrides, {"optimizer": {"eta": args.eta}})
    if getattr(args, "lambda_reg", None) is not None:
        overrides = merge_dicts(overrides, {"optimizer": {"lambda_reg": args.lambda_reg}})
    if overrides:
        return RunConfig.from_dict(merge_dicts(base.to_dict(), overrides))
    return base


def _write_manifest(out_dir: Path, command: str, args, cfg: RunConfig,
                    inputs: dict, outputs: dict) -> None:
    manifest = {
        "format_version": persist.FORMAT_VERSION,
        "command": command,
        "args": {k: v for k, v in sorted(vars(args).items())
                 if k != "func" and v is not None},
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "inputs": inputs,
        "outputs": outputs,
    }
    persist.write_json(out_dir / "run_manifest.json", manifest)


def _cmd_synth(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    synth_seed = args.seed if args.seed is not None else 0
    generate_cohort(args.n, synth_seed, cfg.synth, out)
    outputs = {"cohort": persist.sha256_tree(out)}
    _write_manifest(out, "synth", args, cfg, {}, outputs)
    print(f"wrote {args.n} studies to {out}")
    return 0


def _cmd_train_gen(args) -> int:
    cfg = _load_config(args)
    studies = read_cohort(args.cohort)
    model, history = train_phase1(studies, cfg.generator, log=print if args.verbose else None)
    out = Path(args.out)
    meta = save_generator(model, out, history)
    _write_manifest(out, "train-gen", args, cfg,
                    {"cohort": persist.sha256_file(Path(args.cohort) / "manifest.json")},
                    {"checkpoint": meta["weights_hash"]})
    print(f"generator {meta['weights_hash'][:12]} final train loss "
          f"{meta['final_train_loss']:.4f} (initial {meta['initial_loss']:.4f})")
    return 0


def _cmd_train_clf(args) -> int:
    cfg = _load_config(args)
    studies = read_cohort(args.cohort)
    gen, gen_meta = load_generator(args.gen)
    clf, report = train_phase2(studies, gen, cfg.classifier,
                               log=print if args.verbose else None)
    out = Path(args.out)
    meta = save_classifier(clf, cfg.classifier, out, gen_meta["weights_hash"], report)
    _write_manifest(out, "train-clf", args, cfg,
                    {"cohort": persist.sha256_file(Path(args.cohort) / "manifest.json"),
                     "generator": gen_meta["weights_hash"]},
                    {"checkpoint": meta["weights_hash"]})
    print(f"classifier {meta['weights_hash'][:12]} cv auc "
          f"{report['auc']['mean']:.3f} +/- {report['auc']['std']:.3f}")
    return 0


def _cmd_optimize(args) -> int:
    cfg = _load_config(args)
    stack = FrozenStack.load(args.gen, args.clf)
    out = Path(args.out)
    ids = [args.study] if args.study else list_cohort(args.cohort)
    if args.limit:
        ids = ids[:args.limit]
    rows = []
    for sid in ids:
        study = read_study(Path(args.cohort) / sid)
        trace = optimize_params(study, cfg.optimizer, stack)
        trace.save(out / sid)
        rows.append({"id": sid, "initial": trace.risks[0], "final": trace.best_risk})
        print(f"{sid}: risk {trace.risks[0]:.4f} -> {trace.best_risk:.4f} "
              f"(best step {trace.best_step})")
    _write_manifest(out, "optimize", args, cfg,
                    {"cohort": persist.sha256_file(Path(args.cohort) / "manifest.json"),
                     "generator": stack.gen_hash, "classifier": stack.clf_hash},
                    {"traces": persist.sha256_tree(out)})
    return 0


def _cmd_eval(args) -> int:
    cfg = _load_config(args)
    studies = read_cohort(args.cohort)
    if args.limit:
        studies = studies[:args.limit]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    inputs = {"cohort": persist.sha256_file(Path(args.cohort) / "manifest.json")}
    if args.phase == 1:
        gen, gen_meta = load_generator(args.gen)
        po = None
        if args.params_only_gen:
            po, _ = load_generator(args.params_only_gen)
        report = evaluate_phase1(studies, gen, po, folds=cfg.eval_folds).to_dict()
        inputs["generator"] = gen_meta["weights_hash"]
    elif args.phase == 2:
        gen, gen_meta = load_generator(args.gen)
        report = evaluate_phase2(studies, gen, cfg.classifier,
                                 comparators=args.comparators).to_dict()
        inputs["generator"] = gen_meta["weights_hash"]
    else:
        stack = FrozenStack.load(args.gen, args.clf)
        report = evaluate_phase3(studies, stack, cfg.optimizer)
        inputs["generator"] = stack.gen_hash
        inputs["classifier"] = stack.clf_hash
        print(f"mean risk {report['mean_initial_risk']:.4f} -> {report['mean_final_risk']:.4f} "
              f"({report['percent_reduction']:.2f}% reduction)")
    persist.write_json(out / f"report_phase{args.phase}.json", report)
    _write_manifest(out, "eval", args, cfg, inputs,
                    {"report": persist.sha256_file(out / f"report_phase{args.phase}.json")})
    print(f"report written to {out / f'report_phase{args.phase}.json'}")
    return 0


def _cmd_plot(args) -> int:
    cfg = _load_config(args)
    study = read_study(Path(args.cohort) / args.study)
    outputs = {}
    inputs = {"cohort": persist.sha256_file(Path(args.cohort) / "manifest.json")}
    if args.gen:
        gen, gen_meta = load_generator(args.gen)
        outputs["predictions"] = predict_study(gen, study)
        inputs["generator"] = gen_meta["weights_hash"]
    if args.trace:
        import numpy as np
        from .study import VIEW_ORDER
        res = study.resolution
        stacked = [persist.read_f32(Path(args.trace) / v.value / "params_optimized.f32",
                                    (4, res, res)) for v in VIEW_ORDER]
        outputs["params_star"] = np.stack(stacked)
        inputs["trace"] = persist.sha256_tree(args.trace)
    out = Path(args.out)
    written = emit_panels(study, outputs, out)
    _write_manifest(out, "plot", args, cfg, inputs,
                    {p.name: persist.sha256_file(p) for p in written})
    for p in written:
        print(p)
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app
    app = create_app(gen_dir=args.gen, clf_dir=args.clf, cohort_dir=args.cohort,
                     ui_dir=args.ui)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="sofa", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out_required=True):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--tiny", action="store_true", help="use the compact desk-scale profile")
        p.add_argument("--seed", type=int, help="override seeds")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--verbose", action="store_true")

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    common(p)
    p.add_argument("--n", type=int, default=235, help="number of studies")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train-gen", help="train the image generator")
    common(p)
    p.add_argument("--cohort", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--input-mode", choices=["fusion", "params_only"], dest="input_mode")
    p.set_defaults(func=_cmd_train_gen)

    p = sub.add_parser("train-clf", help="train the recurrence classifier")
    common(p)
    p.add_argument("--cohort", required=True)
    p.add_argument("--gen", required=True, help="generator checkpoint directory")
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=_cmd_train_clf)

    p = sub.add_parser("optimize", help="optimize ablation parameters")
    common(p)
    p.add_argument("--cohort", required=True)
    p.add_argument("--study", help="study id (default: whole cohort)")
    p.add_argument("--limit", type=int)
    p.add_argument("--gen", required=True)
    p.add_argument("--clf", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--eta", type=float)
    p.add_argument("--lambda-reg", type=float, dest="lambda_reg")
    p.set_defaults(func=_cmd_optimize)

    p = sub.add_parser("eval", help="evaluate a phase on a cohort")
    common(p)
    p.add_argument("--phase", type=int, choices=[1, 2, 3], required=True)
    p.add_argument("--cohort", required=True)
    p.add_argument("--gen")
    p.add_argument("--params-only-gen", dest="params_only_gen")
    p.add_argument("--clf")
    p.add_argument("--comparators", action="store_true")
    p.add_argument("--limit", type=int)
    p.add_argument("--steps", type=int, help="phase-3 optimizer step cap")
    p.add_argument("--eta", type=float)
    p.add_argument("--lambda-reg", type=float, dest="lambda_reg")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("plot", help="render comparison panels")
    common(p)
    p.add_argument("--cohort", required=True)
    p.add_argument("--study", required=True)
    p.add_argument("--gen")
    p.add_argument("--trace", help="optimize output directory for this study")
    p.set_defaults(func=_cmd_plot)

    p = sub.add_parser("serve", help="run the planner HTTP service")
    common(p, out_required=False)
    p.add_argument("--gen")
    p.add_argument("--clf")
    p.add_argument("--cohort")
    p.add_argument("--ui", help="static UI directory to mount")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=_cmd_serve)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    missing = []
    if args.command == "eval":
        if args.phase in (1, 2) and not args.gen:
            missing.append("--gen")
        if args.phase == 3 and (not args.gen or not args.clf):
            missing.append("--gen/--clf")
    if missing:
        print(f"sofa {args.command}: missing required arguments: {', '.join(missing)}",
              file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, RuntimeError) as e:
        print(f"sofa {args.command}: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

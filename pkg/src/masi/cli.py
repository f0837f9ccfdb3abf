"""``masi`` command line: synthesis, dictionaries, datasets, training, evaluation.

Exit codes: 0 success, 1 usage or compatibility error, 2 data error,
3 numeric error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import dataset as dsm
from . import evalharness as ev
from . import model as mdl
from .cluster import ClusterConfig, Framework
from .errors import CompatibilityError, DataError, MasiError, NumericError, UsageError
from .qtc import SamplingConfig, Variant, build_dictionary
from .reports import emit_reports, format_table
from .synth import CLOSED_FORM, ScenarioSpec, generate_scenario
from .trajectories import load_static_objects, load_trajectories

log = logging.getLogger("masi")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    """Argument parser that reports problems as :class:`UsageError`."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _env_seed() -> int:
    raw = os.environ.get("MASI_SEED")
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"MASI_SEED must be an integer, got {raw!r}") from None


def _floats(text):
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _names(text):
    return tuple(x for x in text.split(",") if x)


def _model_flags(p):
    g = p.add_argument_group("model (unset values take the framework defaults: symbolic T_h=10, B=10, "
                             "120 epochs; coordinates T_h=5, B=5, 80 epochs)")
    g.add_argument("--hidden", type=int, default=256, help="LSTM hidden size h")
    g.add_argument("--embed-dim", type=int, default=64, help="slot embedding size")
    g.add_argument("--batch", type=int, default=None, help="batch size B")
    g.add_argument("--epochs", type=int, default=None, help="training epochs")
    g.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate")
    g.add_argument("--clip-norm", type=float, default=5.0, help="global gradient-norm clip (0 disables)")
    g.add_argument("--seed", type=int, default=None, help="model seed (falls back to MASI_SEED, then 0)")


def _model_overrides(args) -> dict:
    return dict(hidden=args.hidden, embed_dim=args.embed_dim, batch=args.batch, epochs=args.epochs, lr=args.lr,
                clip_norm=args.clip_norm or None, seed=args.seed)


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="masi", description=__doc__.splitlines()[0], formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic scene", formatter_class=fmt)
    p.add_argument("--out", required=True, help="trajectory CSV to write")
    p.add_argument("--objects-out", default=None, help="static-object CSV to write (when the scene has any)")
    p.add_argument("--agents", type=int, default=20, help="random-waypoint agents")
    p.add_argument("--duration", type=int, default=5000, help="frames")
    p.add_argument("--rate", type=float, default=15.0, help="frames per second")
    p.add_argument("--arena", type=_floats, default=(0.0, 0.0, 12.0, 12.0), help="x_min,y_min,x_max,y_max in meters")
    p.add_argument("--primitives", type=_names, default=(),
                   help=f"comma-separated closed-form primitives from: {', '.join(CLOSED_FORM)}")
    p.add_argument("--static", type=int, default=0, help="static objects")
    p.add_argument("--noise", type=float, default=0.0, help="observation noise std of crowd agents, meters")
    p.add_argument("--seed", type=int, default=None, help="scene seed (falls back to MASI_SEED, then 0)")

    p = sub.add_parser("build-dict", help="enumerate a QTC dictionary", formatter_class=fmt)
    p.add_argument("--variant", required=True, choices=["c1", "c2"], help="QTC variant")
    p.add_argument("--out", required=True, help="dictionary file to write")
    p.add_argument("--report", default=None, help="text file for the deviation report, if any")
    p.add_argument("--no-stability", action="store_true", help="skip the doubled-density stability check")

    p = sub.add_parser("make-dataset", help="cluster, window, label and split trajectories", formatter_class=fmt)
    p.add_argument("--trajectories", required=True, help="trajectory CSV")
    p.add_argument("--objects", default=None, help="static-object CSV")
    p.add_argument("--framework", "--variant", dest="framework", required=True, choices=["qtc4", "qtc6", "ts"],
                   help="framework the dataset feeds")
    p.add_argument("--radius", type=float, default=1.2, help="cluster radius, meters")
    p.add_argument("--t-history", type=int, default=None, help="history steps (default 10 symbolic, 5 ts)")
    p.add_argument("--horizon", type=int, default=48, help="prediction horizon T_f in steps")
    p.add_argument("--stride", type=int, default=1, help="window stride in frames")
    p.add_argument("--n-star", type=int, default=None, help="slot count (default: observed maximum)")
    p.add_argument("--dict", default=None, help="dictionary file (symbolic frameworks)")
    p.add_argument("--dict-c1", default=None, help="QTC_C1 dictionary file (ts)")
    p.add_argument("--dict-c2", default=None, help="QTC_C2 dictionary file (ts)")
    p.add_argument("--split-seed", type=int, default=None, help="tie-break seed (falls back to MASI_SEED, then 0)")
    p.add_argument("--out", required=True, help="dataset file to write")

    p = sub.add_parser("train", help="train a model on a dataset", formatter_class=fmt)
    p.add_argument("--dataset", required=True, help="dataset file")
    p.add_argument("--framework", "--variant", dest="framework", default=None, choices=["qtc4", "qtc6", "ts"],
                   help="expected framework (checked against the dataset)")
    p.add_argument("--horizon", type=int, default=None, help="expected horizon T_f (checked against the dataset)")
    p.add_argument("--out", required=True, help="checkpoint file to write")
    p.add_argument("--history", default=None, help="CSV file for the training history")
    _model_flags(p)

    p = sub.add_parser("evaluate", help="score a checkpoint on a dataset split", formatter_class=fmt)
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--dataset", required=True, help="dataset file")
    p.add_argument("--split", default="test", choices=list(dsm.SPLITS), help="split to score")
    p.add_argument("--out-dir", default=None, help="directory for report and attention CSVs")
    p.add_argument("--attention", type=int, default=0, help="samples whose attention weights are dumped")
    p.add_argument("--threads", type=int, default=1, help="evaluation threads")

    p = sub.add_parser("domain-shift", help="train on one dataset, evaluate on it and on another",
                       formatter_class=fmt)
    p.add_argument("--train-dataset", required=True, help="dataset A (trained on, test split reported)")
    p.add_argument("--eval-dataset", required=True, help="dataset B (every sample reported)")
    p.add_argument("--out-dir", default=None, help="directory for report CSVs")
    p.add_argument("--threads", type=int, default=1, help="evaluation threads")
    _model_flags(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of a small model", formatter_class=fmt)
    p.add_argument("--framework", "--variant", dest="framework", default="qtc6", choices=["qtc4", "qtc6", "ts"],
                   help="framework")
    p.add_argument("--hidden", type=int, default=8, help="hidden size")
    p.add_argument("--n-star", type=int, default=3, help="slot count")
    p.add_argument("--t-history", type=int, default=4, help="history steps")
    p.add_argument("--horizon", type=int, default=3, help="horizon steps")
    p.add_argument("--step", type=float, default=1e-4, help="central-difference step")
    p.add_argument("--tolerance", type=float, default=1e-4, help="max relative error per block")
    p.add_argument("--seed", type=int, default=None, help="seed (falls back to MASI_SEED, then 0)")
    return parser


# ---------------------------------------------------------------------------
# commands


def _seed(value):
    return _env_seed() if value is None else value


def cmd_synth(args, out):
    spec = ScenarioSpec(n_agents=args.agents, duration=args.duration, rate=args.rate, arena=tuple(args.arena),
                        seed=_seed(args.seed), primitives=tuple(args.primitives), n_static=args.static,
                        noise_std=args.noise)
    scene = generate_scenario(spec)
    scene.write_csv(args.out)
    if scene.static_objects:
        if not args.objects_out:
            raise UsageError("the scene has static objects; pass --objects-out")
        scene.write_objects_csv(args.objects_out)
    out.write(f"wrote {len(scene.agents)} tracks to {args.out}\n")


def cmd_build_dict(args, out):
    sampling = SamplingConfig()
    dictionary, report = build_dictionary(Variant.parse(args.variant), sampling, not args.no_stability)
    dsm.save_dictionary(dictionary, args.out)
    out.write(f"wrote {dictionary.size}-entry QTC_{dictionary.variant.name} dictionary to {args.out} "
              f"(digest {dictionary.digest})\n")
    if report.stable is not None:
        out.write(f"doubled-density count {report.doubled_count}, stable: {report.stable}\n")
    if report.deviation is not None:
        text = report.deviation.to_text()
        if args.report:
            try:
                with open(args.report, "w") as fh:
                    fh.write(text)
            except OSError as exc:
                raise DataError(f"cannot write {args.report}: {exc}") from exc
            out.write(f"deviation report written to {args.report}\n")
        else:
            out.write(text)


def cmd_make_dataset(args, out):
    fw = Framework.parse(args.framework)
    scene = load_trajectories(args.trajectories)
    if args.objects:
        scene = load_static_objects(args.objects, scene)
    if fw.symbolic:
        dictionary = dsm.load_dictionary(args.dict) if args.dict else None
    else:
        parts = {4: args.dict_c1, 6: args.dict_c2}
        if any(parts.values()) and not all(parts.values()):
            raise UsageError("pass both --dict-c1 and --dict-c2, or neither")
        dictionary = {m: dsm.load_dictionary(p) for m, p in parts.items()} if all(parts.values()) else None
    base = mdl.SYMBOLIC_DEFAULTS if fw.symbolic else mdl.METRIC_DEFAULTS
    cc = ClusterConfig(args.radius, args.t_history or base["t_history"], args.horizon, args.stride)
    ds = dsm.make_dataset(scene, fw, cc, _seed(args.split_seed), dictionary, args.n_star)
    dsm.save_dataset(ds, args.out)
    out.write(f"wrote {fw.value} dataset with n*={ds.n_star}, splits {ds.sizes} to {args.out}\n")


def cmd_train(args, out):
    ds = dsm.load_dataset(args.dataset)
    if args.framework and Framework.parse(args.framework) is not ds.framework:
        raise CompatibilityError(f"dataset holds {ds.framework.value} samples, not {args.framework}")
    if args.horizon is not None and args.horizon != ds.config.t_future:
        raise CompatibilityError(f"dataset horizon is {ds.config.t_future}, not {args.horizon}")
    overrides = _model_overrides(args)
    overrides["seed"] = _seed(args.seed)
    config = mdl.ModelConfig.for_dataset(ds, **overrides)
    log.info("model config: %s", json.dumps(config.to_dict(), sort_keys=True))
    result = mdl.fit(ds, config, progress=lambda e, tr, va: log.info("epoch %d train %.6f val %.6f", e, tr, va))
    dsm.save_checkpoint(result.checkpoint(config, ds.digests), args.out)
    if args.history:
        from .reports import write_history_csv
        write_history_csv({"train": result.history}, args.history)
    out.write(f"best epoch {result.best_epoch}, checkpoint written to {args.out}\n")


def cmd_evaluate(args, out):
    ckpt = dsm.load_checkpoint(args.checkpoint)
    ds = dsm.load_dataset(args.dataset)
    dsm.check_compatible(ckpt, ds)
    config, params = mdl.model_from_checkpoint(ckpt)
    reports = ev.evaluate(ds, params, config, args.split, threads=args.threads)
    if args.out_dir:
        trace = None
        if args.attention > 0:
            trace = mdl.attention_trace(ds.split(args.split)[:args.attention], params, config)
        paths = emit_reports(reports, args.out_dir, {"checkpoint": ckpt.history}, trace)
        log.info("wrote %s", ", ".join(paths.values()))
    out.write(format_table(reports))


def cmd_domain_shift(args, out):
    a = dsm.load_dataset(args.train_dataset)
    b = dsm.load_dataset(args.eval_dataset)
    overrides = _model_overrides(args)
    overrides["seed"] = _seed(args.seed)
    res = ev.domain_shift_eval(a, b, threads=args.threads, **overrides)
    rows = [ev.EvalReport(r.framework + " (10% A)", r.horizon, r.radius, r.mu, r.sigma, r.baseline_mu, r.n_samples)
            for r in res.in_domain]
    rows += [ev.EvalReport(r.framework + " (100% B)", r.horizon, r.radius, r.mu, r.sigma, r.baseline_mu,
                           r.n_samples) for r in res.shifted]
    if args.out_dir:
        emit_reports(rows, args.out_dir, {"train": res.training.history})
    out.write(format_table(rows))


def cmd_gradcheck(args, out):
    report = mdl.gradient_check_model(args.framework, hidden=args.hidden, n_star=args.n_star,
                                      t_history=args.t_history, t_future=args.horizon, seed=_seed(args.seed),
                                      step=args.step, tolerance=args.tolerance)
    for line in report.lines():
        out.write(line + "\n")
    if not report.passed:
        raise NumericError(f"gradient check failed for {', '.join(report.failed)}")
    out.write(f"all blocks below {args.tolerance:g} (max {report.max_error:.3e})\n")


COMMANDS = {"synth": cmd_synth, "build-dict": cmd_build_dict, "make-dataset": cmd_make_dataset,
            "train": cmd_train, "evaluate": cmd_evaluate, "domain-shift": cmd_domain_shift,
            "gradcheck": cmd_gradcheck}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    effective = {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(args).items()}
    effective["MASI_SEED"] = os.environ.get("MASI_SEED")
    log.info("effective config: %s", json.dumps(effective, sort_keys=True))
    try:
        COMMANDS[args.command](args, out)
    except NumericError as exc:
        sys.stderr.write(f"numeric error: {exc}\n")
        return EXIT_NUMERIC
    except UsageError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except DataError as exc:
        sys.stderr.write(f"data error: {exc}\n")
        return EXIT_DATA
    except MasiError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_DATA
    except OSError as exc:
        sys.stderr.write(f"data error: {exc}\n")
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

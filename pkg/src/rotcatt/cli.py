"""``rotcatt`` command line: phantom, train, eval, ablate, predict, plot.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ShapeError, load_config_file
from .data import DataError, generate_phantom, load_labels, load_volume, save_labels, save_volume

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("rotcatt")


def _run_config(args):
    from .train import RunConfig

    values = {}
    if getattr(args, "config", None):
        values = load_config_file(args.config, RunConfig.RUN_KEYS)
    overrides = {"seed": args.seed, "steps": getattr(args, "steps", None),
                 "dtype": getattr(args, "dtype", None), "lr": getattr(args, "lr", None)}
    run = RunConfig.from_values(values, **overrides)
    run.validate()
    return run


def cmd_phantom(args) -> int:
    S, H, W = args.dims
    pair = generate_phantom(args.seed, S, H, W, num_classes=args.classes)
    base = save_volume(pair, args.out)
    print(f"wrote {base}.vol, {base}.lbl, {base}.json")
    return EXIT_OK


def _load_pair(args, run):
    if args.data:
        return load_volume(args.data)
    m = run.model
    return generate_phantom(run.seed, 16, m.input_height, m.input_width, m.num_classes)


def cmd_train(args) -> int:
    from .train import Trainer, trainer_from_checkpoint

    run = _run_config(args)
    out = Path(args.out)
    run.out_dir = str(out)
    pair = _load_pair(args, run)
    if args.resume:
        trainer = trainer_from_checkpoint(args.resume, pair, steps=run.steps)
    else:
        trainer = Trainer(run, pair)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_config.json").write_text(json.dumps(trainer.run.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"parameters: {trainer.model.num_parameters()}")
    trainer.fit(until=run.steps, log_path=out / "loss.csv", checkpoint_dir=out / "checkpoints")
    if trainer.history:
        step, dice, iou, comb = trainer.history[-1]
        print(f"step {step}: dice_loss={dice:.4f} iou_loss={iou:.4f} combined={comb:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .train import evaluate, model_from_checkpoint

    model = model_from_checkpoint(args.checkpoint)
    pair = load_volume(args.data)
    report = evaluate(model, pair)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "report.csv").write_text(report.to_csv())
    for flag in report.flags:
        print(f"warning: {flag}", file=sys.stderr)
    m = report.macro
    hd = "n/a" if m["hd"] is None else f"{m['hd']:.3f}"
    print(f"foreground DSC={m['dsc']:.4f} IoU={m['iou']:.4f} HD={hd}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .train import ablate, ablation_table

    run = _run_config(args)
    pair = _load_pair(args, run)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = ablate(run, pair, out_dir=out, focus_class=args.focus_class)
    (out / "ablation.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    table = ablation_table(result)
    (out / "ablation.csv").write_text(table)
    print(table, end="")
    return EXIT_OK


def cmd_predict(args) -> int:
    from .train import model_from_checkpoint, predict_volume

    model = model_from_checkpoint(args.checkpoint)
    pair = load_volume(args.data)
    pred = predict_volume(model, pair).argmax(axis=1).astype(np.uint8)
    base = save_labels(pred, args.out, pair.spacing, model.config.num_classes)
    print(f"wrote {base}.lbl, {base}.json")
    return EXIT_OK


def cmd_plot(args) -> int:
    from . import plots

    if args.kind == "loss":
        if not args.log:
            raise ConfigError("plot loss needs --log")
        plots.plot_loss_curve(args.log, args.out)
    elif args.kind == "scores":
        if not args.reports:
            raise ConfigError("plot scores needs --reports")
        reports = [json.loads(Path(p).read_text()) for p in args.reports]
        plots.plot_scores(reports, args.out, [Path(p).parent.name or p for p in args.reports])
    else:
        if not (args.data and args.pred):
            raise ConfigError("plot overlay needs --data and --pred")
        pair = load_volume(args.data)
        pred = load_labels(args.pred)
        if pred.shape != pair.shape:
            raise DataError(f"prediction shape {pred.shape} != volume shape {pair.shape}")
        try:
            plots.plot_overlay(pair.intensities, pair.labels, pred, args.out, args.slice)
        except IndexError as exc:
            raise ConfigError(str(exc)) from exc
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rotcatt", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", help="key = value config file")
        if seed:
            sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", required=True)

    sp = sub.add_parser("phantom", help="write a synthetic volume triple")
    common(sp, seed=False)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--dims", type=int, nargs=3, default=(16, 64, 64), metavar=("S", "H", "W"))
    sp.add_argument("--classes", type=int, default=4)
    sp.set_defaults(func=cmd_phantom)

    sp = sub.add_parser("train", help="train on one volume")
    common(sp)
    sp.add_argument("--data", help="volume base path (default: phantom from --seed)")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--dtype", choices=("float32", "float64"))
    sp.add_argument("--resume", help="checkpoint to continue from")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="score a checkpoint on a volume")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="train with and without rotatory attention")
    common(sp)
    sp.add_argument("--data")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--dtype", choices=("float32", "float64"))
    sp.add_argument("--focus-class", type=int, default=2, help="class reported separately (phantom tube = 2)")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("predict", help="write predicted labels")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("plot", help="emit PNG figures")
    common(sp)
    sp.add_argument("kind", choices=("loss", "scores", "overlay"))
    sp.add_argument("--log", help="loss CSV")
    sp.add_argument("--reports", nargs="+", help="report JSON files")
    sp.add_argument("--data", help="volume base path")
    sp.add_argument("--pred", help="predicted label base path")
    sp.add_argument("--slice", type=int, default=None)
    sp.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    from .train import NumericError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ShapeError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

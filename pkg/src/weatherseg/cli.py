"""Command-line entry point: gen, preview, augment, train, eval, cv, report.

Exit codes: 0 success, 1 usage error, 2 data/config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from PIL import Image

from . import augment as aug
from .config import ExperimentConfig, load_config
from .corpus import TEST_SETS, DataError, ensure_dir
from .evalstats import build_report, eval_rows, evaluate, read_report, render_table, run_cv_experiment, write_report
from .evalstats.experiment import REGIME_SOURCES, load_datasets
from .scenegen import DATASET_KINDS, SceneSpec, generate_dataset, preset_weather, render_scene
from .segnet import ConfigError, NumericalError, load_weights, save_weights, train, write_history
from .segnet.checkpoint import CheckpointError

log = logging.getLogger("weatherseg")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
MODEL_NAMES = {"clear": "M1", "augmented": "M2", "weather": "M3"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n\n{self.format_usage()}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat 'key = value' config file")
    common.add_argument("--seed", type=int, help="global 64-bit seed (default 42)")
    common.add_argument("--out", help="output directory (default runs)")
    common.add_argument("--scale", type=float, help="dataset size multiplier (default 0.2; 1.0 = 150 training and 50 test images per town)")
    common.add_argument("--jobs", type=int, help="worker processes; outputs do not depend on it")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="weatherseg", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.add_parser("gen", parents=[common], help="generate D1, D2 and the 7 test sets")
    pv = sub.add_parser("preview", parents=[common], help="augmentation contact sheet (preview.png)")
    pv.add_argument("--size", type=int, default=224, help="tile size in pixels")
    pa = sub.add_parser("augment", parents=[common], help="write an augmented copy of a dataset")
    pa.add_argument("--dataset", default="D1", choices=DATASET_KINDS)
    pt = sub.add_parser("train", parents=[common], help="train M1/M2/M3")
    pt.add_argument("--regime", required=True, choices=tuple(MODEL_NAMES))
    pe = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on the test sets")
    pe.add_argument("--model", required=True, help="weights checkpoint (.wlab)")
    pe.add_argument("--datasets", nargs="+", default=list(TEST_SETS), choices=DATASET_KINDS)
    sub.add_parser("cv", parents=[common], help="cross-validated 3-regime experiment -> report.csv")
    pr = sub.add_parser("report", parents=[common], help="render report.csv as a text table")
    pr.add_argument("path", nargs="?", help="report.csv (default <out>/report.csv)")
    return p


def _config_from_args(args) -> ExperimentConfig:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    for flag, key in (("seed", "seed"), ("out", "output_dir"), ("scale", "scale"), ("jobs", "jobs")):
        v = getattr(args, flag)
        if v is not None:
            overrides[key] = str(v)
    return load_config(args.config, overrides)


def _echo_config(cfg: ExperimentConfig, out: Path, command: str) -> None:
    (out / "config.effective.txt").write_text(f"# weatherseg {command}\n" + cfg.to_text(), encoding="utf-8")


def cmd_gen(cfg: ExperimentConfig, args) -> int:
    out = ensure_dir(cfg.output_dir)
    _echo_config(cfg, out, "gen")
    for kind in DATASET_KINDS:
        m = generate_dataset(kind, out, cfg.seed, scale=cfg.scale, size=cfg.image_size,
                             num_classes=cfg.num_classes, jobs=cfg.jobs)
        print(f"{kind}: {len(m)} samples -> {out / kind / 'manifest.jsonl'}")
    return EXIT_OK


def cmd_preview(cfg: ExperimentConfig, args) -> int:
    if args.size < 32:
        raise ConfigError("--size must be >= 32")
    out = ensure_dir(cfg.output_dir)
    img, _ = render_scene(SceneSpec(1, cfg.seed), preset_weather("ClearNoon"), args.size, args.size)
    sheet = aug.contact_sheet(img, cfg.seed, cfg.augment)
    Image.fromarray(sheet).save(out / "preview.png")
    print(f"wrote {out / 'preview.png'}")
    return EXIT_OK


def cmd_augment(cfg: ExperimentConfig, args) -> int:
    out = Path(cfg.output_dir)
    (manifest,) = load_datasets(out, (args.dataset,)).values()
    dst = out / f"{args.dataset}_aug"
    aug.augment_manifest(manifest, dst, cfg.seed, cfg.augment, jobs=cfg.jobs)
    print(f"wrote {len(manifest)} augmented images -> {dst}")
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig, args) -> int:
    out = Path(cfg.output_dir)
    src, augmented = REGIME_SOURCES[args.regime]
    (manifest,) = load_datasets(out, (src,)).values()
    models = ensure_dir(out / "models")
    _echo_config(cfg, models, f"train --regime {args.regime}")
    result = train(manifest, cfg.train_config(), cfg.unet_config(), cfg.augment if augmented else None, cfg.seed)
    ckpt = models / f"{args.regime}.wlab"
    save_weights(result.weights, cfg.unet_config(), ckpt)
    write_history(result.history, models / f"{args.regime}_history.csv")
    last = result.history[-1]
    print(f"{MODEL_NAMES[args.regime]} ({args.regime}): train_loss {last['train_loss']:.4f} "
          f"val_loss {last['val_loss']:.4f} -> {ckpt}")
    return EXIT_OK


def cmd_eval(cfg: ExperimentConfig, args) -> int:
    try:
        weights, ucfg = load_weights(args.model)
    except OSError as e:
        raise DataError(f"cannot read checkpoint {args.model}: {e}") from e
    data = load_datasets(cfg.output_dir, args.datasets)
    name = Path(args.model).stem
    lines = ["model,dataset,loss,accuracy"]
    for ds in args.datasets:
        r = evaluate(weights, data[ds], ucfg, cfg.ignore_class)
        lines.append(f"{name},{r.dataset_name},{r.mean_loss!r},{r.pixel_accuracy!r}")
    text = "\n".join(lines) + "\n"
    (Path(cfg.output_dir) / f"eval_{name}.csv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_cv(cfg: ExperimentConfig, args) -> int:
    out = Path(cfg.output_dir)
    load_datasets(out, ("D1", "D2") + TEST_SETS)
    _echo_config(cfg, out, "cv")
    results = run_cv_experiment(out, cfg.folds, cfg.seed, cfg.train_config(cv=True), cfg.unet_config(),
                                cfg.augment, jobs=cfg.jobs)
    report = build_report(results, welch=cfg.welch)
    write_report(report, out / "report.csv")
    with open(out / "eval.csv", "w", encoding="utf-8") as f:
        f.write("model,dataset,loss,accuracy\n")
        for model, ds, loss, acc in eval_rows(results):
            f.write(f"{model},{ds},{loss!r},{acc!r}\n")
    hist = ensure_dir(out / "cv_history")
    for regime, fr in results.items():
        for i, h in enumerate(fr.histories):
            write_history(h, hist / f"{regime}_fold{i}.csv")
    table = render_table(report)
    (out / "report.txt").write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    w_mean, c_mean = report.values["weather_mean"]["NR"], report.values["clear_mean"]["NR"]
    p_nr = report.values["p_aug_lt_clear"]["NR"]
    print(f"NR: weather mean {w_mean:.4f} vs clear mean {c_mean:.4f} "
          f"({'weather lower' if w_mean < c_mean else 'weather NOT lower'}); "
          f"p(augmented < clear) = {p_nr:.5g}")
    return EXIT_OK


def cmd_report(cfg: ExperimentConfig, args) -> int:
    path = Path(args.path) if args.path else Path(cfg.output_dir) / "report.csv"
    sys.stdout.write(render_table(read_report(path)))
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "preview": cmd_preview,
    "augment": cmd_augment,
    "train": cmd_train,
    "eval": cmd_eval,
    "cv": cmd_cv,
    "report": cmd_report,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = _config_from_args(args)
        return COMMANDS[args.command](cfg, args)
    except UsageError as e:
        sys.stderr.write(f"{e}\n")
        return EXIT_USAGE
    except (DataError, ConfigError, CheckpointError, FileNotFoundError) as e:
        sys.stderr.write(f"error: {e}\n")
        return EXIT_DATA
    except NumericalError as e:
        sys.stderr.write(f"numerical failure: {e}\n")
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

"""Command-line front end: synth, segment, train, classify, experiment.

One executable with subcommands; every knob is a flag whose default is the
method's published constant, so running with no flags gives the faithful
configuration.  A `--config` file of `key = value` lines (dotted keys,
`#` comments) slots between the defaults and the flags: defaults < config
< flags.  Machine-parseable results go to stdout, diagnostics to stderr.

Exit codes: 0 full success, 1 runtime failures, 2 usage or format errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .ebp import (
    MlpShape,
    TrainConfig,
    apply_scaling,
    attach_scaling,
    decode,
    default_hidden,
    encode_target,
    fit_scaling,
    forward,
    init,
    load_model,
    save_model,
    train,
)
from .harness import (
    DEFAULT_CLASS_COUNTS,
    DEFAULT_DIMS,
    DatasetError,
    GridConfig,
    PipelineConfig,
    PipelineStageError,
    emit_report,
    load_dataset,
    pipeline_features,
    run_experiment,
    split,
)
from .image_io import GrayImage, read_pgm_file, write_pgm_file
from .iris_boundary import EdgeConfig, bounds_csv_line, iris_bounds, mark_bounds
from .segmentation import (
    filter_small_regions,
    geometry_csv_line,
    label_components_8,
    pupil_geometry,
    threshold_dark,
)
from .synth import MANIFEST_NAME, generate_dataset

SEGMENT_HEADER = "path,x_cp,y_cp,r_x,r_y,area,left_x,right_x,left_fallback,right_fallback"
CLASSIFY_HEADER = "path,class,confidence"


class ConfigError(Exception):
    """Raised for unusable config files or incompatible settings."""


def _parse_int_list(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(p) for p in text.replace(" ", "").split(",") if p)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated int list: {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _config_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.replace(" ", "").split(",") if p)


def _config_optional_int(text: str):
    return None if text.lower() == "none" else int(text)


# Every design-decision knob, addressable by dotted name in a config file.
CONFIG_KEYS = {
    "segmentation.threshold": int,
    "segmentation.min_area": int,
    "boundary.window": int,
    "boundary.jump": int,
    "boundary.annulus_width": _config_optional_int,
    "train.lr0": float,
    "train.lr_inc": float,
    "train.lr_dec": float,
    "train.max_perf_inc": float,
    "train.max_epochs": int,
    "train.mse_goal": float,
    "train.min_grad": float,
    "train.seed": int,
    "train.dim": int,
    "synth.samples": int,
    "synth.seed": int,
    "experiment.class_counts": _config_int_list,
    "experiment.dims": _config_int_list,
    "experiment.epoch_cap": _config_optional_int,
    "experiment.n_train": int,
    "experiment.base_seed": int,
}


def parse_config_text(text: str) -> dict:
    """`key = value` per line; `#` starts a comment; unknown keys rejected."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        try:
            values[key] = CONFIG_KEYS[key](value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    return values


def load_config(args) -> dict:
    path = getattr(args, "config", None)
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text(encoding="utf-8"))


def _resolve(args, cfg: dict, attr: str, dotted: str, default):
    flag = getattr(args, attr, None)
    if flag is not None:
        return flag
    if dotted in cfg:
        return cfg[dotted]
    return default


def _pipeline_config(args, cfg: dict) -> PipelineConfig:
    return PipelineConfig(
        threshold=_resolve(args, cfg, "threshold", "segmentation.threshold", 70),
        min_pupil_area=_resolve(args, cfg, "min_area", "segmentation.min_area", 2500),
        edge=EdgeConfig(
            window=_resolve(args, cfg, "window", "boundary.window", 5),
            jump=_resolve(args, cfg, "jump", "boundary.jump", 25),
            default_annulus_width=_resolve(
                args, cfg, "annulus_width", "boundary.annulus_width", None
            ),
        ),
    )


def _train_config(args, cfg: dict, seed: int) -> TrainConfig:
    return TrainConfig(
        lr0=_resolve(args, cfg, "lr", "train.lr0", 0.2),
        lr_inc=_resolve(args, cfg, "lr_inc", "train.lr_inc", 1.05),
        lr_dec=_resolve(args, cfg, "lr_dec", "train.lr_dec", 0.7),
        max_perf_inc=_resolve(args, cfg, "max_perf_inc", "train.max_perf_inc", 1.04),
        max_epochs=_resolve(args, cfg, "epochs", "train.max_epochs", 50000),
        mse_goal=_resolve(args, cfg, "mse_goal", "train.mse_goal", 5e-7),
        min_grad=_resolve(args, cfg, "min_grad", "train.min_grad", 1e-9),
        seed=seed,
    )


def cmd_synth(args) -> int:
    cfg = load_config(args)
    out = Path(args.out)
    files = generate_dataset(
        args.classes,
        samples_per_class=_resolve(args, cfg, "samples", "synth.samples", 7),
        base_seed=_resolve(args, cfg, "seed", "synth.seed", 0),
        out_dir=out,
    )
    if args.ascii_pgm:
        for f in files:
            write_pgm_file(f, read_pgm_file(f), ascii=True)
    print(f"{len(files)} {out / MANIFEST_NAME}")
    return 0


def _mask_to_gray(bits: np.ndarray) -> GrayImage:
    return GrayImage(pixels=np.where(bits == 1, 0, 255).astype(np.uint8))


def _dump_stages(args, path: Path, pcfg: PipelineConfig) -> None:
    img = read_pgm_file(path)
    mask = threshold_dark(img, pcfg.threshold)
    regions = label_components_8(mask)
    filtered = filter_small_regions(regions, mask, pcfg.min_pupil_area)
    pupil = pupil_geometry(mask, pcfg.min_pupil_area)
    bounds = iris_bounds(img, pupil, pcfg.edge)
    out_dir = Path(args.out) if args.out else path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    stages = (
        ("threshold", _mask_to_gray(mask.bits)),
        ("filtered", _mask_to_gray(filtered.bits)),
        ("bounds", mark_bounds(img, pupil, bounds)),
    )
    for name, stage_img in stages:
        write_pgm_file(
            out_dir / f"{path.stem}_{name}.pgm", stage_img, ascii=args.ascii_pgm
        )


def cmd_segment(args) -> int:
    cfg = load_config(args)
    pcfg = _pipeline_config(args, cfg)
    print(SEGMENT_HEADER)
    failures = 0
    for name in args.images:
        path = Path(name)
        try:
            img = read_pgm_file(path)
            mask = threshold_dark(img, pcfg.threshold)
            pupil = pupil_geometry(mask, pcfg.min_pupil_area)
            bounds = iris_bounds(img, pupil, pcfg.edge)
            if args.dump_stages:
                _dump_stages(args, path, pcfg)
        except Exception as exc:
            print(f"{path}: {exc}", file=sys.stderr)
            failures += 1
            continue
        print(f"{geometry_csv_line(str(path), pupil)},{bounds_csv_line(bounds)}")
    return 1 if failures else 0


def _labels_path(model_path: Path) -> Path:
    return model_path.with_name(model_path.name + ".labels")


def cmd_train(args) -> int:
    cfg = load_config(args)
    pcfg = _pipeline_config(args, cfg)
    seed = _resolve(args, cfg, "seed", "train.seed", 0)
    tcfg = _train_config(args, cfg, seed)
    k = _resolve(args, cfg, "dim", "train.dim", 20)

    try:
        ds = load_dataset(args.data)
    except DatasetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    train_set, _ = split(ds, args.n_train)

    n_classes = len(ds.classes)
    rows = []
    targets = []
    for i, cls in enumerate(ds.classes):
        for p in train_set[cls]:
            rows.append(pipeline_features(p, pcfg, k).values)
            targets.append(encode_target(i, n_classes))

    scaling = fit_scaling(np.array(rows))
    net = attach_scaling(init(MlpShape(k, default_hidden(k), n_classes), seed), scaling)
    batch = [(apply_scaling(scaling, x), t) for x, t in zip(rows, targets)]
    trained, report = train(net, batch, tcfg)

    out = Path(args.out) if args.out else Path("model.txt")
    save_model(out, trained)
    _labels_path(out).write_text("".join(f"{c}\n" for c in ds.classes), encoding="utf-8")
    print(f"{out},{report.epochs_run},{report.final_mse:.6g},{report.stop_reason}")
    return 0


def cmd_classify(args) -> int:
    cfg = load_config(args)
    pcfg = _pipeline_config(args, cfg)
    try:
        net = load_model(args.model)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    k = args.dim if args.dim is not None else net.shape.n_in

    labels_file = _labels_path(Path(args.model))
    labels = None
    if labels_file.is_file():
        labels = [
            ln for ln in labels_file.read_text(encoding="utf-8").splitlines() if ln
        ]

    print(CLASSIFY_HEADER)
    failures = 0
    for name in args.images:
        path = Path(name)
        try:
            fv = pipeline_features(path, pcfg, k)
        except (PipelineStageError, ValueError) as exc:
            print(f"{path}: {exc}", file=sys.stderr)
            failures += 1
            continue
        try:
            y = forward(net, apply_scaling(net.feature_scaling, fv.values))
        except ValueError as exc:
            print(
                f"error: feature dimension {k} does not fit the model: {exc}",
                file=sys.stderr,
            )
            return 2
        index = decode(y)
        label = labels[index] if labels and index < len(labels) else str(index)
        print(f"{path},{label},{float(y[index]):.4f}")
    return 1 if failures else 0


def cmd_experiment(args) -> int:
    cfg = load_config(args)
    pcfg = _pipeline_config(args, cfg)
    base_seed = _resolve(args, cfg, "seed", "experiment.base_seed", 0)
    tcfg = _train_config(args, cfg, seed=0)
    grid = GridConfig(
        class_counts=_resolve(
            args, cfg, "classes", "experiment.class_counts", DEFAULT_CLASS_COUNTS
        ),
        dims=_resolve(args, cfg, "dims", "experiment.dims", DEFAULT_DIMS),
        n_train=_resolve(args, cfg, "n_train", "experiment.n_train", 5),
        base_seed=base_seed,
        epoch_cap=_resolve(args, cfg, "epochs", "experiment.epoch_cap", 8000),
    )

    try:
        ds = load_dataset(args.data)
    except DatasetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    result = run_experiment(ds, grid, tcfg, pcfg)
    report = emit_report(result)
    if args.out:
        Path(args.out).write_text(report, encoding="ascii")
    sys.stdout.write(report)

    for cell in result.cells:
        if cell.error is not None:
            print(
                f"cell ({cell.classes}, {cell.dim}) failed: {cell.error}",
                file=sys.stderr,
            )
    if not result.cells:
        print("error: no grid cells matched the dataset", file=sys.stderr)
        return 1
    if all(cell.error is not None for cell in result.cells):
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="irisvd",
        description="Iris recognition via singular-value features and a "
        "backprop classifier.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config",
        default=None,
        help="config file of 'key = value' lines with dotted keys",
    )

    pipe = argparse.ArgumentParser(add_help=False)
    pipe.add_argument("--threshold", type=int, default=None,
                      help="dark threshold (default 70)")
    pipe.add_argument("--min-area", dest="min_area", type=int, default=None,
                      help="minimum pupil area in pixels (default 2500)")
    pipe.add_argument("--window", type=int, default=None,
                      help="edge confirmation window (default 5)")
    pipe.add_argument("--jump", type=int, default=None,
                      help="edge intensity jump (default 25)")
    pipe.add_argument("--annulus-width", dest="annulus_width", type=int,
                      default=None,
                      help="fallback iris annulus width in pixels "
                      "(default: twice the larger pupil radius)")

    tr = argparse.ArgumentParser(add_help=False)
    tr.add_argument("--lr", type=float, default=None,
                    help="initial learning rate (default 0.2)")
    tr.add_argument("--lr-inc", dest="lr_inc", type=float, default=None,
                    help="rate increment on improvement (default 1.05)")
    tr.add_argument("--lr-dec", dest="lr_dec", type=float, default=None,
                    help="rate decrement on rejection (default 0.7)")
    tr.add_argument("--max-perf-inc", dest="max_perf_inc", type=float,
                    default=None,
                    help="worst accepted error ratio (default 1.04)")
    tr.add_argument("--mse-goal", dest="mse_goal", type=float, default=None,
                    help="error goal (default 5e-7)")
    tr.add_argument("--min-grad", dest="min_grad", type=float, default=None,
                    help="gradient floor (default 1e-9)")

    p = sub.add_parser("synth", parents=[common],
                       help="generate a synthetic eye dataset")
    p.add_argument("--classes", type=_positive_int, required=True,
                   help="number of classes")
    p.add_argument("--samples", type=_positive_int, default=None,
                   help="samples per class (default 7)")
    p.add_argument("--seed", type=int, default=None, help="base seed (default 0)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--ascii-pgm", dest="ascii_pgm", action="store_true",
                   help="write ASCII (P2) instead of binary PGMs")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("segment", parents=[common, pipe],
                       help="segment pupils and iris bounds, one CSV row per image")
    p.add_argument("images", nargs="+", help="input PGM files")
    p.add_argument("--dump-stages", dest="dump_stages", action="store_true",
                   help="write thresholded, filtered, and annotated PGMs")
    p.add_argument("--out", default=None,
                   help="directory for stage dumps (default: beside each input)")
    p.add_argument("--ascii-pgm", dest="ascii_pgm", action="store_true",
                   help="write stage dumps as ASCII (P2)")
    p.set_defaults(fn=cmd_segment)

    p = sub.add_parser("train", parents=[common, pipe, tr],
                       help="train a classifier on a dataset directory")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--dim", type=int, default=None,
                   help="feature dimension k (default 20)")
    p.add_argument("--epochs", type=int, default=None,
                   help="epoch cap (default 50000)")
    p.add_argument("--seed", type=int, default=None,
                   help="weight init seed (default 0)")
    p.add_argument("--n-train", dest="n_train", type=int, default=5,
                   help="training samples per class (default 5)")
    p.add_argument("--out", default=None,
                   help="model file path (default model.txt)")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("classify", parents=[common, pipe],
                       help="classify eye images with a trained model")
    p.add_argument("--model", required=True, help="model file from train")
    p.add_argument("--dim", type=int, default=None,
                   help="feature dimension (default: the model's input size)")
    p.add_argument("images", nargs="+", help="input PGM files")
    p.set_defaults(fn=cmd_classify)

    p = sub.add_parser("experiment", parents=[common, pipe, tr],
                       help="run the classes-by-dimension grid and emit CSV")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--classes", type=_parse_int_list, default=None,
                   help="comma-separated class counts "
                   "(default 3,4,5,6,7,8,9,10,20,40,50)")
    p.add_argument("--dims", type=_parse_int_list, default=None,
                   help="comma-separated dimensions (default 3,10,20,40)")
    p.add_argument("--epochs", type=int, default=None,
                   help="per-cell epoch cap (default 8000)")
    p.add_argument("--seed", type=int, default=None,
                   help="base seed for per-cell seeding (default 0)")
    p.add_argument("--n-train", dest="n_train", type=int, default=None,
                   help="training samples per class (default 5)")
    p.add_argument("--out", default=None, help="also write the CSV here")
    p.set_defaults(fn=cmd_experiment)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

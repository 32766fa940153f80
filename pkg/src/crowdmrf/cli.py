"""Command-line entry point: ``crowdmrf <subcommand> ...``."""

import argparse
import logging
import os
import sys

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .evaluation import EvalReport, group_report
from .exceptions import CrowdMRFError, FormatError
from .features import extract_features
from .ingest import atomic_write, load_image, save_features
from .mrf import MrfParams, MrfProblem, smooth
from .pipeline import StageError, load_dataset, load_sample, run_cross_validation
from .regressor import MLPCountRegressor, load_model, save_model
from .synth import synthesize
from .tiling import build_grid

log = logging.getLogger("crowdmrf")


def _common(parser):
    g = parser.add_argument_group("configuration")
    g.add_argument("--config", help="key=value config file; flags override it")
    g.add_argument("--patch-size", type=int)
    g.add_argument("--stride", type=int)
    g.add_argument("--labels", type=int, dest="n_labels")
    g.add_argument("--lambda", type=float, dest="lambda_")
    g.add_argument("--data-k", type=float)
    g.add_argument("--disc-k", type=float)
    g.add_argument("--iters", type=int, dest="iterations")
    g.add_argument("--damping", type=float)
    g.add_argument("--epochs", type=int)
    g.add_argument("--learning-rate", type=float)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--folds", type=int)
    g.add_argument("--groups", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--features", help="'lbp' or 'cfeat:<dir>'")
    parser.add_argument("--out", default="out", help="output directory or file")


_CONFIG_KEYS = ("patch_size", "stride", "n_labels", "lambda_", "data_k", "disc_k",
                "iterations", "damping", "epochs", "learning_rate", "batch_size",
                "folds", "groups", "seed", "features")


def resolve_config(args):
    config = load_config(args.config) if args.config else RunConfig()
    return config.with_overrides(**{k: getattr(args, k) for k in _CONFIG_KEYS})


def _ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def cmd_tile(args):
    config = resolve_config(args)
    img = load_image(args.image)
    grid = build_grid(img.dims, config.patch_size, config.stride)
    stem = os.path.splitext(os.path.basename(args.image))[0]
    path = os.path.join(_ensure_dir(args.out), stem + ".grid")
    atomic_write(path, (grid.to_record() + "\n").encode())
    print(f"{grid.rows} x {grid.cols}, {grid.n_patches} patches")


def cmd_synth(args):
    ids = synthesize(args.out, args.n, (args.min_count, args.max_count),
                     (args.width, args.height), args.seed)
    print(f"wrote {len(ids)} images to {args.out}")


def cmd_extract(args):
    config = resolve_config(args)
    img = load_image(args.image)
    grid = build_grid(img.dims, config.patch_size, config.stride)
    X = extract_features(img, grid)
    out = args.out
    if os.path.isdir(out) or not out.endswith(".cfeat"):
        stem = os.path.splitext(os.path.basename(args.image))[0]
        out = os.path.join(_ensure_dir(out), stem + ".cfeat")
    save_features(X, grid, out)
    print(f"{X.shape[0]} x {X.shape[1]} features -> {out}")


def cmd_train(args):
    config = resolve_config(args)
    samples = load_dataset(args.dataset, config.patch_size, config.stride, config.features)
    X = np.vstack([s.features for s in samples])
    t = np.concatenate([s.patch_counts for s in samples])
    model = MLPCountRegressor(hidden_layer_sizes=config.hidden,
                              learning_rate=config.learning_rate,
                              batch_size=config.batch_size, epochs=config.epochs,
                              patience=config.patience, random_state=config.seed).fit(X, t)
    save_model(model, args.model)
    if args.log:
        atomic_write(args.log, model.train_report_.to_csv().encode())
    print(f"trained on {X.shape[0]} patches, final loss {model.train_report_.final_loss:.4f}")


def cmd_predict(args):
    config = resolve_config(args)
    model = load_model(args.model)
    sample = load_sample(args.image, config.patch_size, config.stride, config.features,
                         annotations=False)
    counts = model.predict(sample.features)
    lines = ["row,col,count"]
    for p, c in enumerate(counts.tolist()):
        r, col = divmod(p, sample.grid.cols)
        lines.append(f"{r},{col},{c!r}")
    atomic_write(args.out, ("\n".join(lines) + "\n").encode())
    print(f"{sample.grid.n_patches} patch counts -> {args.out}")


def _read_counts(path):
    cells = {}
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header[:3] != ["row", "col", "count"]:
            raise FormatError(f"expected header 'row,col,count', got {header}", line=1)
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                r, c, v = line.strip().split(",")[:3]
                cells[int(r), int(c)] = float(v)
            except ValueError:
                raise FormatError(f"bad counts row {line.strip()!r}", line=lineno) from None
    rows = 1 + max(r for r, _ in cells)
    cols = 1 + max(c for _, c in cells)
    if len(cells) != rows * cols:
        raise FormatError(f"{len(cells)} cells do not fill a {rows}x{cols} grid")
    return np.array([[cells[r, c] for c in range(cols)] for r in range(rows)])


def cmd_smooth(args):
    config = resolve_config(args)
    field = _read_counts(args.counts)
    params = MrfParams(config.lambda_, config.data_k, config.disc_k,
                       config.iterations, config.damping)
    result = smooth(MrfProblem.build(field.shape, field, params=params,
                                     n_labels=config.n_labels))
    lines = ["row,col,count_before,count_after"]
    for p, (a, b) in enumerate(zip(field.ravel().tolist(), result.counts.tolist())):
        r, c = divmod(p, field.shape[1])
        lines.append(f"{r},{c},{a!r},{b!r}")
    atomic_write(args.out, ("\n".join(lines) + "\n").encode())
    print(f"energy {result.energy:.6g} -> {args.out}")


def cmd_evaluate(args):
    ids, g, e = [], [], []
    with open(args.per_image) as fh:
        if fh.readline().strip() != "id,g,e":
            raise FormatError("expected header 'id,g,e'", line=1)
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                i, a, b = line.strip().split(",")
                ids.append(i)
                g.append(float(a))
                e.append(float(b))
            except ValueError:
                raise FormatError(f"bad row {line.strip()!r}", line=lineno) from None
    report = EvalReport.from_pairs(ids, g, e)
    groups = group_report(report.g, report.e, min(args.groups, report.n), ids=ids)
    out = _ensure_dir(args.out)
    atomic_write(os.path.join(out, "summary.csv"), report.summary_csv().encode())
    atomic_write(os.path.join(out, "groups.csv"), groups.to_csv().encode())
    print(f"N={report.n} MAE={report.mae:.4f} MSE={report.mse:.4f}")


def cmd_run(args):
    config = resolve_config(args)
    samples = load_dataset(args.dataset, config.patch_size, config.stride, config.features)
    result = run_cross_validation(samples, config, _ensure_dir(args.out), dataset=args.dataset)
    print(f"N={result.report.n} MAE={result.report.mae:.4f} MSE={result.report.mse:.4f} "
          f"(unsmoothed MAE={result.unsmoothed.mae:.4f})")


def build_parser():
    parser = argparse.ArgumentParser(prog="crowdmrf", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tile", help="describe the patch grid of an image")
    p.add_argument("image")
    _common(p)
    p.set_defaults(func=cmd_tile)

    p = sub.add_parser("synth", help="generate a synthetic crowd dataset")
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--min-count", type=int, default=10)
    p.add_argument("--max-count", type=int, default=200)
    p.add_argument("--width", type=int, default=300)
    p.add_argument("--height", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="synth")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="write built-in LBP features as CFEAT")
    p.add_argument("image")
    _common(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train the patch regressor on a dataset")
    p.add_argument("dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--log", help="write the epoch,loss training log here")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="per-patch counts for one image")
    p.add_argument("image")
    p.add_argument("--model", required=True)
    _common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("smooth", help="MRF-smooth a row,col,count CSV")
    p.add_argument("counts")
    _common(p)
    p.set_defaults(func=cmd_smooth)

    p = sub.add_parser("evaluate", help="MAE/MSE and groups from an id,g,e CSV")
    p.add_argument("per_image")
    p.add_argument("--groups", type=int, default=10)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run", help="k-fold cross-validated end-to-end run")
    p.add_argument("dataset")
    _common(p)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except StageError as exc:
        print(f"crowdmrf: error: {exc}", file=sys.stderr)
        return 1
    except (CrowdMRFError, ValueError, OSError) as exc:
        print(f"crowdmrf: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

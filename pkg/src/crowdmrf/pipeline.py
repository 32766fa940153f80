"""Divide-count-sum pipeline and the k-fold evaluation run."""

import logging
import os
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .aggregate import density_raster, image_count, raster_to_pgm, save_raster, select_tiles
from .evaluation import EvalReport, group_report, make_folds, mae
from .features import extract_features
from .ingest import atomic_write, load_annotations, load_features, load_image, patch_ground_truth
from .mrf import MrfParams, MrfProblem, smooth
from .regressor import MLPCountRegressor
from .tiling import build_grid

__all__ = [
    "Sample", "PatchEstimate", "load_sample", "load_dataset", "CrowdCounter",
    "StageError", "RunResult", "run_cross_validation",
]

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    """A pipeline stage failed for a specific image."""

    def __init__(self, stage, image_id, cause):
        self.stage = stage
        self.image_id = image_id
        super().__init__(f"{stage} failed for image {image_id}: {cause}")


@dataclass
class Sample:
    image_id: str
    grid: object
    features: np.ndarray
    points: np.ndarray = None

    @property
    def patch_counts(self):
        return patch_ground_truth(self.points, self.grid)

    @property
    def count(self):
        return float(len(self.points))


@dataclass
class PatchEstimate:
    grid: object
    raw: np.ndarray
    smoothed: np.ndarray

    def field(self, which="smoothed"):
        return getattr(self, which).reshape(self.grid.rows, self.grid.cols)


def load_sample(image_path, patch_size=100, stride=50, features="lbp", annotations=True):
    image_id = os.path.splitext(os.path.basename(image_path))[0]
    stage = "ingest"
    try:
        img = load_image(image_path)
        grid = build_grid(img.dims, patch_size, stride)
        points = None
        if annotations:
            csv_path = os.path.splitext(image_path)[0] + ".csv"
            points = load_annotations(csv_path, dims=img.dims, image_id=image_id).points
        stage = "features"
        if features == "lbp":
            X = extract_features(img, grid)
        else:
            X = load_features(os.path.join(features.split(":", 1)[1], image_id + ".cfeat"), grid)
    except Exception as exc:
        raise StageError(stage, image_id, exc) from exc
    return Sample(image_id, grid, X.astype(np.float64), points)


def load_dataset(directory, patch_size=100, stride=50, features="lbp"):
    """Every ``<id>.pgm`` with a matching ``<id>.csv``, sorted by id."""
    names = sorted(n for n in os.listdir(directory) if n.endswith(".pgm"))
    if not names:
        raise FileNotFoundError(f"no .pgm images in {directory}")
    return [load_sample(os.path.join(directory, n), patch_size, stride, features)
            for n in names]


class CrowdCounter(BaseEstimator, RegressorMixin):
    """Patch regressor + MRF smoothing + tile summation.

    ``fit`` and ``predict`` take sequences of :class:`Sample`; ``predict``
    returns one whole-image count per sample.
    """

    def __init__(self, hidden_layer_sizes=(100, 100, 50, 50), learning_rate=1e-3,
                 batch_size=64, epochs=200, patience=None, n_labels=64, lambda_=1.0,
                 data_trunc=None, disc_trunc=None, iterations=10, damping=0.0,
                 smooth=True, random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.patience = patience
        self.n_labels = n_labels
        self.lambda_ = lambda_
        self.data_trunc = data_trunc
        self.disc_trunc = disc_trunc
        self.iterations = iterations
        self.damping = damping
        self.smooth = smooth
        self.random_state = random_state

    @classmethod
    def from_config(cls, config, random_state=None):
        return cls(hidden_layer_sizes=config.hidden, learning_rate=config.learning_rate,
                   batch_size=config.batch_size, epochs=config.epochs,
                   patience=config.patience, n_labels=config.n_labels,
                   lambda_=config.lambda_, data_trunc=config.data_k,
                   disc_trunc=config.disc_k, iterations=config.iterations,
                   damping=config.damping,
                   random_state=config.seed if random_state is None else random_state)

    def fit(self, samples, y=None):
        samples = list(samples)
        if not samples:
            raise ValueError("need at least one training image")
        X = np.vstack([s.features for s in samples])
        t = np.concatenate([s.patch_counts for s in samples])
        self.regressor_ = MLPCountRegressor(
            hidden_layer_sizes=self.hidden_layer_sizes, learning_rate=self.learning_rate,
            batch_size=self.batch_size, epochs=self.epochs, patience=self.patience,
            random_state=self.random_state).fit(X, t)
        return self

    def mrf_params(self):
        return MrfParams(self.lambda_, self.data_trunc, self.disc_trunc,
                         self.iterations, self.damping)

    def predict_patches(self, sample):
        check_is_fitted(self, "regressor_")
        try:
            raw = self.regressor_.predict(sample.features)
        except Exception as exc:
            raise StageError("predict", sample.image_id, exc) from exc
        try:
            problem = MrfProblem.build(sample.grid, raw, params=self.mrf_params(),
                                       n_labels=self.n_labels)
            smoothed = smooth(problem).counts
        except Exception as exc:
            raise StageError("smooth", sample.image_id, exc) from exc
        return PatchEstimate(sample.grid, raw, smoothed)

    def predict(self, samples):
        which = "smoothed" if self.smooth else "raw"
        out = []
        for s in samples:
            est = self.predict_patches(s)
            out.append(image_count(getattr(est, which), select_tiles(s.grid)))
        return np.array(out)


@dataclass
class RunResult:
    report: EvalReport
    unsmoothed: EvalReport
    baseline: EvalReport
    fold_of: dict

    def fold_mae(self, fold, which="report"):
        rep = getattr(self, which)
        idx = [i for i, image_id in enumerate(rep.ids) if self.fold_of[image_id] == fold]
        return mae(rep.g[idx], rep.e[idx])


def _fold_seed(seed, fold):
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


def _patch_csv(grid, raw, smoothed):
    lines = ["row,col,count_before,count_after"]
    for p, (a, b) in enumerate(zip(raw.tolist(), smoothed.tolist())):
        r, c = divmod(p, grid.cols)
        lines.append(f"{r},{c},{a!r},{b!r}")
    return "\n".join(lines) + "\n"


def run_cross_validation(samples, config, out_dir, dataset=None):
    """k-fold train/predict/smooth/aggregate/evaluate; writes all run outputs.

    Files under ``out_dir``: ``manifest.txt``, ``per_image.csv`` (id,g,e),
    ``summary.csv`` (N,MAE,MSE), ``groups.csv``, ``folds.csv`` with the
    per-fold smoothed, unsmoothed and mean-baseline MAE, plus per test image
    ``patches/<id>.csv`` and before/after density rasters in ``rasters/``.
    """
    samples = sorted(samples, key=lambda s: s.image_id)
    by_id = {s.image_id: s for s in samples}
    os.makedirs(os.path.join(out_dir, "patches"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "rasters"), exist_ok=True)
    manifest = config.to_text()
    if dataset is not None:
        manifest = f"# dataset {os.path.abspath(dataset)}\n" + manifest
    atomic_write(os.path.join(out_dir, "manifest.txt"), manifest.encode())

    plan = make_folds(list(by_id), config.folds, config.seed)
    est_mrf, est_raw, est_base, fold_of = {}, {}, {}, {}
    for fold in range(plan.k):
        train = [by_id[i] for i in plan.train_ids(fold)]
        test = [by_id[i] for i in plan.test_ids(fold)]
        log.info("fold %d: %d train / %d test images", fold, len(train), len(test))
        model = CrowdCounter.from_config(config, random_state=_fold_seed(config.seed, fold))
        try:
            model.fit(train)
        except Exception as exc:
            raise StageError("train", f"fold {fold}", exc) from exc
        baseline = float(np.mean([s.count for s in train]))
        for s in test:
            est = model.predict_patches(s)
            sel = select_tiles(s.grid)
            est_raw[s.image_id] = image_count(est.raw, sel)
            est_mrf[s.image_id] = image_count(est.smoothed, sel)
            est_base[s.image_id] = baseline
            fold_of[s.image_id] = fold
            atomic_write(os.path.join(out_dir, "patches", s.image_id + ".csv"),
                         _patch_csv(s.grid, est.raw, est.smoothed).encode())
            for tag, counts in (("before", est.raw), ("after", est.smoothed)):
                raster = density_raster(s.grid, counts)
                stem = os.path.join(out_dir, "rasters", f"{s.image_id}_{tag}")
                save_raster(raster, stem + ".dmap")
                raster_to_pgm(raster, stem + ".pgm")

    ids = list(by_id)
    g = [by_id[i].count for i in ids]
    reports = [EvalReport.from_pairs(ids, g, [est[i] for i in ids])
               for est in (est_mrf, est_raw, est_base)]
    result = RunResult(*reports, fold_of)
    report = result.report
    atomic_write(os.path.join(out_dir, "per_image.csv"), report.per_image_csv().encode())
    atomic_write(os.path.join(out_dir, "summary.csv"), report.summary_csv().encode())
    groups = group_report(report.g, report.e, min(config.groups, report.n), ids=ids)
    atomic_write(os.path.join(out_dir, "groups.csv"), groups.to_csv().encode())
    lines = ["fold,n,mae,mae_unsmoothed,mae_baseline"]
    for fold in range(plan.k):
        lines.append(f"{fold},{len(plan.test_ids(fold))},{result.fold_mae(fold)!r},"
                     f"{result.fold_mae(fold, 'unsmoothed')!r},"
                     f"{result.fold_mae(fold, 'baseline')!r}")
    atomic_write(os.path.join(out_dir, "folds.csv"), ("\n".join(lines) + "\n").encode())
    return result

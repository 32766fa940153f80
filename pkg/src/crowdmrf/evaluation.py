"""Image-level error metrics, seeded k-fold plans and grouped summaries."""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "mae", "mse", "EvalReport", "FoldPlan", "make_folds", "GroupReport", "group_report",
]


def _pairs(g, e):
    g = np.asarray(g, dtype=np.float64).ravel()
    e = np.asarray(e, dtype=np.float64).ravel()
    if g.size == 0:
        raise ValueError("need at least one (ground truth, estimate) pair")
    if g.shape != e.shape:
        raise ValueError(f"{g.size} ground-truth values but {e.size} estimates")
    return g, e


def mae(g, e):
    """Mean absolute error between ground-truth and estimated image counts."""
    g, e = _pairs(g, e)
    return float(np.mean(np.abs(g - e)))


def mse(g, e):
    """Root of the mean squared error.

    Crowd-counting benchmarks report this under the name MSE; the root is kept
    so numbers are comparable with published tables.
    """
    g, e = _pairs(g, e)
    return float(np.sqrt(np.mean((g - e) ** 2)))


@dataclass(frozen=True)
class EvalReport:
    ids: tuple
    g: np.ndarray
    e: np.ndarray

    @classmethod
    def from_pairs(cls, ids, g, e):
        g, e = _pairs(g, e)
        if len(ids) != g.size:
            raise ValueError(f"{len(ids)} ids for {g.size} pairs")
        return cls(tuple(ids), g, e)

    @property
    def n(self):
        return self.g.size

    @property
    def mae(self):
        return mae(self.g, self.e)

    @property
    def mse(self):
        return mse(self.g, self.e)

    def per_image_csv(self):
        rows = [f"{i},{g!r},{e!r}" for i, g, e in zip(self.ids, self.g.tolist(), self.e.tolist())]
        return "id,g,e\n" + "".join(r + "\n" for r in rows)

    def summary_csv(self):
        return f"N,MAE,MSE\n{self.n},{self.mae!r},{self.mse!r}\n"


@dataclass(frozen=True)
class FoldPlan:
    k: int
    ids: tuple
    assignment: tuple  # fold index per id, aligned with ``ids``
    seed: int

    def test_ids(self, fold):
        return [i for i, f in zip(self.ids, self.assignment) if f == fold]

    def train_ids(self, fold):
        return [i for i, f in zip(self.ids, self.assignment) if f != fold]

    @property
    def sizes(self):
        return [self.assignment.count(f) for f in range(self.k)]


def make_folds(image_ids, k=5, seed=0):
    """Shuffle ids with ``seed`` and deal them round-robin into ``k`` folds."""
    ids = tuple(image_ids)
    if len(set(ids)) != len(ids):
        raise ValueError("image ids must be unique")
    if not 2 <= k <= len(ids):
        raise ValueError(f"k must be in [2, {len(ids)}], got {k}")
    order = np.random.default_rng(seed).permutation(len(ids))
    assignment = [0] * len(ids)
    for pos, i in enumerate(order):
        assignment[i] = pos % k
    return FoldPlan(k, ids, tuple(assignment), seed)


@dataclass(frozen=True)
class GroupReport:
    mean_gt: np.ndarray
    mean_est: np.ndarray
    counts: np.ndarray
    members: tuple

    def to_csv(self):
        lines = [f"{i},{g!r},{e!r},{int(n)}" for i, (g, e, n) in
                 enumerate(zip(self.mean_gt.tolist(), self.mean_est.tolist(), self.counts))]
        return "group,mean_gt,mean_est,count\n" + "".join(l + "\n" for l in lines)


def group_report(g, e, n_groups=10, ids=None):
    """Sort images by ground truth (ties by id) and average per group.

    Groups are contiguous in that order and differ in size by at most one,
    larger groups first.
    """
    g, e = _pairs(g, e)
    if not 1 <= n_groups <= g.size:
        raise ValueError(f"number of groups must be in [1, {g.size}], got {n_groups}")
    if ids is None:
        ids = list(range(g.size))
    order = sorted(range(g.size), key=lambda i: (g[i], ids[i]))
    chunks = np.array_split(np.array(order, dtype=np.intp), n_groups)
    return GroupReport(
        np.array([g[c].mean() for c in chunks]),
        np.array([e[c].mean() for c in chunks]),
        np.array([len(c) for c in chunks]),
        tuple(tuple(ids[i] for i in c) for c in chunks),
    )

"""Grid MRF smoothing of per-patch counts with min-sum belief propagation.

Energy of a labeling ``c`` over the 4-connected patch grid::

    E(c) = sum_p lam * min((I_p - c_p)^2, data_trunc)
         + sum_(p,q) min((c_p - c_q)^2, disc_trunc)

``I_p`` is the anchor count of patch ``p`` (the regressed count at inference;
pass ground-truth counts to anchor on annotations instead). Messages for the
truncated quadratic are computed in O(n_labels) with the lower envelope of
parabolas.
"""

from dataclasses import dataclass, replace

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

from .exceptions import MessagePassingError, ShapeMismatchError
from .tiling import PatchGrid

__all__ = [
    "LabelSpace", "MrfParams", "MrfProblem", "SmoothResult", "label_space_from_anchors",
    "data_cost", "disc_cost", "energy", "dt_message", "quantize", "smooth",
    "MRFSmoother",
]


@dataclass(frozen=True)
class LabelSpace:
    lo: float
    hi: float
    n_labels: int = 64

    def __post_init__(self):
        if self.n_labels < 2:
            raise ValueError("need at least 2 labels")
        if not (0 <= self.lo < self.hi) or not np.isfinite(self.hi):
            raise ValueError(f"invalid label range [{self.lo}, {self.hi}]")

    @property
    def step(self):
        return (self.hi - self.lo) / (self.n_labels - 1)

    @property
    def values(self):
        return self.lo + np.arange(self.n_labels) * self.step

    @property
    def span(self):
        return self.hi - self.lo


def label_space_from_anchors(anchors, n_labels=64):
    """Uniform labels on ``[0, 1.2 * max(anchors)]`` (``[0, 1]`` if all zero)."""
    anchors = np.asarray(anchors, dtype=np.float64)
    if anchors.size == 0 or not np.isfinite(anchors).all():
        raise ValueError("anchors must be non-empty and finite")
    top = float(anchors.max())
    return LabelSpace(0.0, top * 1.2 if top > 0 else 1.0, n_labels)


@dataclass(frozen=True)
class MrfParams:
    """Smoothing weights. ``None`` truncations mean ``(span / 4) ** 2``."""

    lambda_: float = 1.0
    data_trunc: float = None
    disc_trunc: float = None
    iterations: int = 10
    damping: float = 0.0

    def __post_init__(self):
        if not self.lambda_ > 0:
            raise ValueError("lambda must be positive")
        for name in ("data_trunc", "disc_trunc"):
            value = getattr(self, name)
            if value is not None and not value >= 0:
                raise ValueError(f"{name} must be >= 0")
        if self.iterations < 1:
            raise ValueError("iterations must be positive")
        if not 0 <= self.damping < 1:
            raise ValueError("damping must be in [0, 1)")

    def resolve(self, labels):
        default = (0.25 * labels.span) ** 2
        return replace(
            self,
            data_trunc=default if self.data_trunc is None else float(self.data_trunc),
            disc_trunc=default if self.disc_trunc is None else float(self.disc_trunc))


@dataclass(frozen=True)
class MrfProblem:
    rows: int
    cols: int
    anchors: np.ndarray
    labels: LabelSpace
    params: MrfParams

    @classmethod
    def build(cls, grid, anchors, labels=None, params=None, n_labels=64):
        """Problem over ``grid`` (a ``PatchGrid`` or ``(rows, cols)``).

        Anchors are clamped into the label range; the label space defaults
        to :func:`label_space_from_anchors`.
        """
        rows, cols = (grid.rows, grid.cols) if isinstance(grid, PatchGrid) else grid
        anchors = np.asarray(anchors, dtype=np.float64).ravel()
        if anchors.size != rows * cols:
            raise ShapeMismatchError(f"{anchors.size} anchors for a {rows}x{cols} grid")
        if not np.isfinite(anchors).all():
            raise ValueError("anchors must be finite")
        if labels is None:
            labels = label_space_from_anchors(anchors, n_labels)
        params = (params or MrfParams()).resolve(labels)
        anchors = np.clip(anchors, labels.lo, labels.hi)
        anchors.flags.writeable = False
        return cls(rows, cols, anchors, labels, params)

    @property
    def n_patches(self):
        return self.rows * self.cols

    @property
    def edges(self):
        idx = np.arange(self.n_patches).reshape(self.rows, self.cols)
        horiz = np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], axis=1)
        vert = np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()], axis=1)
        edges = np.concatenate([horiz, vert])
        return edges[np.lexsort((edges[:, 1], edges[:, 0]))]

    def data_costs(self):
        """``(n_patches, n_labels)`` table of data costs."""
        diff = self.anchors[:, None] - self.labels.values[None, :]
        return self.params.lambda_ * np.minimum(diff * diff, self.params.data_trunc)


@dataclass(frozen=True)
class SmoothResult:
    labeling: np.ndarray
    counts: np.ndarray
    energy: float
    fallback: bool = False


def data_cost(problem, p, i):
    diff = problem.anchors[p] - problem.labels.values[i]
    return problem.params.lambda_ * min(diff * diff, problem.params.data_trunc)


def disc_cost(params, values, i, j):
    diff = values[i] - values[j]
    return min(diff * diff, params.disc_trunc)


def energy(problem, labeling):
    labeling = np.asarray(labeling, dtype=np.intp).ravel()
    if labeling.size != problem.n_patches:
        raise IndexError(f"labeling has {labeling.size} entries, need {problem.n_patches}")
    if labeling.min() < 0 or labeling.max() >= problem.labels.n_labels:
        raise IndexError("label index out of range")
    values = problem.labels.values
    unary = problem.data_costs()[np.arange(problem.n_patches), labeling].sum()
    edges = problem.edges
    if len(edges) == 0:
        return float(unary)
    diff = values[labeling[edges[:, 0]]] - values[labeling[edges[:, 1]]]
    return float(unary + np.minimum(diff * diff, problem.params.disc_trunc).sum())


@njit(cache=True)
def _dt_rows(H, values, trunc, out):
    """Lower-envelope distance transform of every row of ``H``."""
    n_rows, n = H.shape
    v = np.empty(n, dtype=np.int64)
    z = np.empty(n + 1)
    sq = values * values
    for r in range(n_rows):
        h = H[r]
        k = 0
        v[0] = 0
        z[0] = -np.inf
        z[1] = np.inf
        for q in range(1, n):
            while True:
                p = v[k]
                s = ((h[q] + sq[q]) - (h[p] + sq[p])) / (2.0 * (values[q] - values[p]))
                if s <= z[k]:
                    k -= 1
                else:
                    break
            k += 1
            v[k] = q
            z[k] = s
            z[k + 1] = np.inf
        k = 0
        floor = h[0]
        for i in range(1, n):
            if h[i] < floor:
                floor = h[i]
        floor += trunc
        for j in range(n):
            while z[k + 1] < values[j]:
                k += 1
            d = values[j] - values[v[k]]
            m = d * d + h[v[k]]
            out[r, j] = m if m < floor else floor


def dt_message(h, values, disc_trunc):
    """``m(j) = min(min_i h(i) + (v_i - v_j)^2, min_i h(i) + disc_trunc)``.

    ``values`` must be strictly increasing. ``h`` may be 1-D or a stack of
    messages (one per row).
    """
    h = np.asarray(h, dtype=np.float64)
    values = np.ascontiguousarray(values, dtype=np.float64)
    H = np.ascontiguousarray(np.atleast_2d(h))
    if H.shape[1] != values.size:
        raise ShapeMismatchError(f"{H.shape[1]} costs for {values.size} labels")
    out = np.empty_like(H)
    _dt_rows(H, values, float(disc_trunc), out)
    return out[0] if h.ndim == 1 else out


def quantize(problem):
    """Nearest label to each anchor (lowest index on ties)."""
    values = problem.labels.values
    return np.argmin(np.abs(problem.anchors[:, None] - values[None, :]), axis=1)


# Incoming-message slots, named by where the sender sits relative to the receiver.
_FROM_LEFT, _FROM_RIGHT, _FROM_UP, _FROM_DOWN = range(4)


def _send(total, msgs, values, trunc):
    """All messages of one synchronous round, computed from ``msgs``."""
    R, C, L = total.shape
    new = np.zeros_like(msgs)
    blocks = []
    # (slot at receiver, sender slice, receiver slice, slot holding the receiver's
    # message to the sender, which must be excluded)
    plan = (
        (_FROM_LEFT, np.s_[:, :-1], np.s_[:, 1:], _FROM_RIGHT),
        (_FROM_RIGHT, np.s_[:, 1:], np.s_[:, :-1], _FROM_LEFT),
        (_FROM_UP, np.s_[:-1, :], np.s_[1:, :], _FROM_DOWN),
        (_FROM_DOWN, np.s_[1:, :], np.s_[:-1, :], _FROM_UP),
    )
    for slot, src, dst, back in plan:
        h = total[src] - msgs[back][src]
        if h.size:
            blocks.append((slot, dst, h.shape, h.reshape(-1, L)))
    if not blocks:
        return new
    stacked = np.concatenate([b[3] for b in blocks])
    out = dt_message(stacked, values, trunc)
    start = 0
    for slot, dst, shape, flat in blocks:
        n = flat.shape[0]
        new[slot][dst] = out[start:start + n].reshape(shape)
        start += n
    return new


def _first_bad_edge(msgs, rows, cols):
    slot, r, c = (int(a[0]) for a in np.nonzero(~np.isfinite(msgs).all(axis=3)))
    dr, dc = {_FROM_LEFT: (0, -1), _FROM_RIGHT: (0, 1),
              _FROM_UP: (-1, 0), _FROM_DOWN: (1, 0)}[slot]
    return ((r + dr) * cols + (c + dc), r * cols + c)


def smooth(problem, normalize=True):
    """Min-sum loopy BP with synchronous updates.

    Messages start at zero and each round is computed from the previous
    round only. Labels are the belief argmin (lowest index on ties). If the
    result has higher energy than simply quantising the anchors, the
    quantised labeling is returned instead (``fallback=True``).
    """
    R, C, L = problem.rows, problem.cols, problem.labels.n_labels
    values = problem.labels.values
    D = problem.data_costs().reshape(R, C, L)
    trunc = problem.params.disc_trunc
    damping = problem.params.damping
    msgs = np.zeros((4, R, C, L))
    for round_ in range(1, problem.params.iterations + 1):
        total = D + msgs.sum(axis=0)
        new = _send(total, msgs, values, trunc)
        if normalize:
            new -= new.min(axis=3, keepdims=True)
        if damping:
            new = (1.0 - damping) * new + damping * msgs
        if not np.isfinite(new).all():
            raise MessagePassingError(round_, _first_bad_edge(new, R, C))
        msgs = new
    beliefs = (D + msgs.sum(axis=0)).reshape(-1, L)
    labeling = np.argmin(beliefs, axis=1)
    e = energy(problem, labeling)
    fallback = False
    quantized = quantize(problem)
    e_q = energy(problem, quantized)
    if e_q < e:
        labeling, e, fallback = quantized, e_q, True
    return SmoothResult(labeling, values[labeling], e, fallback)


class MRFSmoother(BaseEstimator, TransformerMixin):
    """Transformer smoothing a 2-D ``(rows, cols)`` field of patch counts.

    Stateless: ``fit`` is a no-op and every call to ``transform`` builds a
    fresh label space from the field it is given.
    """

    def __init__(self, n_labels=64, lambda_=1.0, data_trunc=None, disc_trunc=None,
                 iterations=10, damping=0.0):
        self.n_labels = n_labels
        self.lambda_ = lambda_
        self.data_trunc = data_trunc
        self.disc_trunc = disc_trunc
        self.iterations = iterations
        self.damping = damping

    def fit(self, X=None, y=None):
        return self

    def _params(self):
        return MrfParams(self.lambda_, self.data_trunc, self.disc_trunc,
                         self.iterations, self.damping)

    def smooth_field(self, X):
        X = check_array(X, dtype=np.float64, ensure_min_samples=1)
        problem = MrfProblem.build(X.shape, X, params=self._params(),
                                   n_labels=self.n_labels)
        return smooth(problem)

    def transform(self, X):
        X = np.asarray(X, dtype=np.float64)
        return self.smooth_field(X).counts.reshape(X.shape)

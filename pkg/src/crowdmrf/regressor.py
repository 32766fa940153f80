"""Fully connected count regressor trained from scratch with numpy.

The network is an affine/ReLU chain with an identity output unit. Training
minimises the mean squared residual with Adam; the reported loss is its
square root (the RMS error over the training patches).
"""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import FormatError, ShapeMismatchError, TrainingDivergedError
from .ingest import atomic_write

__all__ = [
    "DEFAULT_HIDDEN", "MlpSpec", "MlpParams", "TrainConfig", "TrainReport",
    "init_params", "forward", "loss", "train", "gradient_check", "predict_counts",
    "MLPCountRegressor", "save_model", "load_model",
]

DEFAULT_HIDDEN = (100, 100, 50, 50)
MODEL_MAGIC = "CMLP01"


@dataclass(frozen=True)
class MlpSpec:
    layer_widths: tuple

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        if len(widths) < 2 or any(w < 1 for w in widths):
            raise ValueError(f"invalid layer widths {self.layer_widths}")
        if widths[-1] != 1:
            raise ValueError("the output layer must have width 1")
        object.__setattr__(self, "layer_widths", widths)

    @classmethod
    def for_features(cls, n_features, hidden=DEFAULT_HIDDEN):
        return cls((n_features, *hidden, 1))

    @property
    def n_inputs(self):
        return self.layer_widths[0]


@dataclass
class MlpParams:
    """Weights stored ``(fan_in, fan_out)`` so a layer is ``x @ W + b``."""

    weights: list
    biases: list

    @property
    def spec(self):
        return MlpSpec((self.weights[0].shape[0], *(w.shape[1] for w in self.weights)))

    def copy(self):
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flat(self):
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases)
                               for a in pair])


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 200
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = None

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("learning rate, batch size and epochs must be positive")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be positive or None")


@dataclass
class TrainReport:
    losses: list = field(default_factory=list)
    initial_loss: float = float("nan")
    n_samples: int = 0

    @property
    def final_loss(self):
        return self.losses[-1] if self.losses else self.initial_loss

    def to_csv(self):
        return "epoch,loss\n" + "".join(f"{i + 1},{v!r}\n" for i, v in enumerate(self.losses))


def init_params(spec, seed=0):
    """Uniform(-sqrt(6/fan_in), sqrt(6/fan_in)) weights, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def _check_inputs(params, X):
    n_in = params.weights[0].shape[0]
    if X.shape[-1] != n_in:
        raise ShapeMismatchError(f"expected {n_in} input features, got {X.shape[-1]}")


def _forward_cache(params, X):
    """Forward pass keeping pre-activations for backprop."""
    acts = [X]
    pre = []
    a = X
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ W + b
        pre.append(z)
        a = z if i == last else np.maximum(z, 0.0)
        acts.append(a)
    return acts, pre


def forward(params, x):
    """Raw network output; a scalar for a vector, a 1-D array for a matrix."""
    x = np.asarray(x, dtype=np.float64)
    _check_inputs(params, x)
    acts, _ = _forward_cache(params, np.atleast_2d(x))
    out = acts[-1][:, 0]
    return float(out[0]) if x.ndim == 1 else out


def loss(params, X, targets):
    """sqrt(mean((target - prediction)^2)) over all rows of ``X``."""
    X = np.asarray(X, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64).ravel()
    if X.ndim != 2 or X.shape[0] != targets.shape[0]:
        raise ShapeMismatchError(f"{X.shape[0]} rows but {targets.shape[0]} targets")
    residual = targets - forward(params, X)
    return float(np.sqrt(np.mean(residual ** 2)))


def _gradients(params, X, targets):
    """Mean squared residual and its gradient w.r.t. every weight and bias."""
    acts, pre = _forward_cache(params, X)
    residual = acts[-1][:, 0] - targets
    m = X.shape[0]
    delta = (2.0 / m) * residual[:, None]
    grad_w = [None] * len(params.weights)
    grad_b = [None] * len(params.weights)
    for i in range(len(params.weights) - 1, -1, -1):
        grad_w[i] = acts[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ params.weights[i].T) * (pre[i - 1] > 0)
    return float(np.mean(residual ** 2)), grad_w, grad_b


def train(spec, config, X, targets):
    """Fit a fresh network; returns ``(params, report)``.

    Batches are drawn from a per-epoch permutation seeded by ``config.seed``,
    so identical inputs give bit-identical results.
    """
    X = np.asarray(X, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64).ravel()
    if X.ndim != 2 or X.shape[0] < 1:
        raise ShapeMismatchError("need a non-empty 2-D feature matrix")
    if X.shape[0] != targets.shape[0]:
        raise ShapeMismatchError(f"{X.shape[0]} rows but {targets.shape[0]} targets")
    if X.shape[1] != spec.n_inputs:
        raise ShapeMismatchError(f"spec expects {spec.n_inputs} features, got {X.shape[1]}")
    if not (np.isfinite(X).all() and np.isfinite(targets).all()):
        raise ValueError("training data contains NaN or infinite values")

    init_seed, shuffle_seed = np.random.SeedSequence(config.seed).spawn(2)
    params = init_params(spec, init_seed)
    rng = np.random.default_rng(shuffle_seed)
    m_w = [np.zeros_like(w) for w in params.weights]
    v_w = [np.zeros_like(w) for w in params.weights]
    m_b = [np.zeros_like(b) for b in params.biases]
    v_b = [np.zeros_like(b) for b in params.biases]
    b1, b2 = config.beta1, config.beta2

    report = TrainReport(initial_loss=loss(params, X, targets), n_samples=X.shape[0])
    best, best_params, stale = np.inf, None, 0
    step = 0
    n = X.shape[0]
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for batch, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            value, gw, gb = _gradients(params, X[idx], targets[idx])
            if not np.isfinite(value):
                raise TrainingDivergedError(epoch, batch, value)
            step += 1
            lr = config.learning_rate * np.sqrt(1 - b2 ** step) / (1 - b1 ** step)
            for p, g, m, v in zip(params.weights + params.biases, gw + gb,
                                  m_w + m_b, v_w + v_b):
                m *= b1
                m += (1 - b1) * g
                v *= b2
                v += (1 - b2) * g * g
                p -= lr * m / (np.sqrt(v) + config.eps)
        epoch_loss = loss(params, X, targets)
        if not np.isfinite(epoch_loss):
            raise TrainingDivergedError(epoch, None, epoch_loss)
        report.losses.append(epoch_loss)
        if config.patience is not None:
            if epoch_loss < best:
                best, best_params, stale = epoch_loss, params.copy(), 0
            else:
                stale += 1
                if stale >= config.patience:
                    params = best_params
                    break
    return params, report


def gradient_check(spec, params, x, target, step=1e-5):
    """Largest relative gap between backprop and central differences.

    Checks the squared error ``(f(x) - target)^2`` of a single sample. The
    denominator is floored at 1e-6 so parameters with a vanishing gradient
    are compared in absolute terms.
    """
    if params.spec != spec:
        raise ShapeMismatchError(f"params have widths {params.spec.layer_widths}, "
                                 f"spec has {spec.layer_widths}")
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    t = np.array([float(target)])
    _, gw, gb = _gradients(params, X, t)

    def objective():
        r = forward(params, X)[0] - t[0]
        return r * r

    worst = 0.0
    for arrays, grads in ((params.weights, gw), (params.biases, gb)):
        for arr, grad in zip(arrays, grads):
            flat, gflat = arr.reshape(-1), grad.reshape(-1)
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + step
                up = objective()
                flat[k] = orig - step
                down = objective()
                flat[k] = orig
                numeric = (up - down) / (2 * step)
                denom = max(abs(numeric), abs(gflat[k]), 1e-6)
                worst = max(worst, abs(numeric - gflat[k]) / denom)
    return worst


def predict_counts(params, X):
    """Network output per row, clamped at zero."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeMismatchError(f"expected a 2-D feature matrix, got shape {X.shape}")
    return np.maximum(forward(params, X), 0.0)


class MLPCountRegressor(BaseEstimator, RegressorMixin):
    """Per-patch count regressor with stored feature standardisation.

    Parameters
    ----------
    hidden_layer_sizes : tuple of int
        Hidden widths; the input width comes from ``X`` and the output is 1.
    learning_rate, batch_size, epochs, patience
        Adam step size, mini-batch size, number of passes and optional
        early-stop patience on the training loss.
    random_state : int
        Seeds both the initialisation and the batch order.
    standardize : bool
        Centre and scale every feature with training statistics.
    """

    def __init__(self, hidden_layer_sizes=DEFAULT_HIDDEN, learning_rate=1e-3,
                 batch_size=64, epochs=200, patience=None, random_state=0,
                 standardize=True):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.patience = patience
        self.random_state = random_state
        self.standardize = standardize

    def _scale(self, X):
        return (X - self.mean_) / self.scale_

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        if self.standardize:
            self.mean_ = X.mean(axis=0)
            scale = X.std(axis=0)
            self.scale_ = np.where(scale > 0, scale, 1.0)
        else:
            self.mean_ = np.zeros(X.shape[1])
            self.scale_ = np.ones(X.shape[1])
        self.n_features_in_ = X.shape[1]
        spec = MlpSpec.for_features(X.shape[1], tuple(self.hidden_layer_sizes))
        config = TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size,
                             epochs=self.epochs, seed=self.random_state,
                             patience=self.patience)
        self.params_, self.train_report_ = train(spec, config, self._scale(X), y)
        return self

    def predict_raw(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        _check_inputs(self.params_, X)
        return forward(self.params_, self._scale(X))

    def predict(self, X):
        return np.maximum(self.predict_raw(X), 0.0)


def save_model(model, path):
    """Text header (widths, normalisation stats) then float64 LE parameters."""
    check_is_fitted(model, "params_")
    widths = model.params_.spec.layer_widths
    header = "\n".join([
        MODEL_MAGIC,
        "widths=" + " ".join(map(str, widths)),
        "mean=" + " ".join(float(v).hex() for v in model.mean_),
        "scale=" + " ".join(float(v).hex() for v in model.scale_),
        "end",
    ]) + "\n"
    blocks = [np.asarray(a, dtype="<f8").tobytes()
              for w, b in zip(model.params_.weights, model.params_.biases) for a in (w, b)]
    atomic_write(path, header.encode("ascii") + b"".join(blocks))


def load_model(path):
    with open(path, "rb") as fh:
        data = fh.read()
    end = data.find(b"\nend\n")
    if not data.startswith(MODEL_MAGIC.encode() + b"\n") or end < 0:
        raise FormatError("not a model file", offset=0)
    fields = {}
    for line in data[:end].decode("ascii").splitlines()[1:]:
        key, _, value = line.partition("=")
        fields[key] = value.split()
    try:
        widths = tuple(int(w) for w in fields["widths"])
        mean = np.array([float.fromhex(v) for v in fields["mean"]])
        scale = np.array([float.fromhex(v) for v in fields["scale"]])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad model header: {exc}") from exc
    spec = MlpSpec(widths)
    offset = end + len(b"\nend\n")
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        for shape, store in (((fan_in, fan_out), weights), ((fan_out,), biases)):
            count = int(np.prod(shape))
            if len(data) - offset < 8 * count:
                raise FormatError("truncated parameter block", offset=len(data))
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
            store.append(arr.astype(np.float64).reshape(shape))
            offset += 8 * count
    if offset != len(data):
        raise FormatError("trailing bytes after parameter block", offset=offset)
    model = MLPCountRegressor(hidden_layer_sizes=spec.layer_widths[1:-1])
    model.params_ = MlpParams(weights, biases)
    model.mean_, model.scale_ = mean, scale
    model.n_features_in_ = widths[0]
    return model

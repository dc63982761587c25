"""Ground-truth trajectory generators at desk scale.

* linear regression trained by gradient descent, optionally with a fresh
  draw of (x, y) every epoch ("augmented");
* a small fully-connected classifier trained by full-batch gradient descent
  on a two-blob 2-D problem;
* synthetic matrices built exactly from a few affine modes, with known
  labels and coefficients;
* trajectories of a fixed linear map (the exact DMD model class).

Every generator is a pure function of its config, seed included.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .exceptions import ConfigError, DivergenceError, ShapeMismatchError
from .trajectory import Layer, SnapshotMatrix

DIVERGENCE_LIMIT = 1e12
PROFILE_KINDS = ("exponential-decay", "piecewise-linear", "oscillatory")


def _from_mapping(cls, doc: dict):
    if not isinstance(doc, dict):
        raise ConfigError(f"{cls.__name__} config must be a JSON object")
    names = {f.name for f in fields(cls)}
    unknown = set(doc) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} field(s): {sorted(unknown)}")
    try:
        return cls(**doc)
    except TypeError as exc:
        raise ConfigError(f"{cls.__name__}: {exc}") from None


def _check_divergence(w: np.ndarray, epoch: int) -> None:
    if not np.all(np.isfinite(w)) or np.max(np.abs(w)) > DIVERGENCE_LIMIT:
        raise DivergenceError(f"weights diverged at epoch {epoch}", epoch=epoch)


# -- linear regression -------------------------------------------------------


@dataclass(frozen=True)
class ToyRegressionConfig:
    """Gradient descent on 0.5 * ||y - w x||_F^2 with w of shape (d, m).

    ``noise`` is the standard deviation of the label noise in
    y = w_true x + noise.
    """

    d: int = 4
    m: int = 8
    n: int = 32
    eta_schedule: tuple = (0.01,)
    augmented: bool = False
    epochs: int = 100
    seed: int = 0
    init_scale: float = 1.0
    noise: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "eta_schedule", tuple(float(e) for e in self.eta_schedule))
        for name in ("d", "m", "n", "epochs"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if len(self.eta_schedule) not in (1, self.epochs):
            raise ConfigError("eta_schedule must have length 1 or epochs")
        if any(e < 0 or not np.isfinite(e) for e in self.eta_schedule):
            raise ConfigError("learning rates must be finite and non-negative")
        if not self.init_scale > 0:
            raise ConfigError("init_scale must be positive")
        if self.noise < 0:
            raise ConfigError("noise must be non-negative")

    @classmethod
    def from_dict(cls, doc: dict) -> "ToyRegressionConfig":
        return _from_mapping(cls, doc)

    def eta(self, k: int) -> float:
        return self.eta_schedule[0] if len(self.eta_schedule) == 1 else self.eta_schedule[k]


def generate_toy_regression(cfg: ToyRegressionConfig, x=None, y=None, w0=None) -> SnapshotMatrix:
    """Trajectory of ``w^{k+1} = w^k + eta^k (y^k - w^k x^k) x^k^T``.

    Row ``i`` follows entry ``i`` of the row-major flattened ``w``. Explicit
    ``x``, ``y`` or ``w0`` override the drawn ones (non-augmented only for
    the data).
    """
    rng = np.random.default_rng(cfg.seed)
    w_true = rng.standard_normal((cfg.d, cfg.m))
    drawn_w0 = cfg.init_scale * rng.standard_normal((cfg.d, cfg.m))
    w = drawn_w0 if w0 is None else np.array(w0, dtype=np.float64).reshape(cfg.d, cfg.m)

    def draw():
        xk = rng.standard_normal((cfg.m, cfg.n))
        yk = w_true @ xk + cfg.noise * rng.standard_normal((cfg.d, cfg.n))
        return xk, yk

    if cfg.augmented and (x is not None or y is not None):
        raise ConfigError("explicit x/y only apply to non-augmented runs")
    if not cfg.augmented:
        fixed_x, fixed_y = draw()
        if x is not None:
            fixed_x = np.array(x, dtype=np.float64).reshape(cfg.m, cfg.n)
        if y is not None:
            fixed_y = np.array(y, dtype=np.float64).reshape(cfg.d, cfg.n)

    out = np.empty((cfg.d * cfg.m, cfg.epochs + 1))
    out[:, 0] = w.ravel()
    for k in range(cfg.epochs):
        xk, yk = draw() if cfg.augmented else (fixed_x, fixed_y)
        w = w + cfg.eta(k) * (yk - w @ xk) @ xk.T
        _check_divergence(w, k + 1)
        out[:, k + 1] = w.ravel()
    return SnapshotMatrix(out, (Layer("w", 0, cfg.d * cfg.m),))


def toy_regression_data(cfg: ToyRegressionConfig):
    """The fixed (x, y) a non-augmented run with this config uses."""
    rng = np.random.default_rng(cfg.seed)
    w_true = rng.standard_normal((cfg.d, cfg.m))
    rng.standard_normal((cfg.d, cfg.m))
    x = rng.standard_normal((cfg.m, cfg.n))
    y = w_true @ x + cfg.noise * rng.standard_normal((cfg.d, cfg.n))
    return x, y


# -- small MLP classifier ------------------------------------------------------


@dataclass(frozen=True)
class DatasetSpec:
    """Two Gaussian blobs centred at (-1, 0) and (1, 0), balanced classes."""

    count: int = 400
    noise: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if int(self.count) < 2:
            raise ConfigError("dataset count must be at least 2")
        if self.noise < 0:
            raise ConfigError("dataset noise must be non-negative")


@dataclass(frozen=True)
class MlpTaskConfig:
    layer_widths: tuple = (2, 16, 2)
    epochs: int = 150
    learning_rate: float = 0.05
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    seed: int = 0

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if isinstance(self.dataset, dict):
            object.__setattr__(self, "dataset", _from_mapping(DatasetSpec, self.dataset))
        if len(widths) < 3:
            raise ConfigError("layer_widths needs input, at least one hidden, and output width")
        if widths[0] != 2 or widths[-1] != 2:
            raise ConfigError("the two-blob task needs input width 2 and output width 2")
        if any(w < 1 for w in widths):
            raise ConfigError("layer widths must be positive")
        if self.n_parameters > 200_000:
            raise ConfigError(f"{self.n_parameters} parameters exceeds the 200000 limit")
        if int(self.epochs) < 1:
            raise ConfigError("epochs must be positive")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")

    @property
    def n_parameters(self) -> int:
        w = self.layer_widths
        return sum(w[i + 1] * w[i] + w[i + 1] for i in range(len(w) - 1))

    def layer_index(self) -> tuple[Layer, ...]:
        layers, start = [], 0
        w = self.layer_widths
        for i in range(len(w) - 1):
            layers.append(Layer(f"fc{i}.weight", start, w[i + 1] * w[i]))
            start += w[i + 1] * w[i]
            layers.append(Layer(f"fc{i}.bias", start, w[i + 1]))
            start += w[i + 1]
        return tuple(layers)

    @classmethod
    def from_dict(cls, doc: dict) -> "MlpTaskConfig":
        return _from_mapping(cls, doc)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layer_widths"] = list(self.layer_widths)
        return d


def make_dataset(spec: DatasetSpec):
    """Returns ((x_train, y_train), (x_test, y_test)); x has shape (count, 2)."""
    rng = np.random.default_rng(spec.seed)
    centers = np.array([[-1.0, 0.0], [1.0, 0.0]])

    def draw():
        y = np.arange(spec.count) % 2
        y = rng.permutation(y)
        x = centers[y] + spec.noise * rng.standard_normal((spec.count, 2))
        return x, y

    return draw(), draw()


def _unflatten(theta: np.ndarray, widths):
    params, pos = [], 0
    for i in range(len(widths) - 1):
        n_w = widths[i + 1] * widths[i]
        W = theta[pos : pos + n_w].reshape(widths[i + 1], widths[i])
        pos += n_w
        b = theta[pos : pos + widths[i + 1]]
        pos += widths[i + 1]
        params.append((W, b))
    return params


def _forward(params, x):
    acts = [x]
    h = x
    for i, (W, b) in enumerate(params):
        z = h @ W.T + b
        h = np.tanh(z) if i < len(params) - 1 else z
        acts.append(h)
    return acts


def _loss_and_accuracy(logits, y):
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_prob = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -float(np.mean(log_prob[np.arange(len(y)), y]))
    acc = float(np.mean(np.argmax(logits, axis=1) == y))
    return loss, acc, log_prob


def mlp_loss_and_grad(theta, widths, x, y):
    """Mean cross-entropy and its gradient w.r.t. the flat parameter vector."""
    params = _unflatten(theta, widths)
    acts = _forward(params, x)
    loss, _, log_prob = _loss_and_accuracy(acts[-1], y)
    delta = np.exp(log_prob)
    delta[np.arange(len(y)), y] -= 1.0
    delta /= len(y)
    grads = []
    for i in range(len(params) - 1, -1, -1):
        W, _ = params[i]
        grads.append((delta.T @ acts[i], delta.sum(axis=0)))
        if i > 0:
            delta = (delta @ W) * (1.0 - acts[i] ** 2)
    flat = []
    for gW, gb in reversed(grads):
        flat.append(gW.ravel())
        flat.append(gb)
    return loss, np.concatenate(flat)


def init_parameters(cfg: MlpTaskConfig) -> np.ndarray:
    rng = np.random.default_rng(cfg.seed)
    w = cfg.layer_widths
    parts = []
    for i in range(len(w) - 1):
        parts.append(rng.standard_normal(w[i + 1] * w[i]) / np.sqrt(w[i]))
        parts.append(np.zeros(w[i + 1]))
    return np.concatenate(parts)


@dataclass
class TrainingLog:
    """Per-epoch metrics; entry k is measured with the epoch-k weights."""

    train_loss: list = field(default_factory=list)
    train_accuracy: list = field(default_factory=list)
    test_loss: list = field(default_factory=list)
    test_accuracy: list = field(default_factory=list)

    def __len__(self):
        return len(self.train_loss)

    def append(self, train, test):
        self.train_loss.append(train[0])
        self.train_accuracy.append(train[1])
        self.test_loss.append(test[0])
        self.test_accuracy.append(test[1])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "train_accuracy", "test_loss", "test_accuracy"])
            for k in range(len(self)):
                writer.writerow(
                    [k, repr(self.train_loss[k]), repr(self.train_accuracy[k]),
                     repr(self.test_loss[k]), repr(self.test_accuracy[k])]
                )


def _metrics(theta, widths, x, y):
    logits = _forward(_unflatten(theta, widths), x)[-1]
    loss, acc, _ = _loss_and_accuracy(logits, y)
    return loss, acc


def generate_mlp_training(cfg: MlpTaskConfig):
    """Train by full-batch gradient descent; returns (SnapshotMatrix, TrainingLog)."""
    (x_tr, y_tr), (x_te, y_te) = make_dataset(cfg.dataset)
    theta = init_parameters(cfg)
    widths = cfg.layer_widths
    out = np.empty((theta.size, cfg.epochs + 1))
    log = TrainingLog()
    for k in range(cfg.epochs + 1):
        out[:, k] = theta
        log.append(_metrics(theta, widths, x_tr, y_tr), _metrics(theta, widths, x_te, y_te))
        if k == cfg.epochs:
            break
        _, grad = mlp_loss_and_grad(theta, widths, x_tr, y_tr)
        theta = theta - cfg.learning_rate * grad
        _check_divergence(theta, k + 1)
    return SnapshotMatrix(out, cfg.layer_index()), log


def evaluate_weights(cfg: MlpTaskConfig, m, epoch: int, split: str = "test") -> dict:
    """Loss and accuracy of the epoch-``epoch`` column of ``m`` on a data split."""
    values = m.values if isinstance(m, SnapshotMatrix) else np.asarray(m, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != cfg.n_parameters:
        raise ShapeMismatchError(
            f"matrix has {values.shape[0]} rows, the network has {cfg.n_parameters} parameters"
        )
    if not -values.shape[1] <= epoch < values.shape[1]:
        raise ShapeMismatchError(f"epoch {epoch} outside 0..{values.shape[1] - 1}")
    train, test = make_dataset(cfg.dataset)
    x, y = test if split == "test" else train
    loss, acc = _metrics(np.ascontiguousarray(values[:, epoch]), cfg.layer_widths, x, y)
    return {"loss": loss, "accuracy": acc}


# -- synthetic affine modes ------------------------------------------------------


@dataclass(frozen=True)
class SyntheticModesConfig:
    """Rows ``a_i * p_{mode(i)} + b_i + noise`` over epochs 0..T.

    ``a`` magnitudes are drawn from ``a_range`` and negated with probability
    ``negative_fraction``; ``b`` is drawn from ``b_range``. Rows are split
    into ``n_layers`` contiguous layers; labels are a random permutation so
    every mode is spread across layers.
    """

    N: int = 1000
    T: int = 100
    M_true: int = 3
    profile_kinds: tuple | None = None
    a_range: tuple = (0.5, 2.0)
    b_range: tuple = (-1.0, 1.0)
    negative_fraction: float = 0.5
    noise_sigma: float = 0.0
    seed: int = 0
    n_layers: int = 1

    def __post_init__(self):
        if int(self.N) < 1 or int(self.T) < 1 or int(self.M_true) < 1:
            raise ConfigError("N, T and M_true must be positive")
        if self.M_true > self.N:
            raise ConfigError("M_true cannot exceed N")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")
        if not 1 <= int(self.n_layers) <= self.N:
            raise ConfigError("n_layers must lie in [1, N]")
        if self.profile_kinds is not None:
            kinds = tuple(self.profile_kinds)
            if len(kinds) != self.M_true:
                raise ConfigError("profile_kinds needs one entry per mode")
            bad = [k for k in kinds if k not in PROFILE_KINDS]
            if bad:
                raise ConfigError(f"unknown profile kind(s) {bad}; choose from {PROFILE_KINDS}")
            object.__setattr__(self, "profile_kinds", kinds)
        object.__setattr__(self, "a_range", tuple(float(v) for v in self.a_range))
        object.__setattr__(self, "b_range", tuple(float(v) for v in self.b_range))
        if not 0.0 <= self.negative_fraction <= 1.0:
            raise ConfigError("negative_fraction must lie in [0, 1]")

    @classmethod
    def from_dict(cls, doc: dict) -> "SyntheticModesConfig":
        return _from_mapping(cls, doc)

    def kinds(self) -> tuple:
        if self.profile_kinds is not None:
            return self.profile_kinds
        return tuple(PROFILE_KINDS[i % len(PROFILE_KINDS)] for i in range(self.M_true))


@dataclass(eq=False)
class SyntheticModes:
    matrix: SnapshotMatrix
    labels: np.ndarray
    a: np.ndarray
    b: np.ndarray
    profiles: np.ndarray  # (M_true, T + 1)


def make_profile(kind: str, n_epochs: int, rng: np.random.Generator) -> np.ndarray:
    t = np.linspace(0.0, 1.0, n_epochs)
    if kind == "exponential-decay":
        return np.exp(-rng.uniform(1.0, 8.0) * t)
    if kind == "piecewise-linear":
        knots = np.concatenate([[0.0], np.sort(rng.uniform(0.1, 0.9, 2)), [1.0]])
        heights = np.cumsum(rng.choice([-1.0, 1.0], 4) * rng.uniform(0.3, 1.0, 4))
        return np.interp(t, knots, heights)
    if kind == "oscillatory":
        f = rng.uniform(1.0, 3.0)
        phase = rng.uniform(0.0, 2 * np.pi)
        return np.sin(2 * np.pi * f * t + phase) * np.exp(-rng.uniform(0.0, 1.0) * t)
    raise ConfigError(f"unknown profile kind {kind!r}")


def generate_synthetic_modes(cfg: SyntheticModesConfig) -> SyntheticModes:
    rng = np.random.default_rng(cfg.seed)
    n_epochs = cfg.T + 1
    profiles = np.stack([make_profile(k, n_epochs, rng) for k in cfg.kinds()])
    labels = rng.permutation(np.arange(cfg.N) % cfg.M_true)
    lo, hi = cfg.a_range
    a = rng.uniform(lo, hi, cfg.N)
    a = np.where(rng.random(cfg.N) < cfg.negative_fraction, -a, a)
    b = rng.uniform(*cfg.b_range, cfg.N)
    values = a[:, None] * profiles[labels] + b[:, None]
    if cfg.noise_sigma > 0:
        values = values + cfg.noise_sigma * rng.standard_normal(values.shape)
    bounds = np.linspace(0, cfg.N, cfg.n_layers + 1).astype(int)
    layers = tuple(
        Layer(f"layer{i}", int(bounds[i]), int(bounds[i + 1] - bounds[i]))
        for i in range(cfg.n_layers)
    )
    return SyntheticModes(SnapshotMatrix(values, layers), labels, a, b, profiles)


def generate_linear_dynamics(N: int, T: int, eigenvalues, seed: int = 0) -> SnapshotMatrix:
    """Rows of ``sum_j phi_j(i) lambda_j**k`` for real eigenvalues, rank len(eigenvalues)."""
    rng = np.random.default_rng(seed)
    lam = np.asarray(eigenvalues, dtype=np.float64)
    phi = rng.standard_normal((N, lam.size))
    k = np.arange(T + 1)
    return SnapshotMatrix(phi @ (lam[:, None] ** k[None, :]))

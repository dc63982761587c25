"""Correlation mode decomposition of a trajectory matrix.

Pipeline: sample K representative rows, cluster them by complete linkage on
1 - |corr|, pick one reference trajectory per cluster, assign every other
row to its best-correlated reference, then fit each row as
``a_i * reference + b_i`` by least squares.
"""

from __future__ import annotations

import contextlib
from concurrent.futures import ThreadPoolExecutor
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .clustering import ClusterConfig, Dendrogram, choose_references, cut_with_config, linkage
from .correlation import (
    STATIC_MODE,
    SampleSet,
    assign_to_modes,
    constant_rows,
    corr_matrix,
    normalized_rows,
    row_dot,
    sample_representatives,
)
from .exceptions import CMDError, DegenerateDataError, SchemaError
from .trajectory import EpochSelection, Layer, SnapshotMatrix, check_layer_index
from .validation import as_snapshot_matrix, check_trajectory_array

logger = logging.getLogger(__name__)

MODEL_VERSION = 1
SINGULAR_RTOL = 1e-12


def fit_affine(Wm, w_r):
    """Least-squares ``(a, b)`` per row of ``Wm`` against reference ``w_r``.

    Solves the 2x2 normal system of ``min ||Wm - a w_r - b 1||^2`` in
    closed form. The system is shifted by the reference mean so that it is
    diagonal; this changes nothing algebraically but avoids cancellation.
    """
    Wm = np.atleast_2d(np.asarray(Wm, dtype=np.float64))
    w_r = np.asarray(w_r, dtype=np.float64)
    if w_r.ndim != 1 or Wm.shape[1] != w_r.size:
        raise ValueError(f"shape mismatch: rows {Wm.shape}, reference {w_r.shape}")
    n = w_r.size
    r_mean = w_r.mean()
    r_c = w_r - r_mean
    s_rr = float(np.sum(r_c * r_c))
    det = n * s_rr
    trace = float(np.sum(w_r * w_r)) + n
    if not det > SINGULAR_RTOL * trace * trace:
        raise DegenerateDataError(
            f"reference is (numerically) constant: det={det:.3e}, trace={trace:.3e}"
        )
    w_mean = Wm.mean(axis=1)
    w_c = Wm - w_mean[:, None]
    a = row_dot(w_c, r_c[None, :]) / s_rr
    b = w_mean - a * r_mean
    return a, b


@dataclass(eq=False)
class ModeModel:
    """A fitted decomposition: one reference trajectory per mode plus
    per-weight ``(mode, a, b, corr)``. Rows in the static mode (-1) are
    constant and reconstructed as ``b``.
    """

    references: np.ndarray  # (M, n_epochs)
    reference_indices: np.ndarray  # (M,)
    labels: np.ndarray  # (N,)
    a: np.ndarray
    b: np.ndarray
    corr: np.ndarray
    layers: tuple[Layer, ...]
    epoch_selection: EpochSelection
    config: ClusterConfig
    sample: SampleSet | None = None
    threshold: float | None = None
    dendrogram: Dendrogram | None = field(default=None, repr=False)
    timings: dict = field(default_factory=dict, repr=False)

    @property
    def n_modes(self) -> int:
        return len(self.reference_indices)

    @property
    def n_weights(self) -> int:
        return len(self.labels)

    @property
    def n_epochs(self) -> int:
        return self.references.shape[1]

    def mode_sizes(self) -> dict[int, int]:
        ids, counts = np.unique(self.labels, return_counts=True)
        return {int(i): int(c) for i, c in zip(ids, counts)}

    def validate(self) -> None:
        n = self.n_weights
        for name in ("a", "b", "corr"):
            arr = getattr(self, name)
            if arr.shape != (n,):
                raise SchemaError(f"{name} has shape {arr.shape}, expected ({n},)")
            if not np.all(np.isfinite(arr)):
                raise SchemaError(f"{name} contains non-finite values")
        if self.references.shape != (self.n_modes, len(self.epoch_selection.retained_epochs)):
            raise SchemaError(
                "reference trajectories do not match the stored epoch length"
            )
        if np.any((self.labels < STATIC_MODE) | (self.labels >= self.n_modes)):
            raise SchemaError("mode id out of range")
        if np.any(np.abs(self.corr) > 1.0):
            raise SchemaError("|corr| exceeds 1")
        static = self.labels == STATIC_MODE
        if np.any(self.a[static] != 0.0):
            raise SchemaError("static-mode rows must have a = 0")
        for mode, row in enumerate(self.reference_indices):
            if not 0 <= row < n or self.labels[row] != mode:
                raise SchemaError(f"reference row {row} is not a member of mode {mode}")
        if self.layers:
            check_layer_index(self.layers, n)

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        body = {
            "version": MODEL_VERSION,
            "M": self.n_modes,
            "N": self.n_weights,
            "epoch_selection": self.epoch_selection.to_dict(),
            "config": self.config.to_dict(),
            "threshold": self.threshold,
            "layers": [
                {"name": l.name, "start": l.start, "count": l.count} for l in self.layers
            ],
            "sample": None if self.sample is None else self.sample.to_dict(),
            "modes": [
                {
                    "id": m,
                    "reference_index": int(self.reference_indices[m]),
                    "reference_values": self.references[m].tolist(),
                }
                for m in range(self.n_modes)
            ],
            "weights": [
                {"mode": int(m), "a": float(a), "b": float(b), "corr": float(c)}
                for m, a, b, c in zip(self.labels, self.a, self.b, self.corr)
            ],
        }
        body["digest"] = _digest(body)
        return body

    @classmethod
    def from_dict(cls, d: dict) -> "ModeModel":
        try:
            if d["version"] != MODEL_VERSION:
                raise SchemaError(f"unsupported model version {d['version']}")
            digest = d["digest"]
            modes = d["modes"]
            weights = d["weights"]
            sel = EpochSelection.from_dict(d["epoch_selection"])
            config = ClusterConfig.from_dict(d["config"])
            layers = tuple(Layer(l["name"], int(l["start"]), int(l["count"])) for l in d["layers"])
            sample = d.get("sample")
            if sample is not None:
                sample = SampleSet(
                    np.asarray(sample["indices"], dtype=np.int64),
                    int(sample["seed"]),
                    dict(sample["per_layer_counts"]),
                )
            if int(d["M"]) != len(modes) or int(d["N"]) != len(weights):
                raise SchemaError("M/N disagree with the modes/weights arrays")
            if [m["id"] for m in modes] != list(range(len(modes))):
                raise SchemaError("mode ids must be 0..M-1 in order")
            refs = np.array([m["reference_values"] for m in modes], dtype=np.float64)
            if len(modes) == 0:
                refs = refs.reshape(0, len(sel.retained_epochs))
            model = cls(
                references=refs,
                reference_indices=np.array([m["reference_index"] for m in modes], dtype=np.int64),
                labels=np.array([w["mode"] for w in weights], dtype=np.int64),
                a=np.array([w["a"] for w in weights], dtype=np.float64),
                b=np.array([w["b"] for w in weights], dtype=np.float64),
                corr=np.array([w["corr"] for w in weights], dtype=np.float64),
                layers=layers,
                epoch_selection=sel,
                config=config,
                sample=sample,
                threshold=d.get("threshold"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, CMDError):
                raise
            raise SchemaError(f"invalid model document: {exc!r}") from None
        model.validate()
        body = {k: v for k, v in d.items() if k != "digest"}
        if _digest(body) != digest:
            raise SchemaError("model digest mismatch: file was modified after saving")
        return model


def _digest(body: dict) -> str:
    body = {k: v for k, v in body.items() if k != "digest"}
    canon = json.dumps(body, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def save_model(model: ModeModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh, separators=(",", ":"), allow_nan=False)
        fh.write("\n")


def load_model(path) -> ModeModel:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: model document must be a JSON object")
    return ModeModel.from_dict(doc)


@contextlib.contextmanager
def _stage(name: str, timings: dict):
    start = time.perf_counter()
    try:
        yield
    except CMDError as exc:
        exc.args = (f"stage {name!r}: {exc}",) + exc.args[1:]
        exc.stage = name
        raise
    finally:
        timings[name] = (time.perf_counter() - start) * 1e3


def decompose(
    m: SnapshotMatrix,
    cfg: ClusterConfig | None = None,
    epoch_selection: EpochSelection | None = None,
    n_jobs: int = 1,
) -> ModeModel:
    """Run the full decomposition and return the fitted ``ModeModel``."""
    cfg = cfg or ClusterConfig()
    m = as_snapshot_matrix(m)
    sel = epoch_selection or EpochSelection.full(m.n_epochs)
    if len(sel.retained_epochs) != m.n_epochs:
        raise ValueError("epoch selection does not match the matrix width")
    timings: dict = {}
    values = m.values

    with _stage("sampling", timings):
        n_live = int(np.count_nonzero(~constant_rows(values)))
        if n_live == 0:
            raise DegenerateDataError("every trajectory is constant; nothing to decompose")
        K = min(int(cfg.K), n_live)
        if K < cfg.K:
            logger.info("K reduced from %d to %d nonconstant rows", cfg.K, K)
        sample = sample_representatives(m, K, cfg.seed)

    with _stage("correlation", timings):
        c = corr_matrix(m, sample)

    with _stage("clustering", timings):
        dendro = linkage(c)
        sample_labels, threshold = cut_with_config(dendro, c, cfg)
        ref_rows = np.asarray(choose_references(c, sample_labels, sample.indices), dtype=np.int64)
        refs = values[ref_rows]

    with _stage("assignment", timings):
        labels, rho = assign_to_modes(values, refs, n_jobs=n_jobs)
        labels[sample.indices] = sample_labels
        sampled_refs = refs[sample_labels]
        rho[sample.indices] = np.clip(
            row_dot(normalized_rows(values[sample.indices]), normalized_rows(sampled_refs)),
            -1.0,
            1.0,
        )

    with _stage("affine_fit", timings):
        a, b = _fit_all(values, labels, refs, n_jobs=n_jobs)

    model = ModeModel(
        references=refs.copy(),
        reference_indices=ref_rows,
        labels=labels,
        a=a,
        b=b,
        corr=rho,
        layers=m.layers,
        epoch_selection=sel,
        config=replace(cfg, K=K) if K != cfg.K else cfg,
        sample=sample,
        threshold=threshold,
        dendrogram=dendro,
        timings=timings,
    )
    return model


def _fit_all(values, labels, refs, n_jobs=1):
    n = values.shape[0]
    a = np.zeros(n)
    b = np.empty(n)
    static = labels == STATIC_MODE
    b[static] = values[static, 0]

    def work(mode):
        rows = np.flatnonzero(labels == mode)
        if rows.size:
            a[rows], b[rows] = fit_affine(values[rows], refs[mode])

    if n_jobs and n_jobs > 1 and len(refs) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            list(pool.map(work, range(len(refs))))
    else:
        for mode in range(len(refs)):
            work(mode)
    return a, b


def reconstruct(model: ModeModel, references=None) -> SnapshotMatrix:
    """Rebuild every trajectory as ``a_i * reference[mode_i] + b_i``.

    ``references`` overrides the stored reference trajectories, e.g. with
    the reference rows' full-length histories when the model was fit on a
    subsampled epoch axis.
    """
    refs = model.references if references is None else np.asarray(references, dtype=np.float64)
    if refs.shape[0] != model.n_modes:
        raise ValueError(f"expected {model.n_modes} references, got {refs.shape[0]}")
    width = refs.shape[1]
    out = np.empty((model.n_weights, width))
    live = model.labels != STATIC_MODE
    out[live] = model.a[live, None] * refs[model.labels[live]] + model.b[live, None]
    out[~live] = model.b[~live, None]
    return SnapshotMatrix(out, model.layers)


def reconstruct_full(model: ModeModel, full: SnapshotMatrix) -> SnapshotMatrix:
    """Reconstruction at all epochs of ``full`` using its reference rows."""
    return reconstruct(model, full.values[model.reference_indices])


class CorrelationModeDecomposition(TransformerMixin, BaseEstimator):
    """Model a trajectory matrix with a few correlated modes.

    Rows of ``X`` are weights, columns are epochs (``X`` may also be a
    :class:`SnapshotMatrix`, whose layer index then drives the stratified
    sampling).

    Parameters
    ----------
    n_modes : int, optional
        Fixed number of modes. Mutually exclusive with ``threshold``.
    threshold : float, optional
        Maximal in-cluster cophenetic distance on ``1 - |corr|``. If neither
        is given, half of the largest pairwise distance among the sampled
        rows is used.
    n_samples : int, default=1000
        Number of representative rows K clustered in the first stage.
    epsilon : float, default=0.1
        Diagnostic only; see :func:`cmdkit.analysis.per_mode_stats`.
    random_state : int, default=0
        Seed for representative sampling.
    n_jobs : int, default=1
        Worker threads for assignment and fitting. Results do not depend on it.

    Attributes
    ----------
    model_ : ModeModel
    labels_ : ndarray of shape (n_weights,)
        Mode per row, -1 for constant rows.
    coef_, intercept_ : ndarray of shape (n_weights,)
        Affine scale ``a`` and offset ``b`` per row.
    references_ : ndarray of shape (n_modes, n_epochs)
    reference_indices_ : ndarray of shape (n_modes,)
    n_modes_ : int
    """

    def __init__(
        self,
        n_modes=None,
        threshold=None,
        n_samples=1000,
        epsilon=0.1,
        random_state=0,
        n_jobs=1,
    ):
        self.n_modes = n_modes
        self.threshold = threshold
        self.n_samples = n_samples
        self.epsilon = epsilon
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _config(self) -> ClusterConfig:
        seed = self.random_state
        if seed is None or isinstance(seed, np.random.RandomState):
            raise ValueError("random_state must be an integer seed for reproducibility")
        return ClusterConfig(
            K=self.n_samples,
            n_modes=self.n_modes,
            threshold=self.threshold,
            epsilon=self.epsilon,
            seed=int(seed),
        )

    def fit(self, X, y=None, epoch_selection=None):
        m = as_snapshot_matrix(X)
        self.model_ = decompose(m, self._config(), epoch_selection, n_jobs=self.n_jobs or 1)
        self._set_attributes()
        return self

    def _set_attributes(self):
        model = self.model_
        self.labels_ = model.labels
        self.coef_ = model.a
        self.intercept_ = model.b
        self.references_ = model.references
        self.reference_indices_ = model.reference_indices
        self.n_modes_ = model.n_modes
        self.n_features_in_ = model.n_epochs

    @classmethod
    def from_model(cls, model: ModeModel, n_jobs=1) -> "CorrelationModeDecomposition":
        cfg = model.config
        est = cls(
            n_modes=cfg.n_modes,
            threshold=cfg.threshold,
            n_samples=cfg.K,
            epsilon=cfg.epsilon,
            random_state=cfg.seed,
            n_jobs=n_jobs,
        )
        est.model_ = model
        est._set_attributes()
        return est

    def reconstruct(self) -> SnapshotMatrix:
        check_is_fitted(self, "model_")
        return reconstruct(self.model_)

    def fit_transform(self, X, y=None, **fit_params):
        """Fit, then return the reconstruction of the training rows."""
        return self.fit(X, **fit_params).reconstruct().values

    def predict(self, X):
        """Mode of each row of ``X`` by maximal |corr| to the references."""
        check_is_fitted(self, "model_")
        values = check_trajectory_array(X, n_epochs=self.n_features_in_)
        labels, _ = assign_to_modes(values, self.references_, n_jobs=self.n_jobs or 1)
        return labels

    def transform(self, X):
        """Project rows of ``X`` onto the mode model.

        Each row is assigned to its best-correlated reference and replaced by
        its least-squares affine image of that reference. For the training
        matrix use :meth:`reconstruct`, which keeps the clustered labels of
        the sampled rows.
        """
        check_is_fitted(self, "model_")
        values = check_trajectory_array(X, n_epochs=self.n_features_in_)
        labels = self.predict(values)
        a, b = _fit_all(values, labels, self.references_, n_jobs=self.n_jobs or 1)
        out = a[:, None] * self.references_[np.maximum(labels, 0)] + b[:, None]
        static = labels == STATIC_MODE
        out[static] = b[static, None]
        return out

    def score(self, X, y=None):
        """Negative mean squared reconstruction error of ``X``."""
        values = check_trajectory_array(X, n_epochs=self.n_features_in_)
        return -float(np.mean((values - self.transform(values)) ** 2))

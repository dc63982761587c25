"""Exact dynamic mode decomposition with rank truncation.

Used as the baseline against the correlation-mode model: every weight is
approximated by ``Re(sum_j alpha_j * phi_j(i) * lambda_j**k)``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import CMDError, ConfigError, SchemaError
from .trajectory import Layer, SnapshotMatrix
from .validation import as_snapshot_matrix

# |lambda|**k beyond this is clamped (phase kept) and flagged
POWER_LIMIT = 1e150


class DmdNumericError(CMDError, ArithmeticError):
    exit_code = 3


@dataclass(eq=False)
class DmdModel:
    rank: int
    eigenvalues: np.ndarray  # (r,) complex
    modes: np.ndarray  # (N, r) complex
    amplitudes: np.ndarray  # (r,) complex
    n_epochs: int
    layers: tuple[Layer, ...] = ()

    def __post_init__(self):
        r = self.rank
        if not (len(self.eigenvalues) == len(self.amplitudes) == self.modes.shape[1] == r):
            raise SchemaError("eigenvalue, amplitude and mode counts must equal the rank")

    @property
    def n_weights(self) -> int:
        return self.modes.shape[0]


def dmd_fit(m, r: int) -> DmdModel:
    """Exact DMD of snapshot pairs (W[:, :-1], W[:, 1:]) truncated to rank r."""
    m = as_snapshot_matrix(m)
    W = m.values
    X, Xp = W[:, :-1], W[:, 1:]
    r = int(r)
    if not 1 <= r <= min(X.shape):
        raise ConfigError(f"rank must lie in [1, {min(X.shape)}], got {r}")
    try:
        U, s, Vh = np.linalg.svd(X, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise DmdNumericError(f"SVD failed: {exc}") from None
    tol = s[0] * max(X.shape) * np.finfo(float).eps if s.size else 0.0
    numerical_rank = int(np.count_nonzero(s > tol))
    if numerical_rank == 0:
        # all-zero snapshots: the zero map reproduces them
        numerical_rank = 1
    if r > numerical_rank:
        warnings.warn(
            f"rank {r} exceeds the numerical rank {numerical_rank}; using {numerical_rank}",
            RuntimeWarning,
            stacklevel=2,
        )
        r = numerical_rank
    Ur, sr, Vr = U[:, :r], s[:r], Vh[:r].conj().T
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_s = np.where(sr > 0, 1.0 / sr, 0.0)
    a_tilde = Ur.conj().T @ Xp @ Vr * inv_s[None, :]
    eigenvalues, vecs = np.linalg.eig(a_tilde)
    modes = Xp @ Vr @ (inv_s[:, None] * vecs)
    # a zero eigenvalue gives a zero exact mode; fall back to the projected one
    zero = np.linalg.norm(modes, axis=0) <= 1e-14 * max(1.0, np.linalg.norm(Xp))
    if np.any(zero):
        modes[:, zero] = Ur @ vecs[:, zero]
    amplitudes = np.linalg.lstsq(modes, W[:, 0].astype(complex), rcond=None)[0]
    return DmdModel(r, eigenvalues, modes, amplitudes, m.n_epochs, m.layers)


def dmd_reconstruct(model: DmdModel, epochs: int | None = None, return_overflow: bool = False):
    """Real part of ``sum_j alpha_j phi_j lambda_j**k`` for k = 0..epochs-1."""
    epochs = model.n_epochs if epochs is None else int(epochs)
    k = np.arange(epochs)
    lam = model.eigenvalues
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        mag = np.abs(lam)[:, None] ** k[None, :]
    overflow = bool(np.any(~np.isfinite(mag) | (mag > POWER_LIMIT)))
    mag = np.minimum(np.nan_to_num(mag, nan=POWER_LIMIT, posinf=POWER_LIMIT), POWER_LIMIT)
    phase = np.exp(1j * np.angle(lam)[:, None] * k[None, :])
    dynamics = model.amplitudes[:, None] * mag * phase  # (r, epochs)
    values = (model.modes @ dynamics).real
    if not np.all(np.isfinite(values)):
        overflow = True
        values = np.nan_to_num(values, nan=0.0, posinf=np.finfo(float).max, neginf=-np.finfo(float).max)
    layers = model.layers or ()
    out = SnapshotMatrix(values, layers)
    return (out, overflow) if return_overflow else out


def _cplx(z) -> list:
    return [{"re": float(v.real), "im": float(v.imag)} for v in np.asarray(z)]


def save_dmd(model: DmdModel, path) -> Path:
    """Write the JSON descriptor plus a raw little-endian complex128 mode block."""
    path = Path(path)
    block = path.with_name(path.name + ".modes.bin")
    block.write_bytes(np.ascontiguousarray(model.modes, dtype="<c16").tobytes())
    doc = {
        "r": int(model.rank),
        "n_weights": int(model.n_weights),
        "n_epochs": int(model.n_epochs),
        "layers": [{"name": l.name, "start": l.start, "count": l.count} for l in model.layers],
        "eigenvalues": _cplx(model.eigenvalues),
        "amplitudes": _cplx(model.amplitudes),
        "modes": {
            "file": block.name,
            "dtype": "<c16",
            "shape": [int(model.n_weights), int(model.rank)],
            "order": "C",
        },
    }
    path.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    return block


def load_dmd(path) -> DmdModel:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        r = int(doc["r"])
        lam = np.array([complex(z["re"], z["im"]) for z in doc["eigenvalues"]])
        amp = np.array([complex(z["re"], z["im"]) for z in doc["amplitudes"]])
        spec = doc["modes"]
        n, cols = (int(v) for v in spec["shape"])
        raw = (path.parent / spec["file"]).read_bytes()
        layers = tuple(Layer(l["name"], int(l["start"]), int(l["count"])) for l in doc.get("layers", []))
        n_epochs = int(doc["n_epochs"])
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"invalid DMD document {path}: {exc!r}") from None
    if len(raw) != n * cols * 16:
        raise SchemaError(f"mode block has {len(raw)} bytes, expected {n * cols * 16}")
    modes = np.frombuffer(raw, dtype="<c16").reshape(n, cols).astype(complex)
    return DmdModel(r, lam, modes, amp, n_epochs, layers)


class ExactDMD(BaseEstimator):
    """Rank-truncated exact DMD as an estimator.

    ``fit`` takes a (n_weights, n_epochs) matrix; ``reconstruct`` evaluates
    the fitted exponential model at epochs ``0..n_epochs-1``.
    """

    def __init__(self, rank=10):
        self.rank = rank

    def fit(self, X, y=None):
        self.model_ = dmd_fit(X, self.rank)
        self.rank_ = self.model_.rank
        self.eigenvalues_ = self.model_.eigenvalues
        self.modes_ = self.model_.modes
        self.amplitudes_ = self.model_.amplitudes
        return self

    def reconstruct(self, n_epochs=None) -> SnapshotMatrix:
        check_is_fitted(self, "model_")
        rec, self.overflow_ = dmd_reconstruct(self.model_, n_epochs, return_overflow=True)
        return rec

    def fit_transform(self, X, y=None):
        return self.fit(X).reconstruct().values

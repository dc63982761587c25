"""Pearson correlation over the epoch axis, representative sampling and
the linear-time assignment of every weight to its best-correlated mode.

Dot products are taken as an elementwise product followed by a per-row
``sum``, never through BLAS, so a row's result does not depend on how rows
are chunked or which thread computes them.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateDataError, UndefinedCorrelationError
from .trajectory import SnapshotMatrix

STATIC_MODE = -1
CHUNK_ROWS = 4096


@dataclass(frozen=True)
class CentralizedRow:
    values: np.ndarray
    norm: float


@dataclass(frozen=True)
class SampleSet:
    indices: np.ndarray
    seed: int
    per_layer_counts: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return len(self.indices)

    def to_dict(self) -> dict:
        return {
            "indices": [int(i) for i in self.indices],
            "seed": int(self.seed),
            "per_layer_counts": {k: int(v) for k, v in self.per_layer_counts.items()},
        }


def centralize(row) -> CentralizedRow:
    """Subtract the mean over all T+1 epochs."""
    row = np.asarray(row, dtype=np.float64)
    if row.ndim != 1 or row.size < 2:
        raise ValueError("centralize expects a 1-D trajectory with at least 2 epochs")
    if row[0] == row[-1] and np.all(row == row[0]):
        values = np.zeros_like(row)
    else:
        values = row - row.mean()
    return CentralizedRow(values, float(np.sqrt(np.sum(values * values))))


def corr(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"trajectory lengths differ: {u.shape} vs {v.shape}")
    cu, cv = centralize(u), centralize(v)
    if cu.norm == 0.0 or cv.norm == 0.0:
        raise UndefinedCorrelationError("correlation undefined for a constant trajectory")
    c = np.sum(cu.values * cv.values) / (cu.norm * cv.norm)
    return float(np.clip(c, -1.0, 1.0))


def constant_rows(values: np.ndarray) -> np.ndarray:
    """Boolean mask of zero-variance rows (exact test, no tolerance)."""
    return np.all(values == values[:, :1], axis=1)


def normalized_rows(values: np.ndarray) -> np.ndarray:
    """Centered rows scaled to unit norm; constant rows become all-zero."""
    values = np.asarray(values, dtype=np.float64)
    out = values - values.mean(axis=1, keepdims=True)
    const = constant_rows(values)
    out[const] = 0.0
    norms = np.sqrt(np.sum(out * out, axis=1))
    norms[const] = 1.0
    out /= norms[:, None]
    return out


def sample_representatives(m: SnapshotMatrix, K: int, seed: int = 0) -> SampleSet:
    """Draw K distinct nonconstant rows, stratified over layers.

    When K/2 exceeds the number of layers, each layer receives
    floor(K / (2 * n_layers)) draws and the rest are drawn uniformly over
    the whole matrix; otherwise all K are uniform. Constant rows are never
    drawn.
    """
    K = int(K)
    if K < 1:
        raise ValueError(f"K must be positive, got {K}")
    if K > m.n_weights:
        raise DegenerateDataError(f"K={K} exceeds the number of weights N={m.n_weights}")
    eligible = ~constant_rows(m.values)
    pool = np.flatnonzero(eligible)
    if pool.size < K:
        raise DegenerateDataError(
            f"only {pool.size} nonconstant rows available, {K} requested"
        )
    rng = np.random.default_rng(seed)
    n_layers = len(m.layers)
    chosen = []
    if K / 2 > n_layers:
        per_layer = K // (2 * n_layers)
        for layer in m.layers:
            cand = pool[(pool >= layer.start) & (pool < layer.stop)]
            take = min(per_layer, cand.size)
            if take:
                chosen.append(rng.choice(cand, size=take, replace=False))
    taken = np.concatenate(chosen) if chosen else np.empty(0, dtype=np.int64)
    rest = np.setdiff1d(pool, taken, assume_unique=True)
    extra = rng.choice(rest, size=K - taken.size, replace=False)
    indices = np.sort(np.concatenate([taken, extra]).astype(np.int64))

    layer_pos = m.layer_of_rows()[indices]
    counts = {
        layer.name: int(np.count_nonzero(layer_pos == pos))
        for pos, layer in enumerate(m.layers)
    }
    return SampleSet(indices, int(seed), counts)


def corr_matrix(m, sample: SampleSet | None = None) -> np.ndarray:
    """K x K correlation matrix of the sampled rows (exactly symmetric)."""
    values = m.values if isinstance(m, SnapshotMatrix) else np.asarray(m, dtype=np.float64)
    if sample is not None:
        values = values[sample.indices]
    if np.any(constant_rows(values)):
        raise UndefinedCorrelationError("sampled rows include a constant trajectory")
    z = normalized_rows(values)
    k = z.shape[0]
    c = np.empty((k, k))
    for start in range(0, k, 256):
        block = z[start : start + 256]
        c[start : start + 256] = np.sum(block[:, None, :] * z[None, :, :], axis=2)
    np.clip(c, -1.0, 1.0, out=c)
    np.fill_diagonal(c, 1.0)
    return c


def _assign_chunk(z_rows, z_refs, const):
    c = np.sum(z_rows[:, None, :] * z_refs[None, :, :], axis=2)
    np.clip(c, -1.0, 1.0, out=c)
    mode = np.argmax(np.abs(c), axis=1)
    best = c[np.arange(c.shape[0]), mode]
    mode[const] = STATIC_MODE
    best[const] = 0.0
    return mode, best


def assign_to_modes(m, refs, n_jobs: int = 1, chunk_rows: int = CHUNK_ROWS):
    """Assign each row to the reference with maximal |corr|.

    Ties go to the lowest mode id. Constant rows get ``STATIC_MODE`` and a
    correlation of 0. Returns ``(mode_ids, corr_values)`` where the
    correlation is the signed value for the chosen mode.
    """
    values = m.values if isinstance(m, SnapshotMatrix) else np.asarray(m, dtype=np.float64)
    refs = np.atleast_2d(np.asarray(refs, dtype=np.float64))
    if refs.shape[0] < 1:
        raise ValueError("at least one reference trajectory is required")
    if refs.shape[1] != values.shape[1]:
        raise ValueError("reference length differs from the trajectory length")
    if np.any(constant_rows(refs)):
        raise UndefinedCorrelationError("reference trajectories must be nonconstant")
    z_refs = normalized_rows(refs)
    n = values.shape[0]
    mode = np.empty(n, dtype=np.int64)
    best = np.empty(n)
    bounds = [(s, min(s + chunk_rows, n)) for s in range(0, n, chunk_rows)]

    def work(bound):
        s, e = bound
        block = values[s:e]
        mode[s:e], best[s:e] = _assign_chunk(
            normalized_rows(block), z_refs, constant_rows(block)
        )

    if n_jobs is None or n_jobs <= 1 or len(bounds) == 1:
        for b in bounds:
            work(b)
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            list(pool.map(work, bounds))
    return mode, best


def row_dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-row inner products, independent of how rows are batched."""
    return np.sum(a * b, axis=-1)

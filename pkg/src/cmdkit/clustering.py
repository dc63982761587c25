"""Complete-linkage clustering of sampled trajectories on d = 1 - |corr|.

Cluster ids follow the usual agglomerative convention: leaves are
``0..K-1`` and the cluster formed by merge ``s`` gets id ``K + s``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, DegenerateDataError

DEFAULT_K = 1000
DEFAULT_EPSILON = 0.1


@dataclass(frozen=True)
class ClusterConfig:
    """Sampling and cut settings.

    Exactly one of ``n_modes`` (fixed mode count) or ``threshold`` (maximal
    cophenetic distance inside a cluster) may be set. With neither, the
    threshold defaults to half of the largest pairwise distance among the
    sampled weights.
    """

    K: int = DEFAULT_K
    n_modes: int | None = None
    threshold: float | None = None
    epsilon: float = DEFAULT_EPSILON
    seed: int = 0

    def __post_init__(self):
        if self.n_modes is not None and self.threshold is not None:
            raise ConfigError("choose either a fixed mode count or a threshold, not both")
        if int(self.K) < 1:
            raise ConfigError(f"K must be positive, got {self.K}")
        if self.n_modes is not None:
            if int(self.n_modes) < 1:
                raise ConfigError(f"mode count must be positive, got {self.n_modes}")
            if int(self.n_modes) > int(self.K):
                raise ConfigError(f"mode count {self.n_modes} exceeds K={self.K}")
        if self.threshold is not None and not 0.0 < float(self.threshold) <= 1.0:
            raise ConfigError(f"threshold must lie in (0, 1], got {self.threshold}")
        if not 0.0 < float(self.epsilon) < 1.0:
            raise ConfigError(f"epsilon must lie in (0, 1), got {self.epsilon}")

    @property
    def cut_kind(self) -> str:
        if self.n_modes is not None:
            return "fixed_modes"
        if self.threshold is not None:
            return "threshold"
        return "half_max_distance"

    def to_dict(self) -> dict:
        return {
            "K": int(self.K),
            "cut": self.cut_kind,
            "n_modes": None if self.n_modes is None else int(self.n_modes),
            "threshold": None if self.threshold is None else float(self.threshold),
            "epsilon": float(self.epsilon),
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterConfig":
        return cls(
            K=int(d["K"]),
            n_modes=d.get("n_modes"),
            threshold=d.get("threshold"),
            epsilon=float(d.get("epsilon", DEFAULT_EPSILON)),
            seed=int(d.get("seed", 0)),
        )


@dataclass(frozen=True)
class Dendrogram:
    n_leaves: int
    merges: np.ndarray  # (K-1, 4): left id, right id, height, size

    @property
    def heights(self) -> np.ndarray:
        return self.merges[:, 2]

    def to_dict(self) -> dict:
        return {
            "n_leaves": int(self.n_leaves),
            "merges": [
                {"left": int(l), "right": int(r), "height": float(h), "size": int(s)}
                for l, r, h, s in self.merges
            ],
        }

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)


def distance_matrix(c: np.ndarray) -> np.ndarray:
    return 1.0 - np.abs(c)


def linkage(c) -> Dendrogram:
    """Complete-linkage dendrogram of a correlation matrix.

    At every step the closest pair of active clusters is merged; among
    equally close pairs the one whose lower slot index is smallest wins,
    then the smallest partner. The row-minimum cache keeps the whole run at
    O(K^2) for K up to a few thousand.
    """
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError(f"correlation matrix must be square, got {c.shape}")
    if not np.array_equal(c, c.T):
        if not np.allclose(c, c.T, rtol=0, atol=1e-12):
            raise ValueError("correlation matrix is not symmetric")
        c = 0.5 * (c + c.T)
    k = c.shape[0]
    d = distance_matrix(c)
    np.fill_diagonal(d, np.inf)
    ids = np.arange(k)
    sizes = np.ones(k, dtype=np.int64)
    row_min = d.min(axis=1) if k > 1 else np.full(k, np.inf)
    row_arg = d.argmin(axis=1) if k > 1 else np.zeros(k, dtype=np.int64)
    merges = np.empty((max(k - 1, 0), 4))

    for step in range(k - 1):
        i = int(np.argmin(row_min))
        j = int(row_arg[i])
        if j < i:
            i, j = j, i
        height = d[i, j]
        lo, hi = sorted((ids[i], ids[j]))
        sizes[i] += sizes[j]
        merges[step] = (lo, hi, height, sizes[i])

        merged = np.maximum(d[i], d[j])
        merged[i] = np.inf
        merged[j] = np.inf
        d[i, :] = merged
        d[:, i] = merged
        d[j, :] = np.inf
        d[:, j] = np.inf
        ids[i] = k + step
        row_min[j] = np.inf

        stale = np.flatnonzero((row_arg == i) | (row_arg == j))
        stale = stale[np.isfinite(row_min[stale])]
        for r in np.union1d(stale, [i]):
            row_arg[r] = int(np.argmin(d[r]))
            row_min[r] = d[r, row_arg[r]]
        # rows whose cached partner survived: only d[r, i] can have changed,
        # and it can only have grown, so their minima stay valid
    return Dendrogram(k, merges)


def _labels_after(dendro: Dendrogram, n_merges: int) -> np.ndarray:
    k = dendro.n_leaves
    parent = np.arange(2 * k - 1 if k else 0)
    for step in range(n_merges):
        left, right = int(dendro.merges[step, 0]), int(dendro.merges[step, 1])
        parent[left] = k + step
        parent[right] = k + step

    def root(x):
        while parent[x] != x:
            x = parent[x]
        return x

    roots = [root(leaf) for leaf in range(k)]
    relabel = {}
    labels = np.empty(k, dtype=np.int64)
    for leaf, r in enumerate(roots):
        labels[leaf] = relabel.setdefault(r, len(relabel))
    return labels


def max_pairwise_distance(c: np.ndarray) -> float:
    return float(np.max(distance_matrix(np.asarray(c)))) if len(c) else 0.0


def cut(dendro: Dendrogram, n_modes: int | None = None, threshold: float | None = None):
    """Flat cluster labels for the K leaves.

    ``n_modes`` applies the first K - M merges, giving exactly min(M, K)
    clusters. ``threshold`` applies every merge whose height is <= t, so no
    cluster has a cophenetic diameter above t. Labels are numbered in order
    of each cluster's lowest leaf.
    """
    if (n_modes is None) == (threshold is None):
        raise ConfigError("cut needs exactly one of n_modes or threshold")
    k = dendro.n_leaves
    if n_modes is not None:
        n_merges = k - min(int(n_modes), k)
    else:
        n_merges = int(np.searchsorted(dendro.heights, float(threshold), side="right"))
    return _labels_after(dendro, n_merges)


def cut_with_config(dendro: Dendrogram, c: np.ndarray, cfg: ClusterConfig):
    """Apply the cut described by ``cfg``; returns (labels, threshold_used)."""
    if cfg.cut_kind == "fixed_modes":
        return cut(dendro, n_modes=cfg.n_modes), None
    t = cfg.threshold
    if t is None:
        t = 0.5 * max_pairwise_distance(c)
    return cut(dendro, threshold=t), float(t)


def choose_references(c: np.ndarray, labels, sample_indices=None, tol: float = 1e-12):
    """Per cluster, the member with the largest total |corr| to its cluster.

    Sums within ``tol * cluster_size`` of the best are treated as ties and
    resolved toward the lowest row index. Returns positions into the sample
    (or row indices when ``sample_indices`` is given), one per cluster id.
    """
    c = np.abs(np.asarray(c, dtype=np.float64))
    labels = np.asarray(labels)
    order = (
        np.arange(len(labels)) if sample_indices is None else np.asarray(sample_indices)
    )
    refs = []
    for mode in range(int(labels.max()) + 1 if labels.size else 0):
        members = np.flatnonzero(labels == mode)
        if members.size == 0:
            raise DegenerateDataError(f"cluster {mode} is empty")
        totals = c[np.ix_(members, members)].sum(axis=1)
        best = totals.max()
        near = members[totals >= best - tol * members.size]
        refs.append(int(order[near[np.argmin(order[near])]]))
    return refs

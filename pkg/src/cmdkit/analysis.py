"""Metrics and plot-ready data: reconstruction error, per-mode confidence
bands, mode distribution over layers and method comparison tables."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .correlation import STATIC_MODE
from .decomposition import ModeModel, reconstruct, reconstruct_full
from .dmd import DmdModel, dmd_reconstruct
from .generators import evaluate_weights
from .trajectory import SnapshotMatrix
from .validation import check_same_shape

CI_FRAME = "inverse-affine: (w_i - b_i) / a_i, static rows excluded"
SCALE_FLOOR = 1e-12


def weights_mse(w, w_hat) -> float:
    """Mean of squared differences over all N * (T+1) entries."""
    a, b = check_same_shape(w, w_hat)
    return float(np.mean((a - b) ** 2))


def nearest_rank(sorted_values: np.ndarray, p: float) -> np.ndarray:
    """Nearest-rank percentile along axis 0 of pre-sorted values."""
    n = sorted_values.shape[0]
    rank = min(max(math.ceil(p * n), 1), n)
    return sorted_values[rank - 1]


@dataclass
class ConfidenceBands:
    level: float
    bands: dict = field(default_factory=dict)  # mode -> (low, high) arrays
    omitted: list = field(default_factory=list)  # modes without usable members
    frame: str = CI_FRAME

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "frame": self.frame,
            "omitted_modes": [int(m) for m in self.omitted],
            "bands": {
                str(m): {"low": lo.tolist(), "high": hi.tolist()}
                for m, (lo, hi) in sorted(self.bands.items())
            },
        }


def confidence_bands(m, model: ModeModel, level: float = 0.95) -> ConfidenceBands:
    """Per-mode, per-epoch central interval of members in the reference frame.

    Each member is mapped back through its affine fit, (w_i - b_i) / a_i,
    so a perfect member coincides with the reference. Bounds are the
    nearest-rank (1-level)/2 and (1+level)/2 percentiles.
    """
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    values = m.values if isinstance(m, SnapshotMatrix) else np.asarray(m, dtype=np.float64)
    if values.shape != (model.n_weights, model.n_epochs):
        raise ValueError(
            f"matrix shape {values.shape} does not match the model "
            f"({model.n_weights}, {model.n_epochs})"
        )
    out = ConfidenceBands(level)
    lo_p, hi_p = (1.0 - level) / 2.0, (1.0 + level) / 2.0
    for mode in range(model.n_modes):
        rows = np.flatnonzero((model.labels == mode) & (np.abs(model.a) >= SCALE_FLOOR))
        if rows.size == 0:
            out.omitted.append(mode)
            continue
        frame = (values[rows] - model.b[rows, None]) / model.a[rows, None]
        frame.sort(axis=0)
        out.bands[mode] = (nearest_rank(frame, lo_p), nearest_rank(frame, hi_p))
    return out


def mode_distribution(model: ModeModel, layers=None) -> dict:
    """Counts per (layer name, mode id); static rows appear under mode -1."""
    layers = layers or model.layers
    hist = {}
    for layer in layers:
        ids, counts = np.unique(model.labels[layer.start : layer.stop], return_counts=True)
        hist[layer.name] = {int(i): int(c) for i, c in zip(ids, counts)}
    return hist


def per_mode_stats(model: ModeModel, epsilon: float | None = None) -> list[dict]:
    """Size, mean |corr| to the reference and fraction with |corr| >= 1 - epsilon."""
    eps = model.config.epsilon if epsilon is None else epsilon
    stats = []
    for mode in [STATIC_MODE] + list(range(model.n_modes)):
        members = model.labels == mode
        size = int(np.count_nonzero(members))
        if mode == STATIC_MODE:
            if size:
                stats.append({"mode": mode, "size": size, "mean_abs_corr": None,
                              "fraction_within_epsilon": None})
            continue
        rho = np.abs(model.corr[members])
        stats.append({
            "mode": mode,
            "size": size,
            "reference_index": int(model.reference_indices[mode]),
            "mean_abs_corr": float(rho.mean()) if size else None,
            "fraction_within_epsilon": float(np.mean(rho >= 1.0 - eps)) if size else None,
        })
    return stats


def _cmd_reconstruction(w: SnapshotMatrix, model: ModeModel) -> SnapshotMatrix:
    if model.n_epochs == w.n_epochs:
        return reconstruct(model)
    return reconstruct_full(model, w)


def build_report(
    w: SnapshotMatrix,
    model: ModeModel,
    w_hat: SnapshotMatrix | None = None,
    level: float = 0.95,
    epsilon: float | None = None,
    timings: dict | None = None,
) -> dict:
    """DecompositionReport as a JSON-ready dict.

    ``w`` must be the matrix the model was fit on (same epochs). Stage
    timings are only included when passed explicitly, so reports stay
    byte-reproducible by default.
    """
    w_hat = reconstruct(model) if w_hat is None else w_hat
    report = {
        "weights_mse": weights_mse(w, w_hat),
        "n_weights": w.n_weights,
        "n_epochs": w.n_epochs,
        "n_modes": model.n_modes,
        "threshold": model.threshold,
        "config": model.config.to_dict(),
        "epoch_selection": model.epoch_selection.to_dict(),
        "per_mode": per_mode_stats(model, epsilon),
        "per_layer_mode_histogram": {
            layer: {str(k): v for k, v in modes.items()}
            for layer, modes in mode_distribution(model).items()
        },
        "ci_bands": confidence_bands(w, model, level).to_dict(),
        "sample": None if model.sample is None else model.sample.to_dict(),
    }
    if timings is not None:
        report["runtime_ms"] = {k: round(float(v), 3) for k, v in timings.items()}
    return report


def compare(w: SnapshotMatrix, cmd_model: ModeModel, dmd_model: DmdModel, task=None) -> list[dict]:
    """One row per method: dimension, weights MSE and optional task metrics.

    ``task`` is an :class:`~cmdkit.generators.MlpTaskConfig`; when given,
    held-out accuracy of the reconstructed weights is reported per epoch.
    """
    rows = []
    recon = {
        "cmd": (cmd_model.n_modes, _cmd_reconstruction(w, cmd_model)),
        "dmd": (dmd_model.rank, dmd_reconstruct(dmd_model, w.n_epochs)),
    }
    for method, (dim, w_hat) in recon.items():
        row = {"method": method, "dimension": int(dim), "weights_mse": weights_mse(w, w_hat)}
        if task is not None:
            acc = [evaluate_weights(task, w_hat, k)["accuracy"] for k in range(w.n_epochs)]
            row["final_accuracy"] = acc[-1]
            row["max_accuracy"] = max(acc)
            row["accuracy_per_epoch"] = acc
        rows.append(row)
    return rows


def write_json(doc, path) -> None:
    """Deterministic UTF-8 JSON (sorted keys, fixed separators)."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1, allow_nan=False)
        fh.write("\n")


def write_compare_csv(rows: list[dict], path) -> None:
    cols = ["method", "dimension", "weights_mse", "final_accuracy", "max_accuracy"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in rows:
            writer.writerow([_fmt(row.get(c, "")) for c in cols])


def _fmt(v):
    return repr(v) if isinstance(v, float) else v


def report_long_rows(report: dict):
    """Yield ``(metric, mode, layer, epoch, value)`` tuples for long-format CSV."""
    yield ("weights_mse", "", "", "", report["weights_mse"])
    for s in report.get("per_mode", []):
        for key in ("size", "mean_abs_corr", "fraction_within_epsilon"):
            if s.get(key) is not None:
                yield (key, s["mode"], "", "", s[key])
    for layer, modes in report.get("per_layer_mode_histogram", {}).items():
        for mode, count in modes.items():
            yield ("layer_mode_count", mode, layer, "", count)
    bands = report.get("ci_bands", {}).get("bands", {})
    for mode, band in bands.items():
        for side in ("low", "high"):
            for k, v in enumerate(band[side]):
                yield (f"ci_{side}", mode, "", k, v)


def write_report_csv(report: dict, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "mode", "layer", "epoch", "value"])
        for row in report_long_rows(report):
            writer.writerow([_fmt(v) for v in row])

"""Snapshot matrix of weight trajectories, its on-disk formats and epoch-axis views.

The canonical file format ("CMDT") is::

    magic      4 bytes   b"CMDT"
    version    u32       1
    n_weights  u64       N
    n_epochs   u64       T + 1
    n_layers   u32
    per layer  u16 name length, UTF-8 name, u64 start_row, u64 row_count
    payload    N * (T + 1) float64, row-major

All integers and floats are little-endian. A CSV fallback with header
``weight_id,epoch_0,...,epoch_T`` is accepted for small matrices.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import (
    ConfigError,
    LayerIndexError,
    TrajectoryDataError,
    TrajectoryFormatError,
)

MAGIC = b"CMDT"
VERSION = 1
CSV_MAX_ROWS = 10_000

_HEADER = struct.Struct("<4sIQQI")
_NAME_LEN = struct.Struct("<H")
_SPAN = struct.Struct("<QQ")


@dataclass(frozen=True)
class Layer:
    name: str
    start: int
    count: int

    @property
    def stop(self) -> int:
        return self.start + self.count


@dataclass(frozen=True)
class EpochSelection:
    """Which epochs of the source matrix a derived matrix retains."""

    kind: str = "full"
    parameter: int | None = None
    retained_epochs: tuple[int, ...] = ()

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "parameter": self.parameter,
            "retained_epochs": list(self.retained_epochs),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EpochSelection":
        kind = d["kind"]
        if kind not in ("full", "truncate_from", "subsample"):
            raise ValueError(f"unknown epoch selection kind {kind!r}")
        retained = tuple(int(e) for e in d["retained_epochs"])
        if any(b <= a for a, b in zip(retained, retained[1:])):
            raise ValueError("retained_epochs must be strictly increasing")
        param = d.get("parameter")
        return cls(kind, None if param is None else int(param), retained)

    @classmethod
    def full(cls, n_epochs: int) -> "EpochSelection":
        return cls("full", None, tuple(range(n_epochs)))


@dataclass(frozen=True, eq=False)
class SnapshotMatrix:
    """N x (T+1) matrix; row i is the trajectory of weight i over epochs 0..T.

    The value array is made read-only on construction; derived matrices are
    always new objects.
    """

    values: np.ndarray
    layers: tuple[Layer, ...] = field(default=())

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, order="C", copy=True)
        if values.ndim != 2:
            raise TrajectoryDataError(f"expected a 2-D matrix, got {values.ndim}-D")
        layers = tuple(self.layers) or (Layer("all", 0, values.shape[0]),)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "layers", layers)
        self.validate()

    def validate(self) -> None:
        n, cols = self.values.shape
        if n < 1:
            raise TrajectoryDataError("matrix must have at least one weight row")
        if cols < 2:
            raise TrajectoryDataError("matrix must have at least two epochs (T >= 1)")
        if not np.all(np.isfinite(self.values)):
            bad = np.argwhere(~np.isfinite(self.values))[0]
            raise TrajectoryDataError(
                f"non-finite value at weight {bad[0]}, epoch {bad[1]}"
            )
        check_layer_index(self.layers, n)

    @property
    def n_weights(self) -> int:
        return self.values.shape[0]

    @property
    def n_epochs(self) -> int:
        """Number of stored epochs, T + 1."""
        return self.values.shape[1]

    @property
    def T(self) -> int:
        return self.values.shape[1] - 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def with_values(self, values) -> "SnapshotMatrix":
        """Same layer index, new values (row count must match)."""
        return SnapshotMatrix(values, self.layers)

    def layer_of_rows(self) -> np.ndarray:
        """Per-row integer position into ``self.layers``."""
        out = np.empty(self.n_weights, dtype=np.int64)
        for pos, layer in enumerate(self.layers):
            out[layer.start : layer.stop] = pos
        return out

    def __eq__(self, other):
        if not isinstance(other, SnapshotMatrix):
            return NotImplemented
        return self.layers == other.layers and np.array_equal(
            self.values, other.values
        )

    __hash__ = None


def check_layer_index(layers, n_rows: int) -> None:
    if not layers:
        raise LayerIndexError("layer index is empty")
    expected = 0
    for layer in layers:
        if layer.count < 1:
            raise LayerIndexError(f"layer {layer.name!r} has no rows")
        if layer.start != expected:
            raise LayerIndexError(
                f"layer {layer.name!r} starts at row {layer.start}, expected {expected}"
            )
        expected = layer.stop
    if expected != n_rows:
        raise LayerIndexError(f"layer spans cover {expected} rows, matrix has {n_rows}")


# -- binary format ---------------------------------------------------------


def save_trajectory(m: SnapshotMatrix, path) -> None:
    if not m.layers:
        raise LayerIndexError("cannot save a matrix with an empty layer list")
    check_layer_index(m.layers, m.n_weights)
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, VERSION, m.n_weights, m.n_epochs, len(m.layers)))
    for layer in m.layers:
        name = layer.name.encode("utf-8")
        if len(name) > 0xFFFF:
            raise LayerIndexError(f"layer name too long: {layer.name[:40]!r}...")
        buf.write(_NAME_LEN.pack(len(name)))
        buf.write(name)
        buf.write(_SPAN.pack(layer.start, layer.count))
    buf.write(np.ascontiguousarray(m.values, dtype="<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_trajectory(path) -> SnapshotMatrix:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        if data.lstrip(b"\xef\xbb\xbf").startswith(b"weight_id"):
            return _load_csv(data.decode("utf-8-sig"))
        raise TrajectoryFormatError(f"{path}: bad magic {data[:4]!r}, not a CMDT file")
    return _parse_cmdt(data)


def _parse_cmdt(data: bytes) -> SnapshotMatrix:
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise TrajectoryFormatError("unexpected end of data")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    magic, version, n, cols, n_layers = _HEADER.unpack(take(_HEADER.size))
    if version != VERSION:
        raise TrajectoryFormatError(f"unsupported CMDT version {version}")
    layers = []
    for _ in range(n_layers):
        (name_len,) = _NAME_LEN.unpack(take(_NAME_LEN.size))
        try:
            name = take(name_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise TrajectoryFormatError(f"layer name is not UTF-8: {exc}") from None
        start, count = _SPAN.unpack(take(_SPAN.size))
        layers.append(Layer(name, start, count))
    check_layer_index(layers, n)
    payload = take(n * cols * 8)
    if pos != len(data):
        raise TrajectoryFormatError(f"{len(data) - pos} trailing bytes after payload")
    values = np.frombuffer(payload, dtype="<f8").reshape(n, cols)
    return SnapshotMatrix(values, tuple(layers))


# -- CSV fallback ----------------------------------------------------------


def _load_csv(text: str) -> SnapshotMatrix:
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], [r for r in rows[1:] if r]
    if header[0].strip() != "weight_id" or len(header) < 3:
        raise TrajectoryFormatError("CSV header must be weight_id,epoch_0,...,epoch_T")
    for k, name in enumerate(header[1:]):
        if name.strip() != f"epoch_{k}":
            raise TrajectoryFormatError(f"CSV column {k + 1} is {name!r}, expected epoch_{k}")
    if len(body) > CSV_MAX_ROWS:
        raise TrajectoryFormatError(
            f"CSV input limited to {CSV_MAX_ROWS} weights; use the binary format"
        )
    values = np.empty((len(body), len(header) - 1))
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise TrajectoryFormatError(f"CSV row {i} has {len(row)} fields")
        try:
            values[i] = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise TrajectoryFormatError(f"CSV row {i}: {exc}") from None
    return SnapshotMatrix(values)


def save_trajectory_csv(m: SnapshotMatrix, path) -> None:
    if m.n_weights > CSV_MAX_ROWS:
        raise TrajectoryFormatError(f"CSV output limited to {CSV_MAX_ROWS} weights")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["weight_id"] + [f"epoch_{k}" for k in range(m.n_epochs)])
        for i, row in enumerate(m.values):
            writer.writerow([i] + [repr(float(v)) for v in row])


# -- epoch-axis views --------------------------------------------------------


def truncate_history(m: SnapshotMatrix, first_epoch: int):
    """Keep epochs ``first_epoch..T``; returns (matrix, EpochSelection)."""
    first_epoch = int(first_epoch)
    if not 0 <= first_epoch < m.T:
        raise ConfigError(f"first_epoch must lie in [0, {m.T}), got {first_epoch}")
    retained = tuple(range(first_epoch, m.n_epochs))
    kind = "full" if first_epoch == 0 else "truncate_from"
    sel = EpochSelection(kind, None if first_epoch == 0 else first_epoch, retained)
    return m.with_values(m.values[:, first_epoch:]), sel


def subsample_epochs(m: SnapshotMatrix, factor: int):
    """Keep epochs 0, f, 2f, ... without any pre-filtering."""
    factor = int(factor)
    if factor < 2:
        raise ConfigError(f"subsampling factor must be >= 2, got {factor}")
    retained = tuple(range(0, m.n_epochs, factor))
    if len(retained) < 2:
        raise ConfigError(
            f"factor {factor} leaves {len(retained)} epoch(s) of {m.n_epochs}; need >= 2"
        )
    sel = EpochSelection("subsample", factor, retained)
    return m.with_values(m.values[:, list(retained)]), sel

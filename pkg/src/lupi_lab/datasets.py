"""File-backed datasets: IDX image archives, partitioned CSV tables, and
a .npz container for generated triples.

The IDX reader handles the classic big-endian image/label pair (magic
2051/2049); 28x28 images are downscaled to 7x7 by 4x4 average pooling.
The CSV loader maps named columns onto (X, Z, y) per a PartitionSpec."""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .synthgen import TASKS, TripleDataset

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049


class IdxFormatError(ValueError):
    """The file is not a well-formed IDX archive."""


class IdxCountMismatchError(IdxFormatError):
    """Image and label archives disagree on the number of items."""


class UnknownColumnError(KeyError):
    """A PartitionSpec column is missing from the CSV header."""


class NonNumericCellError(ValueError):
    """A non-missing cell failed numeric parsing."""


class EmptyDataError(ValueError):
    """No usable rows remain after dropping incomplete ones."""


# ---------------------------------------------------------------------------
# IDX / MNIST
# ---------------------------------------------------------------------------


def _read_exact(f, count: int, path, what: str) -> bytes:
    data = f.read(count)
    if len(data) != count:
        raise IdxFormatError(f"{path}: truncated file while reading {what} "
                             f"(wanted {count} bytes, got {len(data)})")
    return data


def read_idx_images(path) -> np.ndarray:
    """(n, rows, cols) uint8 array from a big-endian IDX image file."""
    with open(path, "rb") as f:
        magic, n, rows, cols = struct.unpack(">iiii", _read_exact(f, 16, path, "header"))
        if magic != IMAGE_MAGIC:
            raise IdxFormatError(f"{path}: bad magic {magic}, expected {IMAGE_MAGIC} for images")
        data = _read_exact(f, n * rows * cols, path, f"{n} images")
        if f.read(1):
            raise IdxFormatError(f"{path}: trailing bytes after {n} images")
    return np.frombuffer(data, dtype=np.uint8).reshape(n, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    """(n,) uint8 label array from a big-endian IDX label file."""
    with open(path, "rb") as f:
        magic, n = struct.unpack(">ii", _read_exact(f, 8, path, "header"))
        if magic != LABEL_MAGIC:
            raise IdxFormatError(f"{path}: bad magic {magic}, expected {LABEL_MAGIC} for labels")
        data = _read_exact(f, n, path, f"{n} labels")
        if f.read(1):
            raise IdxFormatError(f"{path}: trailing bytes after {n} labels")
    return np.frombuffer(data, dtype=np.uint8)


def load_mnist(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """(images: n x 784 in [0,1], labels: n x 10 one-hot) from an IDX pair."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatchError(
            f"{images.shape[0]} images but {labels.shape[0]} labels")
    n, rows, cols = images.shape
    flat = images.reshape(n, rows * cols).astype(np.float64) / 255.0
    onehot = np.eye(10)[labels.astype(np.int64)]
    return flat, onehot


def downscale_28_to_7(image: np.ndarray) -> np.ndarray:
    """4x4 non-overlapping block average pooling of a 28x28 image."""
    image = np.asarray(image, dtype=np.float64)
    if image.shape != (28, 28):
        raise ValueError(f"expected a 28x28 image, got shape {image.shape}")
    if not np.all(np.isfinite(image)):
        raise ValueError("image contains non-finite values")
    return image.reshape(7, 4, 7, 4).mean(axis=(1, 3))


def downscale_batch(flat: np.ndarray) -> np.ndarray:
    """Vectorized downscaling of an (n, 784) batch to (n, 49)."""
    flat = np.asarray(flat, dtype=np.float64)
    if flat.ndim != 2 or flat.shape[1] != 784:
        raise ValueError(f"expected (n, 784), got {flat.shape}")
    n = flat.shape[0]
    return flat.reshape(n, 7, 4, 7, 4).mean(axis=(2, 4)).reshape(n, 49)


# ---------------------------------------------------------------------------
# partitioned CSV
# ---------------------------------------------------------------------------

_MISSING = {"", "na", "nan", "null", "none"}


@dataclass(frozen=True)
class PartitionSpec:
    """Column assignment for CSV ingestion: each named column goes to
    exactly one of x, z, y, or drop; `target` declares label encoding and
    `time_column` (optional, must be listed in drop/x/z or standalone)
    switches the sweep to a timestamp-ordered split."""

    x_columns: tuple[str, ...]
    z_columns: tuple[str, ...] = ()
    y_column: str = "y"
    drop_columns: tuple[str, ...] = ()
    target: str = "binary"  # binary | onehot
    time_column: str | None = None
    standardize: bool = False

    def __post_init__(self):
        object.__setattr__(self, "x_columns", tuple(self.x_columns))
        object.__setattr__(self, "z_columns", tuple(self.z_columns))
        object.__setattr__(self, "drop_columns", tuple(self.drop_columns))
        if not self.x_columns:
            raise ValueError("x_columns must be non-empty")
        groups = {"x": set(self.x_columns), "z": set(self.z_columns),
                  "y": {self.y_column}, "drop": set(self.drop_columns)}
        names = list(self.x_columns) + list(self.z_columns) + [self.y_column] + list(self.drop_columns)
        if len(names) != len(set(names)):
            overlap = sorted({n for n in names if names.count(n) > 1})
            raise ValueError(f"columns assigned to more than one group: {overlap}")
        if self.target not in ("binary", "onehot", "regression"):
            raise ValueError(f"unknown target encoding {self.target!r}")

    def to_dict(self) -> dict:
        return {
            "x_columns": list(self.x_columns), "z_columns": list(self.z_columns),
            "y_column": self.y_column, "drop_columns": list(self.drop_columns),
            "target": self.target, "time_column": self.time_column,
            "standardize": self.standardize,
        }

    @staticmethod
    def from_dict(d: dict) -> "PartitionSpec":
        return PartitionSpec(
            x_columns=tuple(d["x_columns"]), z_columns=tuple(d.get("z_columns", ())),
            y_column=d.get("y_column", "y"), drop_columns=tuple(d.get("drop_columns", ())),
            target=d.get("target", "binary"), time_column=d.get("time_column"),
            standardize=bool(d.get("standardize", False)),
        )


@dataclass
class CsvLoadReport:
    rows_read: int = 0
    rows_dropped: int = 0
    time_values: np.ndarray | None = None


def load_csv_partitioned(path, spec: PartitionSpec) -> tuple[TripleDataset, CsvLoadReport]:
    """Parse a headered CSV into a TripleDataset per the partition spec.

    Rows with missing values in any used column are dropped and counted;
    non-missing cells that fail numeric parsing raise.  Returns the
    dataset plus a load report (row counts, optional time column values
    for ordered splitting).  Standardization is a split-time concern --
    see standardize_features."""
    path = Path(path)
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyDataError(f"{path}: empty file") from None
        rows = [r for r in reader if r]

    col_index = {name: i for i, name in enumerate(header)}
    used = list(spec.x_columns) + list(spec.z_columns) + [spec.y_column]
    if spec.time_column:
        used.append(spec.time_column)
    for name in used + list(spec.drop_columns):
        if name not in col_index:
            raise UnknownColumnError(f"{path}: column {name!r} not in header {header}")

    report = CsvLoadReport(rows_read=len(rows))
    parsed = []
    times = []
    for rownum, row in enumerate(rows, start=2):  # header is line 1
        cells = []
        missing = False
        for name in used:
            raw = row[col_index[name]].strip()
            if raw.lower() in _MISSING:
                missing = True
                break
            try:
                cells.append(float(raw))
            except ValueError:
                raise NonNumericCellError(
                    f"{path}: line {rownum}, column {name!r}: "
                    f"cannot parse {raw!r} as a number") from None
        if missing:
            report.rows_dropped += 1
            continue
        if spec.time_column:
            times.append(cells.pop())
        parsed.append(cells)

    if not parsed:
        raise EmptyDataError(f"{path}: no usable rows after dropping "
                             f"{report.rows_dropped} incomplete rows")

    data = np.array(parsed, dtype=np.float64)
    n_x, n_z = len(spec.x_columns), len(spec.z_columns)
    X = data[:, :n_x]
    Z = data[:, n_x : n_x + n_z]
    y_raw = data[:, n_x + n_z]
    if spec.time_column:
        report.time_values = np.array(times)

    if spec.target == "binary":
        uniq = np.unique(y_raw)
        if not set(uniq) <= {0.0, 1.0}:
            raise ValueError(f"{path}: binary target has values outside {{0,1}}: {uniq[:5]}")
        y = y_raw
        task = "binary"
    elif spec.target == "onehot":
        classes = np.unique(y_raw)
        lookup = {c: i for i, c in enumerate(classes)}
        y = np.eye(len(classes))[[lookup[v] for v in y_raw]]
        task = "multiclass"
    else:
        y = y_raw
        task = "regression"

    meta = {"source": str(path), "partition": spec.to_dict(),
            "rows_dropped": report.rows_dropped}
    return TripleDataset(X, Z, y, task, meta), report


def save_triples(ds: TripleDataset, path) -> None:
    """Write a TripleDataset to a compressed .npz archive."""
    np.savez_compressed(path, X=ds.X, Z=ds.Z, y=ds.y,
                        task=np.array(ds.task),
                        meta=np.array(json.dumps(ds.meta)))


def load_triples(path) -> TripleDataset:
    """Read a TripleDataset back from a save_triples archive."""
    with np.load(path, allow_pickle=False) as archive:
        for key in ("X", "Z", "y", "task", "meta"):
            if key not in archive:
                raise KeyError(f"{path}: missing array {key!r}")
        task = str(archive["task"])
        if task not in TASKS:
            raise ValueError(f"{path}: unknown task {task!r}")
        return TripleDataset(archive["X"], archive["Z"], archive["y"],
                             task, json.loads(str(archive["meta"])))


def standardize_features(train: np.ndarray, *others: np.ndarray):
    """Per-column z-score with moments fit on the training block only.

    Constant columns are left centered but unscaled.  Returns the
    transformed train block followed by the transformed others."""
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    out = [(train - mean) / std]
    out.extend((o - mean) / std for o in others)
    return out[0] if not others else tuple(out)

"""Traffic datasets: CSV ingestion, preprocessing, synthetic data, encryption, metrics."""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .cipher import CT_HEADER, Ciphertext, HEContext, PublicKey, SecretKey, ct_deserialize, ct_serialize
from .errors import CapacityError, DataError, FormatError, ParseError, SamplingError, SchemaError
from .packing import PackedLayout, pack1d, unpack1d

DEFAULT_CLASSES = ("Normal", "DoS", "BP", "FoT", "MitM")
DATA_MAGIC = b"HEDATA01"
DATA_VERSION = 1
_DATA_HEADER = struct.Struct("<8sBIIBIBI")


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    class_names: tuple = DEFAULT_CLASSES
    scale_min: np.ndarray | None = None
    scale_max: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64).reshape(len(self.labels), -1)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.class_names = tuple(self.class_names)

    def __len__(self):
        return int(self.labels.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def onehot(self) -> np.ndarray:
        return np.eye(self.n_classes)[self.labels]

    def subset(self, idx) -> Dataset:
        return Dataset(self.features[idx], self.labels[idx], self.class_names, self.scale_min, self.scale_max)


def default_class_names(n: int) -> tuple:
    return DEFAULT_CLASSES if n == len(DEFAULT_CLASSES) else tuple(f"class{i}" for i in range(n))


def load_csv(path, n_features: int = 21, class_names=DEFAULT_CLASSES) -> Dataset:
    """Header row, ``n_features`` numeric columns, then a label column holding a class name."""
    path = Path(path)
    lookup = {name: i for i, name in enumerate(class_names)}
    rows, labels = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError(path, 1, "empty file, expected a header row")
        if len(header) != n_features + 1:
            raise SchemaError(f"{path}:1: header has {len(header) - 1} feature columns, expected {n_features}")
        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != n_features + 1:
                raise ParseError(path, line, f"expected {n_features + 1} columns, got {len(row)}")
            try:
                rows.append([float(v) for v in row[:-1]])
            except ValueError as e:
                raise ParseError(path, line, str(e)) from None
            name = row[-1].strip()
            if name not in lookup:
                raise SchemaError(f"{path}:{line}: unknown label {name!r}")
            labels.append(lookup[name])
    feats = np.array(rows, dtype=np.float64).reshape(len(rows), n_features)
    return Dataset(feats, np.array(labels, dtype=np.int64), class_names)


def write_csv(path, d: Dataset):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{i}" for i in range(d.n_features)] + ["label"])
        for x, y in zip(d.features, d.labels):
            w.writerow([repr(float(v)) for v in x] + [d.class_names[y]])


def minmax_fit(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return X.min(axis=0), X.max(axis=0)


def minmax_apply(X: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Scale into [0, 1]; constant columns map to 0; out-of-range values are clipped."""
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, (X - lo) / safe, 0.0)
    return np.clip(out, 0.0, 1.0)


def preprocess(d: Dataset, per_class: int = 2000, split_seed: int = 0, test_frac: float = 0.2):
    """Stratified downsample, 80:20 stratified split, min-max scaling fitted on train."""
    rng = np.random.default_rng(split_seed)
    train_idx, test_idx = [], []
    n_test = int(round(per_class * test_frac))
    for c in range(d.n_classes):
        rows = np.flatnonzero(d.labels == c)
        if rows.shape[0] < per_class:
            raise SamplingError(f"class {d.class_names[c]!r} has {rows.shape[0]} rows, need {per_class}")
        picked = rng.permutation(rows)[:per_class]
        test_idx.append(picked[:n_test])
        train_idx.append(picked[n_test:])
    train_idx = rng.permutation(np.concatenate(train_idx))
    test_idx = rng.permutation(np.concatenate(test_idx))
    lo, hi = minmax_fit(d.features[train_idx])
    train = Dataset(minmax_apply(d.features[train_idx], lo, hi), d.labels[train_idx], d.class_names, lo, hi)
    test = Dataset(minmax_apply(d.features[test_idx], lo, hi), d.labels[test_idx], d.class_names, lo, hi)
    return train, test


def synth_generate(classes: int = 5, features: int = 21, per_class: int = 200, seed: int = 7,
                   spread: float = 0.15) -> Dataset:
    """Per-class correlated Gaussian clusters clipped to [0, 1]^F.

    Cluster centres are Beta(0.6, 3) per feature, so most features sit near
    zero the way min-max scaled traffic counters do.
    """
    rng = np.random.default_rng(seed)
    feats, labels = [], []
    for c in range(classes):
        mean = rng.beta(0.6, 3.0, features)
        factor = rng.normal(0.0, spread, (features, features)) / np.sqrt(features)
        scale = rng.uniform(0.5, 1.5, features) * spread
        z = rng.standard_normal((per_class, features))
        x = mean + z @ factor.T + rng.standard_normal((per_class, features)) * scale
        feats.append(np.clip(x, 0.0, 1.0))
        labels.append(np.full(per_class, c))
    return Dataset(np.concatenate(feats), np.concatenate(labels), default_class_names(classes))


@dataclass
class EncryptedDataset:
    xs: list
    ys: list
    x_layout: PackedLayout
    y_layout: PackedLayout
    ids: np.ndarray = None
    total: int = None

    def __post_init__(self):
        if len(self.xs) != len(self.ys):
            raise DataError("feature/label ciphertext counts differ")
        if self.ids is None:
            self.ids = np.arange(len(self.xs))
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.total is None:
            self.total = len(self.xs)

    def __len__(self):
        return len(self.xs)

    def subset(self, positions) -> EncryptedDataset:
        positions = list(positions)
        return EncryptedDataset([self.xs[i] for i in positions], [self.ys[i] for i in positions],
                                self.x_layout, self.y_layout, self.ids[positions], self.total)


def dataset_layouts(n_features: int, n_classes: int, y_axis: int, S: int, B: int):
    try:
        return PackedLayout.vector(n_features, 0, S, B), PackedLayout.vector(n_classes, y_axis, S, B)
    except Exception as e:
        raise CapacityError(str(e)) from None


def encrypt_dataset(d: Dataset, pk: PublicKey, ctx: HEContext, y_axis: int = 1) -> EncryptedDataset:
    """Pack and encrypt every row: features on axis 0, one-hot labels on ``y_axis``."""
    p = ctx.params
    xl, yl = dataset_layouts(d.n_features, d.n_classes, y_axis, p.slot_size, p.ct_size)
    onehot = d.onehot
    xs = [ctx.encrypt(pk, pack1d(x, 0, p.slot_size, p.ct_size)) for x in d.features]
    ys = [ctx.encrypt(pk, pack1d(y, y_axis, p.slot_size, p.ct_size)) for y in onehot]
    return EncryptedDataset(xs, ys, xl, yl)


def decrypt_dataset(sk: SecretKey, ed: EncryptedDataset) -> tuple[np.ndarray, np.ndarray]:
    if not len(ed):
        return np.zeros((0, ed.x_layout.shape[0])), np.zeros((0, ed.y_layout.shape[0]))
    ctx = ed.xs[0].ctx
    X = np.array([unpack1d(ctx.decrypt(sk, c), ed.x_layout) for c in ed.xs])
    Y = np.array([unpack1d(ctx.decrypt(sk, c), ed.y_layout) for c in ed.ys])
    return X, Y


def dataset_serialize(ed: EncryptedDataset) -> bytes:
    buf = io.BytesIO()
    buf.write(_DATA_HEADER.pack(DATA_MAGIC, DATA_VERSION, len(ed), ed.total,
                                ed.x_layout.axis, ed.x_layout.shape[0], ed.y_layout.axis, ed.y_layout.shape[0]))
    for i, x, y in zip(ed.ids, ed.xs, ed.ys):
        buf.write(struct.pack("<I", int(i)))
        buf.write(ct_serialize(x))
        buf.write(ct_serialize(y))
    return buf.getvalue()


def dataset_deserialize(data: bytes, ctx: HEContext) -> EncryptedDataset:
    if len(data) < _DATA_HEADER.size:
        raise FormatError("truncated encrypted dataset header")
    magic, version, count, total, xa, xn, ya, yn = _DATA_HEADER.unpack_from(data)
    if magic != DATA_MAGIC:
        raise FormatError(f"bad dataset magic {magic!r}")
    if version != DATA_VERSION:
        raise FormatError(f"unsupported dataset version {version}")
    p = ctx.params
    ct_len = CT_HEADER.size + 8 * p.ct_size
    rec = 4 + 2 * ct_len
    if len(data) != _DATA_HEADER.size + count * rec:
        raise FormatError(f"dataset length {len(data)} does not match {count} records")
    xl, yl = dataset_layouts(xn, yn, ya, p.slot_size, p.ct_size)
    if xa != 0:
        raise FormatError("feature ciphertexts must be packed on axis 0")
    ids, xs, ys = [], [], []
    pos = _DATA_HEADER.size
    for _ in range(count):
        (i,) = struct.unpack_from("<I", data, pos)
        pos += 4
        xs.append(ct_deserialize(data[pos : pos + ct_len], ctx))
        pos += ct_len
        ys.append(ct_deserialize(data[pos : pos + ct_len], ctx))
        pos += ct_len
        ids.append(i)
    return EncryptedDataset(xs, ys, xl, yl, np.array(ids, dtype=np.int64), total)


@dataclass
class MetricsReport:
    confusion: np.ndarray
    accuracy: float
    precision: float
    recall: float
    hit_rate: float
    per_class: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "hit_rate": self.hit_rate,
            "n": int(self.confusion.sum()),
            "confusion": self.confusion.tolist(),
        }

    def as_text(self) -> str:
        return "\n".join([
            f"accuracy={self.accuracy:.6f}",
            f"precision={self.precision:.6f}",
            f"recall={self.recall:.6f}",
            f"hit_rate={self.hit_rate:.6f}",
            f"n={int(self.confusion.sum())}",
        ]) + "\n"


def evaluate(preds, truth, n_classes: int) -> MetricsReport:
    """Per-class accuracy averaged over classes, macro precision and macro recall.

    A class whose precision/recall denominator is empty contributes 0.
    """
    preds = np.asarray(preds, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if preds.shape != truth.shape:
        raise DataError(f"length mismatch: {preds.shape[0]} predictions, {truth.shape[0]} labels")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (truth, preds), 1)
    n = int(cm.sum())
    # exact rational sums, rounded once at the end
    acc = prec = rec = Fraction(0)
    for c in range(n_classes):
        tp = int(cm[c, c])
        fp = int(cm[:, c].sum()) - tp
        fn = int(cm[c, :].sum()) - tp
        tn = n - tp - fp - fn
        acc += Fraction(tp + tn, n) if n else 0
        prec += Fraction(tp, tp + fp) if tp + fp else 0
        rec += Fraction(tp, tp + fn) if tp + fn else 0
    hit = float(Fraction(int(np.trace(cm)), n)) if n else 0.0
    return MetricsReport(cm, float(acc / n_classes), float(prec / n_classes), float(rec / n_classes), hit)

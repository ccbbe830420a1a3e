"""Multi-subject dataset file, cropping, k-shot episodes and batch composition.

EEGS file layout (all little-endian)::

    magic        4 bytes  b"EEGS"
    version      u32      1
    n_samples    u64
    n_channels   u32
    n_timesteps  u32
    n_classes    u32
    n_subjects   u32
    sampling_hz  u32
    records      n_samples x (u16 subject_id, u16 label,
                              f32[n_channels * n_timesteps] channel-major)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CapacityError, FormatError, LengthError, RangeError, ValidationError

MAGIC = b"EEGS"
VERSION = 1
_HEAD = struct.Struct("<4sIQIIIII")


@dataclass(frozen=True)
class DatasetHeader:
    n_samples: int
    n_channels: int
    n_timesteps: int
    n_classes: int
    n_subjects: int
    sampling_rate_hz: int = 1000
    version: int = VERSION

    def __post_init__(self):
        for name in ("n_samples", "n_channels", "n_timesteps", "n_classes",
                     "n_subjects", "sampling_rate_hz"):
            if int(getattr(self, name)) <= 0:
                raise ValidationError(f"header field {name} must be positive")


@dataclass
class EEGRecord:
    subject_id: int
    label: int
    signal: np.ndarray  # n_channels x n_timesteps

    def __eq__(self, other):
        if not isinstance(other, EEGRecord):
            return NotImplemented
        return (self.subject_id == other.subject_id and self.label == other.label
                and self.signal.shape == other.signal.shape
                and np.array_equal(self.signal, other.signal))


def _record_dtype(n_channels: int, n_timesteps: int) -> np.dtype:
    return np.dtype([("subject", "<u2"), ("label", "<u2"),
                     ("signal", "<f4", (n_channels, n_timesteps))])


def validate_records(header: DatasetHeader, records) -> None:
    if len(records) != header.n_samples:
        raise ValidationError(f"header declares {header.n_samples} samples, got {len(records)}")
    shape = (header.n_channels, header.n_timesteps)
    for i, rec in enumerate(records):
        if not 0 <= rec.subject_id < header.n_subjects:
            raise ValidationError(f"record {i}: subject_id {rec.subject_id} outside [0, {header.n_subjects})")
        if not 0 <= rec.label < header.n_classes:
            raise ValidationError(f"record {i}: label {rec.label} outside [0, {header.n_classes})")
        if np.shape(rec.signal) != shape:
            raise ValidationError(f"record {i}: signal shape {np.shape(rec.signal)} != {shape}")
        if not np.isfinite(rec.signal).all():
            raise ValidationError(f"record {i}: non-finite signal values")


def write_dataset(path, header: DatasetHeader, records) -> None:
    validate_records(header, records)
    if header.n_subjects > 0xFFFF + 1 or header.n_classes > 0xFFFF + 1:
        raise ValidationError("subject and class ids must fit in 16 bits")
    table = np.empty(len(records), dtype=_record_dtype(header.n_channels, header.n_timesteps))
    table["subject"] = [r.subject_id for r in records]
    table["label"] = [r.label for r in records]
    table["signal"] = np.stack([np.asarray(r.signal) for r in records])
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, header.version, header.n_samples, header.n_channels,
                            header.n_timesteps, header.n_classes, header.n_subjects,
                            header.sampling_rate_hz))
        fh.write(table.tobytes())


def load_dataset(path) -> tuple[DatasetHeader, list[EEGRecord]]:
    """Read an EEGS file. Signals come back as float64 copies of the stored float32."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < _HEAD.size:
        raise LengthError(f"{path}: truncated header ({len(raw)} of {_HEAD.size} bytes)")
    _, version, n, d, t, k, s, rate = _HEAD.unpack_from(raw)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    try:
        header = DatasetHeader(n, d, t, k, s, rate, version)
    except ValidationError as exc:
        raise FormatError(f"{path}: {exc}") from None
    dtype = _record_dtype(d, t)
    need = _HEAD.size + n * dtype.itemsize
    if len(raw) < need:
        raise LengthError(f"{path}: expected {need} bytes for {n} records, found {len(raw)}")
    if len(raw) > need:
        raise FormatError(f"{path}: {len(raw) - need} trailing bytes")
    table = np.frombuffer(raw, dtype=dtype, count=n, offset=_HEAD.size)
    records = [EEGRecord(int(row["subject"]), int(row["label"]), row["signal"].astype(np.float64))
               for row in table]
    validate_records(header, records)
    return header, records


def import_text(manifest, out_path=None, sampling_rate_hz: int = 1000,
                n_classes: int | None = None, n_subjects: int | None = None):
    """Convert per-record text matrices listed in a manifest into an EEGS dataset.

    Each manifest line is ``subject label path`` (whitespace or commas); ``path``
    is relative to the manifest and holds one row per channel.
    """
    manifest = Path(manifest)
    records = []
    for lineno, line in enumerate(manifest.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 3:
            raise FormatError(f"{manifest}:{lineno}: expected 'subject label path', got {line!r}")
        subject, label, rel = int(parts[0]), int(parts[1]), parts[2]
        src = manifest.parent / rel
        text = src.read_text()
        delimiter = "," if "," in text else None
        signal = np.loadtxt(src, delimiter=delimiter, ndmin=2)
        records.append(EEGRecord(subject, label, signal))
    if not records:
        raise FormatError(f"{manifest}: no records listed")
    shapes = {r.signal.shape for r in records}
    if len(shapes) != 1:
        raise ValidationError(f"records have differing shapes: {sorted(shapes)}")
    d, t = shapes.pop()
    header = DatasetHeader(
        n_samples=len(records), n_channels=d, n_timesteps=t,
        n_classes=n_classes or max(r.label for r in records) + 1,
        n_subjects=n_subjects or max(r.subject_id for r in records) + 1,
        sampling_rate_hz=sampling_rate_hz)
    if out_path is not None:
        write_dataset(out_path, header, records)
    return header, records


# -- cropping ---------------------------------------------------------------

def _ms_to_index(ms: float, rate: int) -> int:
    idx = ms * rate / 1000.0
    if abs(idx - round(idx)) > 1e-9:
        raise RangeError(f"{ms} ms is not on the {rate} Hz sample grid")
    return int(round(idx))


def crop_interval(record: EEGRecord, start_ms: float = 320, end_ms: float = 480,
                  sampling_rate_hz: int = 1000) -> EEGRecord:
    """Keep samples in the half-open window ``[start_ms, end_ms)``."""
    if not 0 <= start_ms < end_ms:
        raise RangeError(f"need 0 <= start < end, got {start_ms}..{end_ms} ms")
    lo = _ms_to_index(start_ms, sampling_rate_hz)
    hi = _ms_to_index(end_ms, sampling_rate_hz)
    available = record.signal.shape[1]
    if hi > available:
        raise RangeError(f"crop {start_ms}-{end_ms} ms needs {hi} timesteps, record has {available}")
    return EEGRecord(record.subject_id, record.label, record.signal[:, lo:hi].copy())


def crop_all(records, start_ms, end_ms, sampling_rate_hz):
    return [crop_interval(r, start_ms, end_ms, sampling_rate_hz) for r in records]


# -- episodes ---------------------------------------------------------------

@dataclass
class EpisodeSplit:
    source: dict[int, list[EEGRecord]]
    target_train: list[EEGRecord]
    target_val: list[EEGRecord]
    target_test: list[EEGRecord]
    target_subject: int
    k: int
    seed: int
    target_unused: list[EEGRecord] = field(default_factory=list)

    @property
    def source_subjects(self) -> list[int]:
        return sorted(self.source)


def _split_counts(n: int, val_fraction: float, test_fraction: float) -> tuple[int, int]:
    # small epsilon so 30 * (1/6) lands on 5, not 4
    return int(np.floor(n * val_fraction + 1e-9)), int(np.floor(n * test_fraction + 1e-9))


def build_episode(records, target_subject: int, k: int, seed: int,
                  val_fraction: float = 1 / 6, test_fraction: float = 1 / 6,
                  n_classes: int | None = None) -> EpisodeSplit:
    """Partition the target subject per class into k-shot train / val / test.

    All other subjects become source sets and are used in full.
    """
    if k < 1:
        raise CapacityError(f"k must be >= 1, got {k}")
    if val_fraction < 0 or test_fraction < 0 or val_fraction + test_fraction >= 1:
        raise ValidationError("val/test fractions must be >= 0 and sum to < 1")
    target = [r for r in records if r.subject_id == target_subject]
    if not target:
        raise ValidationError(f"target subject {target_subject} has no records")
    if n_classes is None:
        n_classes = max(r.label for r in records) + 1
    by_class: dict[int, list[EEGRecord]] = {c: [] for c in range(n_classes)}
    for r in target:
        by_class[r.label].append(r)

    short = []
    for c, pool in by_class.items():
        n_val, n_test = _split_counts(len(pool), val_fraction, test_fraction)
        if len(pool) < k + n_val + n_test or len(pool) == 0:
            short.append(f"class {c}: has {len(pool)}, needs {k} + {n_val} val + {n_test} test")
    if short:
        raise CapacityError(f"target subject {target_subject} lacks samples for k={k}: "
                            + "; ".join(short))

    rng = np.random.default_rng(seed)
    train, val, test, unused = [], [], [], []
    for c in range(n_classes):
        pool = by_class[c]
        n_val, n_test = _split_counts(len(pool), val_fraction, test_fraction)
        order = rng.permutation(len(pool))
        picked = [pool[i] for i in order]
        train += picked[:k]
        val += picked[k: k + n_val]
        test += picked[k + n_val: k + n_val + n_test]
        unused += picked[k + n_val + n_test:]

    source: dict[int, list[EEGRecord]] = {}
    for r in records:
        if r.subject_id != target_subject:
            source.setdefault(r.subject_id, []).append(r)
    return EpisodeSplit(source, train, val, test, target_subject, k, seed, unused)


# -- batches ----------------------------------------------------------------

@dataclass(frozen=True)
class BatchSpec:
    per_source_count: int = 200
    include_all_target: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.per_source_count < 1:
            raise ValidationError("per_source_count must be >= 1")


def compose_batch(split: EpisodeSplit, spec: BatchSpec, rng: np.random.Generator) -> list[EEGRecord]:
    """Sources in ascending subject order (each a fresh draw without
    replacement), followed by every target training record."""
    batch = []
    for s in split.source_subjects:
        pool = split.source[s]
        if not pool:
            raise CapacityError(f"source subject {s} has no records")
        take = min(spec.per_source_count, len(pool))
        idx = rng.choice(len(pool), size=take, replace=False)
        batch += [pool[i] for i in idx]
    if spec.include_all_target:
        batch += split.target_train
    return batch


def stack(records) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(signals B x D x T, subject ids, labels)`` arrays for a record list."""
    X = np.stack([r.signal for r in records]).astype(np.float64, copy=False)
    subjects = np.array([r.subject_id for r in records], dtype=np.int64)
    labels = np.array([r.label for r in records], dtype=np.int64)
    return X, subjects, labels

"""Subject datasets: in-memory model, binary feature files, CV folds, synthetic data.

On-disk layout written by ``write_dataset``::

    <dir>/manifest.json
    <dir>/features/<index>.pdfe

Manifest fields: ``format_version``, ``d``, ``S``, ``emotion_order`` (six
names), ``samples`` (list of ``{subject_id, label, feature_file}`` with
``feature_file`` relative to the manifest).

Feature file: ``b"PDFE"``, u16 version, u32 d, u32 S, then ``6*d*S``
little-endian float64 values, emotion-major, channel-major, spatial-minor.
"""

import csv
import json
import struct
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

from . import rng
from .errors import (
    BadMagicError,
    DataError,
    DuplicateSubjectError,
    MissingClassError,
    MissingFileError,
    ShapeInconsistencyError,
    TruncatedFileError,
    UnknownLabelError,
    VersionMismatchError,
)
from .nn import N_EMOTIONS

EMOTIONS = ("happiness", "sadness", "surprise", "fear", "anger", "disgust")

FEATURE_MAGIC = b"PDFE"
FEATURE_VERSION = 1
MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"
_HEADER = struct.Struct("<4sHII")


class ClassLabel(IntEnum):
    NonPD = 0
    EarlyPD = 1
    MidLatePD = 2


N_CLASSES = len(ClassLabel)


@dataclass
class SubjectSample:
    subject_id: str
    maps: np.ndarray  # (6, d, S), canonical emotion order
    label: ClassLabel

    def __post_init__(self):
        self.maps = np.asarray(self.maps, dtype=np.float64)
        if self.maps.ndim != 3 or self.maps.shape[0] != N_EMOTIONS:
            raise ShapeInconsistencyError(
                f"subject {self.subject_id!r}: expected maps of shape (6, d, S), got {self.maps.shape}"
            )
        self.label = ClassLabel(int(self.label))


@dataclass
class Dataset:
    """Homogeneous collection of subjects, stored as one (n, 6, d, S) array."""

    subject_ids: list
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.subject_ids = [str(s) for s in self.subject_ids]
        n = len(self.subject_ids)
        if self.features.ndim != 4 or self.features.shape[0] != n or self.features.shape[1] != N_EMOTIONS:
            raise ShapeInconsistencyError(
                f"features must have shape ({n}, 6, d, S), got {self.features.shape}"
            )
        if self.labels.shape != (n,):
            raise ShapeInconsistencyError(f"{self.labels.shape[0]} labels for {n} subjects")
        if n and (self.labels.min() < 0 or self.labels.max() >= N_CLASSES):
            raise UnknownLabelError(f"labels must lie in [0, {N_CLASSES})")
        if len(set(self.subject_ids)) != n:
            seen, dups = set(), []
            for s in self.subject_ids:
                if s in seen:
                    dups.append(s)
                seen.add(s)
            raise DuplicateSubjectError(f"duplicate subject ids: {sorted(set(dups))}")

    @classmethod
    def from_samples(cls, samples):
        samples = list(samples)
        if not samples:
            raise DataError("cannot build a dataset from zero samples without a shape")
        shapes = {s.maps.shape for s in samples}
        if len(shapes) != 1:
            raise ShapeInconsistencyError(f"samples disagree in (6, d, S): {sorted(shapes)}")
        return cls(
            [s.subject_id for s in samples],
            np.stack([s.maps for s in samples]),
            [int(s.label) for s in samples],
        )

    def __len__(self):
        return len(self.subject_ids)

    def __getitem__(self, i):
        return SubjectSample(self.subject_ids[i], self.features[i], ClassLabel(int(self.labels[i])))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def d(self):
        return self.features.shape[2]

    @property
    def S(self):
        return self.features.shape[3]

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(
            [self.subject_ids[i] for i in indices],
            self.features[indices],
            self.labels[indices],
        )


def class_counts(data):
    """Per-class tallies from a Dataset or an iterable of labels."""
    labels = data.labels if isinstance(data, Dataset) else np.asarray(list(data), dtype=np.int64)
    return np.bincount(labels, minlength=N_CLASSES)[:N_CLASSES].astype(np.int64)


# ---------------------------------------------------------------------------
# binary feature files


def encode_features(maps):
    maps = np.asarray(maps, dtype=np.float64)
    _, d, S = maps.shape
    return _HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, d, S) + maps.astype("<f8").tobytes()


def decode_features(blob, source="<bytes>"):
    if len(blob) < _HEADER.size:
        raise TruncatedFileError(f"{source}: {len(blob)} bytes is shorter than the header")
    magic, version, d, S = _HEADER.unpack_from(blob)
    if magic != FEATURE_MAGIC:
        raise BadMagicError(f"{source}: bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise VersionMismatchError(f"{source}: feature format version {version}, expected {FEATURE_VERSION}")
    if d < 1 or S < 1:
        raise ShapeInconsistencyError(f"{source}: invalid shape d={d}, S={S}")
    expected = _HEADER.size + 8 * N_EMOTIONS * d * S
    if len(blob) < expected:
        raise TruncatedFileError(f"{source}: {len(blob)} bytes, expected {expected}")
    if len(blob) > expected:
        raise ShapeInconsistencyError(f"{source}: {len(blob) - expected} trailing bytes")
    values = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size)
    return values.astype(np.float64).reshape(N_EMOTIONS, d, S)


def write_dataset(dataset, path, force=False):
    """Write manifest + one feature file per subject under directory ``path``."""
    if len(dataset) == 0:
        raise DataError("refusing to write an empty dataset")
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    if manifest_path.exists() and not force:
        raise FileExistsError(f"{manifest_path} exists; pass force=True to overwrite")
    (path / "features").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, sample in enumerate(dataset):
        rel = f"features/{i:06d}.pdfe"
        (path / rel).write_bytes(encode_features(sample.maps))
        entries.append({"subject_id": sample.subject_id, "label": int(sample.label), "feature_file": rel})
    manifest = {
        "format_version": MANIFEST_VERSION,
        "d": dataset.d,
        "S": dataset.S,
        "emotion_order": list(EMOTIONS),
        "samples": entries,
    }
    manifest_path.write_text(json.dumps(manifest, indent=1) + "\n")
    return manifest_path


def _resolve_manifest(path):
    path = Path(path)
    return path / MANIFEST_NAME if path.is_dir() else path


def load_dataset(manifest_path):
    """Read a manifest (or a directory containing one) into a Dataset."""
    manifest_path = _resolve_manifest(manifest_path)
    if not manifest_path.is_file():
        raise MissingFileError(f"manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{manifest_path}: invalid JSON ({exc})") from None
    for key in ("format_version", "d", "S", "emotion_order", "samples"):
        if key not in manifest:
            raise DataError(f"{manifest_path}: missing field {key!r}")
    if manifest["format_version"] != MANIFEST_VERSION:
        raise VersionMismatchError(
            f"{manifest_path}: manifest version {manifest['format_version']}, expected {MANIFEST_VERSION}"
        )
    if list(manifest["emotion_order"]) != list(EMOTIONS):
        raise DataError(f"{manifest_path}: emotion_order must be {list(EMOTIONS)}")
    d, S = int(manifest["d"]), int(manifest["S"])

    root = manifest_path.parent
    ids, maps, labels = [], [], []
    for entry in manifest["samples"]:
        sid = str(entry["subject_id"])
        label = entry.get("label")
        if label not in (0, 1, 2) or isinstance(label, bool):
            raise UnknownLabelError(f"subject {sid!r}: unknown label {label!r}")
        fpath = root / entry["feature_file"]
        if not fpath.is_file():
            raise MissingFileError(f"subject {sid!r}: feature file not found: {fpath}")
        arr = decode_features(fpath.read_bytes(), str(fpath))
        if arr.shape[1:] != (d, S):
            raise ShapeInconsistencyError(
                f"subject {sid!r}: feature shape (d={arr.shape[1]}, S={arr.shape[2]}) != manifest (d={d}, S={S})"
            )
        ids.append(sid)
        maps.append(arr)
        labels.append(label)
    if not ids:
        raise DataError(f"{manifest_path}: no samples")
    return Dataset(ids, np.stack(maps), labels)


def csv_columns(d):
    return ["subject_id", "label"] + [f"{e}_{j}" for e in EMOTIONS for j in range(d)]


def read_csv(path):
    """Import S=1 features from CSV (``subject_id,label,<emotion>_<j>...``).

    Values go through decimal text, so they are exact only if the writer
    emitted round-trippable representations (``write_csv`` does).
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"CSV not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["subject_id", "label"]:
            raise DataError(f"{path}: header must start with subject_id,label")
        n_feat = len(header) - 2
        if n_feat < N_EMOTIONS or n_feat % N_EMOTIONS:
            raise ShapeInconsistencyError(f"{path}: {n_feat} feature columns is not a multiple of 6")
        d = n_feat // N_EMOTIONS
        if header != csv_columns(d):
            raise DataError(f"{path}: feature columns must be {csv_columns(d)[2:4]}... in emotion order")
        ids, rows, labels = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ShapeInconsistencyError(f"{path}:{lineno}: {len(row)} fields, expected {len(header)}")
            try:
                label = int(row[1])
            except ValueError:
                label = None
            if label not in (0, 1, 2):
                raise UnknownLabelError(f"{path}:{lineno}: unknown label {row[1]!r}")
            ids.append(row[0])
            labels.append(label)
            rows.append([float(v) for v in row[2:]])
    if not ids:
        raise DataError(f"{path}: no samples")
    features = np.asarray(rows, dtype=np.float64).reshape(len(ids), N_EMOTIONS, d, 1)
    return Dataset(ids, features, labels)


def write_csv(dataset, path):
    if dataset.S != 1:
        raise ShapeInconsistencyError("CSV export supports S=1 only")
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(csv_columns(dataset.d))
        for sample in dataset:
            writer.writerow([sample.subject_id, int(sample.label)] + [repr(float(v)) for v in sample.maps.reshape(-1)])


# ---------------------------------------------------------------------------
# cross-validation


def stratified_kfold(labels, k, seed):
    """Assign each index a fold in ``[0, k)``, stratified by class.

    Each class's indices (ascending) are shuffled with the FOLDS stream of
    ``seed`` and dealt round-robin; the deal position carries over from one
    class to the next so fold totals also stay within one of each other.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if k < 2:
        raise DataError(f"k must be >= 2, got {k}")
    counts = np.bincount(labels, minlength=N_CLASSES)
    for c in range(N_CLASSES):
        if counts[c] < k:
            name = ClassLabel(c).name
            raise MissingClassError(f"class {name} ({c}) has {counts[c]} samples, fewer than k={k}", c)
    stream = rng.Stream(seed, rng.FOLDS)
    folds = np.empty(labels.size, dtype=np.int64)
    offset = 0
    for c in range(N_CLASSES):
        members = np.flatnonzero(labels == c)
        members = members[stream.permutation(members.size)]
        folds[members] = (offset + np.arange(members.size)) % k
        offset = (offset + members.size) % k
    return folds


def fold_indices(folds, k):
    """Yield ``(train_idx, eval_idx)`` for each fold."""
    folds = np.asarray(folds)
    for f in range(k):
        yield np.flatnonzero(folds != f), np.flatnonzero(folds == f)


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SyntheticSpec:
    counts: tuple = (100, 100, 100)
    d: int = 8
    S: int = 1
    separation: float = 5.0
    noise: float = 1.0
    informative: tuple = (True,) * N_EMOTIONS
    seed: int = 0

    def __post_init__(self):
        if len(self.counts) != N_CLASSES or any(int(c) < 1 for c in self.counts):
            raise DataError(f"counts must be {N_CLASSES} integers >= 1, got {self.counts}")
        if self.d < 1 or self.S < 1:
            raise DataError(f"d and S must be >= 1, got d={self.d}, S={self.S}")
        if not self.noise > 0:
            raise DataError(f"noise scale must be > 0, got {self.noise}")
        if self.separation < 0:
            raise DataError(f"separation must be >= 0, got {self.separation}")
        if len(self.informative) != N_EMOTIONS or not any(self.informative):
            raise DataError("informative must flag six emotions with at least one True")
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        object.__setattr__(self, "informative", tuple(bool(f) for f in self.informative))


def generating_means(spec, stream=None):
    """Class means, shape (3, 6, d, S).

    For each class and informative emotion (class-major order), a direction
    of d standard normals from the SYNTH stream is scaled to norm
    ``separation`` and repeated over spatial positions. Uninformative
    emotions have zero mean for every class.
    """
    if stream is None:
        stream = rng.Stream(spec.seed, rng.SYNTH)
    means = np.zeros((N_CLASSES, N_EMOTIONS, spec.d, spec.S))
    for c in range(N_CLASSES):
        for e in range(N_EMOTIONS):
            if not spec.informative[e]:
                continue
            v = stream.normal(spec.d)
            v *= spec.separation / np.linalg.norm(v)
            means[c, e] = v[:, None]
    return means


def synth_generate(spec):
    """Gaussian clusters around ``generating_means(spec)`` with std ``noise``.

    After the means, noise is drawn from the same stream sample by sample,
    classes in label order, each sample's 6*d*S values in file order.
    Subject ids are ``syn-<label>-<i>``.
    """
    stream = rng.Stream(spec.seed, rng.SYNTH)
    means = generating_means(spec, stream)
    n = sum(spec.counts)
    size = N_EMOTIONS * spec.d * spec.S
    ids, labels = [], []
    features = np.empty((n, N_EMOTIONS, spec.d, spec.S))
    row = 0
    for c, count in enumerate(spec.counts):
        for i in range(count):
            noise = stream.normal(size).reshape(N_EMOTIONS, spec.d, spec.S)
            features[row] = means[c] + spec.noise * noise
            ids.append(f"syn-{c}-{i:05d}")
            labels.append(c)
            row += 1
    return Dataset(ids, features, labels)


"""Recording ingest, standardization, segmentation, and subject-aware splits.

File formats
------------
Manifest: CSV with header ``subject_id,session_index,task,file,performance_score``
(``file`` relative to the manifest's directory; ``performance_score`` may be
blank, and always is for REST). Series files hold one (T, 214) matrix either
as CSV (rows = time) or as raw binary: 8-byte magic ``SERIES64``, little-endian
u32 T, u32 C, then T*C float64 values row-major. Grouping: CSV
``channel_index,network_id`` with network ids N1..N17.
"""

from __future__ import annotations

import csv
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

TASKS = ("PVT", "VWM", "DOT", "MOD", "DYN", "REST")
LABEL_TO_INDEX = {name: i for i, name in enumerate(TASKS)}
N_CHANNELS = 214
N_CORTICAL = 200
SEGMENT_LENGTH = 277
MIN_SEGMENT_LENGTH = 267
NETWORK_IDS = tuple(f"N{i}" for i in range(1, 18))

SERIES_MAGIC = b"SERIES64"


class DataError(Exception):
    """Validation failure in manifests, series files, or groupings."""


@dataclass
class SessionRecording:
    subject_id: str
    session_index: int
    task: str
    series: np.ndarray  # (T, 214) float64

    def __post_init__(self):
        if self.task not in TASKS:
            raise DataError(f"unknown task {self.task!r} for subject {self.subject_id}")
        if not 1 <= int(self.session_index) <= 8:
            raise DataError(
                f"session_index {self.session_index} outside 1..8 "
                f"(subject {self.subject_id}, task {self.task})")
        self.series = np.asarray(self.series, dtype=np.float64)
        if self.series.ndim != 2 or self.series.shape[1] != N_CHANNELS:
            raise DataError(
                f"recording {self.key} has shape {self.series.shape}, "
                f"expected (T, {N_CHANNELS})")
        if self.series.shape[0] < 1:
            raise DataError(f"recording {self.key} is empty")

    @property
    def key(self) -> tuple:
        return (self.subject_id, self.session_index, self.task)


@dataclass
class Segment:
    """One fixed-length labeled sample cut from a z-scored recording."""

    data: np.ndarray  # (277, 214)
    label: str
    subject_id: str
    session_index: int
    pad_count: int
    window_index: int
    ebq: Optional[int] = None

    @property
    def segment_id(self) -> str:
        return f"{self.subject_id}/{self.session_index}/{self.label}/{self.window_index}"

    @property
    def label_index(self) -> int:
        return LABEL_TO_INDEX[self.label]


@dataclass
class SplitSpec:
    train: float = 0.70
    validation: float = 0.10
    test: float = 0.20
    seed: int = 0

    def __post_init__(self):
        total = self.train + self.validation + self.test
        if abs(total - 1.0) > 1e-9:
            raise DataError(f"split fractions sum to {total}, expected 1")
        if min(self.train, self.validation, self.test) <= 0:
            raise DataError("all split fractions must be positive")


@dataclass
class SplitResult:
    train: list
    validation: list
    test: list
    achieved: dict
    assignment: dict  # (subject_id, task) -> split name

    def as_dict(self) -> dict:
        return {"train": self.train, "validation": self.validation, "test": self.test}


@dataclass
class ManifestRow:
    subject_id: str
    session_index: int
    task: str
    file: str
    performance_score: Optional[float] = None


MANIFEST_HEADER = ["subject_id", "session_index", "task", "file", "performance_score"]


def read_manifest(path) -> list[ManifestRow]:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != MANIFEST_HEADER:
                raise DataError(f"{path}: malformed manifest header {header}")
            rows = []
            for lineno, rec in enumerate(reader, start=2):
                if not rec:
                    continue
                if len(rec) != 5:
                    raise DataError(f"{path}:{lineno}: expected 5 fields, got {len(rec)}")
                score = float(rec[4]) if rec[4].strip() else None
                rows.append(ManifestRow(rec[0], int(rec[1]), rec[2], rec[3], score))
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: malformed manifest: {exc}") from exc
    return rows


def write_manifest(path, rows: list[ManifestRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for r in rows:
            score = "" if r.performance_score is None else repr(float(r.performance_score))
            writer.writerow([r.subject_id, r.session_index, r.task, r.file, score])


def write_series_bin(path, series: np.ndarray) -> None:
    arr = np.ascontiguousarray(series, dtype="<f8")
    t_len, c_len = arr.shape
    with open(path, "wb") as fh:
        fh.write(SERIES_MAGIC)
        fh.write(struct.pack("<II", t_len, c_len))
        fh.write(arr.tobytes())


def write_series_csv(path, series: np.ndarray) -> None:
    np.savetxt(path, np.asarray(series, dtype=np.float64), delimiter=",", fmt="%.17g")


def read_series(path) -> np.ndarray:
    """Load one series matrix; dispatches on the binary magic, else parses CSV."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(8)
        if head == SERIES_MAGIC:
            t_len, c_len = struct.unpack("<II", fh.read(8))
            payload = fh.read(t_len * c_len * 8)
            if len(payload) != t_len * c_len * 8:
                raise DataError(f"{path}: truncated series payload")
            return np.frombuffer(payload, dtype="<f8").reshape(t_len, c_len).copy()
    try:
        return np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise DataError(f"{path}: unreadable series file: {exc}") from exc


def load_recordings(path) -> list[SessionRecording]:
    """Load every manifest row under ``path`` into validated recordings.

    Raises DataError naming the offending file on missing series, channel-count
    mismatch, non-finite values, or duplicate (subject, session, task) keys.
    """
    root = Path(path)
    manifest = root / "manifest.csv"
    if not manifest.exists():
        raise DataError(f"{root}: no manifest.csv")
    rows = read_manifest(manifest)
    missing = [r.file for r in rows if not (root / r.file).exists()]
    if missing:
        raise DataError(f"{manifest}: missing series files: {', '.join(sorted(missing))}")
    recordings = []
    seen = set()
    for row in rows:
        series = read_series(root / row.file)
        if series.shape[1] != N_CHANNELS:
            raise DataError(
                f"{row.file}: {series.shape[1]} channels, expected {N_CHANNELS}")
        if not np.all(np.isfinite(series)):
            raise DataError(f"{row.file}: non-finite values in series")
        rec = SessionRecording(row.subject_id, row.session_index, row.task, series)
        if rec.key in seen:
            raise DataError(f"{row.file}: duplicate recording key {rec.key}")
        seen.add(rec.key)
        recordings.append(rec)
    recordings.sort(key=lambda r: r.key)
    return recordings


def zscore(recording: SessionRecording) -> SessionRecording:
    """Standardize each channel to mean 0 and population std 1.

    A zero-variance channel cannot be standardized; it is set to all zeros
    and a warning is emitted rather than failing the whole recording.
    """
    series = recording.series
    mean = series.mean(axis=0)
    std = series.std(axis=0)
    flat = std == 0.0
    if np.any(flat):
        warnings.warn(
            f"recording {recording.key}: zero-variance channels "
            f"{np.flatnonzero(flat).tolist()} set to zeros")
        std = np.where(flat, 1.0, std)
    out = (series - mean) / std
    out[:, flat] = 0.0
    return SessionRecording(recording.subject_id, recording.session_index,
                            recording.task, out)


def segment(recording: SessionRecording, length: int = SEGMENT_LENGTH,
            min_length: int = MIN_SEGMENT_LENGTH) -> list[Segment]:
    """Cut consecutive non-overlapping windows of ``length`` starting at t=0.

    A final residual window of L points is zero-padded up to ``length`` iff
    min_length <= L < length, otherwise discarded. Expects z-scored input.
    """
    series = recording.series
    t_total = series.shape[0]
    segments = []
    n_full = t_total // length
    for w in range(n_full):
        segments.append(Segment(
            data=series[w * length:(w + 1) * length].copy(),
            label=recording.task, subject_id=recording.subject_id,
            session_index=recording.session_index, pad_count=0, window_index=w))
    residual = t_total - n_full * length
    if min_length <= residual < length:
        padded = np.zeros((length, series.shape[1]), dtype=series.dtype)
        padded[:residual] = series[n_full * length:]
        segments.append(Segment(
            data=padded, label=recording.task, subject_id=recording.subject_id,
            session_index=recording.session_index, pad_count=length - residual,
            window_index=n_full))
    return segments


def expected_segment_count(t_total: int, length: int = SEGMENT_LENGTH,
                           min_length: int = MIN_SEGMENT_LENGTH) -> int:
    """Closed-form segment count: floor(T/length) + [min_length <= T mod length < length]."""
    return t_total // length + (1 if min_length <= t_total % length else 0)


def split(segments: list[Segment], spec: SplitSpec) -> SplitResult:
    """Assign whole (subject, task) groups to train/validation/test.

    Groups are packed greedily against the target fractions by segment count,
    independently within each task class so every class lands in every split.
    No group ever straddles splits.
    """
    by_class: dict[str, dict] = {}
    for seg in segments:
        group = (seg.subject_id, seg.label)
        by_class.setdefault(seg.label, {}).setdefault(group, []).append(seg)

    names = ("train", "validation", "test")
    fractions = {"train": spec.train, "validation": spec.validation, "test": spec.test}
    starved = [cls for cls, groups in sorted(by_class.items()) if len(groups) < 3]
    if starved:
        raise DataError(
            f"too few (subject, task) groups to populate all three splits for "
            f"class(es): {', '.join(starved)}")

    rng = np.random.default_rng(spec.seed)
    assignment: dict[tuple, str] = {}
    buckets: dict[str, list] = {n: [] for n in names}
    for cls in sorted(by_class):
        groups = by_class[cls]
        keys = sorted(groups)
        rng.shuffle(keys)
        keys.sort(key=lambda k: -len(groups[k]))  # stable: ties keep shuffled order
        class_total = sum(len(v) for v in groups.values())
        assigned = {n: 0 for n in names}
        members = {n: 0 for n in names}
        remaining = len(keys)
        for key in keys:
            empty = [n for n in names if members[n] == 0]
            candidates = empty if 0 < len(empty) >= remaining else names
            target = max(candidates,
                         key=lambda n: (fractions[n] * class_total - assigned[n],
                                        -names.index(n)))
            assignment[key] = target
            assigned[target] += len(groups[key])
            members[target] += 1
            remaining -= 1
        for key in keys:
            buckets[assignment[key]].extend(groups[key])

    for name in names:
        buckets[name].sort(key=lambda s: s.segment_id)
    total = len(segments)
    achieved = {n: len(buckets[n]) / total for n in names}
    return SplitResult(buckets["train"], buckets["validation"], buckets["test"],
                       achieved, assignment)


def segments_to_arrays(segments: list[Segment]) -> tuple[np.ndarray, np.ndarray]:
    """Stack segments into a (N, 277, 214) batch and an int label vector."""
    if not segments:
        raise DataError("no segments to stack")
    x = np.stack([s.data for s in segments])
    y = np.array([s.label_index for s in segments], dtype=np.int64)
    return x, y


class NetworkGrouping:
    """Partition of the 214 channels into functional networks N1..N17.

    N1..N16 jointly cover the 200 cortical channels [0, 200); N17 is exactly
    the 14 subcortical channels [200, 214).
    """

    def __init__(self, groups: dict[str, list[int]]):
        self.groups = {nid: sorted(int(c) for c in chans) for nid, chans in groups.items()}
        self._validate()

    def _validate(self):
        if set(self.groups) != set(NETWORK_IDS):
            missing = sorted(set(NETWORK_IDS) - set(self.groups))
            extra = sorted(set(self.groups) - set(NETWORK_IDS))
            raise DataError(f"grouping networks wrong: missing {missing}, unknown {extra}")
        seen: dict[int, str] = {}
        for nid in NETWORK_IDS:
            for c in self.groups[nid]:
                if not 0 <= c < N_CHANNELS:
                    raise DataError(f"grouping: channel {c} in {nid} outside [0, {N_CHANNELS})")
                if c in seen:
                    raise DataError(f"grouping: channel {c} assigned to both {seen[c]} and {nid}")
                seen[c] = nid
        if len(seen) != N_CHANNELS:
            gaps = sorted(set(range(N_CHANNELS)) - set(seen))
            raise DataError(f"grouping: unassigned channels {gaps[:8]}{'...' if len(gaps) > 8 else ''}")
        if self.groups["N17"] != list(range(N_CORTICAL, N_CHANNELS)):
            raise DataError(
                f"grouping: N17 must be exactly channels [{N_CORTICAL}, {N_CHANNELS}), "
                f"got {self.groups['N17']}")
        cortical = sorted(c for nid in NETWORK_IDS[:-1] for c in self.groups[nid])
        if cortical != list(range(N_CORTICAL)):
            raise DataError(f"grouping: N1..N16 must partition [0, {N_CORTICAL})")

    def channels(self, network_id: str) -> list[int]:
        return self.groups[network_id]

    def sizes(self) -> dict[str, int]:
        return {nid: len(self.groups[nid]) for nid in NETWORK_IDS}

    def network_ids(self) -> tuple:
        return NETWORK_IDS


def load_grouping(path) -> NetworkGrouping:
    path = Path(path)
    groups: dict[str, list[int]] = {}
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            rows = [r for r in reader if r]
    except OSError as exc:
        raise DataError(f"{path}: cannot read grouping: {exc}") from exc
    if rows and rows[0] == ["channel_index", "network_id"]:
        rows = rows[1:]
    seen_channels = []
    for rec in rows:
        if len(rec) != 2:
            raise DataError(f"{path}: grouping rows need 2 fields, got {rec}")
        try:
            chan = int(rec[0])
        except ValueError as exc:
            raise DataError(f"{path}: bad channel index {rec[0]!r}") from exc
        nid = rec[1].strip()
        if nid not in NETWORK_IDS:
            raise DataError(f"{path}: unknown network id {nid!r} for channel {chan}")
        if chan in seen_channels:
            raise DataError(f"{path}: duplicate channel row {chan}")
        seen_channels.append(chan)
        groups.setdefault(nid, []).append(chan)
    for nid in NETWORK_IDS:
        groups.setdefault(nid, [])
    return NetworkGrouping(groups)


def write_grouping(path, grouping: NetworkGrouping) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["channel_index", "network_id"])
        for nid in NETWORK_IDS:
            for chan in grouping.channels(nid):
                writer.writerow([chan, nid])


def make_contiguous_grouping() -> NetworkGrouping:
    """Default grouping for synthetic data: 16 contiguous cortical blocks
    (eight of 13 channels, eight of 12) plus the subcortical block."""
    groups = {}
    start = 0
    for i in range(16):
        size = 13 if i < 8 else 12
        groups[f"N{i + 1}"] = list(range(start, start + size))
        start += size
    groups["N17"] = list(range(N_CORTICAL, N_CHANNELS))
    return NetworkGrouping(groups)

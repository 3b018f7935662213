"""60 s three-channel windows, label attachment and the binary shard format.

Shard layout (one shard per recording, little-endian)::

    b"EDAWIN01"                       magic + version
    uint32 header_len                 length of the JSON header
    header_len bytes                  JSON: dataset_id, user_id, side, source, n_records
    n_records x record                record = float64 t_start, int8 label (-1 = none),
                                      7 pad bytes, float32[3][240] channels
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .decompose import Decomposition
from .errors import OverlappingIntervals
from .ingest import RATE_HZ, EdaRecording

WINDOW = 240
WINDOW_S = WINDOW / RATE_HZ
CHANNELS = ("original", "phasic", "tonic")

MAGIC = b"EDAWIN01"
RECORD_DTYPE = np.dtype([("t_start", "<f8"), ("label", "i1"), ("_pad", "V7"),
                         ("x", "<f4", (3, WINDOW))])


@dataclass
class Window:
    channels: np.ndarray
    user_id: str = ""
    dataset_id: str = ""
    t_start: float = 0.0
    label: int | None = None
    residual: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.channels = np.asarray(self.channels)
        if self.channels.shape != (3, WINDOW):
            raise ValueError(f"window must be 3x{WINDOW}, got {self.channels.shape}")

    @property
    def original(self) -> np.ndarray:
        return self.channels[0]

    @property
    def phasic(self) -> np.ndarray:
        return self.channels[1]

    @property
    def tonic(self) -> np.ndarray:
        return self.channels[2]

    def with_channels(self, channels: np.ndarray) -> "Window":
        return Window(channels, self.user_id, self.dataset_id, self.t_start, self.label)


@dataclass
class WindowStats:
    produced: int = 0
    too_short: int = 0


def window_count(length: int, step: int) -> int:
    if step < 1:
        raise ValueError("step must be >= 1")
    return 0 if length < WINDOW else (length - WINDOW) // step + 1


def make_windows(dec: Decomposition, step_samples: int, rec: EdaRecording,
                 stats: WindowStats | None = None) -> Iterator[Window]:
    """Yield windows of ``dec`` every ``step_samples`` samples.

    ``step_samples=1`` is the maximally overlapping training layout (0.25 s
    step); ``step_samples=240`` gives non-overlapping evaluation windows.  A
    recording shorter than one window yields nothing and is counted in
    ``stats.too_short``.  Windows hold copies of 3x240 slices only.
    """
    n = len(dec)
    count = window_count(n, step_samples)
    if stats is not None and count == 0:
        stats.too_short += 1
    for k in range(count):
        i = k * step_samples
        sl = slice(i, i + WINDOW)
        ch = np.stack([dec.phasic[sl] + dec.tonic[sl] + dec.residual[sl], dec.phasic[sl], dec.tonic[sl]])
        if stats is not None:
            stats.produced += 1
        yield Window(ch, rec.user_id, rec.dataset_id, rec.start_unix + i / RATE_HZ,
                     residual=dec.residual[sl].copy())


@dataclass(frozen=True)
class LabelInterval:
    t0: float
    t1: float
    label: int
    user_id: str | None = None


def _check_intervals(intervals: list[LabelInterval]) -> None:
    by_user: dict = {}
    for iv in intervals:
        if not iv.t1 > iv.t0:
            raise ValueError(f"empty interval {iv}")
        by_user.setdefault(iv.user_id, []).append(iv)
    for ivs in by_user.values():
        ivs = sorted(ivs, key=lambda v: v.t0)
        for a, b in zip(ivs, ivs[1:]):
            if b.t0 < a.t1:
                raise OverlappingIntervals(f"intervals {a} and {b} overlap")


def attach_labels(windows: Iterable[Window], intervals: list[LabelInterval]) -> Iterator[Window]:
    """Keep windows whose whole span lies inside one labeled interval.

    Intervals with ``user_id=None`` apply to every user.  Straddling or
    unlabeled windows are dropped.
    """
    intervals = list(intervals)
    _check_intervals(intervals)
    for w in windows:
        t_end = w.t_start + WINDOW_S
        for iv in intervals:
            if iv.user_id is not None and iv.user_id != w.user_id:
                continue
            if iv.t0 <= w.t_start and t_end <= iv.t1:
                w.label = int(iv.label)
                yield w
                break


def select_side(recordings: Iterable[EdaRecording], side: str | None) -> Iterator[EdaRecording]:
    """Keep recordings of one body side; ``None`` keeps everything."""
    for rec in recordings:
        if side is None or rec.side in (side, "unknown"):
            yield rec


def write_shard(path: str | Path, windows: Iterable[Window], meta: dict | None = None) -> int:
    windows = list(windows)
    rec = np.zeros(len(windows), dtype=RECORD_DTYPE)
    for i, w in enumerate(windows):
        rec[i]["t_start"] = w.t_start
        rec[i]["label"] = -1 if w.label is None else w.label
        rec[i]["x"] = w.channels
    first = windows[0] if windows else Window(np.zeros((3, WINDOW)))
    header = {"dataset_id": first.dataset_id, "user_id": first.user_id,
              "n_records": len(windows), **(meta or {})}
    hbytes = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        fh.write(rec.tobytes())
    return len(windows)


@dataclass
class Shard:
    header: dict
    records: np.ndarray  # structured array of RECORD_DTYPE (memory-mapped)

    def __len__(self):
        return len(self.records)

    def window(self, i: int) -> Window:
        r = self.records[i]
        label = int(r["label"])
        return Window(np.asarray(r["x"], dtype=np.float64), self.header["user_id"],
                      self.header["dataset_id"], float(r["t_start"]),
                      None if label < 0 else label)

    def __iter__(self) -> Iterator[Window]:
        for i in range(len(self)):
            yield self.window(i)


def read_shard(path: str | Path) -> Shard:
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path} is not a window shard")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen))
    offset = len(MAGIC) + 4 + hlen
    if header["n_records"] == 0:
        return Shard(header, np.zeros(0, dtype=RECORD_DTYPE))
    records = np.memmap(path, dtype=RECORD_DTYPE, mode="r", offset=offset,
                        shape=(header["n_records"],))
    return Shard(header, records)


@dataclass
class WindowSet:
    """Windows of many shards stacked in memory, with per-window metadata."""

    x: np.ndarray  # (n, 3, 240) float32
    user_id: np.ndarray
    dataset_id: np.ndarray
    t_start: np.ndarray
    label: np.ndarray  # -1 = unlabeled

    def __len__(self):
        return len(self.x)

    def subset(self, idx) -> "WindowSet":
        return WindowSet(self.x[idx], self.user_id[idx], self.dataset_id[idx],
                         self.t_start[idx], self.label[idx])

    def window(self, i: int) -> Window:
        lab = int(self.label[i])
        return Window(self.x[i].astype(np.float64), str(self.user_id[i]), str(self.dataset_id[i]),
                      float(self.t_start[i]), None if lab < 0 else lab)

    @classmethod
    def from_windows(cls, windows: Iterable[Window]) -> "WindowSet":
        ws = list(windows)
        return cls(
            x=np.stack([w.channels for w in ws]).astype(np.float32) if ws else np.zeros((0, 3, WINDOW), np.float32),
            user_id=np.array([w.user_id for w in ws], dtype=object),
            dataset_id=np.array([w.dataset_id for w in ws], dtype=object),
            t_start=np.array([w.t_start for w in ws], dtype=np.float64),
            label=np.array([-1 if w.label is None else w.label for w in ws], dtype=np.int64))


def load_shards(paths: Iterable[str | Path]) -> WindowSet:
    xs, users, dsets, ts, labels = [], [], [], [], []
    for p in sorted(Path(p) for p in paths):
        sh = read_shard(p)
        if len(sh) == 0:
            continue
        xs.append(np.asarray(sh.records["x"]))
        ts.append(np.asarray(sh.records["t_start"]))
        labels.append(np.asarray(sh.records["label"], dtype=np.int64))
        users.append(np.full(len(sh), sh.header["user_id"], dtype=object))
        dsets.append(np.full(len(sh), sh.header["dataset_id"], dtype=object))
    if not xs:
        return WindowSet(np.zeros((0, 3, WINDOW), np.float32), np.array([], object),
                         np.array([], object), np.zeros(0), np.zeros(0, np.int64))
    return WindowSet(np.concatenate(xs), np.concatenate(users), np.concatenate(dsets),
                     np.concatenate(ts), np.concatenate(labels))

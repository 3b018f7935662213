"""Empatica-E4 EDA parsing and the on-disk archive.

Input layout::

    root/<dataset>/<user>/<session...>/EDA.csv
    root/<dataset>/meta.json            # optional: scenario, environment, sides

An E4 ``EDA.csv`` holds the session start (unix seconds, UTC) on line 1, the
sample rate on line 2 and one conductance sample per following line.  A blank
first line means the device lost its clock; such sessions start at unix 0.

Archive layout written by :func:`write_archive`::

    archive/<dataset>/<user>/<recording>.f32    # little-endian float32 samples
    archive/<dataset>/<user>/<recording>.json   # sidecar metadata
    archive/manifest.jsonl
    archive/skipped.jsonl
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import (
    EmptyArchive,
    EmptySeries,
    IngestError,
    MalformedHeader,
    NegativeSample,
    RateMismatch,
)

logger = logging.getLogger(__name__)

RATE_HZ = 4.0
SIDES = ("left", "right", "unknown")


@dataclass
class EdaRecording:
    user_id: str
    dataset_id: str
    start_unix: float
    values: np.ndarray
    rate_hz: float = RATE_HZ
    side: str = "unknown"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.rate_hz != RATE_HZ:
            raise RateMismatch(f"rate {self.rate_hz} Hz, expected {RATE_HZ} Hz")
        if self.values.ndim != 1 or self.values.size == 0:
            raise EmptySeries("recording has no samples")
        if not np.all(np.isfinite(self.values)):
            raise MalformedHeader("non-finite sample")
        if np.any(self.values < 0):
            raise NegativeSample(f"negative sample at index {int(np.argmax(self.values < 0))}")
        if not (self.start_unix >= 0):
            raise MalformedHeader(f"start time {self.start_unix} before unix epoch")
        if self.side not in SIDES:
            raise ValueError(f"side must be one of {SIDES}")

    @property
    def duration_s(self) -> float:
        return len(self.values) / self.rate_hz

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.dataset_id}/{self.user_id}/{self.start_unix!r}".encode())
        h.update(np.ascontiguousarray(self.values, dtype="<f8").tobytes())
        return h.hexdigest()[:16]


def _header_field(line: str) -> str:
    # multi-column E4 files repeat the header value once per column
    return line.split(",")[0].strip()


def parse_e4_eda(data: bytes | str, *, user_id: str = "", dataset_id: str = "",
                 side: str = "unknown") -> EdaRecording:
    """Parse the text of one E4 ``EDA.csv`` file.

    Raises
    ------
    MalformedHeader
        Line 1 or 2 cannot be parsed, or a sample line is not a number.
    RateMismatch
        The rate on line 2 is not 4 Hz.
    NegativeSample, EmptySeries
    """
    text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
    lines = text.splitlines()
    if len(lines) < 2:
        raise MalformedHeader("file shorter than the two header lines")

    first = _header_field(lines[0])
    if first == "":
        start = 0.0
    else:
        try:
            start = float(first)
        except ValueError:
            raise MalformedHeader(f"unparsable start timestamp {first!r}") from None
        if not math.isfinite(start) or start < 0:
            raise MalformedHeader(f"invalid start timestamp {first!r}")
    try:
        rate = float(_header_field(lines[1]))
    except ValueError:
        raise MalformedHeader(f"unparsable sample rate {lines[1]!r}") from None
    if rate != RATE_HZ:
        raise RateMismatch(f"rate {rate} Hz, expected {RATE_HZ} Hz")

    body = [ln for ln in lines[2:] if ln.strip()]
    if not body:
        raise EmptySeries("no samples after the header")
    try:
        values = np.array([float(_header_field(ln)) for ln in body], dtype=np.float64)
    except ValueError as exc:
        raise MalformedHeader(f"unparsable sample: {exc}") from None
    if not np.all(np.isfinite(values)):
        raise MalformedHeader("non-finite sample")
    if np.any(values < 0):
        raise NegativeSample(f"negative sample at line {int(np.argmax(values < 0)) + 3}")
    return EdaRecording(user_id=user_id, dataset_id=dataset_id, start_unix=start,
                        values=values, rate_hz=rate, side=side)


def format_e4_eda(rec: EdaRecording) -> str:
    """Inverse of :func:`parse_e4_eda`; ``repr`` keeps float64 samples bit-exact."""
    head = "" if rec.start_unix == 0 else repr(float(rec.start_unix))
    lines = [head, repr(float(rec.rate_hz))]
    lines.extend(repr(float(v)) for v in rec.values)
    return "\n".join(lines) + "\n"


@dataclass
class ManifestEntry:
    dataset_id: str
    user_id: str
    path: str
    duration_s: float
    scenario: str = "unknown"
    environment: str = "unknown"
    side: str = "unknown"
    start_unix: float = 0.0
    n_samples: int = 0

    def key(self) -> tuple[str, str, str]:
        return (self.dataset_id, self.user_id, self.path)


@dataclass
class SkipRecord:
    path: str
    error: str
    message: str


@dataclass
class ArchiveManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    skipped: list[SkipRecord] = field(default_factory=list)

    def __post_init__(self):
        keys = [e.key() for e in self.entries]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate (dataset_id, user_id, path) in manifest")

    @property
    def total_hours(self) -> float:
        return math.fsum(e.n_samples for e in self.entries) / (RATE_HZ * 3600.0)

    def datasets(self) -> list[str]:
        return sorted({e.dataset_id for e in self.entries})

    def write(self, path: str | Path) -> None:
        path = Path(path)
        with open(path, "w") as fh:
            for e in self.entries:
                fh.write(json.dumps(asdict(e), sort_keys=True) + "\n")
        with open(path.with_name("skipped.jsonl"), "w") as fh:
            for s in self.skipped:
                fh.write(json.dumps(asdict(s), sort_keys=True) + "\n")

    @classmethod
    def read(cls, path: str | Path) -> "ArchiveManifest":
        path = Path(path)
        entries = [ManifestEntry(**json.loads(ln)) for ln in path.read_text().splitlines() if ln.strip()]
        skipped = []
        skip_path = path.with_name("skipped.jsonl")
        if skip_path.exists():
            skipped = [SkipRecord(**json.loads(ln)) for ln in skip_path.read_text().splitlines() if ln.strip()]
        return cls(entries=entries, skipped=skipped)


def _dataset_meta(dataset_dir: Path) -> dict:
    meta_path = dataset_dir / "meta.json"
    if meta_path.exists():
        return json.loads(meta_path.read_text())
    return {}


def _find_eda_files(root: Path) -> Iterable[tuple[str, str, Path]]:
    for ds_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for user_dir in sorted(p for p in ds_dir.iterdir() if p.is_dir()):
            for f in sorted(user_dir.rglob("*")):
                if f.is_file() and f.name.lower().endswith("eda.csv"):
                    yield ds_dir.name, user_dir.name, f


def scan_tree(root: str | Path, workers: int = 1) -> tuple[list[tuple[EdaRecording, ManifestEntry]], list[SkipRecord]]:
    """Parse every E4 EDA file below ``root``; unparsable files become skip records."""
    root = Path(root)
    if not root.is_dir():
        raise EmptyArchive(f"{root} is not a directory")
    files = list(_find_eda_files(root))
    metas = {ds: _dataset_meta(root / ds) for ds in {d for d, _, _ in files}}

    def parse_one(item):
        ds, user, f = item
        meta = metas[ds]
        side = meta.get("sides", {}).get(user, meta.get("side", "unknown"))
        try:
            rec = parse_e4_eda(f.read_bytes(), user_id=user, dataset_id=ds, side=side)
        except IngestError as exc:
            return SkipRecord(str(f.relative_to(root)), exc.code, str(exc))
        entry = ManifestEntry(
            dataset_id=ds, user_id=user, path=str(f.relative_to(root)),
            duration_s=rec.duration_s, scenario=meta.get("scenario", "unknown"),
            environment=meta.get("environment", "unknown"), side=side,
            start_unix=rec.start_unix, n_samples=len(rec.values))
        return rec, entry

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(parse_one, files))
    else:
        results = [parse_one(item) for item in files]

    parsed, skipped = [], []
    for r in results:  # single-writer reduction in file order
        if isinstance(r, SkipRecord):
            logger.warning("skipping %s: %s", r.path, r.message)
            skipped.append(r)
        else:
            parsed.append(r)
    return parsed, skipped


def build_manifest(root: str | Path, workers: int = 1) -> ArchiveManifest:
    parsed, skipped = scan_tree(root, workers)
    if not parsed:
        raise EmptyArchive(f"no valid EDA recordings under {root}")
    return ArchiveManifest(entries=[e for _, e in parsed], skipped=skipped)


def _recording_name(entry: ManifestEntry) -> str:
    return hashlib.sha1(entry.path.encode()).hexdigest()[:12]


def write_archive(root: str | Path, out: str | Path, workers: int = 1) -> ArchiveManifest:
    """Convert an E4 tree into the float32 archive; manifest paths point into ``out``."""
    out = Path(out)
    parsed, skipped = scan_tree(root, workers)
    if not parsed:
        raise EmptyArchive(f"no valid EDA recordings under {root}")
    entries = []
    for rec, entry in parsed:
        rel = Path(entry.dataset_id) / entry.user_id / _recording_name(entry)
        (out / rel.parent).mkdir(parents=True, exist_ok=True)
        rec.values.astype("<f4").tofile(out / rel.with_suffix(".f32"))
        sidecar = {"dataset_id": rec.dataset_id, "user_id": rec.user_id,
                   "start_unix": rec.start_unix, "rate_hz": rec.rate_hz, "side": rec.side,
                   "n_samples": len(rec.values), "source": entry.path,
                   "scenario": entry.scenario, "environment": entry.environment}
        (out / rel.with_suffix(".json")).write_text(json.dumps(sidecar, sort_keys=True, indent=1))
        entries.append(ManifestEntry(**{**asdict(entry), "path": str(rel.with_suffix(".f32"))}))
    manifest = ArchiveManifest(entries=entries, skipped=skipped)
    manifest.write(out / "manifest.jsonl")
    return manifest


def load_recording(archive: str | Path, entry: ManifestEntry) -> EdaRecording:
    path = Path(archive) / entry.path
    meta = json.loads(path.with_suffix(".json").read_text())
    values = np.fromfile(path, dtype="<f4").astype(np.float64)
    return EdaRecording(user_id=meta["user_id"], dataset_id=meta["dataset_id"],
                        start_unix=float(meta["start_unix"]), values=values,
                        rate_hz=float(meta["rate_hz"]), side=meta.get("side", "unknown"))

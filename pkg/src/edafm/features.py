"""Handcrafted window features: the generic (12-dim) and EDA-specific (45-dim) sets.

Per channel the EDA-specific set is: mean, min, max, std, dynamic range,
slope, |slope|, mean and std of the first difference, peak count, mean peak
amplitude, DC coefficient, sum of |X_k|, spectral entropy and spectral
energy, with the spectral sums over DFT bins 1..N-1.  Standard deviations
use ddof=1.  Peaks are strict interior local maxima with no threshold unless
``min_peak_amplitude`` is given.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .segment import CHANNELS, Window

GENERIC_BASE = ("mean", "std", "min", "max")
EDA_BASE = ("mean", "min", "max", "std", "dynamic_range", "slope", "abs_slope",
            "mean_diff", "std_diff", "n_peaks", "peak_amplitude", "dc",
            "sum_abs_fft", "spectral_entropy", "spectral_energy")

GENERIC_NAMES = tuple(f"{c}_{f}" for c in CHANNELS for f in GENERIC_BASE)
EDA_NAMES = tuple(f"{c}_{f}" for c in CHANNELS for f in EDA_BASE)


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    names: tuple

    def __post_init__(self):
        if len(self.values) != len(self.names):
            raise ValueError("feature values and names differ in length")


def _channels(w) -> np.ndarray:
    x = w.channels if isinstance(w, Window) else np.asarray(w)
    return np.asarray(x, dtype=np.float64)


def generic_features(w) -> FeatureVector:
    x = _channels(w)
    vals = np.column_stack([x.mean(axis=1), x.std(axis=1, ddof=1), x.min(axis=1), x.max(axis=1)])
    return FeatureVector(vals.ravel(), GENERIC_NAMES)


def peaks(x: np.ndarray, min_amplitude: float | None = None) -> np.ndarray:
    """Indices of strict interior local maxima."""
    mid = x[1:-1]
    idx = np.flatnonzero((x[:-2] < mid) & (mid > x[2:])) + 1
    if min_amplitude is not None:
        idx = idx[x[idx] >= min_amplitude]
    return idx


def spectral_entropy(power: np.ndarray) -> float:
    total = power.sum()
    if total <= 0:
        return 0.0
    prob = power / total
    nz = prob[prob > 0]
    return float(-(nz * np.log2(nz)).sum())


def _eda_row(x: np.ndarray, min_peak_amplitude: float | None) -> list[float]:
    n = len(x)
    d = np.diff(x)
    pk = peaks(x, min_peak_amplitude)
    spec = np.fft.fft(x)
    mag = np.abs(spec[1:])
    power = mag ** 2
    slope = (x[-1] - x[0]) / (n - 1)
    return [
        x.mean(), x.min(), x.max(), x.std(ddof=1), x.max() - x.min(),
        slope, abs(slope), d.mean(), d.std(ddof=1),
        float(len(pk)), float(x[pk].mean()) if len(pk) else 0.0,
        spec[0].real, mag.sum(), spectral_entropy(power), power.sum(),
    ]


def eda_features(w, min_peak_amplitude: float | None = None) -> FeatureVector:
    x = _channels(w)
    vals = np.concatenate([_eda_row(row, min_peak_amplitude) for row in x])
    return FeatureVector(np.asarray(vals, dtype=np.float64), EDA_NAMES)


EXTRACTORS = {"generic": generic_features, "eda": eda_features}


def feature_matrix(x: np.ndarray, kind: str) -> np.ndarray:
    """Features for a (n, 3, 240) stack of windows."""
    fn = EXTRACTORS[kind]
    width = len(GENERIC_NAMES if kind == "generic" else EDA_NAMES)
    out = np.empty((len(x), width))
    for i, w in enumerate(x):
        out[i] = fn(w).values
    return out


def write_matrix(path: str | Path, meta: dict, names, values: np.ndarray) -> None:
    """Columnar CSV: metadata columns, then one named column per feature."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta_cols = list(meta)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(meta_cols + list(names))
        for i in range(len(values)):
            wr.writerow([meta[c][i] for c in meta_cols] + [repr(float(v)) for v in values[i]])


META_COLUMNS = ("dataset_id", "user_id", "t_start", "label")


def read_matrix(path: str | Path) -> tuple[dict, list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    meta_idx = [i for i, h in enumerate(header) if h in META_COLUMNS]
    feat_idx = [i for i, h in enumerate(header) if h not in META_COLUMNS]
    meta = {header[i]: [r[i] for r in body] for i in meta_idx}
    if "t_start" in meta:
        meta["t_start"] = np.array(meta["t_start"], dtype=np.float64)
    if "label" in meta:
        meta["label"] = np.array(meta["label"], dtype=np.int64)
    for key in ("dataset_id", "user_id"):
        if key in meta:
            meta[key] = np.array(meta[key], dtype=object)
    values = np.array([[float(r[i]) for i in feat_idx] for r in body], dtype=np.float64).reshape(len(body), len(feat_idx))
    return meta, [header[i] for i in feat_idx], values

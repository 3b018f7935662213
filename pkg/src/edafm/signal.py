"""Fixed-rate EDA series and zero-phase Butterworth filtering."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import fft as sfft
from scipy import signal as ss

from .errors import CutoffOutOfRange, EdgesNotIncreasing, SeriesTooShort

RATE_HZ = 4.0
NYQUIST_HZ = RATE_HZ / 2

FILTER_KINDS = {"low": "lowpass", "high": "highpass", "band_pass": "bandpass", "band_stop": "bandstop"}


@dataclass(frozen=True)
class Series:
    values: np.ndarray
    rate_hz: float = RATE_HZ

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError("Series values must be one-dimensional")
        if not np.all(np.isfinite(v)):
            raise ValueError("Series values must be finite")
        if self.rate_hz != RATE_HZ:
            raise ValueError(f"Series rate must be {RATE_HZ} Hz")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)


def _as_array(s) -> np.ndarray:
    return s.values if isinstance(s, Series) else np.asarray(s, dtype=np.float64)


def _check_edges(kind: str, edges) -> list[float]:
    if kind not in FILTER_KINDS:
        raise ValueError(f"unknown filter kind {kind!r}")
    edges = [float(e) for e in np.atleast_1d(edges)]
    n_expected = 2 if kind in ("band_pass", "band_stop") else 1
    if len(edges) != n_expected:
        raise ValueError(f"{kind} needs {n_expected} cutoff(s), got {len(edges)}")
    for e in edges:
        if not 0 < e < NYQUIST_HZ:
            raise CutoffOutOfRange(f"cutoff {e} Hz outside (0, {NYQUIST_HZ}) Hz")
    if n_expected == 2 and not edges[0] < edges[1]:
        raise EdgesNotIncreasing(f"band edges {edges} not strictly increasing")
    return edges


def design(kind: str, edges, order: int = 4) -> np.ndarray:
    """Digital Butterworth (bilinear transform) as second-order sections."""
    edges = _check_edges(kind, edges)
    if order < 1:
        raise ValueError("order must be >= 1")
    return _design(kind, tuple(edges), order).copy()


@lru_cache(maxsize=256)
def _design(kind: str, edges: tuple, order: int) -> np.ndarray:
    wn = edges[0] if len(edges) == 1 else list(edges)
    return ss.butter(order, wn, btype=FILTER_KINDS[kind], fs=RATE_HZ, output="sos")


def zero_phase_response(sos: np.ndarray, n_fft: int) -> np.ndarray:
    """Squared magnitude |H|^2 at the rfft bins of an ``n_fft`` transform.

    This is exactly the frequency response of running the filter forward and
    then backward.
    """
    freqs = sfft.rfftfreq(n_fft, d=1.0 / RATE_HZ)
    _, h = ss.sosfreqz(sos, worN=freqs, fs=RATE_HZ)
    return np.abs(h) ** 2


@lru_cache(maxsize=256)
def _cached_gain(kind: str, edges: tuple, order: int, n_fft: int) -> np.ndarray:
    return zero_phase_response(_design(kind, edges, order), n_fft)


def _apply_zero_phase(x: np.ndarray, key: tuple, method: str) -> np.ndarray:
    kind, edges, order = key
    n = x.shape[-1]
    if n <= 3 * order:
        raise SeriesTooShort(f"series of {n} samples; need more than {3 * order}")
    if method == "recursive":
        return ss.sosfiltfilt(_design(*key), x, axis=-1, padtype="odd", padlen=3 * order)
    if method != "fft":
        raise ValueError(f"unknown method {method!r}")
    # odd reflection about both endpoints keeps the periodic extension continuous
    pad = n - 1
    left = 2 * x[..., :1] - x[..., pad:0:-1]
    right = 2 * x[..., -1:] - x[..., -2:-pad - 2:-1]
    ext = np.concatenate([left, x, right], axis=-1)
    m = ext.shape[-1]  # no zero padding: it would break the continuity above
    gain = _cached_gain(kind, edges, order, m)
    y = sfft.irfft(sfft.rfft(ext, axis=-1) * gain, n=m, axis=-1)
    return y[..., pad:pad + n]


def filter_band(s, kind: str, edges, order: int = 4, method: str = "fft"):
    """Zero-phase Butterworth filter of kind ``low``, ``high``, ``band_pass`` or ``band_stop``.

    Accepts a :class:`Series` (returns a Series) or an array whose last axis is time.
    """
    edges = tuple(_check_edges(kind, edges))
    if order < 1:
        raise ValueError("order must be >= 1")
    x = _as_array(s)
    y = _apply_zero_phase(x, (kind, edges, int(order)), method)
    return Series(y) if isinstance(s, Series) else y


def butterworth_lowpass(s, cutoff_hz: float = 0.4, order: int = 4, method: str = "fft"):
    return filter_band(s, "low", cutoff_hz, order, method)

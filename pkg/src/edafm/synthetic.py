"""Synthetic skin-conductance recordings with known tonic and phasic parts.

Phasic activity is a train of Bateman responses (the cvxEDA impulse model)
at Poisson onset times; tonic level is a smooth spline random walk.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.signal import lfilter

from .decompose import arma_coefficients
from .ingest import RATE_HZ, EdaRecording
from .segment import WINDOW, WINDOW_S, LabelInterval


@dataclass
class SyntheticSignal:
    values: np.ndarray
    tonic: np.ndarray
    phasic: np.ndarray
    driver: np.ndarray


def bateman_train(driver: np.ndarray, tau0: float = 2.0, tau1: float = 0.7) -> np.ndarray:
    """Phasic response of a driver sequence under the discretised Bateman model."""
    ar, ma = arma_coefficients(tau0, tau1)
    return lfilter(ma, ar, driver)


def smooth_tonic(n: int, rng: np.random.Generator, level: float = 2.0, knot_s: float = 30.0,
                 step_sd: float = 0.05) -> np.ndarray:
    k = max(2, int(np.ceil(n / (knot_s * RATE_HZ))) + 1)
    knots_t = np.linspace(0, n - 1, k)
    knots_y = level + np.cumsum(rng.normal(0.0, step_sd, k))
    return CubicSpline(knots_t, knots_y)(np.arange(n))


def synth_signal(n: int, rng: np.random.Generator, rate_per_min: float = 3.0,
                 amplitude=(0.05, 0.5), noise_sd: float = 0.01, level: float = 2.0,
                 n_pulses: int | None = None) -> SyntheticSignal:
    """``n`` samples of tonic + Bateman pulses + white noise.

    Pulse onsets are Poisson with ``rate_per_min`` unless ``n_pulses`` fixes
    the count (onsets then uniform over the series).
    """
    if n_pulses is None:
        n_pulses = rng.poisson(rate_per_min * n / RATE_HZ / 60.0)
    driver = np.zeros(n)
    onsets = rng.integers(2, n, n_pulses)
    np.add.at(driver, onsets, rng.uniform(*amplitude, n_pulses))
    phasic = bateman_train(driver)
    tonic = smooth_tonic(n, rng, level)
    values = tonic + phasic + rng.normal(0.0, noise_sd, n)
    return SyntheticSignal(np.maximum(values, 0.0), tonic, phasic, driver)


def labeled_user(user_id: str, n_windows: int, rng: np.random.Generator, block_windows: int = 20,
                 base_rate: float = 3.5, ratio: float = 3.0, amplitude=(0.1, 1.0), level=(1.0, 3.0),
                 step_sd: float = 0.01, dataset_id: str = "synthetic",
                 start_unix: float = 0.0) -> tuple[EdaRecording, list[LabelInterval]]:
    """One recording of alternating class blocks; class 1 has ``ratio`` x the pulse rate.

    Pulse amplitudes are uniform on ``amplitude``; the tonic level is drawn
    uniformly from ``level`` and drifts with knot steps of ``step_sd``.
    """
    n = n_windows * WINDOW
    driver = np.zeros(n)
    intervals = []
    first = int(rng.integers(2))
    for b, s in enumerate(range(0, n, block_windows * WINDOW)):
        e = min(n, s + block_windows * WINDOW)
        label = (first + b) % 2
        rate = base_rate * (ratio if label else 1.0)
        k = rng.poisson(rate * (e - s) / RATE_HZ / 60.0)
        np.add.at(driver, rng.integers(s, e, k), rng.uniform(*amplitude, k))
        intervals.append(LabelInterval(start_unix + s / RATE_HZ, start_unix + e / RATE_HZ, label, user_id))
    tonic = smooth_tonic(n, rng, rng.uniform(*level), step_sd=step_sd)
    values = tonic + bateman_train(driver) + rng.normal(0.0, 0.01, n)
    rec = EdaRecording(user_id, dataset_id, start_unix, np.maximum(values, 0.0))
    return rec, intervals


def labeled_cohort(n_users: int, windows_per_user: int, seed: int, base_rate=(3.0, 4.0), **kw):
    """Recordings and label intervals for ``n_users`` users.

    Each user's class-0 pulse rate (per minute) is drawn uniformly from
    ``base_rate``; class 1 fires ``ratio`` (default 3) times as often.
    """
    rng = np.random.default_rng(seed)
    out = []
    for u in range(n_users):
        base = rng.uniform(*base_rate)
        out.append(labeled_user(f"u{u:02d}", windows_per_user, rng, base_rate=base, **kw))
    return out


def cluster_windows(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Two easily separated window families (flat vs pulsed), for smoke tests."""
    rng = np.random.default_rng(seed)
    x = np.empty((n, 3, WINDOW), dtype=np.float32)
    y = np.arange(n) % 2
    for i in range(n):
        s = synth_signal(WINDOW, rng, n_pulses=0 if y[i] == 0 else 6)
        x[i] = np.stack([s.values, s.phasic, s.tonic])
    return x, y


__all__ = ["SyntheticSignal", "bateman_train", "smooth_tonic", "synth_signal", "labeled_user",
           "labeled_cohort", "cluster_windows", "WINDOW_S"]

"""Recording -> low-pass -> cvxEDA -> labeled windows, the path shared by the CLI and tests."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable

import numpy as np

from .decompose import CvxedaParams, Decomposition, cached_cvxeda, cvxeda
from .ingest import EdaRecording
from .segment import LabelInterval, Window, WindowSet, WindowStats, attach_labels, make_windows
from .signal import Series, butterworth_lowpass

LOWPASS_HZ = 0.4


def preprocess(rec: EdaRecording, params: CvxedaParams | None = None, *, cutoff_hz: float = LOWPASS_HZ,
               cache_dir: str | Path | None = None) -> Decomposition:
    """Low-pass the raw series, then decompose it."""
    s = butterworth_lowpass(Series(rec.values), cutoff_hz)
    params = params or CvxedaParams()
    if cache_dir is not None:
        return cached_cvxeda(rec.digest(), s.values, params, cache_dir)
    return cvxeda(s, params)


def recording_windows(rec: EdaRecording, dec: Decomposition, step_samples: int,
                      intervals: list[LabelInterval] | None = None,
                      stats: WindowStats | None = None) -> list[Window]:
    ws = make_windows(dec, step_samples, rec, stats)
    return list(attach_labels(ws, intervals) if intervals is not None else ws)


def build_window_set(items: Iterable[tuple[EdaRecording, list[LabelInterval] | None]],
                     step_samples: int = 240, params: CvxedaParams | None = None) -> WindowSet:
    windows = []
    for rec, intervals in items:
        windows.extend(recording_windows(rec, preprocess(rec, params), step_samples, intervals))
    return WindowSet.from_windows(windows)


def embeddings_for(model, ws: WindowSet, batch_size: int = 256) -> np.ndarray:
    from .encoder import embed
    return embed(model, ws.x, batch_size)

"""Stochastic EDA augmentations and positive-pair sampling for contrastive training.

Eighteen transforms: four zero-phase filters, high-frequency noise, two
artifact simulators, two thermoregulation (tonic-only) transforms, eight
generic time-series transforms and the identity.  A transform is described
by an :class:`AugmentationSpec`; applying the same spec to the same window is
deterministic.

Channel conventions (rows: original, phasic, tonic):

* filters use the same cutoff(s) on every channel;
* ``hf_noise`` and ``gauss_noise`` draw independent noise per channel with a
  shared sigma;
* ``tonic_scale`` / ``tonic_warp`` touch the tonic row and reset
  ``original := phasic + tonic``;
* everything else applies identical parameters to all three rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ParamOutOfRange
from .segment import WINDOW, Window
from .signal import RATE_HZ, filter_band

KINDS = (
    "low_pass", "high_pass", "band_pass", "band_stop", "hf_noise",
    "jump", "loose_sensor",
    "tonic_scale", "tonic_warp",
    "amp_scale", "amp_warp", "gauss_noise", "time_shift", "cutout", "time_warp",
    "permutation", "flip", "identity",
)

# closed parameter ranges
RANGES = {
    "low_pass": {"cutoff": (0.25, 1.0)},
    "high_pass": {"cutoff": (0.05, 0.25)},
    "band_pass": {"low": (0.05, 0.05), "high": (0.25, 0.25)},
    "band_stop": {"low": (0.75, 0.75), "high": (1.0, 1.0)},
    "hf_noise": {"sigma": (0.0, 0.5)},
    "jump": {"magnitude": (0.01, 0.2), "sign": (-1, 1), "index": (1, WINDOW - 1)},
    "loose_sensor": {"duration_s": (5.0, 20.0), "start": (0, WINDOW - 20)},
    "tonic_scale": {"factor": (0.25, 2.0)},
    "tonic_warp": {"sigma": (0.01, 0.05)},
    "amp_scale": {"factor": (0.25, 2.0)},
    "amp_warp": {"sigma": (0.01, 0.05)},
    "gauss_noise": {"sigma": (0.0, 0.5)},
    "time_shift": {"shift_s": (5.0, 45.0), "sign": (-1, 1)},
    "cutout": {"duration_s": (5.0, 15.0), "start": (0, WINDOW - 20)},
    "time_warp": {"sigma": (0.01, 0.1)},
    "permutation": {"n_segments": (2, 6)},
    "flip": {},
    "identity": {},
}

HF_NOISE_CUTOFF_HZ = 1.0
WARP_KNOTS = 4


@dataclass(frozen=True)
class AugmentationSpec:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def validate(self) -> None:
        if self.kind not in RANGES:
            raise ParamOutOfRange(f"unknown augmentation {self.kind!r}")
        ranges = RANGES[self.kind]
        if set(self.params) != set(ranges):
            raise ParamOutOfRange(f"{self.kind} expects params {sorted(ranges)}, got {sorted(self.params)}")
        for name, (lo, hi) in ranges.items():
            v = self.params[name]
            if not lo <= v <= hi:
                raise ParamOutOfRange(f"{self.kind}.{name}={v} outside [{lo}, {hi}]")
        if self.kind in ("jump", "time_shift") and self.params["sign"] not in (-1, 1):
            raise ParamOutOfRange(f"{self.kind}.sign must be -1 or +1")
        if self.kind in ("loose_sensor", "cutout"):
            n = _span_samples(self.params["duration_s"])
            if self.params["start"] + n > WINDOW:
                raise ParamOutOfRange(f"{self.kind} span runs past the window end")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params), "seed": int(self.seed)}


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent counter-based stream for (seed, *key); order-free across workers."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, key)])))


def _span_samples(duration_s: float) -> int:
    return int(round(duration_s * RATE_HZ))


def sample_spec(kind: str, rng: np.random.Generator) -> AugmentationSpec:
    """Draw parameters for ``kind`` uniformly from its range."""
    u = rng.uniform
    if kind == "low_pass":
        p = {"cutoff": u(0.25, 1.0)}
    elif kind == "high_pass":
        p = {"cutoff": u(0.05, 0.25)}
    elif kind == "band_pass":
        p = {"low": 0.05, "high": 0.25}
    elif kind == "band_stop":
        p = {"low": 0.75, "high": 1.0}
    elif kind in ("hf_noise", "gauss_noise"):
        p = {"sigma": u(0.0, 0.5)}
    elif kind == "jump":
        p = {"magnitude": u(0.01, 0.2), "sign": int(rng.choice([-1, 1])),
             "index": int(rng.integers(1, WINDOW))}
    elif kind in ("loose_sensor", "cutout"):
        hi = 80 if kind == "loose_sensor" else 60
        n = int(rng.integers(20, hi + 1))  # whole samples so the span is exact
        p = {"duration_s": n / RATE_HZ, "start": int(rng.integers(0, WINDOW - n + 1))}
    elif kind in ("tonic_scale", "amp_scale"):
        p = {"factor": u(0.25, 2.0)}
    elif kind in ("tonic_warp", "amp_warp"):
        p = {"sigma": u(0.01, 0.05)}
    elif kind == "time_shift":
        p = {"shift_s": int(rng.integers(20, 181)) / RATE_HZ, "sign": int(rng.choice([-1, 1]))}
    elif kind == "time_warp":
        p = {"sigma": u(0.01, 0.1)}
    elif kind == "permutation":
        p = {"n_segments": int(rng.integers(2, 7))}
    elif kind in ("flip", "identity"):
        p = {}
    else:
        raise ParamOutOfRange(f"unknown augmentation {kind!r}")
    return AugmentationSpec(kind, p, int(rng.integers(0, 2**63 - 1)))


def _smooth_curve(rng: np.random.Generator, sigma: float) -> np.ndarray:
    knots_x = np.linspace(0, WINDOW - 1, WARP_KNOTS)
    knots_y = rng.normal(1.0, sigma, WARP_KNOTS)
    return CubicSpline(knots_x, knots_y)(np.arange(WINDOW))


def _flip(x: np.ndarray) -> np.ndarray:
    # Centre rounded to float32: for float32-valued windows (the shard format)
    # c - x is exact in float64 and the re-derived centre of the output rounds
    # back to the same c, so flip(flip(x)) == x bit for bit.
    c = (2.0 * x.mean(axis=-1, keepdims=True)).astype(np.float32).astype(np.float64)
    return c - x


def transform(x: np.ndarray, spec: AugmentationSpec) -> np.ndarray:
    """Apply ``spec`` to a 3x240 array and return a new float64 array."""
    spec.validate()
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (3, WINDOW):
        raise ValueError(f"expected a 3x{WINDOW} window, got {x.shape}")
    k, p = spec.kind, spec.params
    rng = np.random.default_rng(spec.seed)

    if k == "identity":
        return x.copy()
    if k == "low_pass":
        return filter_band(x, "low", p["cutoff"])
    if k == "high_pass":
        return filter_band(x, "high", p["cutoff"])
    if k in ("band_pass", "band_stop"):
        return filter_band(x, k, (p["low"], p["high"]))
    if k == "hf_noise":
        noise = filter_band(rng.normal(0.0, 1.0, x.shape), "high", HF_NOISE_CUTOFF_HZ)
        return x + p["sigma"] * noise
    if k == "gauss_noise":
        return x + rng.normal(0.0, 1.0, x.shape) * p["sigma"]
    if k == "jump":
        out = x.copy()
        out[:, p["index"]:] += p["sign"] * p["magnitude"]
        return out
    if k in ("loose_sensor", "cutout"):
        out = x.copy()
        out[:, p["start"]:p["start"] + _span_samples(p["duration_s"])] = 0.0
        return out
    if k in ("tonic_scale", "tonic_warp"):
        scale = p["factor"] if k == "tonic_scale" else _smooth_curve(rng, p["sigma"])
        out = x.copy()
        out[2] = x[2] * scale
        out[0] = out[1] + out[2]
        return out
    if k == "amp_scale":
        return x * p["factor"]
    if k == "amp_warp":
        return x * _smooth_curve(rng, p["sigma"])[None, :]
    if k == "time_shift":
        return np.roll(x, p["sign"] * _span_samples(p["shift_s"]), axis=-1)
    if k == "time_warp":
        speed = np.clip(_smooth_curve(rng, p["sigma"]), 1e-3, None)
        pos = np.concatenate([[0.0], np.cumsum(speed[1:])])
        pos *= (WINDOW - 1) / pos[-1]
        grid = np.arange(WINDOW, dtype=np.float64)
        return np.stack([np.interp(pos, grid, row) for row in x])
    if k == "permutation":
        segments = np.array_split(np.arange(WINDOW), p["n_segments"])
        order = rng.permutation(p["n_segments"])
        return x[:, np.concatenate([segments[i] for i in order])]
    if k == "flip":
        return _flip(x)
    raise ParamOutOfRange(f"unknown augmentation {k!r}")


def apply(w: Window, spec: AugmentationSpec) -> Window:
    return w.with_channels(transform(w.channels, spec))


def sample_pair_specs(rng: np.random.Generator) -> tuple[AugmentationSpec, AugmentationSpec]:
    specs = []
    for _ in range(2):
        kind = KINDS[int(rng.integers(len(KINDS)))]
        specs.append(sample_spec(kind, rng))
    return specs[0], specs[1]


def sample_pair(w: Window, rng: np.random.Generator):
    """Two independently augmented views of ``w`` plus the specs that made them."""
    s1, s2 = sample_pair_specs(rng)
    return apply(w, s1), apply(w, s2), (s1, s2)


def augment_views(x: np.ndarray, seed: int, epoch: int, indices) -> tuple[np.ndarray, np.ndarray]:
    """Two views for each window of a (B, 3, 240) batch.

    Window ``indices[i]`` at ``epoch`` always gets the same pair, whichever
    worker computes it.
    """
    v1 = np.empty(x.shape, dtype=np.float32)
    v2 = np.empty(x.shape, dtype=np.float32)
    for b, idx in enumerate(indices):
        s1, s2 = sample_pair_specs(stream(seed, epoch, int(idx)))
        v1[b] = transform(x[b], s1)
        v2[b] = transform(x[b], s2)
    return v1, v2

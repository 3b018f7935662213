"""Analytic FLOP counts for the encoder and CPU timing of feature extractors.

FLOP conventions: a multiply-accumulate is 2 FLOPs, so a convolution costs
``2 * out_len * out_ch * (in_ch / groups) * kernel`` and a linear layer
``2 * in * out`` (bias adds not counted).  Batch norm, activations, the
squeeze-excitation gate multiply and residual adds cost 1 FLOP per output
element; average pooling costs 1 FLOP per input element.  Dropout is free
(inference).
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .encoder import EncoderConfig, conv_out_len
from .errors import InsufficientWindows

N_WARMUP = 3
N_TIMED = 20


@dataclass(frozen=True)
class LayerCost:
    name: str
    kind: str
    flops: int


def conv_flops(in_ch: int, out_ch: int, kernel: int, out_len: int, groups: int = 1) -> int:
    return 2 * out_len * out_ch * (in_ch // groups) * kernel


def linear_flops(n_in: int, n_out: int) -> int:
    return 2 * n_in * n_out


def encoder_layers(cfg: EncoderConfig) -> list[LayerCost]:
    """Per-layer costs of one 3x240 forward pass of the encoder."""
    rows: list[LayerCost] = []
    k = cfg.kernel_size
    length = conv_out_len(cfg.input_length, k, 2)
    rows.append(LayerCost("stem.conv", "conv", conv_flops(cfg.in_channels, cfg.stem_channels, k, length)))
    rows.append(LayerCost("stem.bn", "bn", cfg.stem_channels * length))
    rows.append(LayerCost("stem.act", "act", cfg.stem_channels * length))
    for i in range(cfg.num_blocks):
        cin, cout, stride = cfg.block_io(i)
        hidden = cin * cfg.expansion if cin != cfg.mbconv_channels else cfg.hidden_channels
        squeeze = max(1, int(hidden * cfg.se_ratio))
        out_len = conv_out_len(length, k, stride)
        p = f"block{i}"
        rows += [
            LayerCost(f"{p}.expand", "conv", conv_flops(cin, hidden, 1, length)),
            LayerCost(f"{p}.expand_bn", "bn", hidden * length),
            LayerCost(f"{p}.expand_act", "act", hidden * length),
            LayerCost(f"{p}.depthwise", "conv", conv_flops(hidden, hidden, k, out_len, groups=hidden)),
            LayerCost(f"{p}.depthwise_bn", "bn", hidden * out_len),
            LayerCost(f"{p}.depthwise_act", "act", hidden * out_len),
            LayerCost(f"{p}.se_pool", "pool", hidden * out_len),
            LayerCost(f"{p}.se_reduce", "conv", conv_flops(hidden, squeeze, 1, 1)),
            LayerCost(f"{p}.se_act", "act", squeeze),
            LayerCost(f"{p}.se_expand", "conv", conv_flops(squeeze, hidden, 1, 1)),
            LayerCost(f"{p}.se_gate", "act", hidden),
            LayerCost(f"{p}.se_scale", "mul", hidden * out_len),
            LayerCost(f"{p}.project", "conv", conv_flops(hidden, cout, 1, out_len)),
            LayerCost(f"{p}.project_bn", "bn", cout * out_len),
        ]
        if stride == 1 and cin == cout:
            rows.append(LayerCost(f"{p}.residual", "add", cout * out_len))
        length = out_len
    last = cfg.mbconv_channels if cfg.num_blocks else cfg.stem_channels
    rows += [
        LayerCost("head.conv", "conv", conv_flops(last, cfg.head_channels, 1, length)),
        LayerCost("head.bn", "bn", cfg.head_channels * length),
        LayerCost("head.act", "act", cfg.head_channels * length),
        LayerCost("pool", "pool", cfg.head_channels * length),
        LayerCost("fc", "linear", linear_flops(cfg.head_channels, cfg.embedding_dim)),
    ]
    return rows


def count_flops(model: EncoderConfig | Sequence[LayerCost]) -> int:
    """Total FLOPs per window for an encoder config or an explicit layer list."""
    layers = encoder_layers(model) if isinstance(model, EncoderConfig) else model
    return int(sum(layer.flops for layer in layers))


@dataclass
class BenchEntry:
    name: str
    mean_ms: float
    se_ms: float
    n_samples: int
    n_warmup: int
    gflops: float | None = None
    times_ms: list = field(default_factory=list, repr=False)


def time_extractor(name: str, extractor: Callable, windows: Sequence, warmup: int = N_WARMUP,
                   n_samples: int = N_TIMED, gflops: float | None = None) -> BenchEntry:
    """Time ``extractor`` on one window per run; the first ``warmup`` runs are discarded."""
    if len(windows) < warmup + n_samples:
        raise InsufficientWindows(f"need {warmup + n_samples} windows, got {len(windows)}")
    for w in windows[:warmup]:
        extractor(w)
    times = np.empty(n_samples)
    for i, w in enumerate(windows[warmup:warmup + n_samples]):
        t0 = time.perf_counter()
        extractor(w)
        times[i] = time.perf_counter() - t0
    times *= 1e3
    return BenchEntry(name, float(times.mean()), float(times.std(ddof=1) / np.sqrt(n_samples)),
                      n_samples, warmup, gflops, times.tolist())


def standard_bench(windows: np.ndarray, raw: np.ndarray | None = None,
                   encoder_cfg: EncoderConfig | None = None, seed: int = 0) -> list[BenchEntry]:
    """Rows for the generic and EDA-specific extractors, the encoder and (optionally) cvxEDA.

    ``windows`` is a (n, 3, 240) stack; ``raw`` optional (n, 240) raw series
    for the decomposition row.  A seeded random subset of 23 windows is used.
    """
    import torch

    from .decompose import cvxeda
    from .encoder import REFERENCE, EfficientNet1D
    from .features import eda_features, generic_features

    if len(windows) < N_WARMUP + N_TIMED:
        raise InsufficientWindows(f"need {N_WARMUP + N_TIMED} windows, got {len(windows)}")
    pick = np.sort(np.random.default_rng(seed).choice(len(windows), N_WARMUP + N_TIMED, replace=False))
    sub = [np.asarray(windows[i], dtype=np.float64) for i in pick]
    cfg = encoder_cfg or REFERENCE
    torch.manual_seed(seed)
    model = EfficientNet1D(cfg).eval()

    def run_encoder(w):
        with torch.no_grad():
            model(torch.as_tensor(w, dtype=torch.float32)[None])

    entries = [
        time_extractor("generic", generic_features, sub),
        time_extractor("eda", eda_features, sub),
        time_extractor("encoder", run_encoder, sub, gflops=count_flops(cfg) / 1e9),
    ]
    if raw is not None:
        entries.append(time_extractor("decomposition", cvxeda, [np.asarray(raw[i]) for i in pick]))
    return entries


BENCH_COLUMNS = ("extractor", "mean_ms", "se_ms", "n_samples", "n_warmup", "gflops")


def write_bench(path: str | Path, entries: list[BenchEntry]) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(BENCH_COLUMNS)
        for e in entries:
            wr.writerow([e.name, repr(e.mean_ms), repr(e.se_ms), e.n_samples, e.n_warmup,
                         "" if e.gflops is None else repr(e.gflops)])

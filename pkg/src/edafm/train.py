"""Contrastive pre-training: InfoNCE, the MAE composite loss, LR schedule and the fit loop."""

from __future__ import annotations

import copy
import csv
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .augment import augment_views, stream
from .encoder import TINY, EfficientNet1D, EncoderConfig, save_checkpoint
from .errors import AllMaskedWithAlphaZero, Diverged, EmptyData, ZeroVector
from .segment import WindowSet

VAL_VIEW_EPOCH = 2**32 - 1  # fixed augmentation key so val loss is comparable across epochs


@dataclass(frozen=True)
class ContrastiveConfig:
    tau: float = 0.1
    batch_size: int = 512
    lr: float = 1e-3
    weight_decay: float = 0.01
    plateau_factor: float = 0.5
    plateau_patience: int = 10
    early_stop_patience: int = 30
    max_epochs: int = 400
    seed: int = 0
    val_fraction: float = 0.1
    workers: int = 1

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if not 0 < self.plateau_factor < 1:
            raise ValueError("plateau_factor must be in (0, 1)")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must be in (0, 1)")
        if min(self.plateau_patience, self.early_stop_patience, self.max_epochs, self.workers) < 1:
            raise ValueError("patience, max_epochs and workers must be >= 1")


def half_pairing(n2: int) -> np.ndarray:
    """Partner map for views stacked as [view1; view2]."""
    n = n2 // 2
    return np.r_[np.arange(n, n2), np.arange(n)]


def info_nce(z: torch.Tensor, pairing=None, tau: float = 0.1) -> torch.Tensor:
    """Mean InfoNCE over all 2N anchors with cosine similarity and in-batch negatives.

    ``pairing[i]`` is the positive of row ``i``; by default rows ``i`` and
    ``i + N`` are paired.
    """
    if z.dim() != 2 or z.shape[0] < 2 or z.shape[0] % 2:
        raise ValueError("need a (2N, d) embedding matrix")
    n2 = z.shape[0]
    pairing = half_pairing(n2) if pairing is None else np.asarray(pairing)
    if sorted(pairing.tolist()) != list(range(n2)) or np.any(pairing[pairing] != np.arange(n2)) \
            or np.any(pairing == np.arange(n2)):
        raise ValueError("pairing must be a perfect matching")
    norms = z.norm(dim=1, keepdim=True)
    if bool((norms == 0).any()):
        raise ZeroVector("cosine similarity undefined for a zero embedding")
    zn = z / norms
    sim = zn @ zn.T / tau
    eye = torch.eye(n2, dtype=torch.bool, device=z.device)
    sim = sim.masked_fill(eye, -math.inf)
    pos = sim[torch.arange(n2), torch.as_tensor(pairing)]
    return (torch.logsumexp(sim, dim=1) - pos).mean()


def mae_loss(x: torch.Tensor, xhat: torch.Tensor, mask, alpha: float, patch_size: int = 8) -> torch.Tensor:
    """alpha * masked patch-MAE + (1 - alpha) * visible patch-MAE; empty sides contribute 0."""
    if x.shape != xhat.shape or x.shape[-1] % patch_size:
        raise ValueError("x and xhat must share a shape divisible into patches")
    b, c, t = x.shape
    err = (x - xhat).abs().reshape(b, c, t // patch_size, patch_size).mean(dim=(1, 3))  # (B, P)
    mask = torch.as_tensor(np.asarray(mask), dtype=torch.bool)
    if mask.dim() == 1:
        mask = mask.expand(b, -1)
    if mask.shape != err.shape:
        raise ValueError(f"mask shape {tuple(mask.shape)} does not match patches {tuple(err.shape)}")
    zero = err.sum() * 0.0

    def side(sel):
        return err[sel].mean() if bool(sel.any()) else zero

    if bool(mask.all()) and alpha == 0:
        warnings.warn("all patches masked with alpha=0; loss is 0", AllMaskedWithAlphaZero)
    return alpha * side(mask) + (1 - alpha) * side(~mask)


class PlateauSchedule:
    """Multiply the LR by ``factor`` once ``patience`` epochs pass without a new best."""

    def __init__(self, lr: float, factor: float = 0.5, patience: int = 10):
        self.lr, self.factor, self.patience = lr, factor, patience
        self.best = math.inf
        self.bad = 0

    def step(self, val: float) -> float:
        if val < self.best:
            self.best, self.bad = val, 0
        else:
            self.bad += 1
            if self.bad >= self.patience:
                self.lr *= self.factor
                self.bad = 0
        return self.lr


def split_by_user(user_id: np.ndarray, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Hold out whole users for validation (window-level split if there is one user)."""
    users = np.array(sorted(set(map(str, user_id))))
    rng = np.random.default_rng(seed)
    idx = np.arange(len(user_id))
    if len(users) < 2:
        perm = rng.permutation(idx)
        n_val = max(1, int(round(fraction * len(idx))))
        return np.sort(perm[n_val:]), np.sort(perm[:n_val])
    n_val = min(len(users) - 1, max(1, int(round(fraction * len(users)))))
    val_users = set(rng.permutation(users)[:n_val])
    is_val = np.array([str(u) in val_users for u in user_id])
    return idx[~is_val], idx[is_val]


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


@dataclass
class TrainResult:
    model: EfficientNet1D
    history: list = field(default_factory=list)
    initial_val: float = math.nan
    best_epoch: int = 0
    best_val: float = math.inf


def _batches(idx: np.ndarray, size: int):
    for i in range(0, len(idx), size):
        b = idx[i:i + size]
        if len(b) >= 2:
            yield b


def _views(x: np.ndarray, seed: int, epoch: int, idx: np.ndarray, pool: ThreadPoolExecutor | None):
    if pool is None:
        return augment_views(x[idx], seed, epoch, idx)
    parts = np.array_split(np.arange(len(idx)), pool._max_workers)
    futs = [pool.submit(augment_views, x[idx[p]], seed, epoch, idx[p]) for p in parts if len(p)]
    res = [f.result() for f in futs]
    return np.concatenate([r[0] for r in res]), np.concatenate([r[1] for r in res])


def _batch_loss(model, v1, v2, tau):
    z = model.project(model(torch.from_numpy(np.concatenate([v1, v2]))))
    return info_nce(z, tau=tau)


@torch.no_grad()
def _val_loss(model, x, idx, cfg, pool) -> float:
    model.eval()
    total, count = 0.0, 0
    for b in _batches(idx, cfg.batch_size):
        v1, v2 = _views(x, cfg.seed, VAL_VIEW_EPOCH, b, pool)
        total += float(_batch_loss(model, v1, v2, cfg.tau)) * len(b)
        count += len(b)
    model.train()
    return total / count


def fit_contrastive(ws: WindowSet, cfg: ContrastiveConfig = ContrastiveConfig(),
                    model: EfficientNet1D | None = None, encoder_cfg: EncoderConfig = TINY,
                    out_dir: str | Path | None = None, on_epoch=None) -> TrainResult:
    """Train ``model`` with InfoNCE on augmented view pairs and return the best-val weights.

    Views come from counter-based streams keyed by (seed, epoch, window index),
    so the run is reproducible for any ``cfg.workers``.  If ``out_dir`` is
    given the best checkpoint and ``loss_curves.csv`` are written there.
    ``on_epoch(log, model)`` is called after every epoch.
    """
    if len(ws) == 0:
        raise EmptyData("no windows to train on")
    if model is None:
        torch.manual_seed(cfg.seed)
        model = EfficientNet1D(encoder_cfg)
    torch.manual_seed(cfg.seed)
    x = np.ascontiguousarray(ws.x, dtype=np.float32)
    train_idx, val_idx = split_by_user(ws.user_id, cfg.val_fraction, cfg.seed)
    if len(train_idx) < 2 or len(val_idx) < 2:
        raise EmptyData("train and validation splits need at least 2 windows each")

    opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    sched = PlateauSchedule(cfg.lr, cfg.plateau_factor, cfg.plateau_patience)
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    result = TrainResult(model)
    best_state = copy.deepcopy(model.state_dict())
    try:
        result.initial_val = _val_loss(model, x, val_idx, cfg, pool)
        model.train()
        for epoch in range(1, cfg.max_epochs + 1):
            order = train_idx[stream(cfg.seed, epoch).permutation(len(train_idx))]
            batches = list(_batches(order, cfg.batch_size))
            total, count = 0.0, 0
            pending = pool.submit(_views, x, cfg.seed, epoch, batches[0], None) if pool else None
            for k, b in enumerate(batches):
                if pool is not None:
                    v1, v2 = pending.result()
                    if k + 1 < len(batches):  # prefetch one batch ahead
                        pending = pool.submit(_views, x, cfg.seed, epoch, batches[k + 1], None)
                else:
                    v1, v2 = _views(x, cfg.seed, epoch, b, None)
                loss = _batch_loss(model, v1, v2, cfg.tau)
                if not torch.isfinite(loss):
                    raise Diverged(f"non-finite loss at epoch {epoch}")
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += loss.item() * len(b)
                count += len(b)
            val = _val_loss(model, x, val_idx, cfg, pool)
            if not math.isfinite(val):
                raise Diverged(f"non-finite validation loss at epoch {epoch}")
            result.history.append(EpochLog(epoch, total / count, val, opt.param_groups[0]["lr"]))
            if val < result.best_val:
                result.best_val, result.best_epoch = val, epoch
                best_state = copy.deepcopy(model.state_dict())
            if on_epoch is not None:
                on_epoch(result.history[-1], model)
                model.train()
            lr = sched.step(val)
            for g in opt.param_groups:
                g["lr"] = lr
            if epoch - result.best_epoch >= cfg.early_stop_patience:
                break
    finally:
        if pool is not None:
            pool.shutdown()
    model.load_state_dict(best_state)
    model.eval()
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out / "encoder.npz", model,
                        {"train": asdict(cfg), "best_epoch": result.best_epoch, "best_val": result.best_val})
        write_curves(out / "loss_curves.csv", result.history)
    return result


def write_curves(path: str | Path, history: list[EpochLog]) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for h in history:
            wr.writerow([h.epoch, repr(h.train_loss), repr(h.val_loss), repr(h.lr)])

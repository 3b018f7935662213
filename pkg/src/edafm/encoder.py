"""EfficientNet-style 1D encoder for 3x240 EDA windows, plus a small masked autoencoder.

Reference encoder: stem conv (kernel 9, stride 2) -> 16 MBConv blocks
(expansion 4, depthwise kernel 9, squeeze-excitation) -> 1x1 head conv to 248
channels -> global average pool -> dropout -> linear to a 64-d embedding.
Blocks 5, 9 and 13 downsample by 2, so the temporal axis goes
240 -> 120 -> 60 -> 30 -> 15.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import BadPatchSize, CheckpointError, NoTape, ShapeMismatch

CHECKPOINT_FORMAT = "edafm-checkpoint-1"


@dataclass(frozen=True)
class EncoderConfig:
    in_channels: int = 3
    input_length: int = 240
    stem_channels: int = 64
    mbconv_channels: int = 64
    num_blocks: int = 16
    head_channels: int = 248
    embedding_dim: int = 64
    kernel_size: int = 9
    expansion: int = 4
    se_ratio: float = 0.25
    dropout: float = 0.5
    stride_blocks: tuple = (4, 8, 12)  # zero-based indices of stride-2 blocks
    projection_head: bool = False

    def __post_init__(self):
        object.__setattr__(self, "stride_blocks", tuple(self.stride_blocks))
        for name in ("in_channels", "input_length", "stem_channels", "mbconv_channels",
                     "num_blocks", "head_channels", "embedding_dim", "kernel_size", "expansion"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.se_ratio <= 1:
            raise ValueError("se_ratio must be in (0, 1]")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def hidden_channels(self) -> int:
        return self.mbconv_channels * self.expansion

    @property
    def se_channels(self) -> int:
        return max(1, int(self.hidden_channels * self.se_ratio))

    def block_io(self, i: int) -> tuple[int, int, int]:
        """(in_channels, out_channels, stride) of block ``i``."""
        cin = self.stem_channels if i == 0 else self.mbconv_channels
        return cin, self.mbconv_channels, 2 if i in self.stride_blocks else 1


REFERENCE = EncoderConfig()
TINY = EncoderConfig(stem_channels=16, mbconv_channels=16, num_blocks=2, head_channels=32,
                     embedding_dim=64, dropout=0.1, stride_blocks=(1,))


def conv_out_len(length: int, kernel: int, stride: int) -> int:
    pad = kernel // 2
    return (length + 2 * pad - kernel) // stride + 1


def stage_lengths(cfg: EncoderConfig) -> list[int]:
    """Temporal length after the stem and after each block."""
    lengths = [conv_out_len(cfg.input_length, cfg.kernel_size, 2)]
    for i in range(cfg.num_blocks):
        _, _, stride = cfg.block_io(i)
        lengths.append(conv_out_len(lengths[-1], cfg.kernel_size, stride))
    return lengths


class SqueezeExcite(nn.Module):
    def __init__(self, channels: int, squeeze: int):
        super().__init__()
        self.reduce = nn.Conv1d(channels, squeeze, 1)
        self.expand = nn.Conv1d(squeeze, channels, 1)
        self.act = nn.SiLU()

    def forward(self, x):
        s = x.mean(dim=-1, keepdim=True)
        s = torch.sigmoid(self.expand(self.act(self.reduce(s))))
        return x * s


class MBConv(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int, cfg: EncoderConfig):
        super().__init__()
        hidden = cin * cfg.expansion if cin != cfg.mbconv_channels else cfg.hidden_channels
        squeeze = max(1, int(hidden * cfg.se_ratio))
        k = cfg.kernel_size
        self.expand = nn.Sequential(nn.Conv1d(cin, hidden, 1, bias=False), nn.BatchNorm1d(hidden), nn.SiLU())
        self.depthwise = nn.Sequential(
            nn.Conv1d(hidden, hidden, k, stride=stride, padding=k // 2, groups=hidden, bias=False),
            nn.BatchNorm1d(hidden), nn.SiLU())
        self.se = SqueezeExcite(hidden, squeeze)
        self.project = nn.Sequential(nn.Conv1d(hidden, cout, 1, bias=False), nn.BatchNorm1d(cout))
        self.residual = stride == 1 and cin == cout

    def forward(self, x):
        y = self.project(self.se(self.depthwise(self.expand(x))))
        return x + y if self.residual else y


class EfficientNet1D(nn.Module):
    def __init__(self, cfg: EncoderConfig = REFERENCE):
        super().__init__()
        self.cfg = cfg
        k = cfg.kernel_size
        self.stem = nn.Sequential(
            nn.Conv1d(cfg.in_channels, cfg.stem_channels, k, stride=2, padding=k // 2, bias=False),
            nn.BatchNorm1d(cfg.stem_channels), nn.SiLU())
        self.blocks = nn.ModuleList(MBConv(*cfg.block_io(i), cfg) for i in range(cfg.num_blocks))
        last = cfg.mbconv_channels if cfg.num_blocks else cfg.stem_channels
        self.head = nn.Sequential(nn.Conv1d(last, cfg.head_channels, 1, bias=False),
                                  nn.BatchNorm1d(cfg.head_channels), nn.SiLU())
        self.dropout = nn.Dropout(cfg.dropout)
        self.fc = nn.Linear(cfg.head_channels, cfg.embedding_dim)
        self.projector = (nn.Sequential(nn.Linear(cfg.embedding_dim, cfg.embedding_dim), nn.SiLU(),
                                        nn.Linear(cfg.embedding_dim, cfg.embedding_dim))
                          if cfg.projection_head else None)
        self.reset_parameters()

    def reset_parameters(self):
        for m in self.modules():
            if isinstance(m, (nn.Conv1d, nn.Linear)):
                nn.init.kaiming_uniform_(m.weight, nonlinearity="relu")
                if m.bias is not None:
                    nn.init.zeros_(m.bias)
            elif isinstance(m, nn.BatchNorm1d):
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)

    def check_input(self, x: torch.Tensor) -> None:
        want = (self.cfg.in_channels, self.cfg.input_length)
        if x.dim() != 3 or tuple(x.shape[1:]) != want:
            raise ShapeMismatch(f"expected (B, {want[0]}, {want[1]}), got {tuple(x.shape)}")

    def features(self, x: torch.Tensor) -> torch.Tensor:
        self.check_input(x)
        x = self.stem(x)
        for block in self.blocks:
            x = block(x)
        x = self.head(x)
        return x.mean(dim=-1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc(self.dropout(self.features(x)))

    def project(self, z: torch.Tensor) -> torch.Tensor:
        """Contrastive-loss space: the optional projection head, else identity."""
        return self.projector(z) if self.projector is not None else z


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def backward(loss: torch.Tensor) -> None:
    """Populate ``.grad`` of every parameter reachable from ``loss``."""
    if not isinstance(loss, torch.Tensor) or loss.grad_fn is None:
        raise NoTape("loss was not produced by a recorded forward pass")
    loss.backward()


@torch.no_grad()
def embed(model: EfficientNet1D, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Frozen-encoder embeddings (eval mode) for a (n, 3, 240) array."""
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    out = []
    for i in range(0, len(x), batch_size):
        xb = torch.as_tensor(np.asarray(x[i:i + batch_size]), dtype=dtype)
        out.append(model(xb).cpu().numpy())
    model.train(was_training)
    if not out:
        return np.zeros((0, model.cfg.embedding_dim), dtype=np.float32)
    return np.concatenate(out).astype(np.float32)


# masked autoencoder

@dataclass(frozen=True)
class MaeConfig:
    in_channels: int = 3
    input_length: int = 240
    patch_size: int = 8
    width: int = 64
    encoder_layers: int = 4
    decoder_layers: int = 2
    heads: int = 4
    mask_ratio: float = 0.4
    alpha: float = 0.5

    def __post_init__(self):
        if self.patch_size <= 0 or self.input_length % self.patch_size:
            raise BadPatchSize(f"patch size {self.patch_size} does not divide {self.input_length}")
        if not 0 <= self.mask_ratio < 1:
            raise ValueError("mask_ratio must be in [0, 1)")
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must be in [0, 1]")

    @property
    def num_patches(self) -> int:
        return self.input_length // self.patch_size


class MaskedAutoencoder(nn.Module):
    """Transformer MAE over non-overlapping patches; masked patches become a learned token."""

    def __init__(self, cfg: MaeConfig = MaeConfig()):
        super().__init__()
        self.cfg = cfg
        pdim = cfg.in_channels * cfg.patch_size
        self.patch_embed = nn.Linear(pdim, cfg.width)
        self.pos = nn.Parameter(torch.zeros(1, cfg.num_patches, cfg.width))
        self.mask_token = nn.Parameter(torch.zeros(1, 1, cfg.width))

        def stack(n):
            layer = nn.TransformerEncoderLayer(cfg.width, cfg.heads, 2 * cfg.width, dropout=0.0,
                                               batch_first=True)
            return nn.TransformerEncoder(layer, n, enable_nested_tensor=False)

        self.encoder = stack(cfg.encoder_layers)
        self.decoder = stack(cfg.decoder_layers)
        self.out = nn.Linear(cfg.width, pdim)
        nn.init.normal_(self.pos, std=0.02)
        nn.init.normal_(self.mask_token, std=0.02)

    def patchify(self, x: torch.Tensor) -> torch.Tensor:
        b, c, t = x.shape
        p = self.cfg.patch_size
        return x.reshape(b, c, t // p, p).permute(0, 2, 1, 3).reshape(b, t // p, c * p)

    def unpatchify(self, patches: torch.Tensor) -> torch.Tensor:
        b, n, _ = patches.shape
        c, p = self.cfg.in_channels, self.cfg.patch_size
        return patches.reshape(b, n, c, p).permute(0, 2, 1, 3).reshape(b, c, n * p)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        return mae_forward(self, x, mask)


def random_mask(num_patches: int, ratio: float, rng: np.random.Generator) -> np.ndarray:
    """Boolean mask with exactly round(ratio * num_patches) masked patches."""
    n_masked = int(round(ratio * num_patches))
    mask = np.zeros(num_patches, dtype=bool)
    mask[rng.choice(num_patches, n_masked, replace=False)] = True
    return mask


def mae_forward(model: MaskedAutoencoder, batch: torch.Tensor, mask) -> torch.Tensor:
    """Reconstruct a (B, C, T) batch; ``mask`` is (num_patches,) or (B, num_patches), True = masked."""
    cfg = model.cfg
    if batch.dim() != 3 or tuple(batch.shape[1:]) != (cfg.in_channels, cfg.input_length):
        raise ShapeMismatch(f"expected (B, {cfg.in_channels}, {cfg.input_length}), got {tuple(batch.shape)}")
    mask = torch.as_tensor(np.asarray(mask), dtype=torch.bool)
    if mask.shape[-1] != cfg.num_patches:
        raise BadPatchSize(f"mask has {mask.shape[-1]} entries, expected {cfg.num_patches} patches")
    if mask.dim() == 1:
        mask = mask.expand(batch.shape[0], -1)
    tokens = model.patch_embed(model.patchify(batch))
    tokens = torch.where(mask[..., None], model.mask_token.to(tokens.dtype), tokens) + model.pos
    latent = model.encoder(tokens)
    return model.unpatchify(model.out(model.decoder(latent)))


# checkpoints

def save_checkpoint(path: str | Path, model: nn.Module, extra: dict | None = None) -> None:
    """Named tensors + config record in one ``.npz``."""
    cfg = model.cfg
    kind = "mae" if isinstance(model, MaskedAutoencoder) else "encoder"
    arrays = {f"tensor/{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    meta = {"format": CHECKPOINT_FORMAT, "kind": kind, "config": asdict(cfg), "extra": extra or {}}
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path):
    """Rebuild the model from a checkpoint, validating every tensor by name and shape."""
    with np.load(path) as z:
        if "__meta__" not in z:
            raise CheckpointError(f"{path}: missing metadata record")
        meta = json.loads(z["__meta__"].tobytes().decode())
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError(f"{path}: unsupported format {meta.get('format')!r}")
        tensors = {k[len("tensor/"):]: z[k] for k in z.files if k.startswith("tensor/")}
    if meta["kind"] == "mae":
        model = MaskedAutoencoder(MaeConfig(**meta["config"]))
    else:
        model = EfficientNet1D(EncoderConfig(**meta["config"]))
    state = model.state_dict()
    missing = set(state) - set(tensors)
    unexpected = set(tensors) - set(state)
    if missing or unexpected:
        raise CheckpointError(f"{path}: missing {sorted(missing)}, unexpected {sorted(unexpected)}")
    for name, ref in state.items():
        if tuple(ref.shape) != tuple(tensors[name].shape):
            raise CheckpointError(f"{path}: {name} has shape {tensors[name].shape}, expected {tuple(ref.shape)}")
    model.load_state_dict({k: torch.as_tensor(v) for k, v in tensors.items()})
    model.eval()
    return model, meta.get("extra", {})

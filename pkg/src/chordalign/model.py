"""Conformer frame classifier over constant-Q input.

A convolutional front end lifts 144 CQT bins to the model dimension, a
sinusoidal positional encoding is added, and a stack of conformer blocks
(macaron feed-forward pair, self-attention, depthwise convolution) feeds
three structured heads: root (13 way), bass (13 way), and a 12-unit pitch
multi-hot.  The head probabilities are concatenated and fused by a small
feed-forward into the 169-class chord log-probabilities used downstream.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
from torch import nn

from .chords import N_CLASSES
from .dsp import N_BINS
from .errors import UsageError

N_ROOTS = 13  # 12 pitch classes + none
N_PITCHES = 12


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 2
    model_dim: int = 64
    n_heads: int = 2
    conv_kernel: int = 15
    dropout: float = 0.1
    fusion_dim: int = 64
    n_bins: int = N_BINS
    n_classes: int = N_CLASSES

    def __post_init__(self):
        if self.n_layers < 1 or self.model_dim < 1 or self.fusion_dim < 1:
            raise UsageError("model sizes must be positive")
        if self.model_dim % self.n_heads != 0:
            raise UsageError(
                f"model_dim {self.model_dim} not divisible by n_heads {self.n_heads}"
            )
        if self.conv_kernel < 1:
            raise UsageError("conv kernel must be positive")
        if not 0 <= self.dropout < 1:
            raise UsageError("dropout must lie in [0, 1)")

    @classmethod
    def preset(cls, name: str) -> "ModelConfig":
        presets = {
            "paper-m": cls(n_layers=16, model_dim=256, n_heads=4, conv_kernel=32, fusion_dim=256),
            "toy": cls(n_layers=2, model_dim=64, n_heads=2, conv_kernel=15, fusion_dim=64),
        }
        key = name.lower()
        if key not in presets:
            raise UsageError(f"unknown model preset {name!r}; choose from {sorted(presets)}")
        return presets[key]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "ModelConfig":
        try:
            return cls(**payload)
        except TypeError as exc:
            raise UsageError(f"bad model config: {exc}") from exc


class FeedForwardModule(nn.Module):
    """Pre-norm feed-forward with 4x expansion and SiLU."""

    def __init__(self, dim: int, dropout: float):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.w_in = nn.Linear(dim, 4 * dim)
        self.w_out = nn.Linear(4 * dim, dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.w_in(self.norm(x))
        y = self.dropout(torch.nn.functional.silu(y))
        return self.dropout(self.w_out(y))


class SelfAttentionModule(nn.Module):
    """Pre-norm multi-head self-attention."""

    def __init__(self, dim: int, n_heads: int, dropout: float):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, n_heads, dropout=dropout, batch_first=True)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.norm(x)
        y, _ = self.attn(y, y, y, need_weights=False)
        return self.dropout(y)


class ConvolutionModule(nn.Module):
    """Pre-norm gated pointwise/depthwise convolution block.

    Even kernel sizes are reduced by one so the depthwise convolution can
    pad symmetrically and preserve sequence length.
    """

    def __init__(self, dim: int, kernel: int, dropout: float):
        super().__init__()
        k_eff = kernel if kernel % 2 == 1 else kernel - 1
        self.norm = nn.LayerNorm(dim)
        self.pointwise_in = nn.Conv1d(dim, 2 * dim, kernel_size=1)
        self.depthwise = nn.Conv1d(dim, dim, kernel_size=k_eff, padding=k_eff // 2, groups=dim)
        self.batch_norm = nn.BatchNorm1d(dim)
        self.pointwise_out = nn.Conv1d(dim, dim, kernel_size=1)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.norm(x).transpose(1, 2)  # (B, D, T)
        y = torch.nn.functional.glu(self.pointwise_in(y), dim=1)
        y = self.batch_norm(self.depthwise(y))
        y = self.pointwise_out(torch.nn.functional.silu(y))
        return self.dropout(y.transpose(1, 2))


class ConformerBlock(nn.Module):
    """Macaron conformer block with a final layer norm."""

    def __init__(self, dim: int, n_heads: int, kernel: int, dropout: float):
        super().__init__()
        self.ff_first = FeedForwardModule(dim, dropout)
        self.attention = SelfAttentionModule(dim, n_heads, dropout)
        self.convolution = ConvolutionModule(dim, kernel, dropout)
        self.ff_second = FeedForwardModule(dim, dropout)
        self.norm = nn.LayerNorm(dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + 0.5 * self.ff_first(x)
        x = x + self.attention(x)
        x = x + self.convolution(x)
        x = x + 0.5 * self.ff_second(x)
        return self.norm(x)


class FrontEnd(nn.Module):
    """Lift (B, n_bins, T) features to (B, T, dim) model inputs."""

    def __init__(self, n_bins: int, dim: int, dropout: float):
        super().__init__()
        self.conv = nn.Conv1d(n_bins, dim, kernel_size=3, padding=1)
        self.proj = nn.Linear(dim, dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = torch.nn.functional.silu(self.conv(x)).transpose(1, 2)
        return self.dropout(self.proj(y))


class PositionalEncoding(nn.Module):
    """Additive sinusoidal position encoding."""

    def __init__(self, dim: int, max_len: int = 512):
        super().__init__()
        self.dim = dim
        self.register_buffer("table", self._build(max_len), persistent=False)

    def _build(self, length: int) -> torch.Tensor:
        position = torch.arange(length, dtype=torch.float64).unsqueeze(1)
        div = torch.exp(
            torch.arange(0, self.dim, 2, dtype=torch.float64) * (-math.log(10000.0) / self.dim)
        )
        table = torch.zeros(length, self.dim, dtype=torch.float64)
        table[:, 0::2] = torch.sin(position * div)
        table[:, 1::2] = torch.cos(position * div[: self.dim // 2])
        return table

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        t = x.shape[1]
        if t > self.table.shape[0]:
            self.table = self._build(t).to(x.device)
        return x + self.table[:t].to(dtype=x.dtype, device=x.device)


class ChordHeads(nn.Module):
    """Structured heads plus the fusion network producing class log-probs."""

    def __init__(self, dim: int, fusion_dim: int, dropout: float, n_classes: int):
        super().__init__()
        self.root = nn.Linear(dim, N_ROOTS)
        self.bass = nn.Linear(dim, N_ROOTS)
        self.pitch = nn.Linear(dim, N_PITCHES)
        self.fuse_in = nn.Linear(2 * N_ROOTS + N_PITCHES, fusion_dim)
        self.fuse_out = nn.Linear(fusion_dim, n_classes)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> dict[str, torch.Tensor]:
        root_logits = self.root(x)
        bass_logits = self.bass(x)
        pitch_logits = self.pitch(x)
        evidence = torch.cat(
            [
                torch.softmax(root_logits, dim=-1),
                torch.softmax(bass_logits, dim=-1),
                torch.sigmoid(pitch_logits),
            ],
            dim=-1,
        )
        fused = self.dropout(torch.nn.functional.silu(self.fuse_in(evidence)))
        log_probs = torch.log_softmax(self.fuse_out(fused), dim=-1)
        return {
            "root_logits": root_logits,
            "bass_logits": bass_logits,
            "pitch_logits": pitch_logits,
            "chord_logprobs": log_probs,
        }


class ChordNet(nn.Module):
    """The full frame classifier: front end, conformer stack, heads."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.front = FrontEnd(config.n_bins, config.model_dim, config.dropout)
        self.positions = PositionalEncoding(config.model_dim)
        self.blocks = nn.ModuleList(
            ConformerBlock(config.model_dim, config.n_heads, config.conv_kernel, config.dropout)
            for _ in range(config.n_layers)
        )
        self.heads = ChordHeads(config.model_dim, config.fusion_dim, config.dropout, config.n_classes)

    def forward(self, features: torch.Tensor) -> dict[str, torch.Tensor]:
        """features: (B, n_bins, T) -> dict of (B, T, ...) head outputs."""
        if features.ndim != 3 or features.shape[1] != self.config.n_bins:
            raise UsageError(
                f"expected (B, {self.config.n_bins}, T) input, got {tuple(features.shape)}"
            )
        x = self.positions(self.front(features))
        for block in self.blocks:
            x = block(x)
        return self.heads(x)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)

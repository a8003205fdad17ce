"""Transformer building blocks shared by the backbone, perturbator and classifier.

Attention is written out with separate q/k/v/o projections so that low-rank
adapters can wrap each one individually.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from aster.errors import NonFiniteError

INIT_STD = 0.02


def positional_encoding(L: int, M: int, dtype: torch.dtype = torch.float64) -> torch.Tensor:
    """Sinusoidal table: even slot ``2k`` holds ``sin(t / 10000**(2k/M))``, odd slot the cosine.

    ``t`` is zero-based. Returns an (L, M) tensor.
    """
    if L < 1:
        raise ValueError(f"L must be >= 1, got {L}")
    if M < 2 or M % 2:
        raise ValueError(f"M must be an even integer >= 2, got {M}")
    t = torch.arange(L, dtype=torch.float64).unsqueeze(1)
    two_k = torch.arange(0, M, 2, dtype=torch.float64)
    angle = t / torch.pow(torch.tensor(10000.0, dtype=torch.float64), two_k / M)
    table = torch.empty(L, M, dtype=torch.float64)
    table[:, 0::2] = torch.sin(angle)
    table[:, 1::2] = torch.cos(angle)
    return table.to(dtype)


@dataclass(frozen=True)
class LoraSpec:
    rank: int
    alpha: float


class LoRALinear(nn.Linear):
    """Linear layer with a trainable low-rank update ``scale * B @ A`` on top of a frozen weight."""

    def __init__(self, in_features: int, out_features: int, rank: int, alpha: float, bias: bool = True) -> None:
        super().__init__(in_features, out_features, bias=bias)
        if rank < 1 or rank > min(in_features, out_features):
            raise ValueError(f"LoRA rank {rank} invalid for a {out_features}x{in_features} weight")
        self.rank = rank
        self.alpha = alpha
        self.scale = alpha / rank
        self.lora_A = nn.Parameter(torch.zeros(rank, in_features))
        self.lora_B = nn.Parameter(torch.zeros(out_features, rank))
        self.reset_lora()

    def reset_lora(self, generator: Optional[torch.Generator] = None) -> None:
        with torch.no_grad():
            self.lora_A.normal_(0.0, math.sqrt(1.0 / self.rank), generator=generator)
            self.lora_B.zero_()

    def effective_weight(self) -> torch.Tensor:
        return self.weight + self.scale * self.lora_B @ self.lora_A

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return super().forward(x) + self.scale * F.linear(F.linear(x, self.lora_A), self.lora_B)


def make_linear(in_features: int, out_features: int, lora: Optional[LoraSpec] = None) -> nn.Linear:
    if lora is None:
        return nn.Linear(in_features, out_features)
    return LoRALinear(in_features, out_features, lora.rank, lora.alpha)


class Attention(nn.Module):
    """Multi-head scaled dot-product attention, bidirectional (no mask).

    Self-attention when ``memory`` is None, cross-attention otherwise.
    """

    def __init__(self, dim: int, heads: int, kv_dim: Optional[int] = None, lora: Optional[LoraSpec] = None) -> None:
        super().__init__()
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by {heads} heads")
        kv_dim = dim if kv_dim is None else kv_dim
        self.heads = heads
        self.q = make_linear(dim, dim, lora)
        self.k = make_linear(kv_dim, dim, lora)
        self.v = make_linear(kv_dim, dim, lora)
        self.o = make_linear(dim, dim, lora)

    def forward(self, x: torch.Tensor, memory: Optional[torch.Tensor] = None) -> torch.Tensor:
        mem = x if memory is None else memory
        B, Lq, dim = x.shape
        Lk = mem.shape[1]
        dh = dim // self.heads
        q = self.q(x).view(B, Lq, self.heads, dh).transpose(1, 2)
        k = self.k(mem).view(B, Lk, self.heads, dh).transpose(1, 2)
        v = self.v(mem).view(B, Lk, self.heads, dh).transpose(1, 2)
        weights = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(dh), dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(B, Lq, dim)
        return self.o(out)


class FeedForward(nn.Module):
    def __init__(self, dim: int, mult: int = 4, lora: Optional[LoraSpec] = None) -> None:
        super().__init__()
        self.fc = make_linear(dim, mult * dim, lora)
        self.proj = make_linear(mult * dim, dim, lora)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.proj(F.gelu(self.fc(x)))


class EncoderLayer(nn.Module):
    def __init__(self, dim: int, heads: int, lora: Optional[LoraSpec] = None, lora_mlp: bool = False) -> None:
        super().__init__()
        self.ln1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads, lora=lora)
        self.ln2 = nn.LayerNorm(dim)
        self.mlp = FeedForward(dim, lora=lora if lora_mlp else None)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.mlp(self.ln2(x))


class EncoderStack(nn.Module):
    """Pre-norm self-attention stack, optionally closed by a final LayerNorm."""

    def __init__(
        self,
        dim: int,
        heads: int,
        depth: int,
        lora: Optional[LoraSpec] = None,
        lora_mlp: bool = False,
        final_norm: bool = True,
    ) -> None:
        super().__init__()
        self.layers = nn.ModuleList(EncoderLayer(dim, heads, lora, lora_mlp) for _ in range(depth))
        self.ln_f = nn.LayerNorm(dim) if final_norm else None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for layer in self.layers:
            x = layer(x)
        return x if self.ln_f is None else self.ln_f(x)


class DecoderLayer(nn.Module):
    def __init__(self, dim: int, heads: int, kv_dim: int) -> None:
        super().__init__()
        self.ln1 = nn.LayerNorm(dim)
        self.self_attn = Attention(dim, heads)
        self.ln2 = nn.LayerNorm(dim)
        self.cross_attn = Attention(dim, heads, kv_dim=kv_dim)
        self.ln3 = nn.LayerNorm(dim)
        self.mlp = FeedForward(dim)

    def forward(self, x: torch.Tensor, memory: torch.Tensor) -> torch.Tensor:
        x = x + self.self_attn(self.ln1(x))
        x = x + self.cross_attn(self.ln2(x), memory)
        return x + self.mlp(self.ln3(x))


class DecoderStack(nn.Module):
    def __init__(self, dim: int, heads: int, depth: int, kv_dim: int) -> None:
        super().__init__()
        self.layers = nn.ModuleList(DecoderLayer(dim, heads, kv_dim) for _ in range(depth))
        self.ln_f = nn.LayerNorm(dim)

    def forward(self, x: torch.Tensor, memory: torch.Tensor) -> torch.Tensor:
        for layer in self.layers:
            x = layer(x, memory)
        return self.ln_f(x)


def init_weights(module: nn.Module) -> None:
    """GPT-2 style init: N(0, 0.02) linear weights, zero biases. LoRA factors are left alone."""
    for m in module.modules():
        if isinstance(m, nn.Linear):
            nn.init.normal_(m.weight, 0.0, INIT_STD)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.LayerNorm):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


def assert_finite(x: torch.Tensor, where: str) -> torch.Tensor:
    if not torch.isfinite(x).all():
        raise NonFiniteError(f"non-finite activations in {where}")
    return x

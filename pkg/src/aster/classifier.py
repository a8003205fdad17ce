"""Window classifier: CLS-token transformer (default) or a flat MLP of matched size."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import torch
import torch.nn as nn

from aster.errors import ConfigError
from aster.layers import INIT_STD, EncoderStack, assert_finite, init_weights, positional_encoding

PROB_EPS = 1e-7
VARIANTS = ("transformer", "mlp")


@dataclass
class ClassifierConfig:
    variant: str = "transformer"
    depth: int = 2
    M: int = 64
    heads: int = 4
    window_length: int = 4  # only the mlp variant depends on it
    mlp_hidden: Optional[list[int]] = None  # None -> widths matched to the transformer size
    use_pe: bool = True

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown classifier variant {self.variant!r}")
        if self.depth < 1:
            raise ConfigError("classifier depth must be >= 1")
        if self.M % self.heads:
            raise ConfigError(f"M={self.M} not divisible by heads={self.heads}")


@dataclass
class AnomalyScore:
    raw: torch.Tensor
    probability: torch.Tensor = field(init=False)

    def __post_init__(self) -> None:
        self.probability = torch.sigmoid(self.raw)


def _count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


class TransformerClassifier(nn.Module):
    """Prepends a learned CLS token, encodes L+1 tokens, projects the CLS output to a scalar."""

    def __init__(self, config: ClassifierConfig) -> None:
        super().__init__()
        self.config = config
        self.cls = nn.Parameter(torch.zeros(config.M))
        self.encoder = EncoderStack(config.M, config.heads, config.depth)
        self.head = nn.Linear(config.M, 1)
        init_weights(self)
        nn.init.normal_(self.cls, 0.0, INIT_STD)

    def forward(self, c: torch.Tensor) -> torch.Tensor:
        squeeze = c.dim() == 2
        x = c.unsqueeze(0) if squeeze else c
        B, L, M = x.shape
        x = torch.cat([self.cls.expand(B, 1, M), x], dim=1)
        if self.config.use_pe:
            x = x + positional_encoding(L + 1, M, x.dtype)
        h = self.encoder(x)
        raw = assert_finite(self.head(h[:, 0]).squeeze(-1), "classifier")
        return raw.squeeze(0) if squeeze else raw


def transformer_parameter_count(config: ClassifierConfig) -> int:
    with torch.random.fork_rng():
        return _count(TransformerClassifier(config))


def matched_mlp_hidden(config: ClassifierConfig) -> list[int]:
    """``depth`` equal hidden widths giving a parameter count closest to the transformer variant."""
    target = transformer_parameter_count(config)
    n_in = config.window_length * config.M

    def count(h: int) -> int:
        return (n_in + 1) * h + (config.depth - 1) * (h * h + h) + h + 1

    h = 1
    while count(h + 1) <= target:
        h += 1
    if abs(count(h + 1) - target) < abs(count(h) - target):
        h += 1
    return [h] * config.depth


class MLPClassifier(nn.Module):
    """Flattens the (L, M) window and applies a GELU MLP ending in a scalar."""

    def __init__(self, config: ClassifierConfig) -> None:
        super().__init__()
        self.config = config
        hidden = config.mlp_hidden or matched_mlp_hidden(config)
        widths = [config.window_length * config.M, *hidden]
        layers: list[nn.Module] = []
        for a, b in zip(widths[:-1], widths[1:]):
            layers += [nn.Linear(a, b), nn.GELU()]
        layers.append(nn.Linear(widths[-1], 1))
        self.net = nn.Sequential(*layers)
        init_weights(self)

    def forward(self, c: torch.Tensor) -> torch.Tensor:
        squeeze = c.dim() == 2
        x = c.unsqueeze(0) if squeeze else c
        if x.shape[-2] * x.shape[-1] != self.net[0].in_features:
            raise ValueError(f"mlp classifier built for L*M={self.net[0].in_features}, got {tuple(x.shape[-2:])}")
        raw = assert_finite(self.net(x.flatten(-2)).squeeze(-1), "classifier")
        return raw.squeeze(0) if squeeze else raw


def build_classifier(config: ClassifierConfig) -> nn.Module:
    config.validate()
    if config.variant == "transformer":
        return TransformerClassifier(config)
    return MLPClassifier(config)


def classify(c: torch.Tensor, model: nn.Module) -> AnomalyScore:
    return AnomalyScore(model(c))


def bce_loss(probability: torch.Tensor | AnomalyScore, label: torch.Tensor | float) -> torch.Tensor:
    """Elementwise ``-[y log p + (1 - y) log(1 - p)]`` with p clamped to [1e-7, 1 - 1e-7]."""
    if isinstance(probability, AnomalyScore):
        probability = probability.probability
    p = probability.clamp(PROB_EPS, 1.0 - PROB_EPS)
    y = torch.as_tensor(label, dtype=p.dtype)
    return -(y * torch.log(p) + (1.0 - y) * torch.log1p(-p))

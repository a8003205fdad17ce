"""Contextual embedding: per-time-step linear translation followed by a self-attention backbone."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn

from aster.errors import ConfigError, IncompatibleCheckpointError
from aster.layers import EncoderStack, LoRALinear, LoraSpec, assert_finite, init_weights

BACKBONE_MODES = ("linear_only", "frozen", "full_finetune", "lora")
_MODE_ALIASES = {"full": "full_finetune", "linear": "linear_only"}


def normalize_mode(mode: str) -> str:
    mode = _MODE_ALIASES.get(mode, mode)
    if mode not in BACKBONE_MODES:
        raise ConfigError(f"unknown backbone mode {mode!r}; expected one of {BACKBONE_MODES}")
    return mode


@dataclass
class EmbeddingConfig:
    D: int = 1
    M: int = 64
    backbone_mode: str = "lora"
    backbone_depth: int = 2
    backbone_heads: int = 4
    lora_rank: int = 4
    lora_alpha: float = 4.0
    lora_mlp: bool = False
    final_norm: bool = True
    translation_std: float = 0.02
    pretrained_path: Optional[str] = None

    def __post_init__(self) -> None:
        self.backbone_mode = normalize_mode(self.backbone_mode)

    def validate(self) -> None:
        if self.D < 1 or self.M < 2 or self.M % 2:
            raise ConfigError(f"need D >= 1 and even M >= 2, got D={self.D}, M={self.M}")
        if self.translation_std <= 0:
            raise ConfigError("translation_std must be positive")
        if self.backbone_depth < 1 or self.backbone_heads < 1:
            raise ConfigError("backbone depth and heads must be positive")
        if self.M % self.backbone_heads:
            raise ConfigError(f"M={self.M} not divisible by backbone_heads={self.backbone_heads}")
        if self.backbone_mode == "lora":
            if self.lora_rank < 1 or self.lora_rank > self.M:
                raise ConfigError(f"lora_rank must be in [1, {self.M}], got {self.lora_rank}")
            if self.lora_alpha <= 0:
                raise ConfigError("lora_alpha must be positive")


class ContextualEmbedding(nn.Module):
    """Maps an (L, D) window to contextualised (L, M) tokens.

    ``translation`` embeds each time step independently; ``backbone`` (absent in
    linear_only mode) mixes information across the window.
    """

    def __init__(self, config: EmbeddingConfig) -> None:
        super().__init__()
        config.validate()
        self.config = config
        lora = LoraSpec(config.lora_rank, config.lora_alpha) if config.backbone_mode == "lora" else None
        # construction-time draws are discarded; all initialisation below happens in a
        # fixed order (base weights, then adapters) so frozen and lora models built
        # from the same seed share identical base weights
        with torch.random.fork_rng():
            self.translation = nn.Linear(config.D, config.M)
            if config.backbone_mode == "linear_only":
                self.backbone = None
            else:
                self.backbone = EncoderStack(
                    config.M, config.backbone_heads, config.backbone_depth, lora=lora, lora_mlp=config.lora_mlp,
                    final_norm=config.final_norm,
                )
        init_weights(self)
        nn.init.normal_(self.translation.weight, 0.0, config.translation_std)
        for m in self.modules():
            if isinstance(m, LoRALinear):
                m.reset_lora()
        if config.pretrained_path:
            self.load_backbone(config.pretrained_path)
        self._set_trainable()

    def _set_trainable(self) -> None:
        trainable = set(self.trainable_parameters())
        for name, p in self.named_parameters():
            p.requires_grad_(name in trainable)

    def trainable_parameters(self) -> dict[str, nn.Parameter]:
        mode = self.config.backbone_mode
        out = {f"translation.{n}": p for n, p in self.translation.named_parameters()}
        if self.backbone is None or mode == "frozen":
            return out
        for n, p in self.backbone.named_parameters():
            is_adapter = n.endswith("lora_A") or n.endswith("lora_B")
            if mode == "full_finetune" or (mode == "lora" and is_adapter):
                out[f"backbone.{n}"] = p
        return out

    def backbone_base_state(self) -> dict[str, torch.Tensor]:
        if self.backbone is None:
            return {}
        return {
            n: t for n, t in self.backbone.state_dict().items() if not (n.endswith("lora_A") or n.endswith("lora_B"))
        }

    def load_backbone(self, path: str) -> None:
        """Load externally pre-trained backbone weights from a tensor container.

        Names may be bare backbone names (``layers.0.attn.q.weight``) or carry a
        ``backbone.`` / ``phi/backbone.`` prefix. Adapter factors are not touched.
        """
        from aster.checkpoint import load_tensors

        if self.backbone is None:
            return
        tensors, _ = load_tensors(path)
        base = self.backbone_base_state()
        loaded = {}
        for name, t in tensors.items():
            for prefix in ("phi/backbone.", "backbone."):
                if name.startswith(prefix):
                    name = name[len(prefix):]
            if name in base:
                if tuple(t.shape) != tuple(base[name].shape):
                    raise IncompatibleCheckpointError(
                        f"backbone tensor {name} has shape {tuple(t.shape)}, expected {tuple(base[name].shape)}"
                    )
                loaded[name] = t.to(base[name].dtype)
        missing = sorted(set(base) - set(loaded))
        if missing:
            raise IncompatibleCheckpointError(f"pretrained backbone is missing {len(missing)} tensors, e.g. {missing[0]}")
        self.backbone.load_state_dict(loaded, strict=False)

    def translate(self, window: torch.Tensor) -> torch.Tensor:
        if window.shape[-1] != self.config.D:
            raise ValueError(f"window has {window.shape[-1]} features, expected {self.config.D}")
        return self.translation(window)

    def contextualize(self, tokens: torch.Tensor) -> torch.Tensor:
        if self.backbone is None:
            return tokens
        squeeze = tokens.dim() == 2
        x = tokens.unsqueeze(0) if squeeze else tokens
        out = assert_finite(self.backbone(x), "backbone")
        return out.squeeze(0) if squeeze else out

    def forward(self, window: torch.Tensor) -> torch.Tensor:
        return self.contextualize(self.translate(window))


def translate(window: torch.Tensor, model: ContextualEmbedding) -> torch.Tensor:
    return model.translate(window)


def contextualize(tokens: torch.Tensor, model: ContextualEmbedding) -> torch.Tensor:
    return model.contextualize(tokens)


def trainable_parameters(config: EmbeddingConfig) -> dict[str, tuple[int, ...]]:
    """Names and shapes of the parameters a fresh model of this config would train."""
    with torch.random.fork_rng():
        model = ContextualEmbedding(config)
    return {name: tuple(p.shape) for name, p in model.trainable_parameters().items()}

"""The full set of networks and their checkpoint round trip."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import torch
import torch.nn as nn

from aster.checkpoint import load_tensors, save_tensors
from aster.classifier import ClassifierConfig, build_classifier
from aster.data import ScalerStats
from aster.embedding import ContextualEmbedding, EmbeddingConfig
from aster.errors import IncompatibleCheckpointError
from aster.perturbator import Perturbator, PerturbatorConfig

DTYPES = {"float32": torch.float32, "float64": torch.float64}
NAMESPACES = ("phi", "q_phi", "g_theta", "p_psi", "psi")


@dataclass
class ModelConfig:
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    perturbator: PerturbatorConfig = field(default_factory=PerturbatorConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    dtype: str = "float32"

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        return cls(
            embedding=EmbeddingConfig(**d["embedding"]),
            perturbator=PerturbatorConfig(**d["perturbator"]),
            classifier=ClassifierConfig(**d["classifier"]),
            dtype=d.get("dtype", "float32"),
        )


class AsterModel(nn.Module):
    def __init__(self, config: ModelConfig) -> None:
        super().__init__()
        M = config.embedding.M
        if config.perturbator.M != M or config.classifier.M != M:
            raise ValueError("embedding, perturbator and classifier must share the token width M")
        self.config = config
        self.phi = ContextualEmbedding(config.embedding)
        self.perturbator = Perturbator(config.perturbator)
        self.psi = build_classifier(config.classifier)
        self.to(DTYPES[config.dtype])

    def groups(self) -> dict[str, nn.Module]:
        return {
            "phi": self.phi,
            "q_phi": self.perturbator.q_phi,
            "g_theta": self.perturbator.g_theta,
            "p_psi": self.perturbator.p_psi,
            "psi": self.psi,
        }

    def trainable_parameters(self) -> list[nn.Parameter]:
        params = list(self.phi.trainable_parameters().values())
        params += list(self.perturbator.parameters())
        params += list(self.psi.parameters())
        return params

    def score(self, windows: torch.Tensor) -> torch.Tensor:
        """Raw classifier output for each window: the inference path Psi(Phi(W))."""
        return self.psi(self.phi(windows))

    def namespaced_state(self) -> dict[str, torch.Tensor]:
        out = {}
        for ns, module in self.groups().items():
            for name, t in module.state_dict().items():
                out[f"{ns}/{name}"] = t
        return out


def build_model(config: ModelConfig, seed: int) -> AsterModel:
    """Construct with a private RNG stream so the global torch seed is left untouched."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return AsterModel(config)


def save_checkpoint(
    path: str | Path,
    model: AsterModel,
    scaler: Optional[ScalerStats] = None,
    metadata: Optional[dict[str, Any]] = None,
) -> Path:
    tensors: dict[str, Any] = dict(model.namespaced_state())
    if scaler is not None:
        tensors["scaler/mean"] = scaler.mean
        tensors["scaler/std"] = scaler.std
    meta = {"model": model.config.to_dict(), **(metadata or {})}
    return save_tensors(path, tensors, meta)


def load_checkpoint(path: str | Path) -> tuple[AsterModel, Optional[ScalerStats], dict[str, Any]]:
    tensors, meta = load_tensors(path)
    if "model" not in meta:
        raise IncompatibleCheckpointError(f"{path}: checkpoint has no model config")
    try:
        config = ModelConfig.from_dict(meta["model"])
        config.embedding.pretrained_path = None  # weights come from the checkpoint itself
        model = build_model(config, seed=0)
    except (TypeError, KeyError, ValueError) as exc:
        raise IncompatibleCheckpointError(f"{path}: invalid model config ({exc})") from exc
    for ns, module in model.groups().items():
        prefix = f"{ns}/"
        state = {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}
        expected = module.state_dict()
        if set(state) != set(expected):
            diff = sorted(set(state) ^ set(expected))
            raise IncompatibleCheckpointError(f"{path}: tensor names for {ns} do not match the config, e.g. {diff[0]}")
        for k, v in state.items():
            if tuple(v.shape) != tuple(expected[k].shape):
                raise IncompatibleCheckpointError(f"{path}: {ns}/{k} has shape {tuple(v.shape)}")
        module.load_state_dict(state)
    scaler = None
    if "scaler/mean" in tensors:
        scaler = ScalerStats(tensors["scaler/mean"].numpy().astype(np.float64), tensors["scaler/std"].numpy().astype(np.float64))
    return model, scaler, meta

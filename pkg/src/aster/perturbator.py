"""VAE perturbator: latent encoder, reconstruction decoder and pseudo-anomaly decoder.

Both decoders take only positional encodings as their token inputs and see the
sampled latent exclusively through cross-attention keys/values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn

from aster.errors import ConfigError
from aster.gates import stop_gradient
from aster.layers import DecoderStack, EncoderStack, assert_finite, init_weights, positional_encoding


@dataclass
class PerturbatorConfig:
    M: int = 64
    latent_dim: Optional[int] = None  # defaults to M
    depth: int = 2
    heads: int = 4
    num_samples: int = 1

    @property
    def M_z(self) -> int:
        return self.M if self.latent_dim is None else self.latent_dim

    def validate(self) -> None:
        if self.M % self.heads:
            raise ConfigError(f"M={self.M} not divisible by heads={self.heads}")
        if self.depth < 1 or self.M_z < 1 or self.num_samples < 1:
            raise ConfigError("depth, latent_dim and num_samples must be positive")


@dataclass
class LatentPosterior:
    mu: torch.Tensor
    sigma: torch.Tensor

    def __post_init__(self) -> None:
        if self.mu.shape != self.sigma.shape:
            raise ValueError("mu and sigma shapes differ")


@dataclass
class LatentSample:
    z: torch.Tensor
    epsilon: torch.Tensor


@dataclass
class PerturbatorOutput:
    reconstruction: torch.Tensor
    pseudo_anomaly: torch.Tensor
    posterior: LatentPosterior
    sample: LatentSample


def _batched(x: torch.Tensor) -> tuple[torch.Tensor, bool]:
    return (x.unsqueeze(0), True) if x.dim() == 2 else (x, False)


class LatentEncoder(nn.Module):
    """q_phi: transformer encoder over ``C + PE`` with per-time-step mean and log-variance heads."""

    def __init__(self, config: PerturbatorConfig) -> None:
        super().__init__()
        self.stack = EncoderStack(config.M, config.heads, config.depth)
        self.mu_head = nn.Linear(config.M, config.M_z)
        self.logvar_head = nn.Linear(config.M, config.M_z)

    def forward(self, c: torch.Tensor) -> LatentPosterior:
        x, squeeze = _batched(c)
        L, M = x.shape[-2:]
        h = self.stack(x + positional_encoding(L, M, x.dtype))
        mu = assert_finite(self.mu_head(h), "latent encoder")
        sigma = assert_finite(torch.exp(0.5 * self.logvar_head(h)), "latent encoder")
        if squeeze:
            mu, sigma = mu.squeeze(0), sigma.squeeze(0)
        return LatentPosterior(mu, sigma)


class LatentDecoder(nn.Module):
    """Decoder whose self-attention stream starts from positional encodings only."""

    def __init__(self, config: PerturbatorConfig) -> None:
        super().__init__()
        self.stack = DecoderStack(config.M, config.heads, config.depth, kv_dim=config.M_z)
        self.out = nn.Linear(config.M, config.M)
        self.M = config.M

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        x, squeeze = _batched(z)
        lead, L = x.shape[:-2], x.shape[-2]
        mem = x.reshape(-1, L, x.shape[-1])
        queries = positional_encoding(L, self.M, x.dtype).expand(mem.shape[0], L, self.M)
        out = self.out(self.stack(queries, mem)).reshape(*lead, L, self.M)
        assert_finite(out, "latent decoder")
        return out.squeeze(0) if squeeze else out


def sample_latent(
    posterior: LatentPosterior,
    rng: Optional[torch.Generator] = None,
    num_samples: Optional[int] = None,
    epsilon: Optional[torch.Tensor] = None,
) -> LatentSample:
    """Reparameterised draw ``z = mu + sigma * eps`` with ``eps ~ N(0, I)``.

    With ``num_samples`` set, a leading sample axis of that size is added.
    """
    shape = posterior.mu.shape if num_samples is None else (num_samples, *posterior.mu.shape)
    if epsilon is None:
        epsilon = torch.randn(shape, generator=rng, dtype=posterior.mu.dtype, device=posterior.mu.device)
    z = posterior.mu + posterior.sigma * epsilon
    return LatentSample(z=z, epsilon=epsilon)


class Perturbator(nn.Module):
    """Holds q_phi, g_theta and p_psi; parameters are disjoint across the three."""

    def __init__(self, config: PerturbatorConfig) -> None:
        super().__init__()
        config.validate()
        self.config = config
        self.q_phi = LatentEncoder(config)
        self.g_theta = LatentDecoder(config)
        self.p_psi = LatentDecoder(config)
        init_weights(self)

    def encode(self, c: torch.Tensor) -> LatentPosterior:
        return self.q_phi(c)

    def decode_reconstruction(self, sample: LatentSample | torch.Tensor) -> torch.Tensor:
        z = sample.z if isinstance(sample, LatentSample) else sample
        return self.g_theta(z)

    def decode_pseudo_anomaly(self, sample: LatentSample | torch.Tensor) -> torch.Tensor:
        z = sample.z if isinstance(sample, LatentSample) else sample
        return self.p_psi(z)

    def forward(self, c: torch.Tensor, rng: Optional[torch.Generator] = None) -> PerturbatorOutput:
        posterior = self.encode(c)
        n = self.config.num_samples
        sample = sample_latent(posterior, rng, num_samples=None if n == 1 else n)
        reconstruction = self.decode_reconstruction(sample)
        pseudo = self.decode_pseudo_anomaly(stop_gradient(sample.z))
        return PerturbatorOutput(reconstruction, pseudo, posterior, sample)


def elbo_terms(c: torch.Tensor, reconstruction: torch.Tensor, posterior: LatentPosterior) -> tuple[torch.Tensor, torch.Tensor]:
    """Reconstruction and KL terms, each averaged over any leading batch/sample axes.

    Reconstruction is the squared Frobenius norm of ``C - C_hat`` per window; KL is
    ``sum_{l,k} (mu^2 + sigma^2 - log sigma^2 - 1) / (2L)``.
    """
    mu, sigma = posterior.mu, posterior.sigma
    if torch.any(sigma <= 0):
        raise ValueError("sigma must be strictly positive")
    L = c.shape[-2]
    recon = (c - reconstruction).pow(2).sum(dim=(-2, -1)).mean()
    var = sigma.pow(2)
    kl = ((mu.pow(2) + var - torch.log(var) - 1.0).sum(dim=(-2, -1)) / (2 * L)).mean()
    return recon, kl


def elbo_loss(c: torch.Tensor, out: PerturbatorOutput) -> torch.Tensor:
    recon, kl = elbo_terms(c, out.reconstruction, out.posterior)
    return recon + kl

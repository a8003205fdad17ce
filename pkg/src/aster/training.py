"""Joint training of embedding, perturbator and classifier.

Per window the forward pass is::

    C  = phi(W)                     C' = stop(C)
    posterior = q_phi(C' + PE)      Z  = mu + sigma * eps
    C_hat   = g_theta(Z; PE)        Z' = stop(Z)
    C_tilde = p_psi(Z'; PE)         C_tilde' = reverse(C_tilde)
    s = sigmoid(psi(C))             s_tilde = sigmoid(psi(C_tilde'))
    L_CE   = -[log(1 - s) + log(s_tilde)]
    L_ELBO = ||C' - C_hat||^2 + KL

so phi learns only from the normal-branch CE term, q_phi/g_theta only from the
ELBO, p_psi only from the (sign-reversed) pseudo-branch CE term and psi from
both CE terms.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np
import torch

from aster.analysis import cosine_distance
from aster.classifier import bce_loss
from aster.data import ScalerStats, TimeSeriesDataset, windowize
from aster.errors import ConfigError, NonFiniteError
from aster.gates import gradient_gate
from aster.model import DTYPES, AsterModel, ModelConfig, build_model, save_checkpoint
from aster.perturbator import LatentPosterior, LatentSample, elbo_terms, sample_latent

logger = logging.getLogger(__name__)

EPOCH_LOG = "epoch_log.csv"
CHECKPOINT_DIR = "checkpoint"


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 64
    epochs: int = 100
    window_length: int = 4
    w_ce: float = 1.0
    w_elbo: float = 1.0
    w_pseudo: float = 1.0  # weight of the pseudo-anomaly term inside L_CE
    seed: int = 0

    def validate(self) -> None:
        if self.learning_rate < 0 or self.batch_size < 1 or self.epochs < 0 or self.window_length < 1:
            raise ConfigError(f"invalid training configuration: {self}")
        if min(self.w_ce, self.w_elbo, self.w_pseudo) < 0:
            raise ConfigError("loss weights must be non-negative")


@dataclass
class TrainStepReport:
    l_ce: float
    l_elbo: float
    cosine_distance: float
    mu_mean: float
    sigma_mean: float


@dataclass
class ForwardResult:
    C: torch.Tensor
    posterior: LatentPosterior
    sample: LatentSample
    C_hat: torch.Tensor
    C_tilde: torch.Tensor
    s_real: torch.Tensor  # raw scores of the real windows
    s_pseudo: torch.Tensor  # raw scores of the pseudo-anomalies
    ce_real: torch.Tensor
    ce_pseudo: torch.Tensor
    l_ce: torch.Tensor
    recon: torch.Tensor
    kl: torch.Tensor
    l_elbo: torch.Tensor
    total: torch.Tensor


def forward_losses(
    model: AsterModel,
    windows: torch.Tensor,
    config: TrainConfig,
    rng: Optional[torch.Generator] = None,
    *,
    gates: bool = True,
    reverse: bool = True,
) -> ForwardResult:
    """One forward pass over a (B, L, D) batch of normal windows.

    ``gates=False`` removes all gradient gates and ``reverse=False`` only the
    reversal on the pseudo-anomalies; both exist for gradient-routing checks.
    """
    stop = (lambda x: gradient_gate(x, "stop")) if gates else (lambda x: x)
    flip = (lambda x: gradient_gate(x, "reverse")) if gates and reverse else (lambda x: x)

    C = model.phi(windows)
    C_stop = stop(C)
    posterior = model.perturbator.q_phi(C_stop)
    n = model.perturbator.config.num_samples
    sample = sample_latent(posterior, rng, num_samples=None if n == 1 else n)
    C_hat = model.perturbator.g_theta(sample.z)
    C_tilde = model.perturbator.p_psi(stop(sample.z))

    B, L, M = C.shape
    pseudo_in = flip(C_tilde).reshape(-1, L, M)
    scores = model.psi(torch.cat([C, pseudo_in], dim=0))
    s_real, s_pseudo = scores[:B], scores[B:]
    ce_real = bce_loss(torch.sigmoid(s_real), 0.0).mean()
    ce_pseudo = bce_loss(torch.sigmoid(s_pseudo), 1.0).mean()
    l_ce = ce_real + config.w_pseudo * ce_pseudo

    recon, kl = elbo_terms(C_stop, C_hat, posterior)
    l_elbo = recon + kl
    total = config.w_ce * l_ce + config.w_elbo * l_elbo
    return ForwardResult(
        C, posterior, sample, C_hat, C_tilde, s_real, s_pseudo, ce_real, ce_pseudo, l_ce, recon, kl, l_elbo, total
    )


def make_optimizer(model: AsterModel, config: TrainConfig) -> torch.optim.Optimizer:
    # plain SGD: no momentum, no weight decay, no schedule
    return torch.optim.SGD(model.trainable_parameters(), lr=config.learning_rate, momentum=0.0)


def _report(result: ForwardResult) -> TrainStepReport:
    with torch.no_grad():
        C_tilde = result.C_tilde
        if C_tilde.dim() == 4:
            C_tilde = C_tilde[0]
        cos = cosine_distance(result.C, C_tilde).mean()
        return TrainStepReport(
            l_ce=float(result.l_ce),
            l_elbo=float(result.l_elbo),
            cosine_distance=float(cos),
            mu_mean=float(result.posterior.mu.mean()),
            sigma_mean=float(result.posterior.sigma.mean()),
        )


def train_step(
    model: AsterModel,
    optimizer: torch.optim.Optimizer,
    windows: torch.Tensor,
    config: TrainConfig,
    rng: Optional[torch.Generator] = None,
) -> TrainStepReport:
    optimizer.zero_grad(set_to_none=True)
    result = forward_losses(model, windows, config, rng)
    if not torch.isfinite(result.total):
        raise NonFiniteError(
            f"non-finite loss (L_CE={float(result.l_ce)}, L_ELBO={float(result.l_elbo)}); step aborted"
        )
    result.total.backward()
    optimizer.step()
    return _report(result)


def _mean_reports(reports: list[TrainStepReport]) -> TrainStepReport:
    return TrainStepReport(**{f.name: float(np.mean([getattr(r, f.name) for r in reports])) for f in fields(TrainStepReport)})


def fit(
    train: TimeSeriesDataset,
    model_config: ModelConfig,
    config: TrainConfig,
    out_dir: str | Path,
    *,
    scaler: Optional[ScalerStats] = None,
    metadata: Optional[dict[str, Any]] = None,
    on_epoch: Optional[Callable[[int, TrainStepReport], None]] = None,
) -> Path:
    """Train on already-scaled normal data and write the final-epoch checkpoint.

    Writes ``epoch_log.csv`` and ``checkpoint/`` into ``out_dir`` and returns the
    checkpoint path. Identical seeds give bit-identical checkpoints.
    """
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if model_config.embedding.D != train.D:
        raise ConfigError(f"model expects D={model_config.embedding.D}, data has D={train.D}")
    if model_config.classifier.window_length != config.window_length:
        raise ConfigError("classifier window_length must equal the training window length")

    model = build_model(model_config, config.seed)
    optimizer = make_optimizer(model, config)
    dtype = DTYPES[model_config.dtype]
    windows = torch.from_numpy(windowize(train, config.window_length).windows).to(dtype)
    order_rng = np.random.default_rng(config.seed)
    noise_rng = torch.Generator().manual_seed(config.seed + 1)

    log_path = out_dir / EPOCH_LOG
    columns = ["epoch", *[f.name for f in fields(TrainStepReport)]]
    with log_path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for epoch in range(1, config.epochs + 1):
            order = torch.from_numpy(order_rng.permutation(len(windows)))
            reports = []
            for b, start in enumerate(range(0, len(windows), config.batch_size)):
                batch = windows[order[start:start + config.batch_size]]
                try:
                    reports.append(train_step(model, optimizer, batch, config, noise_rng))
                except NonFiniteError as exc:
                    raise NonFiniteError(f"training diverged at epoch {epoch}, batch {b + 1}: {exc}") from exc
            summary = _mean_reports(reports)
            writer.writerow([epoch, *(repr(v) for v in asdict(summary).values())])
            fh.flush()
            logger.info(
                "epoch %d: L_CE=%.4f L_ELBO=%.4f cos=%.4f mu=%.4f sigma=%.4f",
                epoch, summary.l_ce, summary.l_elbo, summary.cosine_distance, summary.mu_mean, summary.sigma_mean,
            )
            if on_epoch is not None:
                on_epoch(epoch, summary)

    meta = {"train": asdict(config), **(metadata or {})}
    return save_checkpoint(out_dir / CHECKPOINT_DIR, model, scaler=scaler, metadata=meta)


def read_epoch_log(path: str | Path) -> list[dict[str, float]]:
    with Path(path).open(newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]

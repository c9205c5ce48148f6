"""Training objective: reconstruction, KL regularizers, contrastive MI terms, and I(s; d)."""

import math
from dataclasses import asdict, dataclass
from typing import Dict, Optional

import torch

from .distributions import DiagonalGaussian, GaussianSequence, cosine_similarity, kl_diag_gaussian, kl_sequence


class TrainingDivergenceError(FloatingPointError):
    """A loss term became NaN or infinite."""

    def __init__(self, term: str, value: float):
        super().__init__(f"non-finite loss term {term!r}: {value}")
        self.term = term
        self.value = value


@dataclass
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    lambda4: float = 1.0
    lambda5: float = 1.0
    tau: float = 0.5

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and nonnegative, got {value}")
        if self.tau <= 0:
            raise ValueError("tau must be positive")


# (lambda1..lambda5) from the per-dataset hyperparameter table
REFERENCE_WEIGHTS: Dict[str, LossWeights] = {
    "sprites": LossWeights(10, 5, 1, 5, 1),
    "mug": LossWeights(5, 9, 1, 0.5, 2.5),
    "letters": LossWeights(2.5, 1, 1, 5, 5),
    "jesters": LossWeights(5, 1, 1, 1, 1),
    "timit": LossWeights(5, 1, 1, 0.5, 1),
    "physionet": LossWeights(2.5, 7, 1, 0.1, 2.5),
    "air_quality": LossWeights(2.5, 5, 1, 0.1, 2.5),
}

TERMS = ("recon", "kl_static", "kl_dynamic", "nce_static", "nce_dynamic", "mi_static_dynamic")


@dataclass
class LossBreakdown:
    recon: torch.Tensor
    kl_static: torch.Tensor
    kl_dynamic: torch.Tensor
    nce_static: torch.Tensor
    nce_dynamic: torch.Tensor
    mi_static_dynamic: torch.Tensor
    total: torch.Tensor
    weights: LossWeights

    def recompute_total(self) -> torch.Tensor:
        parts = [getattr(self, t).detach() for t in TERMS]
        return _combine(self.weights, *parts)

    def as_dict(self) -> Dict[str, float]:
        out = {t: float(getattr(self, t).detach()) for t in TERMS}
        out["total"] = float(self.total.detach())
        return out


def _combine(w: LossWeights, recon, kl_s, kl_d, nce_s, nce_d, mi):
    return (w.lambda1 * recon + w.lambda2 * kl_s + w.lambda3 * kl_d
            - w.lambda4 * (nce_s + nce_d) + w.lambda5 * mi)


def _as_tensor(v):
    return v if torch.is_tensor(v) else torch.tensor(float(v), dtype=torch.float64)


def total_objective(weights: LossWeights, recon, kl_static, kl_dynamic, nce_static, nce_dynamic,
                    mi_static_dynamic) -> LossBreakdown:
    """Minimization target: the negated, weighted evidence bound with MI terms.

    The infoNCE terms are log-probabilities (<= 0) and enter with ``-lambda4``.
    """
    parts = [_as_tensor(p) for p in (recon, kl_static, kl_dynamic, nce_static, nce_dynamic, mi_static_dynamic)]
    for name, value in zip(TERMS, parts):
        if not torch.isfinite(value).all():
            raise TrainingDivergenceError(name, float(value))
    total = _combine(weights, *parts)
    return LossBreakdown(*parts, total=total, weights=weights)


def elbo_terms(x: torch.Tensor, reconstruction: torch.Tensor, static: DiagonalGaussian, dynamic: GaussianSequence,
               prior_dynamic: GaussianSequence, mse_batch_sum: bool = False):
    """``(recon, kl_static, kl_dynamic)`` for one batch.

    ``recon`` is the squared error summed over frames and pixels, averaged over
    the batch (summed when ``mse_batch_sum``).  The KL terms are batch means;
    ``prior_dynamic`` must be the prior chain conditioned on the posterior path.
    """
    x = torch.as_tensor(x, dtype=reconstruction.dtype)
    if x.shape != reconstruction.shape:
        raise ValueError(f"input shape {tuple(x.shape)} != reconstruction shape {tuple(reconstruction.shape)}")
    if dynamic.mean.shape != prior_dynamic.mean.shape:
        raise ValueError("posterior and prior dynamic chains differ in shape")
    sq = ((reconstruction - x) ** 2).reshape(x.shape[0], -1).sum(-1)
    recon = sq.sum() if mse_batch_sum else sq.mean()
    standard = DiagonalGaussian(torch.zeros_like(static.mean), torch.zeros_like(static.log_var))
    kl_s = kl_diag_gaussian(static, standard).mean()
    kl_d = kl_sequence(dynamic, prior_dynamic).mean()
    return recon, kl_s, kl_d


def info_nce(u: torch.Tensor, v_plus: torch.Tensor, v_negs: torch.Tensor, tau: float = 0.5) -> torch.Tensor:
    """``log phi(u, v+) / (phi(u, v+) + sum_j phi(u, v_j))`` with ``phi = exp(cos / tau)``.

    Shapes ``(..., k)``, ``(..., k)``, ``(..., M, k)``; returns shape ``(...)``.
    """
    v_negs = torch.as_tensor(v_negs)
    if v_negs.dim() < 2 or v_negs.shape[-2] == 0:
        raise ValueError("info_nce needs at least one negative")
    if tau <= 0:
        raise ValueError("tau must be positive")
    u = torch.as_tensor(u)
    pos = cosine_similarity(u, v_plus) / tau
    neg = cosine_similarity(u.unsqueeze(-2), v_negs) / tau
    return pos - torch.logsumexp(torch.cat([pos.unsqueeze(-1), neg], dim=-1), dim=-1)


def _pairwise_log_density(samples: torch.Tensor, dist: DiagonalGaussian) -> torch.Tensor:
    """``out[i, j] = log q(samples[i] | x_j)`` with the latent axis summed."""
    g = DiagonalGaussian(dist.mean.unsqueeze(0), dist.log_var.unsqueeze(0))
    return g.log_prob(samples.unsqueeze(1)).sum(-1)


def _log_weights(n: int, dataset_size: int, weighting: str, dtype) -> torch.Tensor:
    if weighting == "mws":
        return torch.full((n, n), -math.log(n * dataset_size), dtype=dtype)
    if weighting == "mss":
        # own sample 1/N, one stratum representative (N-M)/(NM), the rest 1/M
        m = n - 1
        idx = torch.arange(n)
        w = torch.full((n, n), 1.0 / m, dtype=dtype)
        w[idx, (idx + 1) % n] = (dataset_size - m) / (dataset_size * m)
        w[idx, idx] = 1.0 / dataset_size
        return w.log()
    raise ValueError(f"unknown weighting {weighting!r}")


def mi_mws_static_dynamic(static: DiagonalGaussian, dynamic: GaussianSequence, static_samples: torch.Tensor,
                          dynamic_samples: torch.Tensor, dataset_size: Optional[int] = None,
                          weighting: str = "mws") -> torch.Tensor:
    """Minibatch estimate of ``I_q(s; d_{1:T})``.

    Each aggregate density ``q(z_i)`` is approximated by a weighted
    log-sum-exp of ``q(z_i | x_j)`` over the batch.  ``weighting="mws"`` uses
    the flat ``1 / (n N)`` weights; ``"mss"`` uses stratified weights that sum
    to one per row.
    """
    n = len(static)
    if n < 2:
        raise ValueError("mutual information estimate needs a batch of at least 2")
    dataset_size = n if dataset_size is None else dataset_size
    if dataset_size < n:
        raise ValueError("dataset_size must be at least the batch size")
    d_flat = DiagonalGaussian(dynamic.mean.reshape(n, -1), dynamic.log_var.reshape(n, -1))
    log_qs = _pairwise_log_density(static_samples, static)
    log_qd = _pairwise_log_density(dynamic_samples.reshape(n, -1), d_flat)
    log_w = _log_weights(n, dataset_size, weighting, log_qs.dtype)
    lse = lambda m: torch.logsumexp(m + log_w, dim=1)  # noqa: E731
    return (lse(log_qs + log_qd) - lse(log_qs) - lse(log_qd)).mean()

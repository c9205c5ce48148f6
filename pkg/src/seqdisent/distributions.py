"""Diagonal Gaussian math shared by the model, the view sampler and the objective.

Everything here works on torch tensors with arbitrary leading batch
dimensions; the latent dimension is always the last axis.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional

import torch

log = logging.getLogger(__name__)

LOG_VAR_MIN = -20.0
LOG_VAR_MAX = 20.0
ZERO_NORM_EPS = 1e-12


class BatchTooSmallError(ValueError):
    """Raised when a batch cannot be split into three nonempty thirds."""


class UndefinedSimilarityError(ValueError):
    """Raised when a cosine-based similarity is asked of a zero vector."""


def clamp_log_var(log_var: torch.Tensor) -> torch.Tensor:
    clamped = log_var.clamp(LOG_VAR_MIN, LOG_VAR_MAX)
    if not torch.equal(clamped, log_var):
        n = int((clamped != log_var).sum())
        log.warning("clamped %d log-variance entries to [%g, %g]", n, LOG_VAR_MIN, LOG_VAR_MAX)
    return clamped


@dataclass(frozen=True)
class DiagonalGaussian:
    """Factorized Gaussian ``N(mean, exp(log_var))``.

    ``mean`` and ``log_var`` share a shape ``(..., k)``; leading axes are
    batch axes, so one object can hold a whole batch of posteriors.
    """

    mean: torch.Tensor
    log_var: torch.Tensor

    def __post_init__(self):
        mean = torch.as_tensor(self.mean)
        if not mean.is_floating_point():
            mean = mean.to(torch.get_default_dtype())
        log_var = torch.as_tensor(self.log_var, dtype=mean.dtype)
        if mean.shape != log_var.shape:
            raise ValueError(f"mean shape {tuple(mean.shape)} != log_var shape {tuple(log_var.shape)}")
        if mean.dim() == 0 or mean.shape[-1] < 1:
            raise ValueError("latent dimension must be >= 1")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "log_var", log_var)

    @classmethod
    def standard(cls, *shape, dtype=None) -> "DiagonalGaussian":
        zeros = torch.zeros(*shape, dtype=dtype)
        return cls(zeros, zeros.clone())

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    @property
    def var(self) -> torch.Tensor:
        return self.log_var.exp()

    def __len__(self):
        return self.mean.shape[0]

    def __getitem__(self, idx) -> "DiagonalGaussian":
        return DiagonalGaussian(self.mean[idx], self.log_var[idx])

    def detach(self) -> "DiagonalGaussian":
        return DiagonalGaussian(self.mean.detach(), self.log_var.detach())

    def log_prob(self, x: torch.Tensor) -> torch.Tensor:
        """Elementwise log density (not summed over the last axis)."""
        log_var = self.log_var
        return -0.5 * (math.log(2 * math.pi) + log_var + (x - self.mean) ** 2 * torch.exp(-log_var))

    def sample(self, generator: Optional[torch.Generator] = None) -> torch.Tensor:
        noise = torch.randn(self.mean.shape, generator=generator, dtype=self.mean.dtype)
        return reparameterize(self, noise)


@dataclass(frozen=True)
class GaussianSequence:
    """A length-T chain of diagonal Gaussians stored as ``(..., T, d)`` tensors."""

    mean: torch.Tensor
    log_var: torch.Tensor

    def __post_init__(self):
        g = DiagonalGaussian(self.mean, self.log_var)
        if g.mean.dim() < 2:
            raise ValueError("a Gaussian sequence needs shape (..., T, d)")
        object.__setattr__(self, "mean", g.mean)
        object.__setattr__(self, "log_var", g.log_var)

    @classmethod
    def from_steps(cls, steps: List[DiagonalGaussian]) -> "GaussianSequence":
        if not steps:
            raise ValueError("a Gaussian sequence needs at least one step")
        dims = {s.dim for s in steps}
        if len(dims) != 1:
            raise ValueError(f"all steps must share one dimension, got {sorted(dims)}")
        return cls(torch.stack([s.mean for s in steps], -2), torch.stack([s.log_var for s in steps], -2))

    @property
    def length(self) -> int:
        return self.mean.shape[-2]

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    @property
    def steps(self) -> List[DiagonalGaussian]:
        return [DiagonalGaussian(self.mean[..., t, :], self.log_var[..., t, :]) for t in range(self.length)]

    def as_gaussian(self) -> DiagonalGaussian:
        return DiagonalGaussian(self.mean, self.log_var)

    def __len__(self):
        return self.mean.shape[0]

    def __getitem__(self, idx) -> "GaussianSequence":
        return GaussianSequence(self.mean[idx], self.log_var[idx])

    def detach(self) -> "GaussianSequence":
        return GaussianSequence(self.mean.detach(), self.log_var.detach())


def _check_finite(*tensors):
    for t in tensors:
        if not torch.isfinite(t).all():
            raise FloatingPointError("non-finite Gaussian parameters")


def kl_diag_gaussian(p: DiagonalGaussian, q: DiagonalGaussian) -> torch.Tensor:
    """Closed-form ``KL(p || q)`` summed over the last axis.

    Broadcasts over leading axes, so ``kl_diag_gaussian(p[:, None], p[None])``
    is the full pairwise matrix.
    """
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch: {p.dim} vs {q.dim}")
    _check_finite(p.mean, p.log_var, q.mean, q.log_var)
    lp, lq = clamp_log_var(p.log_var), clamp_log_var(q.log_var)
    diff = lq - lp
    terms = torch.exp(-diff) + (q.mean - p.mean) ** 2 * torch.exp(-lq) - 1.0 + diff
    return 0.5 * terms.sum(-1)


def kl_sequence(p: GaussianSequence, q: GaussianSequence) -> torch.Tensor:
    """Sum over time of the per-step KL divergences."""
    if p.length != q.length:
        raise ValueError(f"sequence length mismatch: {p.length} vs {q.length}")
    return kl_diag_gaussian(p.as_gaussian(), q.as_gaussian()).sum(-1)


def reparameterize(g: DiagonalGaussian, noise: torch.Tensor) -> torch.Tensor:
    noise = torch.as_tensor(noise, dtype=g.mean.dtype)
    if noise.shape[-1] != g.dim:
        raise ValueError(f"noise dim {noise.shape[-1]} != distribution dim {g.dim}")
    return g.mean + torch.exp(0.5 * g.log_var) * noise


def cosine_similarity(u: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    u = torch.as_tensor(u)
    v = torch.as_tensor(v, dtype=u.dtype if u.is_floating_point() else None)
    if u.shape[-1] != v.shape[-1]:
        raise ValueError(f"dimension mismatch: {u.shape[-1]} vs {v.shape[-1]}")
    nu, nv = u.norm(dim=-1), v.norm(dim=-1)
    if (nu < ZERO_NORM_EPS).any() or (nv < ZERO_NORM_EPS).any():
        raise UndefinedSimilarityError("similarity is undefined for zero-norm vectors")
    return (u * v).sum(-1) / (nu * nv)


def similarity_phi(u: torch.Tensor, v: torch.Tensor, tau: float = 0.5) -> torch.Tensor:
    """``exp(cos(u, v) / tau)``, broadcasting over leading axes."""
    if tau <= 0:
        raise ValueError("temperature must be positive")
    return torch.exp(cosine_similarity(u, v) / tau)


def pairwise_kl_matrix(posteriors: DiagonalGaussian) -> torch.Tensor:
    """``D[i, j] = KL(posteriors[i] || posteriors[j])`` for a batch of ``n >= 3``."""
    n = len(posteriors)
    if n < 3:
        raise BatchTooSmallError(f"need at least 3 posteriors to form thirds, got {n}")
    p = DiagonalGaussian(posteriors.mean.unsqueeze(1), posteriors.log_var.unsqueeze(1))
    q = DiagonalGaussian(posteriors.mean.unsqueeze(0), posteriors.log_var.unsqueeze(0))
    d = kl_diag_gaussian(p, q)
    return d.masked_fill(torch.eye(n, dtype=torch.bool), 0.0)


def pairwise_kl_sequence_matrix(chains: GaussianSequence) -> torch.Tensor:
    """Pairwise :func:`kl_sequence` over a batch of dynamic chains ``(n, T, d)``."""
    n = len(chains)
    if n < 3:
        raise BatchTooSmallError(f"need at least 3 sequences to form thirds, got {n}")
    p = GaussianSequence(chains.mean.unsqueeze(1), chains.log_var.unsqueeze(1))
    q = GaussianSequence(chains.mean.unsqueeze(0), chains.log_var.unsqueeze(0))
    d = kl_sequence(p, q)
    return d.masked_fill(torch.eye(n, dtype=torch.bool), 0.0)

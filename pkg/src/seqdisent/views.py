"""Positive/negative view generation from the model's own posteriors.

For every anchor in a batch the posteriors are ranked by KL divergence from
the anchor's posterior; the closest third is the positive pool and (by
default) the farthest third is the negative pool.  Views are then produced
with the predictive sampling trick: draw a latent from a pool member, pair it
with complementary factors from the prior, decode, re-encode, and sample the
posterior of the generated sequence.
"""

import contextlib
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from .distributions import (BatchTooSmallError, DiagonalGaussian, GaussianSequence, pairwise_kl_matrix,
                            pairwise_kl_sequence_matrix, reparameterize)


class NegativeMode(str, Enum):
    RANDOM = "random"
    MIDDLE_THIRD = "middle_third"
    MIDDLE_PLUS_FARTHEST = "middle_plus_farthest"
    FARTHEST_THIRD = "farthest_third"


class ViewTrick(str, Enum):
    PREDICTIVE = "predictive"
    PLAIN_REPARAM = "plain_reparam"


@dataclass(frozen=True)
class ViewPools:
    anchor_index: int
    positive: Tuple[int, ...]
    negative: Tuple[int, ...]

    def __post_init__(self):
        if set(self.positive) & set(self.negative):
            raise ValueError("positive and negative pools overlap")


@dataclass
class ViewConfig:
    negative_mode: NegativeMode = NegativeMode.FARTHEST_THIRD
    n_negatives: Optional[int] = None
    view_trick: ViewTrick = ViewTrick.PREDICTIVE
    negative_dynamics: str = "prior"
    grad_through_views: bool = False

    def __post_init__(self):
        self.negative_mode = NegativeMode(self.negative_mode)
        self.view_trick = ViewTrick(self.view_trick)
        if self.negative_dynamics not in ("prior", "anchor"):
            raise ValueError("negative_dynamics must be 'prior' or 'anchor'")
        if self.n_negatives is not None and self.n_negatives < 1:
            raise ValueError("n_negatives must be >= 1")

    def negatives_for(self, batch_size: int) -> int:
        return 2 * batch_size if self.n_negatives is None else self.n_negatives


@dataclass
class ViewBundle:
    """One positive view ``(k,)`` and ``M`` negative views ``(M, k)``; batched bundles add a leading axis."""

    positive: torch.Tensor
    negatives: torch.Tensor


def thirds_bounds(n: int) -> Tuple[int, int]:
    if n < 3:
        raise BatchTooSmallError(f"need at least 3 items to form thirds, got {n}")
    return n // 3, (2 * n) // 3


def ranked_indices(d_row, anchor_index: Optional[int] = None) -> np.ndarray:
    """Indices sorted by ascending distance, ties broken by index, anchor first."""
    row = np.asarray(torch.as_tensor(d_row).detach().cpu(), dtype=np.float64)
    if anchor_index is None:
        anchor_index = int(np.argmin(row))
    order = np.argsort(row, kind="stable")
    return np.concatenate([[anchor_index], order[order != anchor_index]])


def partition_thirds(d_row, mode: NegativeMode = NegativeMode.FARTHEST_THIRD, anchor_index: Optional[int] = None,
                     generator: Optional[torch.Generator] = None) -> ViewPools:
    """Split one row of the distance matrix into positive and negative pools.

    The positive pool is the closest ``n // 3`` entries (the anchor included);
    the negative pool depends on ``mode``.
    """
    mode = NegativeMode(mode)
    n = len(d_row)
    lo, hi = thirds_bounds(n)
    order = ranked_indices(d_row, anchor_index)
    positive = order[:lo]
    if mode is NegativeMode.FARTHEST_THIRD:
        negative = order[hi:]
    elif mode is NegativeMode.MIDDLE_THIRD:
        negative = order[lo:hi]
    elif mode is NegativeMode.MIDDLE_PLUS_FARTHEST:
        negative = order[lo:]
    else:
        # uniform over indices outside the positive pool (so never the anchor)
        others = torch.as_tensor(np.sort(order[lo:]))
        pick = torch.randperm(len(others), generator=generator)[:lo]
        negative = np.sort(others[pick].numpy())
    return ViewPools(int(order[0]), tuple(int(i) for i in positive), tuple(int(i) for i in negative))


def build_pools(distances: torch.Tensor, mode: NegativeMode, generator: Optional[torch.Generator] = None
                ) -> List[ViewPools]:
    return [partition_thirds(distances[i], mode, i, generator) for i in range(distances.shape[0])]


def _choose(pool: Sequence[int], count: int, generator: Optional[torch.Generator]) -> torch.Tensor:
    if len(pool) == 0:
        raise ValueError("cannot sample from an empty pool")
    picks = torch.randint(len(pool), (count,), generator=generator)
    return torch.as_tensor(pool)[picks]


def _grad_context(enabled: bool):
    return contextlib.nullcontext() if enabled else torch.no_grad()


def generate_static_view(model, s_tilde: torch.Tensor, dynamics: torch.Tensor, generator=None) -> torch.Tensor:
    """Decode ``(s_tilde, dynamics)`` without gradients, re-encode, and sample ``s`` of the result."""
    with torch.no_grad():
        x_view = model.decode(s_tilde, dynamics)
    return model.encode(x_view).static.sample(generator)


def generate_dynamic_view(model, statics: torch.Tensor, d_tilde: torch.Tensor, generator=None) -> torch.Tensor:
    """Decode ``(statics, d_tilde)`` without gradients, re-encode, and sample ``d_{1:T}`` of the result."""
    with torch.no_grad():
        x_view = model.decode(statics, d_tilde)
    return model.encode(x_view).dynamic.as_gaussian().sample(generator)


def _static_from_pool(model, static: DiagonalGaussian, idx: torch.Tensor, dynamics: Optional[torch.Tensor],
                      generator, config: ViewConfig) -> torch.Tensor:
    """Views of ``s`` seeded by the pool members ``idx`` (any shape of indices)."""
    shape = tuple(idx.shape)
    flat = idx.reshape(-1)
    src = static if config.grad_through_views else static.detach()
    with _grad_context(config.grad_through_views):
        noise = torch.randn(len(flat), src.dim, generator=generator, dtype=src.mean.dtype)
        s_tilde = reparameterize(src[flat], noise)
        if config.view_trick is ViewTrick.PLAIN_REPARAM:
            return s_tilde.reshape(*shape, -1)
        if dynamics is None:
            _, dynamics = model.prior_dynamics_rollout(model.config.seq_len, generator, n=len(flat))
        x_view = model.decode(s_tilde, dynamics)
    post = model.encode(x_view)
    return post.static.sample(generator).reshape(*shape, -1)


def _dynamic_from_pool(model, dynamic: GaussianSequence, idx: torch.Tensor, statics: Optional[torch.Tensor],
                       generator, config: ViewConfig) -> torch.Tensor:
    """Flattened views of ``d_{1:T}`` seeded by the pool members ``idx``."""
    shape = tuple(idx.shape)
    flat = idx.reshape(-1)
    src = dynamic if config.grad_through_views else dynamic.detach()
    with _grad_context(config.grad_through_views):
        src = src[flat].as_gaussian()
        noise = torch.randn(src.mean.shape, generator=generator, dtype=src.mean.dtype)
        d_tilde = reparameterize(src, noise)
        if config.view_trick is ViewTrick.PLAIN_REPARAM:
            return d_tilde.reshape(*shape, -1)
        if statics is None:
            statics = model.sample_prior_static(len(flat), generator)
        x_view = model.decode(statics, d_tilde)
    post = model.encode(x_view)
    return post.dynamic.as_gaussian().sample(generator).reshape(*shape, -1)


def _draw_indices(pools: List[ViewPools], n_neg: int, generator) -> Tuple[torch.Tensor, torch.Tensor]:
    pos = torch.stack([_choose(p.positive, 1, generator)[0] for p in pools])
    neg = torch.stack([_choose(p.negative, n_neg, generator) for p in pools])
    return pos, neg


def sample_positive_static(model, pools: ViewPools, batch_posterior, generator=None,
                           config: Optional[ViewConfig] = None) -> torch.Tensor:
    """One positive static view ``s+`` for ``pools.anchor_index``."""
    config = config or ViewConfig()
    idx = _choose(pools.positive, 1, generator)
    return _static_from_pool(model, batch_posterior.static, idx, None, generator, config)[0]


def sample_negative_statics(model, pools: ViewPools, batch_posterior, count: Optional[int] = None, generator=None,
                            config: Optional[ViewConfig] = None, anchor_dynamics: Optional[torch.Tensor] = None
                            ) -> torch.Tensor:
    """``count`` (default ``2n``) negative static views, drawn with replacement from the negative pool.

    ``anchor_dynamics`` ``(T, d_d)`` is required when ``config.negative_dynamics == "anchor"``.
    """
    config = config or ViewConfig()
    count = config.negatives_for(len(batch_posterior)) if count is None else count
    if count < 1:
        raise ValueError("count must be >= 1")
    idx = _choose(pools.negative, count, generator)
    dyn = None
    if config.negative_dynamics == "anchor" and config.view_trick is ViewTrick.PREDICTIVE:
        if anchor_dynamics is None:
            raise ValueError("anchor dynamics required for negative_dynamics='anchor'")
        dyn = anchor_dynamics.detach().expand(count, *anchor_dynamics.shape)
    return _static_from_pool(model, batch_posterior.static, idx, dyn, generator, config)


def sample_dynamic_views(model, anchor_index: int, d_dynamic_row, batch_posterior, generator=None,
                         config: Optional[ViewConfig] = None, anchor_static: Optional[torch.Tensor] = None
                         ) -> ViewBundle:
    """Positive and negative flattened dynamic views (length ``T * d_d``) for one anchor."""
    config = config or ViewConfig()
    pools = partition_thirds(d_dynamic_row, config.negative_mode, anchor_index, generator)
    count = config.negatives_for(len(batch_posterior))
    pos_idx = _choose(pools.positive, 1, generator)
    neg_idx = _choose(pools.negative, count, generator)
    positive = _dynamic_from_pool(model, batch_posterior.dynamic, pos_idx, None, generator, config)[0]
    stat = None
    if config.negative_dynamics == "anchor" and config.view_trick is ViewTrick.PREDICTIVE:
        if anchor_static is None:
            raise ValueError("anchor static sample required for negative_dynamics='anchor'")
        stat = anchor_static.detach().expand(count, -1)
    negatives = _dynamic_from_pool(model, batch_posterior.dynamic, neg_idx, stat, generator, config)
    return ViewBundle(positive, negatives)


def static_views(model, posterior, generator=None, config: Optional[ViewConfig] = None,
                 anchor_dynamics: Optional[torch.Tensor] = None) -> Tuple[ViewBundle, List[ViewPools]]:
    """Static views for every anchor of a batch: positives ``(n, d_s)``, negatives ``(n, M, d_s)``.

    Generation runs as one batched decode/encode for the whole batch.
    """
    config = config or ViewConfig()
    n = len(posterior)
    n_neg = config.negatives_for(n)
    pools = build_pools(pairwise_kl_matrix(posterior.static.detach()), config.negative_mode, generator)
    pos_idx, neg_idx = _draw_indices(pools, n_neg, generator)
    idx = torch.cat([pos_idx[:, None], neg_idx], dim=1)
    dyn = None
    if config.negative_dynamics == "anchor" and config.view_trick is ViewTrick.PREDICTIVE:
        if anchor_dynamics is None:
            raise ValueError("anchor dynamics required for negative_dynamics='anchor'")
        _, prior_path = model.prior_dynamics_rollout(model.config.seq_len, generator, n=n)
        anchors = anchor_dynamics.detach()[:, None].expand(-1, n_neg, -1, -1)
        dyn = torch.cat([prior_path[:, None], anchors], dim=1).reshape(n * (1 + n_neg), *anchor_dynamics.shape[1:])
    views = _static_from_pool(model, posterior.static, idx, dyn, generator, config)
    return ViewBundle(views[:, 0], views[:, 1:]), pools


def dynamic_views(model, posterior, generator=None, config: Optional[ViewConfig] = None,
                  anchor_static: Optional[torch.Tensor] = None) -> Tuple[ViewBundle, List[ViewPools]]:
    """Flattened dynamic views for every anchor: positives ``(n, T*d_d)``, negatives ``(n, M, T*d_d)``."""
    config = config or ViewConfig()
    n = len(posterior)
    n_neg = config.negatives_for(n)
    pools = build_pools(pairwise_kl_sequence_matrix(posterior.dynamic.detach()), config.negative_mode, generator)
    pos_idx, neg_idx = _draw_indices(pools, n_neg, generator)
    idx = torch.cat([pos_idx[:, None], neg_idx], dim=1)
    stat = None
    if config.negative_dynamics == "anchor" and config.view_trick is ViewTrick.PREDICTIVE:
        if anchor_static is None:
            raise ValueError("anchor static sample required for negative_dynamics='anchor'")
        prior_s = model.sample_prior_static(n, generator)
        anchors = anchor_static.detach()[:, None].expand(-1, n_neg, -1)
        stat = torch.cat([prior_s[:, None], anchors], dim=1).reshape(n * (1 + n_neg), -1)
    views = _dynamic_from_pool(model, posterior.dynamic, idx, stat, generator, config)
    return ViewBundle(views[:, 0], views[:, 1:]), pools

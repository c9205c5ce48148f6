"""Optimization loop: encode, sample views, assemble the objective, Adam step.

All randomness is derived from ``TrainConfig.seed``: parameter init from the
global torch seed, batch order from ``(seed, epoch)`` and per-step sampling
noise from ``(seed, global_step)``.  A run resumed from a checkpoint therefore
follows the same trajectory as an uninterrupted one.
"""

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, List, Optional

import numpy as np
import torch

from .data import LabeledDataset
from .model import ModelConfig, SequenceVAE
from .objective import LossWeights, TrainingDivergenceError, elbo_terms, info_nce, mi_mws_static_dynamic, \
    total_objective
from .views import NegativeMode, ViewConfig, ViewTrick, dynamic_views, static_views

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "seqdisent-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    """The checkpoint file is unreadable or structurally invalid."""


class IncompatibleCheckpointError(CheckpointError):
    """The checkpoint was written by an incompatible format version."""


@dataclass
class TrainConfig:
    weights: LossWeights = field(default_factory=LossWeights)
    learning_rate: float = 1e-3
    batch_size: int = 16
    epochs: int = 100
    negative_mode: NegativeMode = NegativeMode.FARTHEST_THIRD
    view_trick: ViewTrick = ViewTrick.PREDICTIVE
    seed: int = 0
    warmup_epochs_contrastive: int = 0
    n_negatives: Optional[int] = None
    negative_dynamics: str = "prior"
    grad_through_views: bool = False
    mse_batch_sum: bool = False
    grad_clip_norm: Optional[float] = None
    mi_weighting: str = "mws"
    dtype: str = "float32"

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        self.negative_mode = NegativeMode(self.negative_mode)
        self.view_trick = ViewTrick(self.view_trick)
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 3 and self.weights.lambda4 > 0:
            raise ValueError("batch_size must be >= 3 when contrastive terms are active")
        if self.batch_size < 1 or self.epochs < 0 or self.warmup_epochs_contrastive < 0:
            raise ValueError("batch_size must be positive, epochs and warmup nonnegative")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def view_config(self) -> ViewConfig:
        return ViewConfig(self.negative_mode, self.n_negatives, self.view_trick, self.negative_dynamics,
                          self.grad_through_views)

    @property
    def torch_dtype(self):
        return getattr(torch, self.dtype)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, LossWeights):
                v = asdict(v)
            elif isinstance(v, (NegativeMode, ViewTrick)):
                v = v.value
            out[f.name] = v
        return out


@dataclass
class TrainState:
    model: SequenceVAE
    optimizer: torch.optim.Optimizer
    config: TrainConfig
    epoch: int = 0
    global_step: int = 0
    metrics: List[dict] = field(default_factory=list)

    @property
    def rng_state(self) -> torch.Tensor:
        return torch.get_rng_state()


def step_generators(seed: int, step: int):
    """Independent generators for ELBO noise and view sampling at one step."""
    states = np.random.SeedSequence([seed, step]).generate_state(2, dtype=np.uint64)
    return tuple(torch.Generator().manual_seed(int(s) & 0x7FFF_FFFF_FFFF_FFFF) for s in states)


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def init_state(config: TrainConfig, model_config: ModelConfig) -> TrainState:
    torch.manual_seed(config.seed)
    model = SequenceVAE(model_config).to(config.torch_dtype)
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    return TrainState(model, opt, config)


def compute_loss(model: SequenceVAE, x: torch.Tensor, config: TrainConfig, elbo_gen: torch.Generator,
                 view_gen: torch.Generator, contrastive: bool = True, dataset_size: Optional[int] = None):
    """Loss breakdown for one batch under fixed generators (a deterministic function of the parameters)."""
    out = model(x, elbo_gen)
    post = out.posterior
    recon, kl_s, kl_d = elbo_terms(x, out.reconstruction, post.static, post.dynamic, out.prior_dynamic,
                                   config.mse_batch_sum)
    n = len(post)
    zero = recon.new_zeros(())
    nce_s = nce_d = zero
    if contrastive and n >= 3 and config.weights.lambda4 > 0:
        vcfg = config.view_config
        sv, _ = static_views(model, post, view_gen, vcfg, anchor_dynamics=out.dynamic_sample)
        dv, _ = dynamic_views(model, post, view_gen, vcfg, anchor_static=out.static_sample)
        tau = config.weights.tau
        nce_s = info_nce(out.static_sample, sv.positive, sv.negatives, tau).mean()
        nce_d = info_nce(out.dynamic_sample.reshape(n, -1), dv.positive, dv.negatives, tau).mean()
    mi = zero
    if n >= 2 and config.weights.lambda5 > 0:
        mi = mi_mws_static_dynamic(post.static, post.dynamic, out.static_sample, out.dynamic_sample,
                                   dataset_size=max(dataset_size or n, n), weighting=config.mi_weighting)
    return total_objective(config.weights, recon, kl_s, kl_d, nce_s, nce_d, mi)


def _write_metrics(path: Optional[Path], rows: List[dict]):
    if path is None or not rows:
        return
    with path.open("a") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def train(config: TrainConfig, dataset: LabeledDataset, model_config: Optional[ModelConfig] = None,
          run_dir=None, state: Optional[TrainState] = None, until_epoch: Optional[int] = None,
          on_epoch_end: Optional[Callable[[TrainState], None]] = None) -> TrainState:
    """Train on the train split of ``dataset`` up to ``until_epoch`` (default ``config.epochs``).

    With ``run_dir``, metrics are appended to ``metrics.jsonl`` and
    ``checkpoint.pt`` is rewritten after every epoch.
    """
    data = dataset.train() if dataset.is_test.any() else dataset
    if len(data) == 0:
        raise ValueError("dataset has no training sequences")
    if state is None:
        if model_config is None:
            model_config = ModelConfig(seq_len=data.seq_len, frame_shape=data.frame_shape)
        state = init_state(config, model_config)
    model, opt = state.model, state.optimizer
    run_dir = Path(run_dir) if run_dir is not None else None
    metrics_path = None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = run_dir / "metrics.jsonl"
    x_all = torch.as_tensor(data.data, dtype=config.torch_dtype)
    n_total = len(data)
    last_epoch = config.epochs if until_epoch is None else until_epoch
    model.train()
    while state.epoch < last_epoch:
        epoch = state.epoch + 1
        order = epoch_order(config.seed, epoch, n_total)
        contrastive = epoch > config.warmup_epochs_contrastive
        rows = []
        for start in range(0, n_total, config.batch_size):
            idx = torch.as_tensor(order[start:start + config.batch_size])
            elbo_gen, view_gen = step_generators(config.seed, state.global_step)
            try:
                try:
                    parts = compute_loss(model, x_all[idx], config, elbo_gen, view_gen, contrastive, n_total)
                except TrainingDivergenceError:
                    raise
                except FloatingPointError as exc:
                    # non-finite posterior parameters surface before any loss term exists
                    raise TrainingDivergenceError("posterior", float("nan")) from exc
            except TrainingDivergenceError as exc:
                _write_metrics(metrics_path, rows)
                log.error("training diverged at epoch %d step %d on term %s", epoch, state.global_step, exc.term)
                raise
            opt.zero_grad()
            parts.total.backward()
            if config.grad_clip_norm is not None:
                norm = torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip_norm)
                if norm > config.grad_clip_norm:
                    log.info("clipped gradient norm %.3f at step %d", float(norm), state.global_step)
            opt.step()
            state.global_step += 1
            rows.append({"step": state.global_step, "epoch": epoch, **parts.as_dict()})
        state.epoch = epoch
        state.metrics.extend(rows)
        _write_metrics(metrics_path, rows)
        if run_dir is not None:
            save_checkpoint(state, run_dir / "checkpoint.pt")
        mean_total = float(np.mean([r["total"] for r in rows]))
        log.info("epoch %d: mean total %.4f", epoch, mean_total)
        if on_epoch_end is not None:
            on_epoch_end(state)
    return state


def save_checkpoint(state: TrainState, path) -> Path:
    path = Path(path)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": state.model.config.to_dict(),
        "train_config": state.config.to_dict(),
        "model_state": state.model.state_dict(),
        "optimizer_state": state.optimizer.state_dict(),
        "epoch": state.epoch,
        "global_step": state.global_step,
        "rng_state": torch.get_rng_state(),
    }
    tmp = path.with_name(path.name + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)
    return path


def _read_checkpoint(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:  # torch raises a zoo of types on corrupt archives
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a model checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise IncompatibleCheckpointError(
            f"checkpoint version {payload.get('version')} is not supported (expected {CHECKPOINT_VERSION})")
    return payload


def resume(checkpoint_path) -> TrainState:
    """Rebuild model, optimizer and counters; pass the result to :func:`train` to continue."""
    payload = _read_checkpoint(checkpoint_path)
    config = TrainConfig(**payload["train_config"])
    model = SequenceVAE(ModelConfig(**payload["model_config"])).to(config.torch_dtype)
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    try:
        model.load_state_dict(payload["model_state"])
        opt.load_state_dict(payload["optimizer_state"])
    except (RuntimeError, KeyError, ValueError) as exc:
        raise CheckpointError(f"checkpoint state does not match its config: {exc}") from exc
    torch.set_rng_state(payload["rng_state"])
    return TrainState(model, opt, config, payload["epoch"], payload["global_step"])


def load_model(checkpoint_path) -> SequenceVAE:
    model = resume(checkpoint_path).model
    model.eval()
    return model

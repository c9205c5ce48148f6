"""Static/dynamic sequential VAE.

The encoder maps a sequence ``x_{1:T}`` to one static posterior ``q(s | x_{1:T})``
and a chain of dynamic posteriors ``q(d_t | x_{<=t})``; a recurrent prior
generates ``p(d_t | d_{<t})``; the decoder renders each frame from ``(s, d_t)``
alone.
"""

from dataclasses import asdict, dataclass, field
from typing import Optional, Tuple

import torch
from torch import nn

from .distributions import DiagonalGaussian, GaussianSequence


@dataclass
class ModelConfig:
    static_dim: int = 32
    dynamic_dim: int = 8
    seq_len: int = 8
    frame_shape: Tuple[int, ...] = (3, 16, 16)
    recurrent_hidden: int = 64
    conv_channel_plan: Tuple[int, ...] = (16, 32)
    frame_feature_dim: int = 64
    mlp_plan: Tuple[int, ...] = (32, 64, 32)

    def __post_init__(self):
        self.frame_shape = tuple(int(v) for v in self.frame_shape)
        self.conv_channel_plan = tuple(int(v) for v in self.conv_channel_plan)
        self.mlp_plan = tuple(int(v) for v in self.mlp_plan)
        if self.static_dim <= self.dynamic_dim:
            raise ValueError("static_dim must exceed dynamic_dim")
        if self.seq_len < 2:
            raise ValueError("seq_len must be >= 2")
        positive = [self.static_dim, self.dynamic_dim, self.recurrent_hidden, self.frame_feature_dim]
        if min(positive) < 1 or min(self.frame_shape) < 1:
            raise ValueError("all dimensions must be positive")
        if len(self.frame_shape) not in (1, 3):
            raise ValueError("frame_shape must be (features,) or (channels, height, width)")
        if self.is_image:
            if not self.conv_channel_plan:
                raise ValueError("image frames need a non-empty conv_channel_plan")
            _, h, w = self.frame_shape
            scale = 2 ** len(self.conv_channel_plan)
            if h % scale or w % scale:
                raise ValueError(f"frame size {h}x{w} not divisible by {scale}")

    @property
    def is_image(self) -> bool:
        return len(self.frame_shape) == 3

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SequencePosterior:
    """Batched ``q(s | x_{1:T})`` of shape ``(n, d_s)`` and ``q(d_{1:T} | x)`` of shape ``(n, T, d_d)``."""

    static: DiagonalGaussian
    dynamic: GaussianSequence

    def __len__(self):
        return len(self.static)

    def __getitem__(self, idx) -> "SequencePosterior":
        return SequencePosterior(self.static[idx], self.dynamic[idx])

    def detach(self) -> "SequencePosterior":
        return SequencePosterior(self.static.detach(), self.dynamic.detach())


@dataclass
class ForwardOutput:
    posterior: SequencePosterior
    static_sample: torch.Tensor
    dynamic_sample: torch.Tensor
    prior_dynamic: GaussianSequence
    reconstruction: torch.Tensor = field(repr=False)


class GaussianHead(nn.Module):
    def __init__(self, in_dim, out_dim):
        super().__init__()
        self.mean = nn.Linear(in_dim, out_dim)
        self.log_var = nn.Linear(in_dim, out_dim)

    def forward(self, h):
        return self.mean(h), self.log_var(h)


class FrameEncoder(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        if config.is_image:
            c, h, w = config.frame_shape
            layers = []
            for out_c in config.conv_channel_plan:
                layers += [nn.Conv2d(c, out_c, 4, 2, 1), nn.LeakyReLU(0.2)]
                c = out_c
            scale = 2 ** len(config.conv_channel_plan)
            layers += [nn.Flatten(), nn.Linear(c * (h // scale) * (w // scale), config.frame_feature_dim),
                       nn.LeakyReLU(0.2)]
            self.out_dim = config.frame_feature_dim
        else:
            (f,) = config.frame_shape
            layers = []
            for width in config.mlp_plan:
                layers += [nn.Linear(f, width), nn.ReLU()]
                f = width
            self.out_dim = f
        self.net = nn.Sequential(*layers)
        self.frame_shape = config.frame_shape

    def forward(self, x):
        n, t = x.shape[:2]
        h = self.net(x.reshape(n * t, *self.frame_shape))
        return h.reshape(n, t, -1)


class FrameDecoder(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        z_dim = config.static_dim + config.dynamic_dim
        self.frame_shape = config.frame_shape
        self.is_image = config.is_image
        if config.is_image:
            c_out, h, w = config.frame_shape
            plan = config.conv_channel_plan
            scale = 2 ** len(plan)
            self.seed_shape = (plan[-1], h // scale, w // scale)
            self.project = nn.Sequential(nn.Linear(z_dim, plan[-1] * self.seed_shape[1] * self.seed_shape[2]),
                                         nn.LeakyReLU(0.2))
            layers = []
            chans = list(plan[::-1]) + [c_out]
            for i, (a, b) in enumerate(zip(chans[:-1], chans[1:])):
                layers.append(nn.ConvTranspose2d(a, b, 4, 2, 1))
                layers.append(nn.Sigmoid() if i == len(chans) - 2 else nn.LeakyReLU(0.2))
            self.net = nn.Sequential(*layers)
        else:
            (f,) = config.frame_shape
            self.project = nn.Sequential(nn.Linear(z_dim, 32), nn.Tanh())
            self.net = nn.Sequential(nn.Linear(32, 64), nn.ReLU(), nn.Linear(64, 32), nn.ReLU(), nn.Linear(32, f))

    def forward(self, z):
        n, t = z.shape[:2]
        h = self.project(z.reshape(n * t, -1))
        if self.is_image:
            h = h.reshape(n * t, *self.seed_shape)
        return self.net(h).reshape(n, t, *self.frame_shape)


class SequenceVAE(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        hid = config.recurrent_hidden
        self.frame_encoder = FrameEncoder(config)
        self.bi_lstm = nn.LSTM(self.frame_encoder.out_dim, hid, batch_first=True, bidirectional=True)
        self.static_head = GaussianHead(2 * hid, config.static_dim)
        # only the forward half of the bidirectional features feeds the dynamic
        # chain, so q(d_t | .) never sees frames after t
        self.dynamic_rnn = nn.RNN(hid, hid, batch_first=True)
        self.dynamic_head = GaussianHead(hid, config.dynamic_dim)
        self.prior_cell = nn.LSTMCell(config.dynamic_dim, hid)
        self.prior_head = GaussianHead(hid, config.dynamic_dim)
        self.decoder = FrameDecoder(config)

    @property
    def dtype(self):
        return next(self.parameters()).dtype

    def _check_batch(self, x):
        expected = (self.config.seq_len, *self.config.frame_shape)
        if x.dim() != len(expected) + 1 or tuple(x.shape[1:]) != expected:
            raise ValueError(f"expected batch of shape (n, {', '.join(map(str, expected))}), got {tuple(x.shape)}")

    def encode(self, x: torch.Tensor) -> SequencePosterior:
        x = torch.as_tensor(x, dtype=self.dtype)
        self._check_batch(x)
        feats = self.frame_encoder(x)
        hid = self.config.recurrent_hidden
        out, _ = self.bi_lstm(feats)
        summary = torch.cat([out[:, -1, :hid], out[:, 0, hid:]], dim=-1)
        static = DiagonalGaussian(*self.static_head(summary))
        dyn_h, _ = self.dynamic_rnn(out[..., :hid])
        dynamic = GaussianSequence(*self.dynamic_head(dyn_h))
        return SequencePosterior(static, dynamic)

    def prior_dynamics(self, d_path: torch.Tensor) -> GaussianSequence:
        """Teacher-forced ``p(d_t | d_{<t})`` for a batch of paths ``(n, T, d_d)``."""
        n, t, _ = d_path.shape
        h = d_path.new_zeros(n, self.config.recurrent_hidden)
        c = h.clone()
        inp = d_path.new_zeros(n, self.config.dynamic_dim)
        means, log_vars = [], []
        for i in range(t):
            h, c = self.prior_cell(inp, (h, c))
            m, lv = self.prior_head(h)
            means.append(m)
            log_vars.append(lv)
            inp = d_path[:, i]
        return GaussianSequence(torch.stack(means, 1), torch.stack(log_vars, 1))

    def prior_dynamics_rollout(self, seq_len: int, generator: Optional[torch.Generator] = None,
                               n: int = 1) -> Tuple[GaussianSequence, torch.Tensor]:
        """Ancestral sampling from the learned prior; returns distributions and the sampled path."""
        if seq_len < 1:
            raise ValueError("seq_len must be >= 1")
        dtype = self.dtype
        h = torch.zeros(n, self.config.recurrent_hidden, dtype=dtype)
        c = h.clone()
        inp = torch.zeros(n, self.config.dynamic_dim, dtype=dtype)
        means, log_vars, path = [], [], []
        for _ in range(seq_len):
            h, c = self.prior_cell(inp, (h, c))
            m, lv = self.prior_head(h)
            inp = DiagonalGaussian(m, lv).sample(generator)
            means.append(m)
            log_vars.append(lv)
            path.append(inp)
        return GaussianSequence(torch.stack(means, 1), torch.stack(log_vars, 1)), torch.stack(path, 1)

    def sample_prior_static(self, n: int = 1, generator: Optional[torch.Generator] = None) -> torch.Tensor:
        return sample_prior_static(self.config.static_dim, generator, n=n, dtype=self.dtype)

    def decode(self, s: torch.Tensor, d_path: torch.Tensor) -> torch.Tensor:
        """Render ``(n, T, *frame_shape)`` from ``s`` of shape ``(n, d_s)`` and ``d_path`` ``(n, T, d_d)``.

        Unbatched inputs ``(d_s,)`` and ``(T, d_d)`` give an unbatched output.
        """
        s = torch.as_tensor(s, dtype=self.dtype)
        d_path = torch.as_tensor(d_path, dtype=self.dtype)
        unbatched = s.dim() == 1
        if unbatched:
            s, d_path = s[None], d_path[None]
        if s.shape[-1] != self.config.static_dim or d_path.shape[-1] != self.config.dynamic_dim:
            raise ValueError(f"latent dims ({s.shape[-1]}, {d_path.shape[-1]}) do not match config "
                             f"({self.config.static_dim}, {self.config.dynamic_dim})")
        if s.shape[0] != d_path.shape[0]:
            raise ValueError("static and dynamic batch sizes differ")
        t = d_path.shape[1]
        z = torch.cat([s[:, None].expand(-1, t, -1), d_path], dim=-1)
        out = self.decoder(z)
        return out[0] if unbatched else out

    def forward(self, x: torch.Tensor, generator: Optional[torch.Generator] = None) -> ForwardOutput:
        post = self.encode(x)
        s = post.static.sample(generator)
        d = post.dynamic.as_gaussian().sample(generator)
        prior = self.prior_dynamics(d)
        return ForwardOutput(post, s, d, prior, self.decode(s, d))

    @torch.no_grad()
    def resample_static(self, x: torch.Tensor, generator: Optional[torch.Generator] = None) -> torch.Tensor:
        """Keep the dynamics of ``x`` and draw a fresh static factor from ``p(s)``."""
        post = self.encode(x)
        d = post.dynamic.as_gaussian().sample(generator)
        return self.decode(self.sample_prior_static(len(post), generator), d)

    @torch.no_grad()
    def resample_dynamics(self, x: torch.Tensor, generator: Optional[torch.Generator] = None) -> torch.Tensor:
        """Keep the static factor of ``x`` and draw fresh dynamics from the learned prior."""
        post = self.encode(x)
        s = post.static.sample(generator)
        _, d = self.prior_dynamics_rollout(self.config.seq_len, generator, n=len(post))
        return self.decode(s, d)


def sample_prior_static(static_dim: int, generator: Optional[torch.Generator] = None, n: Optional[int] = None,
                        dtype=None) -> torch.Tensor:
    """Draw from ``N(0, I)``; shape ``(static_dim,)`` or ``(n, static_dim)``."""
    if static_dim < 1:
        raise ValueError("static_dim must be >= 1")
    shape = (static_dim,) if n is None else (n, static_dim)
    return torch.randn(shape, generator=generator, dtype=dtype)

"""MelFlow: an affine-coupling normalizing flow over log-mel spectrograms.

A (F_mel, T) input is split along frequency into two halves.  Each coupling
layer keeps one half and rescales/shifts the other with a (sigma, mu) pair
predicted by a non-causal dilated 2-D convolutional conditioner; successive
layers alternate which half is transformed.  The log-determinant of a layer
is the sum of its sigma map, so the exact log-likelihood is the standard
normal log-density of the latent plus the per-layer sums.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import BiLSTM, Conv2d, Dense, Embedding, Module, SequenceNorm, Tensor
from .autodiff import tensor as T
from .errors import ConfigurationError, ContractViolation

LOG_2PI = float(np.log(2 * np.pi))


@dataclass(frozen=True)
class FlowConfig:
    n_mels: int = 16
    layers: int = 4
    residual_channels: int = 8
    dilations: tuple = ((1, 1), (2, 2), (4, 4), (1, 1))
    kernel: int = 3
    sigma_clamp: float = 5.0
    conditioned: bool = False
    char_dim: int = 16
    h_dim: int = 32
    label_convs: int = 3
    vocab_size: int = 12


PAPER_FLOW = FlowConfig(n_mels=80, layers=8, residual_channels=20, h_dim=256)


def split_freq(x):
    """(..., F_mel, T) -> lower and upper frequency halves."""
    n = x.shape[-2]
    if n % 2:
        raise ConfigurationError(f"F_mel must be even to split, got {n}")
    return x[..., : n // 2, :], x[..., n // 2 :, :]


def merge_freq(a, b):
    return T.concat([a, b], axis=-2)


def affine_coupling(z_b, sigma, mu):
    """exp(sigma) * z_b + mu and its log-determinant sum(sigma) per sample."""
    out = T.exp(sigma) * z_b + mu
    return out, sigma.sum(axis=(-2, -1))


def affine_uncoupling(z_b, sigma, mu):
    return (z_b - mu) * T.exp(-sigma)


class WaveNet2D(Module):
    """Gated dilated 2-D convolutions over (frequency, time) with residual and skip paths.

    Input (B, F/2, T); returns (sigma, mu), each (B, F/2, T).
    """

    def __init__(self, cfg: FlowConfig, rng: np.random.Generator):
        R = cfg.residual_channels
        self.clamp = cfg.sigma_clamp
        self.residual_channels = R
        self.pre = Conv2d(1, R, 1, rng)
        self.gates = [
            Conv2d(R, 2 * R, cfg.kernel, rng, dilation=d) for d in cfg.dilations
        ]
        self.res = [Conv2d(R, R, 1, rng) for _ in cfg.dilations]
        self.skip = [Conv2d(R, R, 1, rng) for _ in cfg.dilations]
        self.cond = Dense(cfg.h_dim, 2 * R, rng) if cfg.conditioned else None
        self.post = Conv2d(R, 2, 1, rng, zero=True)

    def forward(self, z_cond: Tensor, h: Tensor | None = None) -> tuple[Tensor, Tensor]:
        R = self.residual_channels
        x = self.pre(z_cond[:, None])  # (B, R, F/2, T)
        bias = None
        if self.cond is not None:
            if h is None:
                raise ContractViolation("conditioned flow needs a label embedding")
            bias = self.cond(h)[:, :, None, None]  # (B, 2R, 1, 1)
        skips = None
        for gate, res, skip in zip(self.gates, self.res, self.skip):
            a = gate(x)
            if bias is not None:
                a = a + bias
            acts = T.tanh(a[:, :R]) * T.sigmoid(a[:, R:])
            x = x + res(acts)
            s = skip(acts)
            skips = s if skips is None else skips + s
        out = self.post(skips)
        sigma = T.tanh(out[:, 0] * (1.0 / self.clamp)) * self.clamp
        return sigma, out[:, 1]


class CouplingLayer(Module):
    def __init__(self, cfg: FlowConfig, swap_halves: bool, rng: np.random.Generator):
        self.wavenet = WaveNet2D(cfg, rng)
        self.swap_halves = swap_halves

    def forward(self, z_a, z_b, h=None):
        """Transform one half conditioned on the other; returns (z_a, z_b, logdet)."""
        if self.swap_halves:
            sigma, mu = self.wavenet(z_b, h)
            z_a, logdet = affine_coupling(z_a, sigma, mu)
        else:
            sigma, mu = self.wavenet(z_a, h)
            z_b, logdet = affine_coupling(z_b, sigma, mu)
        return z_a, z_b, logdet

    def inverse(self, z_a, z_b, h=None):
        if self.swap_halves:
            sigma, mu = self.wavenet(z_b, h)
            z_a = affine_uncoupling(z_a, sigma, mu)
        else:
            sigma, mu = self.wavenet(z_a, h)
            z_b = affine_uncoupling(z_b, sigma, mu)
        return z_a, z_b


def coupling_forward(z_a, z_b, layer: CouplingLayer, h=None):
    return layer(z_a, z_b, h)


def coupling_inverse(z_a, z_b, layer: CouplingLayer, h=None):
    return layer.inverse(z_a, z_b, h)


class LabelEmbedder(Module):
    """Character embedding -> 3 x (conv1d k3, ReLU, per-sequence norm) -> BiLSTM.

    The embedding is the sum of the last forward and last backward states.
    """

    def __init__(self, cfg: FlowConfig, rng: np.random.Generator):
        D = cfg.char_dim
        self.embed = Embedding(cfg.vocab_size, D, rng)
        self.convs = [Conv2d(D, D, (1, 3), rng) for _ in range(cfg.label_convs)]
        self.norms = [SequenceNorm(D) for _ in range(cfg.label_convs)]
        self.blstm = BiLSTM(D, cfg.h_dim, 1, rng)
        self.h_dim = cfg.h_dim

    def forward(self, label) -> Tensor:
        ids = np.asarray(label, dtype=np.int64)
        if ids.ndim != 1 or ids.size == 0:
            raise ContractViolation("label must be a non-empty id sequence")
        x = self.embed(ids).T[None, :, None, :]  # (1, D, 1, L)
        for conv, norm in zip(self.convs, self.norms):
            x = norm(T.relu(conv(x))[:, :, 0])[:, :, None, :]
        seq = x[:, :, 0].transpose(0, 2, 1)  # (1, L, D)
        _, last_f, last_b = self.blstm(seq)
        return (last_f + last_b)[0]


def embed_label(label, embedder: LabelEmbedder) -> Tensor:
    return embedder(label)


class MelFlow(Module):
    """Stack of alternating coupling layers with a standard-normal prior."""

    def __init__(self, cfg: FlowConfig, rng: np.random.Generator):
        if cfg.n_mels % 2:
            raise ConfigurationError(f"n_mels must be even, got {cfg.n_mels}")
        self.cfg = cfg
        self.layers = [CouplingLayer(cfg, swap_halves=bool(i % 2), rng=rng) for i in range(cfg.layers)]
        self.embedder = LabelEmbedder(cfg, rng) if cfg.conditioned else None

    def condition(self, label) -> Tensor | None:
        if self.embedder is None or label is None:
            return None
        return self.embedder(label)

    def _check(self, x) -> Tensor:
        x = T.as_tensor(x)
        if x.shape[-2] != self.cfg.n_mels:
            raise ContractViolation(f"expected {self.cfg.n_mels} mel bins, got {x.shape[-2]}")
        if not np.all(np.isfinite(x.data)):
            raise ContractViolation("non-finite values in flow input")
        return x

    def forward_latent(self, x, h=None) -> tuple[Tensor, Tensor]:
        """x (B, F_mel, T) -> (z, total logdet per sample)."""
        z_a, z_b = split_freq(x)
        hb = None if h is None else (h[None] if h.ndim == 1 else h)
        logdet = 0.0
        for layer in self.layers:
            z_a, z_b, ld = layer(z_a, z_b, hb)
            logdet = ld + logdet
        return merge_freq(z_a, z_b), logdet

    def log_likelihood(self, x, label=None, h=None) -> tuple[Tensor, Tensor]:
        """Exact log p(x) and latent z; accepts (F_mel, T) or a batch (B, F_mel, T)."""
        x = self._check(x)
        single = x.ndim == 2
        xb = x[None] if single else x
        if h is None:
            h = self.condition(label)
        if self.embedder is not None and h is None:
            raise ContractViolation("conditioned flow needs a label")
        z, logdet = self.forward_latent(xb, h)
        prior = (z * z * -0.5).sum(axis=(-2, -1)) - 0.5 * LOG_2PI * z.shape[-1] * z.shape[-2]
        logp = prior + logdet
        if single:
            return logp[0], z[0]
        return logp, z

    def nll(self, x, label=None, h=None) -> Tensor:
        """Per-cell negative log-likelihood, averaged over the batch."""
        x = T.as_tensor(x)
        logp, _ = self.log_likelihood(x, label=label, h=h)
        cells = x.shape[-1] * x.shape[-2]
        return -logp.mean() * (1.0 / cells) if logp.ndim else -logp * (1.0 / cells)

    def inverse(self, z, h=None) -> Tensor:
        z = T.as_tensor(z)
        single = z.ndim == 2
        zb = z[None] if single else z
        hb = None if h is None else (h[None] if h.ndim == 1 else h)
        z_a, z_b = split_freq(zb)
        for layer in reversed(self.layers):
            z_a, z_b = layer.inverse(z_a, z_b, hb)
        x = merge_freq(z_a, z_b)
        return x[0] if single else x

    def sample(
        self, frames: int, label=None, temperature: float = 1.0, rng: np.random.Generator | None = None
    ) -> Tensor:
        if frames < 1:
            raise ContractViolation("need at least one frame")
        rng = rng or np.random.default_rng()
        z = Tensor(temperature * rng.standard_normal((self.cfg.n_mels, frames)))
        return self.inverse(z, self.condition(label))


def log_likelihood(x, flow: MelFlow, label=None):
    return flow.log_likelihood(x, label=label)


def nll_loss(x, flow: MelFlow, label=None) -> Tensor:
    return flow.nll(x, label=label)


def sample(flow: MelFlow, frames: int, label=None, temperature: float = 1.0, rng=None) -> Tensor:
    return flow.sample(frames, label=label, temperature=temperature, rng=rng)

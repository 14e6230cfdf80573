"""Mask-estimation neural MVDR beamformer.

Pipeline for a multi-channel STFT ``s`` of shape (C, T, F)::

    amplitudes -> per-channel BiLSTM + FC + sigmoid masks (speech, noise)
    -> channel-averaged masks -> mask-weighted PSD matrices
    -> MVDR filter h_f = (Phi_N^-1 Phi_S / Tr(Phi_N^-1 Phi_S)) r
    -> y_{t,f} = sum_c conj(h_{f,c}) s_{t,f,c}
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import BiLSTM, ComplexTensor, Dense, Module, Tensor
from .autodiff import tensor as T
from .dsp import ComplexSpectrogram, amplitude_features
from .errors import ContractViolation, DegenerateTraceError

PSD_EPS = 1e-10
TRACE_EPS = 1e-12


@dataclass(frozen=True)
class BeamformerConfig:
    layers: int = 2
    hidden: int = 32
    projection: int = 32
    ref_hidden: int = 32
    loading: float = 1e-6
    conjugate: bool = True
    estimate_reference: bool = True
    reference_channel: int = 0


PAPER_BEAMFORMER = BeamformerConfig(layers=3, hidden=300, projection=300, ref_hidden=300)


class MaskNetwork(Module):
    """BiLSTM over amplitude frames followed by a sigmoid FC layer to F bins."""

    def __init__(self, n_freq: int, cfg: BeamformerConfig, rng: np.random.Generator):
        self.n_freq = n_freq
        self.blstm = BiLSTM(n_freq, cfg.hidden, cfg.layers, rng, projection=cfg.projection)
        self.fc = Dense(self.blstm.out_dim, n_freq, rng)

    def forward(self, features: Tensor) -> tuple[Tensor, Tensor]:
        """features (C, T, F) -> (masks (C, T, F), BiLSTM outputs (C, T, D))."""
        if features.shape[-1] != self.n_freq:
            raise ContractViolation(
                f"mask network expects {self.n_freq} bins, features have {features.shape[-1]}"
            )
        hidden, _, _ = self.blstm(features)
        return T.sigmoid(self.fc(hidden)), hidden


def estimate_mask(features: Tensor, net: MaskNetwork) -> Tensor:
    return net(features)[0]


def average_mask(mask: Tensor) -> Tensor:
    """(C, T, F) -> (T, F) channel mean."""
    return mask.mean(axis=0)


def compute_psd(spec: ComplexSpectrogram | ComplexTensor, avg_mask) -> ComplexTensor:
    """Mask-weighted spatial covariance per frequency, shape (F, C, C)."""
    s = spec.coeffs if isinstance(spec, ComplexSpectrogram) else spec
    m = T.as_tensor(avg_mask)
    x = s.transpose(2, 0, 1)  # (F, C, T)
    w = m.T[:, None, :]  # (F, 1, T)
    phi = (x * w) @ x.H()
    denom = m.sum(axis=0) + PSD_EPS  # (F,)
    return phi / denom[:, None, None]


def _loaded(phi_n: ComplexTensor, loading: float) -> ComplexTensor:
    C = phi_n.shape[-1]
    eye = np.eye(C)
    level = phi_n.trace().re * (1.0 / C) + PSD_EPS  # (F,)
    bump = (level * loading)[:, None, None] * Tensor(eye)
    return ComplexTensor(phi_n.re + bump, phi_n.im)


def mvdr_filter(
    phi_s: ComplexTensor,
    phi_n: ComplexTensor,
    r,
    loading: float = 1e-6,
    on_degenerate: str = "raise",
) -> ComplexTensor:
    """Souden MVDR weights h (F, C).

    ``r`` is a reference vector (C,) (one-hot or soft).  A frequency whose
    trace vanishes raises :class:`DegenerateTraceError`, or receives zero
    weights with ``on_degenerate="zero"``; the trace is zero only when the
    speech PSD itself is zero there, so any weight yields a zero output.
    """
    r = T.as_tensor(r)
    ratio = _loaded(phi_n, loading).inv() @ phi_s  # (F, C, C)
    tr = ratio.trace()
    bad = np.hypot(tr.re.data, tr.im.data) < TRACE_EPS
    if bad.any():
        if on_degenerate == "raise":
            raise DegenerateTraceError(
                f"MVDR trace below {TRACE_EPS} at frequencies {np.flatnonzero(bad)[:8].tolist()}"
            )
        keep = Tensor((~bad).astype(float))
        tr = ComplexTensor(T.where(bad, 1.0, tr.re), T.where(bad, 0.0, tr.im))
    else:
        keep = None
    numer = ComplexTensor(ratio.re @ r, ratio.im @ r)  # (F, C)
    h = numer / ComplexTensor(tr.re[:, None], tr.im[:, None])
    if keep is not None:
        h = h * keep[:, None]
    return h


def apply_beamformer(
    spec: ComplexSpectrogram, h: ComplexTensor, conjugate: bool = True
) -> ComplexSpectrogram:
    """Filter-and-sum: y_{t,f} = sum_c conj(h_{f,c}) s_{c,t,f} (unconjugated if asked)."""
    s = spec.coeffs
    C, _, F = s.shape
    if h.shape != (F, C):
        raise ContractViolation(f"weights shaped {h.shape}, expected {(F, C)}")
    w = h.conj() if conjugate else h
    wc = w.transpose(1, 0)[:, None, :]  # (C, 1, F)
    y = (s * wc).sum(axis=0, keepdims=True)
    return ComplexSpectrogram(y, spec.frame_shift, spec.fft_size, spec.window, spec.sample_rate)


class ReferenceEstimator(Module):
    """Time-averaged mask-BiLSTM outputs -> Dense-tanh-Dense score -> softmax over channels."""

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator):
        self.hidden = Dense(n_in, hidden, rng)
        self.score = Dense(hidden, 1, rng)

    def forward(self, outputs: Tensor) -> Tensor:
        pooled = outputs.mean(axis=1)  # (C, D)
        scores = self.score(T.tanh(self.hidden(pooled)))[:, 0]
        return T.softmax(scores, axis=0)


def estimate_reference(outputs: Tensor, net: ReferenceEstimator) -> Tensor:
    return net(outputs)


@dataclass
class EnhanceDiagnostics:
    speech_mask: Tensor
    noise_mask: Tensor
    phi_s: ComplexTensor
    phi_n: ComplexTensor
    reference: Tensor
    weights: ComplexTensor
    extras: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        h = self.weights.numpy()
        return {
            "speech_mask_mean": self.speech_mask.data.mean(axis=(0, 1)).tolist(),
            "noise_mask_mean": self.noise_mask.data.mean(axis=(0, 1)).tolist(),
            "reference": self.reference.data.tolist(),
            "weights_re": h.real.tolist(),
            "weights_im": h.imag.tolist(),
        }


class NeuralBeamformer(Module):
    """Speech/noise mask networks plus the reference-microphone estimator."""

    def __init__(self, n_freq: int, cfg: BeamformerConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.n_freq = n_freq
        self.speech = MaskNetwork(n_freq, cfg, rng)
        self.noise = MaskNetwork(n_freq, cfg, rng)
        self.reference = ReferenceEstimator(self.speech.blstm.out_dim, cfg.ref_hidden, rng)

    def reference_vector(self, outputs: Tensor, channels: int) -> Tensor:
        if not self.cfg.estimate_reference:
            r = np.zeros(channels)
            r[self.cfg.reference_channel] = 1.0
            return Tensor(r)
        r = self.reference(outputs)
        if not self.training:
            hard = np.zeros(channels)
            hard[int(np.argmax(r.data))] = 1.0
            return Tensor(hard)
        return r

    def forward(self, spec: ComplexSpectrogram):
        return self.enhance(spec)

    def enhance(self, spec: ComplexSpectrogram) -> tuple[ComplexSpectrogram, EnhanceDiagnostics]:
        feats = amplitude_features(spec)
        m_s, out_s = self.speech(feats)
        m_n, _ = self.noise(feats)
        phi_s = compute_psd(spec, average_mask(m_s))
        phi_n = compute_psd(spec, average_mask(m_n))
        r = self.reference_vector(out_s, spec.channels)
        h = mvdr_filter(phi_s, phi_n, r, self.cfg.loading, on_degenerate="zero")
        y = apply_beamformer(spec, h, conjugate=self.cfg.conjugate)
        return y, EnhanceDiagnostics(m_s, m_n, phi_s, phi_n, r, h)


def oracle_masks(speech: np.ndarray, noise: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Ideal ratio masks (T, F) from per-channel speech/noise STFTs (C, T, F)."""
    ps = np.mean(np.abs(speech) ** 2, axis=0)
    pn = np.mean(np.abs(noise) ** 2, axis=0)
    m_s = ps / np.maximum(ps + pn, 1e-20)
    return m_s, 1.0 - m_s

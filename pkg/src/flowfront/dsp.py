"""Waveform and time-frequency conversions: STFT, mel filterbank, log-mel, WAV I/O."""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import ComplexTensor, Tensor, clamp_min
from .autodiff import tensor as T
from .errors import ConfigurationError, ContractViolation, InputTooShortError

LOG_FLOOR = 1e-10
AMPLITUDE_EPS = 1e-12


@dataclass
class Waveform:
    """Per-channel samples, shape (C, N), values in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim == 1:
            samples = samples[None]
        if samples.ndim != 2:
            raise ContractViolation(f"waveform must be (channels, samples), got {samples.shape}")
        if self.sample_rate <= 0:
            raise ContractViolation("sample_rate must be positive")
        self.samples = samples

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]


@dataclass
class ComplexSpectrogram:
    """STFT coefficients indexed (channel, time, frequency)."""

    coeffs: ComplexTensor
    frame_shift: int
    fft_size: int
    window: int
    sample_rate: int = 16000

    @property
    def channels(self) -> int:
        return self.coeffs.shape[0]

    @property
    def frames(self) -> int:
        return self.coeffs.shape[1]

    @property
    def bins(self) -> int:
        return self.coeffs.shape[2]

    def channel(self, c: int) -> "ComplexSpectrogram":
        return ComplexSpectrogram(
            self.coeffs[c : c + 1], self.frame_shift, self.fft_size, self.window, self.sample_rate
        )


@dataclass(frozen=True)
class StftConfig:
    window_ms: float = 8.0
    shift_ms: float = 4.0
    fft_size: int = 128
    sample_rate: int = 16000

    @property
    def window(self) -> int:
        return int(round(self.window_ms * self.sample_rate / 1000))

    @property
    def shift(self) -> int:
        return int(round(self.shift_ms * self.sample_rate / 1000))


DESK_STFT = StftConfig()
PAPER_STFT = StftConfig(window_ms=25.0, shift_ms=10.0, fft_size=400)


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def frame_count(num_samples: int, window: int, shift: int) -> int:
    return 1 + (num_samples - window) // shift


def stft(
    wave_: Waveform,
    window_ms: float = DESK_STFT.window_ms,
    shift_ms: float = DESK_STFT.shift_ms,
    fft_size: int = DESK_STFT.fft_size,
) -> ComplexSpectrogram:
    sr = wave_.sample_rate
    win = int(round(window_ms * sr / 1000))
    hop = int(round(shift_ms * sr / 1000))
    if fft_size < win:
        raise ConfigurationError(f"fft_size {fft_size} shorter than window {win}")
    n = wave_.num_samples
    if n < win:
        raise InputTooShortError(f"{n} samples is shorter than one {win}-sample window")
    frames = np.lib.stride_tricks.sliding_window_view(wave_.samples, win, axis=1)[:, ::hop]
    spec = np.fft.rfft(frames * hann(win), n=fft_size, axis=-1)
    return ComplexSpectrogram(ComplexTensor.from_numpy(spec), hop, fft_size, win, sr)


def istft(spec: ComplexSpectrogram, length: int | None = None) -> Waveform:
    """Least-squares overlap-add resynthesis; used only for scoring enhanced output.

    The window-energy normaliser is floored at a tenth of its peak so samples
    covered only by a window tail are tapered rather than amplified; this
    matters once the spectrum has been filtered and is no longer consistent.
    """
    z = spec.coeffs.numpy()
    win = hann(spec.window)
    frames = np.fft.irfft(z, n=spec.fft_size, axis=-1)[..., : spec.window] * win
    C, nframes, _ = frames.shape
    n = (nframes - 1) * spec.frame_shift + spec.window
    out = np.zeros((C, n))
    norm = np.zeros(n)
    for t in range(nframes):
        s = t * spec.frame_shift
        out[:, s : s + spec.window] += frames[:, t]
        norm[s : s + spec.window] += win * win
    out /= np.maximum(norm, 0.1 * norm.max())
    if length is not None:
        out = np.pad(out, ((0, 0), (0, max(0, length - n))))[:, :length]
    return Waveform(out, spec.sample_rate)


def amplitude_features(spec: ComplexSpectrogram) -> Tensor:
    """|s| per (channel, time, frequency); eps keeps the gradient finite at 0."""
    z = spec.coeffs
    return T.sqrt(z.abs2() + AMPLITUDE_EPS)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(
    n_mels: int, fft_size: int, sample_rate: int, fmin: float = 0.0, fmax: float | None = None
) -> np.ndarray:
    """Triangular filters, shape (n_mels, fft_size // 2 + 1), peak 1, no area normalisation."""
    fmax = sample_rate / 2 if fmax is None else fmax
    if fmax > sample_rate / 2:
        raise ConfigurationError(f"fmax {fmax} exceeds Nyquist {sample_rate / 2}")
    freqs = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (center - lower)
    falling = (upper - freqs) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


@dataclass(frozen=True)
class MelConfig:
    n_mels: int = 16
    fmin: float = 0.0
    fmax: float | None = None

    def __post_init__(self):
        if self.n_mels % 2:
            raise ConfigurationError(f"n_mels must be even, got {self.n_mels}")


_FB_CACHE: dict[tuple, np.ndarray] = {}


def _filterbank(n_mels, fft_size, sr, fmin, fmax) -> np.ndarray:
    key = (n_mels, fft_size, sr, fmin, fmax)
    if key not in _FB_CACHE:
        _FB_CACHE[key] = mel_filterbank(n_mels, fft_size, sr, fmin, fmax)
    return _FB_CACHE[key]


def log_mel(
    spec: ComplexSpectrogram,
    channel: int | str = 0,
    n_mels: int = 16,
    fmin: float = 0.0,
    fmax: float | None = None,
) -> Tensor:
    """Log power-mel features of one channel (or the channel mean with ``"mono"``).

    Returns a (n_mels, T) tensor, differentiable with respect to the STFT
    coefficients.
    """
    if n_mels % 2:
        raise ConfigurationError(f"n_mels must be even, got {n_mels}")
    power = spec.coeffs.abs2()  # (C, T, F)
    if channel == "mono":
        power = power.mean(axis=0)
    else:
        power = power[int(channel)]
    fb = _filterbank(n_mels, spec.fft_size, spec.sample_rate, fmin, fmax)
    mel = power @ Tensor(fb.T)  # (T, n_mels)
    return T.log(clamp_min(mel, LOG_FLOOR)).T


def beamformed_log_mel(spec: ComplexSpectrogram, weights, n_mels: int = 16, **kw) -> Tensor:
    from .beamformer import apply_beamformer

    return log_mel(apply_beamformer(spec, weights), 0, n_mels, **kw)


# -- WAV I/O -------------------------------------------------------------

PCM_SCALE = 32768.0


class WavFormatError(ValueError):
    pass


def quantize(samples: np.ndarray) -> np.ndarray:
    """Snap samples onto the 16-bit PCM grid so WAV round trips are exact."""
    ints = np.clip(np.round(np.asarray(samples) * PCM_SCALE), -32768, 32767)
    return ints / PCM_SCALE


def write_wav(path, wave_: Waveform) -> None:
    ints = np.clip(np.round(wave_.samples * PCM_SCALE), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(wave_.channels)
        fh.setsampwidth(2)
        fh.setframerate(wave_.sample_rate)
        fh.writeframes(ints.T.tobytes())


def read_wav(path) -> Waveform:
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as fh:
            if fh.getcomptype() != "NONE":
                raise WavFormatError(f"{path}: compressed WAV ({fh.getcompname()}) not supported")
            if fh.getsampwidth() != 2:
                raise WavFormatError(
                    f"{path}: only 16-bit PCM supported, got {8 * fh.getsampwidth()}-bit"
                )
            channels = fh.getnchannels()
            sr = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except wave.Error as exc:
        raise WavFormatError(f"{path}: not a PCM WAV file ({exc})") from exc
    ints = np.frombuffer(raw, dtype="<i2").reshape(-1, channels).T
    return Waveform(ints / PCM_SCALE, sr)

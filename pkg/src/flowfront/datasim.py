"""Synthetic non-parallel corpus: tone-burst "speech" and multi-channel noisy mixtures.

Each character is rendered as a harmonic tone burst (a character-specific
fundamental plus two harmonics under a raised-cosine envelope).  Noisy
utterances place that signal and a directional noise source on a small
array with per-channel integer delays and channel gains.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import butter, lfilter

from .dsp import Waveform, quantize, read_wav, write_wav
from .errors import ContractViolation, FlowfrontError, VocabularyError

DEFAULT_CHARS = "abcdefgh "


@dataclass(frozen=True)
class SynthConfig:
    sample_rate: int = 16000
    char_ms: float = 100.0
    gap_ms: float = 20.0
    edge_ms: float = 20.0
    base_hz: float = 250.0
    spacing_hz: float = 150.0
    harmonic_gains: tuple = (1.0, 0.5, 0.3)
    rms: float = 0.05
    floor_db: float = -50.0
    f0_jitter: float = 0.01
    chars: str = DEFAULT_CHARS

    def fundamentals(self) -> dict[str, float]:
        """Fundamental per audible character; the space renders as silence."""
        audible = [c for c in self.chars if c != " "]
        return {c: self.base_hz + k * self.spacing_hz for k, c in enumerate(audible)}


@dataclass(frozen=True)
class MixConfig:
    channels: int = 2
    max_delay: int = 8
    gain_range: tuple = (0.7, 1.0)
    noise_type: str = "babble"
    snr_range: tuple = (0.0, 10.0)
    sensor_noise_db: float = -30.0

    def __post_init__(self):
        if self.channels < 2:
            raise ContractViolation("a noisy mixture needs at least 2 channels")
        if self.max_delay < 0:
            raise ContractViolation("delays must be nonnegative")
        if min(self.gain_range) <= 0:
            raise ContractViolation("gains must be positive")
        if self.noise_type not in ("white", "babble"):
            raise ContractViolation(f"unknown noise type {self.noise_type!r}")


def synth_clean(transcript: str, cfg: SynthConfig, rng: np.random.Generator) -> Waveform:
    """Render a transcript as concatenated tone bursts with silent gaps."""
    f0s = cfg.fundamentals()
    for ch in transcript:
        if ch != " " and ch not in f0s:
            raise VocabularyError(f"no tone mapping for character {ch!r}")
    sr = cfg.sample_rate
    n_char = int(round(cfg.char_ms * sr / 1000))
    n_gap = int(round(cfg.gap_ms * sr / 1000))
    n_edge = int(round(cfg.edge_ms * sr / 1000))
    t = np.arange(n_char) / sr
    env = np.sin(np.pi * (np.arange(n_char) + 0.5) / n_char) ** 2
    pieces = [np.zeros(n_edge)]
    for k, ch in enumerate(transcript):
        if k:
            pieces.append(np.zeros(n_gap))
        if ch == " ":
            pieces.append(np.zeros(n_char))
            continue
        f0 = f0s[ch] * (1.0 + cfg.f0_jitter * rng.uniform(-1, 1))
        burst = np.zeros(n_char)
        for m, gain in enumerate(cfg.harmonic_gains, start=1):
            burst += gain * np.sin(2 * np.pi * m * f0 * t + rng.uniform(0, 2 * np.pi))
        pieces.append(burst * env * rng.uniform(0.8, 1.2))
    pieces.append(np.zeros(n_edge))
    x = np.concatenate(pieces)
    active = np.sqrt(np.mean(x**2)) if np.any(x) else 1.0
    x = x * (cfg.rms / active)
    x = x + rng.standard_normal(x.size) * cfg.rms * 10 ** (cfg.floor_db / 20)
    return Waveform(quantize(np.clip(x, -1, 1))[None], sr)


def _lowpass(x: np.ndarray, cutoff: float, sr: int) -> np.ndarray:
    b, a = butter(2, cutoff, btype="low", fs=sr)
    return lfilter(b, a, x)


def make_noise(n: int, kind: str, sr: int, rng: np.random.Generator) -> np.ndarray:
    x = rng.standard_normal(n)
    if kind == "babble":
        x = _lowpass(x, 1000.0, sr)
    return x


def delay(x: np.ndarray, d: int) -> np.ndarray:
    if d == 0:
        return x.copy()
    return np.concatenate([np.zeros(d), x[:-d]])


@dataclass
class Mixture:
    wave: Waveform
    images: np.ndarray  # (C, N) clean speech image per channel
    noise: np.ndarray  # (C, N) noise image per channel
    snr_db: float
    delays: list = field(default_factory=list)
    gains: list = field(default_factory=list)


def power(x: np.ndarray) -> float:
    return float(np.mean(np.asarray(x) ** 2))


def mix_multichannel(
    clean: Waveform,
    cfg: MixConfig,
    rng: np.random.Generator,
    snr_db: float | None = None,
    noise_scale: float | None = None,
) -> Mixture:
    """Delay/attenuate the clean signal per channel and add a directional noise source.

    Each channel's gain applies to everything it records, so every channel
    sees the same SNR; the noise level is set on channel 0.
    """
    if clean.channels != 1:
        raise ContractViolation("clean input must be mono")
    s = clean.samples[0]
    n = s.size
    C = cfg.channels
    snr = float(rng.uniform(*cfg.snr_range)) if snr_db is None else float(snr_db)
    d_speech = rng.integers(0, cfg.max_delay + 1, size=C)
    d_noise = rng.integers(0, cfg.max_delay + 1, size=C)
    gains = rng.uniform(*cfg.gain_range, size=C)
    src = make_noise(n + cfg.max_delay, cfg.noise_type, clean.sample_rate, rng)
    images = np.stack([gains[c] * delay(s, int(d_speech[c])) for c in range(C)])
    raw_noise = np.stack([gains[c] * delay(src, int(d_noise[c]))[cfg.max_delay :] for c in range(C)])
    sensor = rng.standard_normal((C, n)) * 10 ** (cfg.sensor_noise_db / 20)
    raw_noise = raw_noise + sensor * np.sqrt(power(raw_noise[0]))
    if noise_scale is None:
        noise_scale = np.sqrt(power(images[0]) / (power(raw_noise[0]) * 10 ** (snr / 10)))
    noise = raw_noise * noise_scale
    mixed = images + noise
    peak = np.max(np.abs(mixed))
    if peak > 0.99:
        # rescale everything together so the SNR is unchanged
        images, noise, mixed = (v * (0.99 / peak) for v in (images, noise, mixed))
    return Mixture(
        Waveform(mixed, clean.sample_rate), images, noise, snr,
        d_speech.tolist(), gains.tolist(),
    )


def measured_snr(images: np.ndarray, noise: np.ndarray) -> np.ndarray:
    return 10 * np.log10(np.mean(images**2, axis=-1) / np.mean(noise**2, axis=-1))


# -- corpus ------------------------------------------------------------------

SPLITS = ("train-clean", "train-noisy", "dev", "eval")


@dataclass
class Utterance:
    utt_id: str
    transcript: str
    path: str
    channels: int
    split: str
    snr_db: float | None = None
    clean_ref: str | None = None

    def __post_init__(self):
        if not self.transcript:
            raise ContractViolation(f"{self.utt_id}: empty transcript")


@dataclass(frozen=True)
class CorpusCounts:
    train_clean: int = 200
    train_noisy: int = 200
    dev: int = 20
    eval: int = 40
    min_len: int = 3
    max_len: int = 8

    def for_split(self, split: str) -> int:
        return getattr(self, split.replace("-", "_"))


def random_transcript(rng: np.random.Generator, chars: str, lo: int, hi: int) -> str:
    """Random string over ``chars``; spaces never lead, trail or repeat."""
    audible = [c for c in chars if c != " "]
    has_space = " " in chars
    n = int(rng.integers(lo, hi + 1))
    out: list[str] = []
    for k in range(n):
        if has_space and 0 < k < n - 1 and out[-1] != " " and rng.random() < 0.15:
            out.append(" ")
        else:
            out.append(str(rng.choice(audible)))
    return "".join(out)


def utterance_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def _manifest_line(utt: Utterance) -> str:
    return json.dumps(asdict(utt), sort_keys=True)


def build_corpus(
    out_dir,
    counts: CorpusCounts = CorpusCounts(),
    mix: MixConfig = MixConfig(),
    synth: SynthConfig = SynthConfig(),
    seed: int = 0,
) -> Path:
    """Write WAVs and ``manifest.jsonl`` under ``out_dir``; returns the manifest path.

    Clean-train and noisy-train transcripts are disjoint.  Dev/eval noisy
    utterances carry a hidden clean reference (the channel-0 speech image).
    """
    out_dir = Path(out_dir)
    try:
        for split in SPLITS:
            (out_dir / split).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise FlowfrontError(f"cannot create corpus directory {out_dir}: {exc}") from exc

    text_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0FFEE]))
    used: dict[str, set[str]] = {s: set() for s in SPLITS}
    utts: list[Utterance] = []
    index = 0
    for split in SPLITS:
        for k in range(counts.for_split(split)):
            while True:
                text = random_transcript(text_rng, synth.chars, counts.min_len, counts.max_len)
                clash = (split == "train-clean" and text in used["train-noisy"]) or (
                    split == "train-noisy" and text in used["train-clean"]
                )
                if not clash:
                    break
            used[split].add(text)
            rng = utterance_rng(seed, index)
            index += 1
            utt_id = f"{split}-{k:05d}"
            clean = synth_clean(text, synth, rng)
            rel = f"{split}/{utt_id}.wav"
            if split == "train-clean":
                _write(out_dir / rel, clean)
                utts.append(Utterance(utt_id, text, rel, 1, split))
                continue
            m = mix_multichannel(clean, mix, rng)
            _write(out_dir / rel, Waveform(quantize(m.wave.samples), clean.sample_rate))
            ref = None
            if split in ("dev", "eval"):
                ref = f"{split}/{utt_id}.clean.wav"
                _write(out_dir / ref, Waveform(quantize(m.images[:1]), clean.sample_rate))
            utts.append(Utterance(utt_id, text, rel, mix.channels, split, round(m.snr_db, 4), ref))

    manifest = out_dir / "manifest.jsonl"
    manifest.write_text("".join(_manifest_line(u) + "\n" for u in utts), encoding="utf-8")
    return manifest


def _write(path: Path, wave_: Waveform) -> None:
    try:
        write_wav(path, wave_)
    except OSError as exc:
        raise FlowfrontError(f"cannot write {path}: {exc}") from exc


def read_manifest(path) -> list[Utterance]:
    path = Path(path)
    out = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(Utterance(**json.loads(line)))
    return out


def write_manifest(path, utts: Sequence[Utterance]) -> None:
    Path(path).write_text("".join(_manifest_line(u) + "\n" for u in utts), encoding="utf-8")


def load_audio(manifest_path, utt: Utterance, clean_ref: bool = False) -> Waveform:
    base = Path(manifest_path).parent
    rel = utt.clean_ref if clean_ref else utt.path
    if rel is None:
        raise ContractViolation(f"{utt.utt_id} has no clean reference")
    return read_wav(base / rel)

"""Miniature joint CTC-attention recognizer.

Encoder: two stride-2 (in time) 3x3 convolutions and a projected BiLSTM.
CTC head: one dense layer.  Decoder: unidirectional LSTM over teacher-forced
previous tokens with additive attention over the encoder states.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import BiLSTM, Conv2d, Dense, Embedding, LSTM, Module, Tensor
from .autodiff import tensor as T
from .autodiff.tensor import _sigmoid
from .ctc import ctc_loss as _ctc_loss
from .errors import ContractViolation, InputTooShortError, VocabularyError

BLANK, SOS, EOS = "<blank>", "<sos>", "<eos>"
SPACE_TOKEN = "<space>"


class Vocabulary:
    """Blank at id 0, then the characters, then start and end symbols."""

    def __init__(self, chars: Sequence[str]):
        chars = list(chars)
        if len(set(chars)) != len(chars):
            raise VocabularyError("duplicate characters in vocabulary")
        self.symbols = [BLANK] + chars + [SOS, EOS]
        self.index = {s: i for i, s in enumerate(self.symbols)}

    def __len__(self) -> int:
        return len(self.symbols)

    @property
    def blank(self) -> int:
        return 0

    @property
    def sos(self) -> int:
        return self.index[SOS]

    @property
    def eos(self) -> int:
        return self.index[EOS]

    @property
    def chars(self) -> list[str]:
        return self.symbols[1:-2]

    def encode(self, text: str) -> list[int]:
        try:
            return [self.index[ch] for ch in text]
        except KeyError as exc:
            raise VocabularyError(f"character {exc.args[0]!r} not in vocabulary") from None

    def decode(self, ids: Sequence[int]) -> str:
        return "".join(self.symbols[i] for i in ids if 0 < i < len(self.symbols) - 2)

    def save(self, path) -> None:
        lines = [SPACE_TOKEN if s == " " else s for s in self.symbols]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if len(lines) < 3 or lines[0] != BLANK or lines[-2:] != [SOS, EOS]:
            raise VocabularyError(f"{path}: expected {BLANK} first and {SOS}, {EOS} last")
        return cls([" " if s == SPACE_TOKEN else s for s in lines[1:-2]])


@dataclass(frozen=True)
class AsrConfig:
    conv_channels: tuple = (8, 8)
    layers: int = 2
    hidden: int = 64
    projection: int = 64
    embed_dim: int = 32
    decoder_hidden: int = 64
    attention_dim: int = 64
    ctc_weight: float = 0.5


PAPER_ASR = AsrConfig(
    conv_channels=(64, 64, 128, 128), layers=3, hidden=1024, projection=1024,
    embed_dim=256, decoder_hidden=1024, attention_dim=1024,
)


class Encoder(Module):
    def __init__(self, n_mels: int, cfg: AsrConfig, rng: np.random.Generator):
        chans = (1,) + tuple(cfg.conv_channels)
        # the first two convolutions stride time by 2 (4x subsampling); any extra keep it
        self.convs = [
            Conv2d(chans[i], chans[i + 1], 3, rng, stride=(1, 2) if i < 2 else (1, 1))
            for i in range(len(cfg.conv_channels))
        ]
        self.subsampling = 2 ** min(2, len(self.convs))
        self.blstm = BiLSTM(chans[-1] * n_mels, cfg.hidden, cfg.layers, rng, projection=cfg.projection)
        self.out_dim = self.blstm.out_dim

    def forward(self, mel) -> Tensor:
        mel = T.as_tensor(mel)
        if mel.shape[-1] < self.subsampling:
            raise InputTooShortError(
                f"{mel.shape[-1]} frames is shorter than the {self.subsampling}x subsampling"
            )
        x = mel[None]  # (1, F_mel, T)
        for conv in self.convs:
            x = T.relu(conv(x))
        C, F, Tp = x.shape
        seq = x.transpose(2, 0, 1).reshape(1, Tp, C * F)
        out, _, _ = self.blstm(seq)
        return out[0]


class AttentionDecoder(Module):
    def __init__(self, vocab_size: int, enc_dim: int, cfg: AsrConfig, rng: np.random.Generator):
        self.embed = Embedding(vocab_size, cfg.embed_dim, rng)
        self.lstm = LSTM(cfg.embed_dim, cfg.decoder_hidden, rng)
        self.att_key = Dense(enc_dim, cfg.attention_dim, rng)
        self.att_query = Dense(cfg.decoder_hidden, cfg.attention_dim, rng)
        self.att_score = Dense(cfg.attention_dim, 1, rng)
        self.out = Dense(cfg.decoder_hidden + enc_dim, vocab_size, rng)

    def attend(self, enc: Tensor, states: Tensor) -> tuple[Tensor, Tensor]:
        """states (N, H) -> (context (N, D), attention weights (N, T'))."""
        keys = self.att_key(enc)  # (T', A)
        query = self.att_query(states)  # (N, A)
        energy = self.att_score(T.tanh(keys[None] + query[:, None]))[..., 0]
        weights = T.softmax(energy, axis=-1)
        return weights @ enc, weights

    def forward(self, enc: Tensor, inputs: Sequence[int]) -> tuple[Tensor, Tensor]:
        """Teacher-forced logits (N, V) and attention weights for input ids."""
        emb = self.embed(inputs)[None]
        states = self.lstm(emb)[0]
        ctx, weights = self.attend(enc, states)
        return self.out(T.concat([states, ctx], axis=-1)), weights

    def step_state(self, token: int, h: np.ndarray, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """One recurrent step in plain numpy (inference only)."""
        H = h.size
        a = self.embed.table.data[token] @ self.lstm.w_ih.data + h @ self.lstm.w_hh.data + self.lstm.bias.data
        i, f, o = _sigmoid(a[:H]), _sigmoid(a[H : 2 * H]), _sigmoid(a[3 * H :])
        c = f * c + i * np.tanh(a[2 * H : 3 * H])
        return o * np.tanh(c), c


class AsrModel(Module):
    def __init__(self, vocab: Vocabulary, n_mels: int, cfg: AsrConfig, rng: np.random.Generator):
        self.vocab = vocab
        self.cfg = cfg
        self.encoder = Encoder(n_mels, cfg, rng)
        self.ctc_head = Dense(self.encoder.out_dim, len(vocab), rng)
        self.decoder = AttentionDecoder(len(vocab), self.encoder.out_dim, cfg, rng)

    def encode(self, mel) -> Tensor:
        return self.encoder(mel)

    def ctc_loss(self, enc: Tensor, label: Sequence[int]) -> Tensor:
        return _ctc_loss(self.ctc_head(enc), label, blank=self.vocab.blank)

    def attention_loss(self, enc: Tensor, label: Sequence[int]) -> Tensor:
        if len(label) == 0:
            raise ContractViolation("attention loss needs a non-empty label")
        inputs = [self.vocab.sos] + list(label)
        targets = np.asarray(list(label) + [self.vocab.eos])
        logits, _ = self.decoder(enc, inputs)
        logp = T.log_softmax(logits, axis=-1)
        return -logp[np.arange(targets.size), targets].mean()

    def loss(self, enc: Tensor, label: Sequence[int], ctc_weight: float | None = None) -> Tensor:
        lam = self.cfg.ctc_weight if ctc_weight is None else ctc_weight
        if not 0.0 <= lam <= 1.0:
            raise ContractViolation(f"CTC weight must lie in [0, 1], got {lam}")
        if lam == 1.0:
            return self.ctc_loss(enc, label)
        if lam == 0.0:
            return self.attention_loss(enc, label)
        return self.ctc_loss(enc, label) * lam + self.attention_loss(enc, label) * (1.0 - lam)

    def greedy_decode(self, enc: Tensor, return_attention: bool = False):
        """Argmax decoding until the end symbol or 2 * T' steps."""
        dec = self.decoder
        encd = enc.data
        keys = encd @ dec.att_key.weight.data + dec.att_key.bias.data
        H = dec.lstm.hidden
        h, c = np.zeros(H), np.zeros(H)
        token = self.vocab.sos
        out: list[int] = []
        attention = []
        for _ in range(2 * encd.shape[0]):
            h, c = dec.step_state(token, h, c)
            q = h @ dec.att_query.weight.data + dec.att_query.bias.data
            energy = np.tanh(keys + q) @ dec.att_score.weight.data[:, 0] + dec.att_score.bias.data[0]
            w = np.exp(energy - energy.max())
            w /= w.sum()
            attention.append(w)
            logits = np.concatenate([h, w @ encd]) @ dec.out.weight.data + dec.out.bias.data
            token = int(np.argmax(logits))
            if token == self.vocab.eos:
                break
            out.append(token)
        if return_attention:
            return out, np.array(attention)
        return out

    def transcribe(self, mel) -> str:
        return self.vocab.decode(self.greedy_decode(self.encode(mel)))


def asr_loss(model: AsrModel, enc: Tensor, label: Sequence[int], ctc_weight: float = 0.5) -> Tensor:
    return model.loss(enc, label, ctc_weight)

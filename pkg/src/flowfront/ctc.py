"""Connectionist temporal classification loss in log space."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .autodiff import Tensor
from .autodiff.tensor import as_tensor, make_result
from .errors import InfeasibleAlignmentError

NEG_INF = -1e30


def _log_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def min_frames(label: Sequence[int]) -> int:
    """Shortest input that admits an alignment: one frame per token plus a blank between repeats."""
    repeats = sum(1 for a, b in zip(label, label[1:]) if a == b)
    return len(label) + repeats


def _shift(v: np.ndarray, k: int) -> np.ndarray:
    """v moved k places right (k > 0) or left (k < 0), padded with the log-zero sentinel."""
    out = np.full_like(v, NEG_INF)
    if abs(k) >= v.size:
        return out
    if k > 0:
        out[k:] = v[:-k]
    elif k < 0:
        out[:k] = v[-k:]
    return out


def _lse3(a, b, c):
    m = np.maximum(np.maximum(a, b), c)
    return m + np.log(np.exp(a - m) + np.exp(b - m) + np.exp(c - m))


def ctc_alpha_beta(logp: np.ndarray, label: Sequence[int], blank: int = 0):
    """Forward/backward log-variables over the blank-extended label.

    Returns (alpha, beta, log_likelihood, extended).  ``beta`` includes the
    emission at its own frame, so alpha + beta double counts it once.
    """
    T_, _ = logp.shape
    ext = np.full(2 * len(label) + 1, blank, dtype=np.int64)
    ext[1::2] = label
    S = ext.size
    skip = np.zeros(S, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    emit = logp[:, ext]  # (T, S)

    alpha = np.full((T_, S), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, T_):
        prev = alpha[t - 1]
        one = _shift(prev, 1)
        two = np.where(skip, _shift(prev, 2), NEG_INF)
        alpha[t] = _lse3(prev, one, two) + emit[t]

    beta = np.full((T_, S), NEG_INF)
    beta[-1, -1] = emit[-1, -1]
    if S > 1:
        beta[-1, -2] = emit[-1, -2]
    skip_next = np.zeros(S, dtype=bool)
    skip_next[: max(S - 2, 0)] = skip[2:]
    for t in range(T_ - 2, -1, -1):
        nxt = beta[t + 1]
        one = _shift(nxt, -1)
        two = np.where(skip_next, _shift(nxt, -2), NEG_INF)
        beta[t] = _lse3(nxt, one, two) + emit[t]

    ll = alpha[-1, -1] if S == 1 else np.logaddexp(alpha[-1, -1], alpha[-1, -2])
    return alpha, beta, float(ll), ext


def ctc_loss(logits, label: Sequence[int], blank: int = 0) -> Tensor:
    """-log sum over alignments of prod_t p_t(path_t), for (T, V) unnormalised logits."""
    logits = as_tensor(logits)
    label = [int(v) for v in label]
    T_, V = logits.shape
    if T_ < min_frames(label):
        raise InfeasibleAlignmentError(
            f"{T_} frames cannot align a label needing {min_frames(label)}"
        )
    logp = _log_softmax(logits.data.astype(np.float64))
    alpha, beta, ll, ext = ctc_alpha_beta(logp, label, blank)

    def backward(g):
        gamma = alpha + beta - logp[:, ext] - ll  # log posterior per (t, s)
        occ = np.zeros((T_, V))
        np.add.at(occ.T, ext, np.exp(gamma).T)
        return (g * (np.exp(logp) - occ),)

    return make_result(np.asarray(-ll), (logits,), backward)

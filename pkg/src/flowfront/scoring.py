"""Error rates by edit distance and signal-to-distortion ratio."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractViolation

SDR_CAP_DB = 100.0


@dataclass(frozen=True)
class ErrorRateReport:
    substitutions: int
    deletions: int
    insertions: int
    ref_length: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def rate(self) -> float:
        return self.errors / self.ref_length


def edit_table(ref: Sequence, hyp: Sequence) -> np.ndarray:
    n, m = len(ref), len(hyp)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost = 0 if ref[i - 1] == hyp[j - 1] else 1
            d[i, j] = min(d[i - 1, j - 1] + cost, d[i - 1, j] + 1, d[i, j - 1] + 1)
    return d


def error_rate(ref: Sequence, hyp: Sequence) -> ErrorRateReport:
    """Unit-cost Levenshtein alignment of token sequences.

    Counts come from one optimal path; on ties the backtrace prefers a
    substitution (or match), then a deletion, then an insertion.
    """
    if len(ref) == 0:
        raise ContractViolation("reference must be non-empty")
    d = edit_table(ref, hyp)
    i, j = len(ref), len(hyp)
    sub = dele = ins = 0
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            cost = 0 if ref[i - 1] == hyp[j - 1] else 1
            if d[i, j] == d[i - 1, j - 1] + cost:
                sub += cost
                i, j = i - 1, j - 1
                continue
        if i > 0 and d[i, j] == d[i - 1, j] + 1:
            dele += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return ErrorRateReport(sub, dele, ins, len(ref))


def tokens(text: str, unit: str = "char") -> list[str]:
    if unit == "char":
        return list(text)
    if unit == "word":
        return text.split()
    raise ValueError(f"unknown token unit {unit!r}")


def corpus_error_rate(pairs: Sequence[tuple[str, str]], unit: str = "char") -> float:
    """Total errors over total reference tokens."""
    errs = total = 0
    for ref, hyp in pairs:
        rep = error_rate(tokens(ref, unit), tokens(hyp, unit))
        errs += rep.errors
        total += rep.ref_length
    return errs / total


def best_shift(reference: np.ndarray, estimate: np.ndarray, max_shift: int) -> int:
    """Integer lag in [-max_shift, max_shift] maximising the cross-correlation."""
    best, best_corr = 0, -np.inf
    for k in range(-max_shift, max_shift + 1):
        corr = float(np.dot(reference, _shifted(estimate, k)))
        if corr > best_corr:
            best, best_corr = k, corr
    return best


def _shifted(x: np.ndarray, k: int) -> np.ndarray:
    """x advanced by k samples (x[n + k]), zero filled."""
    out = np.zeros_like(x)
    if k >= 0:
        out[: x.size - k] = x[k:]
    else:
        out[-k:] = x[: x.size + k]
    return out


def sdr(reference, estimate, max_shift: int = 16) -> float:
    """10 log10(|s|^2 / |s - s_hat|^2) in dB after integer-lag alignment, capped at +100 dB.

    Plain signal-to-distortion ratio: no gain or filter invariance.
    """
    s = _mono(reference)
    e = _mono(estimate)
    if s.shape != e.shape:
        raise ContractViolation(f"length mismatch: {s.shape} vs {e.shape}")
    energy = float(np.dot(s, s))
    if energy == 0.0:
        raise ContractViolation("reference signal is all zeros")
    if max_shift:
        e = _shifted(e, best_shift(s, e, max_shift))
    resid = s - e
    err = float(np.dot(resid, resid))
    if err <= energy * 10 ** (-SDR_CAP_DB / 10):
        return SDR_CAP_DB
    return 10 * np.log10(energy / err)


def _mono(x) -> np.ndarray:
    samples = getattr(x, "samples", x)
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 2:
        if samples.shape[0] != 1:
            raise ContractViolation("SDR is defined on single-channel signals")
        samples = samples[0]
    return samples

"""CTC loss with exact gradient, greedy decoding and label error rate."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

BLANK_ID = 0


class InfeasibleLabelError(ValueError):
    """Too few frames to emit the label sequence."""


@dataclass
class CtcResult:
    nll: float
    grad_logits: np.ndarray  # (A, T), d nll / d raw logits


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Column-wise log-softmax of an (A, T) array."""
    shifted = logits - logits.max(axis=0, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=0, keepdims=True))


def min_frames(labels: Sequence[int]) -> int:
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def _shift(v: np.ndarray, k: int) -> np.ndarray:
    """v moved k places toward higher indices (negative k: lower), padded with -inf."""
    out = np.full_like(v, -np.inf)
    if k > 0:
        out[k:] = v[:-k]
    else:
        out[:k] = v[-k:]
    return out


def _logsumexp3(a, b, c):
    m = np.maximum(np.maximum(a, b), c)
    finite = np.isfinite(m)
    out = np.full_like(m, -np.inf)
    mf = m[finite]
    out[finite] = mf + np.log(np.exp(a[finite] - mf) + np.exp(b[finite] - mf) + np.exp(c[finite] - mf))
    return out


def ctc_loss(log_probs: np.ndarray, labels: Sequence[int]) -> CtcResult:
    """Negative log-likelihood of ``labels`` under frame posteriors ``log_probs`` (A, T).

    ``log_probs`` must be a log-softmax output; the returned gradient is taken
    with respect to the logits that produced it.
    """
    A, T = log_probs.shape
    labels = [int(l) for l in labels]
    if any(l == BLANK_ID for l in labels):
        raise ValueError("label sequence contains the blank id")
    if any(l < 0 or l >= A for l in labels):
        raise ValueError(f"label id outside [1, {A - 1}]")
    if T < min_frames(labels):
        raise InfeasibleLabelError(f"{T} frames cannot emit {len(labels)} labels (need {min_frames(labels)})")

    ext = np.zeros(2 * len(labels) + 1, dtype=np.intp)
    ext[1::2] = labels
    S = ext.size
    can_skip = np.zeros(S, dtype=bool)
    can_skip[2:] = (ext[2:] != BLANK_ID) & (ext[2:] != ext[:-2])
    emit = log_probs[ext, :]  # (S, T)
    neg_inf = np.full(S, -np.inf)

    alpha = np.full((T, S), -np.inf)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[1, 0]
    for t in range(1, T):
        prev = alpha[t - 1]
        one = _shift(prev, 1)
        two = np.where(can_skip, _shift(prev, 2), neg_inf)
        alpha[t] = _logsumexp3(prev, one, two) + emit[:, t]

    beta = np.full((T, S), -np.inf)
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    skip_from = np.zeros(S, dtype=bool)  # s -> s+2 allowed
    skip_from[:-2] = can_skip[2:]
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + emit[:, t + 1]
        one = _shift(nxt, -1)
        two = np.where(skip_from, _shift(nxt, -2), neg_inf)
        beta[t] = _logsumexp3(nxt, one, two)

    log_z = np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2]) if S > 1 else alpha[T - 1, 0]
    posterior = np.exp(alpha + beta - log_z)  # (T, S)
    occupancy = np.zeros((A, T))
    np.add.at(occupancy, ext, posterior.T)
    grad = np.exp(log_probs) - occupancy
    return CtcResult(float(max(-log_z, 0.0)), grad)


def greedy_decode(log_probs: np.ndarray) -> list[int]:
    """Best path: argmax per frame, merge repeats, drop blanks."""
    if log_probs.shape[1] == 0:
        return []
    best = np.argmax(log_probs, axis=0)
    out = []
    prev = None
    for b in best.tolist():
        if b != prev and b != BLANK_ID:
            out.append(b)
        prev = b
    return out


def edit_distance(a: Sequence, b: Sequence) -> int:
    """Levenshtein distance with unit costs."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def label_error_rate(pairs: Sequence[tuple[Sequence, Sequence]]) -> float:
    """Corpus-level LER in percent: total edits over total reference length."""
    edits = 0
    total = 0
    for ref, hyp in pairs:
        if len(ref) == 0:
            raise ValueError("empty reference sequence")
        edits += edit_distance(ref, hyp)
        total += len(ref)
    if total == 0:
        raise ValueError("no reference sequences")
    return 100.0 * edits / total

"""Linear-chain CRF: sequence scores, forward-algorithm partition, Viterbi, NLL.

Label indices ``0..K-1`` are real tags; the transition matrix is
``(K+2) x (K+2)`` with two virtual states, ``START = K`` and ``STOP = K+1``.
``transitions[i, j]`` scores moving from tag ``i`` to tag ``j``. Entries into
START and out of STOP are never read (parameters keep them at -inf).

Batched functions take emissions of shape ``(B, T, K)`` plus per-sentence
lengths; positions at or beyond a sentence's length are ignored.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionError, UsageError
from .labels import O, SEG_ALPHABETS, FullLabel, LabelSpace, Scheme
from .tensor import (
    Tensor,
    as_tensor,
    add,
    logsumexp,
    matmul,
    reshape,
    sub,
    take,
    where,
)

NEG_INF = -np.inf


def start_index(num_labels: int) -> int:
    return num_labels


def stop_index(num_labels: int) -> int:
    return num_labels + 1


def init_transitions(num_labels: int) -> np.ndarray:
    """Zero transition scores with START/STOP boundary entries masked to -inf."""
    trans = np.zeros((num_labels + 2, num_labels + 2))
    trans[:, start_index(num_labels)] = NEG_INF
    trans[stop_index(num_labels), :] = NEG_INF
    return trans


@dataclass
class CrfPotentials:
    emissions: Tensor  # (L, K)
    transitions: Tensor  # (K+2, K+2)
    mask: np.ndarray | None = None  # additive (K+2, K+2) constraint, 0 or -inf

    def __post_init__(self):
        self.emissions = as_tensor(self.emissions)
        self.transitions = as_tensor(self.transitions)
        if self.emissions.ndim != 2:
            raise DimensionError(f"emissions must be (L, K), got {self.emissions.shape}")
        k = self.emissions.shape[1]
        if self.transitions.shape != (k + 2, k + 2):
            raise DimensionError(
                f"transitions must be {(k + 2, k + 2)} for {k} labels, got {self.transitions.shape}"
            )

    @property
    def length(self) -> int:
        return self.emissions.shape[0]

    @property
    def num_labels(self) -> int:
        return self.emissions.shape[1]

    def batched(self):
        em = reshape(self.emissions, (1,) + self.emissions.shape)
        return em, self.transitions, np.array([self.length])


@dataclass
class CrfScore:
    log_numerator: float
    log_partition: float

    @property
    def probability(self) -> float:
        return float(np.exp(self.log_numerator - self.log_partition))


# -- batched, differentiable ------------------------------------------------
def _masked_transitions(transitions: Tensor, mask) -> Tensor:
    return transitions if mask is None else add(transitions, Tensor(mask))


def _split_transitions(transitions: Tensor, k: int):
    inner = take(transitions, (slice(0, k), slice(0, k)))
    start = take(transitions, (k, slice(0, k)))
    stop = take(transitions, (slice(0, k), k + 1))
    return inner, start, stop


def batch_log_partition(emissions, transitions, lengths, mask=None, allowed=None) -> Tensor:
    """Forward recursion in log space; returns ``(B,)`` log partitions.

    ``allowed`` (bool ``(B, T, K)``) restricts which tags each position may take;
    the result is then the log-sum over the constrained set of sequences.
    """
    emissions, transitions = as_tensor(emissions), as_tensor(transitions)
    lengths = np.asarray(lengths, dtype=np.intp)
    b, t_max, k = emissions.shape
    if np.any(lengths < 1) or np.any(lengths > t_max):
        raise DimensionError(f"lengths {lengths.tolist()} incompatible with {t_max} positions")
    if allowed is not None:
        emissions = where(allowed, emissions, Tensor(NEG_INF))
    inner, start, stop = _split_transitions(_masked_transitions(transitions, mask), k)
    alpha = add(take(emissions, (slice(None), 0, slice(None))), start)
    inner3 = reshape(inner, (1, k, k))
    for t in range(1, int(lengths.max())):
        emit = reshape(take(emissions, (slice(None), t, slice(None))), (b, 1, k))
        scores = add(add(reshape(alpha, (b, k, 1)), inner3), emit)
        step = logsumexp(scores, axis=1)
        live = (t < lengths)[:, None]
        alpha = step if live.all() else where(np.broadcast_to(live, (b, k)), step, alpha)
    return logsumexp(add(alpha, stop), axis=1)


def _gold_pairs(tags: np.ndarray, lengths: np.ndarray, k: int):
    prev, cur, owner = [], [], []
    for i, n in enumerate(lengths):
        y = tags[i, :n]
        path = np.concatenate([[k], y, [k + 1]])
        prev.append(path[:-1])
        cur.append(path[1:])
        owner.append(np.full(n + 1, i))
    return np.concatenate(prev), np.concatenate(cur), np.concatenate(owner)


def _segment_sum(values: Tensor, owner: np.ndarray, b: int) -> Tensor:
    assign = np.zeros((b, owner.size))
    assign[owner, np.arange(owner.size)] = 1.0
    return reshape(matmul(Tensor(assign), reshape(values, (owner.size, 1))), (b,))


def batch_score(emissions, transitions, tags, lengths, mask=None) -> Tensor:
    """Unnormalized scores ``(B,)`` of the given tag sequences."""
    emissions, transitions = as_tensor(emissions), as_tensor(transitions)
    tags = np.asarray(tags, dtype=np.intp)
    lengths = np.asarray(lengths, dtype=np.intp)
    b, t_max, k = emissions.shape
    if tags.shape[0] != b or tags.shape[1] < lengths.max():
        raise DimensionError(f"tags {tags.shape} do not cover emissions {emissions.shape}")
    valid = np.arange(t_max)[None, :] < lengths[:, None]
    bi, ti = np.nonzero(valid)
    y = tags[bi, ti]
    if np.any(y < 0) or np.any(y >= k):
        raise UsageError(f"gold label index out of range [0, {k})")
    emit = take(emissions, (bi, ti, y))
    prev, cur, owner = _gold_pairs(tags, lengths, k)
    trans = take(_masked_transitions(transitions, mask), (prev, cur))
    return add(_segment_sum(emit, bi, b), _segment_sum(trans, owner, b))


def batch_nll(emissions, transitions, tags, lengths, mask=None, allowed=None) -> Tensor:
    """Per-sentence ``log Z - score(gold)``, shape ``(B,)``.

    With ``allowed`` the numerator is itself a constrained partition (positions
    whose gold label is unknown are marginalized) and ``tags`` is ignored.
    """
    log_z = batch_log_partition(emissions, transitions, lengths, mask)
    if allowed is not None:
        return sub(log_z, batch_log_partition(emissions, transitions, lengths, mask, allowed))
    return sub(log_z, batch_score(emissions, transitions, tags, lengths, mask))


def batch_token_nll(emissions, tags, lengths) -> Tensor:
    """Per-sentence summed softmax cross-entropy (the CRF-free decoder's loss)."""
    emissions = as_tensor(emissions)
    tags = np.asarray(tags, dtype=np.intp)
    lengths = np.asarray(lengths, dtype=np.intp)
    b, t_max, k = emissions.shape
    valid = np.arange(t_max)[None, :] < lengths[:, None]
    bi, ti = np.nonzero(valid)
    rows = take(emissions, (bi, ti))
    lse = logsumexp(rows, axis=1)
    picked = take(rows, (np.arange(bi.size), tags[bi, ti]))
    return _segment_sum(sub(lse, picked), bi, b)


# -- single sentence ----------------------------------------------------------
def score_sequence(potentials: CrfPotentials, y: Sequence[int]) -> Tensor:
    y = np.asarray(y, dtype=np.intp)
    if y.shape != (potentials.length,):
        raise DimensionError(f"label sequence of length {y.size} for {potentials.length} positions")
    em, trans, lengths = potentials.batched()
    return reshape(batch_score(em, trans, y[None, :], lengths, potentials.mask), ())


def log_partition(potentials: CrfPotentials) -> Tensor:
    em, trans, lengths = potentials.batched()
    return reshape(batch_log_partition(em, trans, lengths, potentials.mask), ())


def nll(potentials: CrfPotentials, gold: Sequence[int]) -> Tensor:
    gold = np.asarray(gold, dtype=np.intp)
    if gold.shape != (potentials.length,) or np.any(gold < 0) or np.any(gold >= potentials.num_labels):
        raise UsageError(f"invalid gold sequence {gold.tolist()} for {potentials.num_labels} labels")
    return sub(log_partition(potentials), score_sequence(potentials, gold))


def crf_score(potentials: CrfPotentials, y: Sequence[int]) -> CrfScore:
    return CrfScore(score_sequence(potentials, y).item(), log_partition(potentials).item())


def _numpy_parts(emissions, transitions, mask=None):
    em = as_tensor(emissions).data
    tr = as_tensor(transitions).data
    if mask is not None:
        tr = tr + mask
    k = em.shape[-1]
    return em, tr[:k, :k], tr[k, :k], tr[:k, k + 1]


def viterbi_decode(emissions: np.ndarray, transitions: np.ndarray, mask=None) -> tuple:
    """Exact argmax path over an ``(L, K)`` emission matrix; ties go to the lower index."""
    em, inner, start, stop = _numpy_parts(emissions, transitions, mask)
    length = em.shape[0]
    delta = start + em[0]
    pointers = []
    for t in range(1, length):
        cand = delta[:, None] + inner
        best = np.argmax(cand, axis=0)
        pointers.append(best)
        delta = cand[best, np.arange(cand.shape[1])] + em[t]
    final = delta + stop
    last = int(np.argmax(final))
    path = [last]
    for best in reversed(pointers):
        path.append(int(best[path[-1]]))
    path.reverse()
    return path, float(final[last])


def viterbi(potentials: CrfPotentials) -> tuple:
    return viterbi_decode(potentials.emissions.data, potentials.transitions.data, potentials.mask)


# -- oracles --------------------------------------------------------------------
MAX_ENUMERATION = 10**6


def enumerate_scores(potentials: CrfPotentials) -> tuple:
    """All ``K**L`` sequences (lexicographic order) and their scores, by explicit summation."""
    em, inner, start, stop = _numpy_parts(potentials.emissions, potentials.transitions, potentials.mask)
    length, k = em.shape
    if k**length > MAX_ENUMERATION:
        raise UsageError(f"{k}**{length} sequences exceed the enumeration limit {MAX_ENUMERATION}")
    seqs = np.array(list(itertools.product(range(k), repeat=length)), dtype=np.intp)
    scores = em[np.arange(length), seqs].sum(axis=1) + start[seqs[:, 0]] + stop[seqs[:, -1]]
    if length > 1:
        scores = scores + inner[seqs[:, :-1], seqs[:, 1:]].sum(axis=1)
    return seqs, scores


def brute_force_log_partition(potentials: CrfPotentials) -> float:
    _, scores = enumerate_scores(potentials)
    return float(np.logaddexp.reduce(scores))


def brute_force_viterbi(potentials: CrfPotentials) -> tuple:
    seqs, scores = enumerate_scores(potentials)
    i = int(np.argmax(scores))
    return seqs[i].tolist(), float(scores[i])


def brute_force_marginals(potentials: CrfPotentials) -> np.ndarray:
    seqs, scores = enumerate_scores(potentials)
    probs = np.exp(scores - np.logaddexp.reduce(scores))
    length, k = potentials.emissions.shape
    out = np.zeros((length, k))
    for t in range(length):
        np.add.at(out[t], seqs[:, t], probs)
    return out


def forward_backward_marginals(potentials: CrfPotentials) -> np.ndarray:
    """Per-position tag marginals from explicit alpha/beta recursions."""
    em, inner, start, stop = _numpy_parts(potentials.emissions, potentials.transitions, potentials.mask)
    length, k = em.shape
    alpha = np.empty((length, k))
    beta = np.empty((length, k))
    alpha[0] = start + em[0]
    for t in range(1, length):
        alpha[t] = np.logaddexp.reduce(alpha[t - 1][:, None] + inner, axis=0) + em[t]
    beta[-1] = stop
    for t in range(length - 2, -1, -1):
        beta[t] = np.logaddexp.reduce(inner + (em[t + 1] + beta[t + 1])[None, :], axis=1)
    log_z = np.logaddexp.reduce(alpha[-1] + stop)
    return np.exp(alpha + beta - log_z)


# -- hard constraints -------------------------------------------------------------
def _allowed(prev: FullLabel | None, cur: FullLabel | None, scheme: Scheme) -> bool:
    """``None`` stands for START (as prev) or STOP (as cur)."""
    prev_open = prev is not None and prev.seg in ("B", "I")
    if scheme is Scheme.BIOES:
        if prev_open:
            return cur is not None and cur.seg in ("I", "E") and cur.typ == prev.typ
        return cur is None or cur.seg in (O, "B", "S")
    if cur is not None and cur.seg == "I":
        return prev_open and cur.typ == prev.typ
    return True


def transition_mask(labels: Sequence[FullLabel], scheme) -> np.ndarray:
    scheme = Scheme.parse(scheme)
    k = len(labels)
    mask = np.zeros((k + 2, k + 2))
    sources = list(labels) + [None]
    targets = list(labels) + [None]
    src_idx = list(range(k)) + [k]
    dst_idx = list(range(k)) + [k + 1]
    for i, prev in zip(src_idx, sources):
        for j, cur in zip(dst_idx, targets):
            if i == k and j == k + 1:
                mask[i, j] = NEG_INF
            elif not _allowed(prev, cur, scheme):
                mask[i, j] = NEG_INF
    mask[:, k] = NEG_INF
    mask[k + 1, :] = NEG_INF
    return mask


def constrained_mask(label_space: LabelSpace) -> np.ndarray:
    """Additive -inf mask forbidding scheme-invalid transitions over the full label space."""
    return transition_mask(label_space.full, label_space.scheme)


def seg_constrained_mask(scheme) -> np.ndarray:
    scheme = Scheme.parse(scheme)

    labels = [FullLabel(s, "x") if s != O else FullLabel(O, O) for s in SEG_ALPHABETS[scheme]]
    return transition_mask(labels, scheme)

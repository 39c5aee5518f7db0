"""Forward-backward inference for left-to-right HMMs with null emissions.

Because a state may emit nothing, time steps and observation positions
are not aligned, so the trellis carries two indices: ``alpha[t, i, j]`` is
the probability of being in state ``j`` after ``t`` transitions having
produced ``o_0..o_i``; ``beta[t, i, j]`` is the probability of producing
``o_{i+1}..o_m`` in exactly ``t`` more transitions starting from ``j``.

Null self-loops make the set of paths infinite, so every computation is
truncated at ``t_max`` transitions (default ``m + |Q|``, which is exact
for models without null self-loops). Arithmetic is done in linear space;
narratives are short.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import CorpusError, UnknownSymbolError, UnreachableError
from .hmm import END, NULL, START, CountTable, Hmm, Sequence, check_sequence

UNDERFLOW = 1e-300
LOG_FLOOR = math.log(UNDERFLOW)
UNREACHABLE = -math.inf

_CHUNK = 32
_RESCALE = 40  # steps between rescalings in closure_forward


def default_t_max(m: int, n_states: int, factor: float = 1.0) -> int:
    return max(m, int(math.ceil(factor * (m + n_states))))


def model_arrays(hmm: Hmm, symbols: Mapping[str, int]):
    """Dense transition matrix, emission matrix and null-emission vector.

    Emission column ``len(symbols)`` is all zeros; it is used for padding
    and for symbols the model never emits.
    """
    pos = hmm.position
    n = len(hmm.states)
    T = np.zeros((n, n))
    for q, row in hmm.trans.items():
        i = pos[q]
        for r, p in row.items():
            T[i, pos[r]] = p
    E = np.zeros((n, len(symbols) + 1))
    lam = np.zeros(n)
    for q, row in hmm.emit.items():
        i = pos[q]
        for o, p in row.items():
            if o == NULL:
                lam[i] = p
            else:
                k = symbols.get(o)
                if k is not None:
                    E[i, k] = p
    return T, E, lam


@dataclass
class Batch:
    """A padded batch of observation sequences encoded as symbol indices."""

    obs: np.ndarray  # (S, M) int; padding and unknown symbols -> len(symbols)
    m: np.ndarray  # (S,) index of the final ">" in each row
    t_max: np.ndarray  # (S,)
    symbols: tuple[str, ...]

    @classmethod
    def encode(cls, seqs: list[Sequence], symbols: Mapping[str, int], t_max) -> "Batch":
        pad = len(symbols)
        width = max(len(s) for s in seqs)
        obs = np.full((len(seqs), width), pad, dtype=np.intp)
        for k, s in enumerate(seqs):
            obs[k, :len(s)] = [symbols.get(o, pad) for o in s]
        m = np.array([len(s) - 1 for s in seqs], dtype=np.intp)
        t_max = np.broadcast_to(np.asarray(t_max, dtype=np.intp), m.shape).copy()
        names = tuple(sorted(symbols, key=symbols.__getitem__))
        return cls(obs, m, t_max, names)

    def __len__(self):
        return len(self.m)

    def subset(self, mask: np.ndarray) -> "Batch":
        obs, m, t_max = self.obs[mask], self.m[mask], self.t_max[mask]
        width = int(m.max()) + 1 if len(m) else 1
        return Batch(obs[:, :width], m, t_max, self.symbols)


def _emission_obs(E: np.ndarray, batch: Batch) -> np.ndarray:
    # Eo[s, i, j] = Omega(o_{s,i} | j)
    return np.moveaxis(E[:, batch.obs], 0, -1)


def forward_pass(T, E, lam, batch: Batch, keep: bool = True):
    """Run the forward recursion on a batch.

    Returns ``(alpha, z, touched)``: alpha has shape (t+1, S, M, Q) when
    ``keep`` (else None), ``z`` is the per-sequence probability and
    ``touched[s, j]`` records whether state ``j`` ever held forward mass.
    """
    Eo = _emission_obs(E, batch)
    S, M, Q = Eo.shape
    tg = int(batch.t_max.max())
    rows = np.arange(S)
    cur = np.zeros((S, M, Q))
    cur[:, 0, 0] = 1.0
    alpha = np.zeros((tg + 1, S, M, Q)) if keep else None
    if keep:
        alpha[0] = cur
    touched = cur.any(axis=1)
    z = np.zeros(S)
    for t in range(1, tg + 1):
        A = cur @ T
        nxt = A * lam
        nxt[:, 1:] += A[:, :-1] * Eo[:, 1:]
        dead = batch.t_max < t
        if dead.any():
            nxt[dead] = 0.0
        z += nxt[rows, batch.m].sum(axis=-1)
        if keep:
            alpha[t] = nxt
        touched |= nxt.any(axis=1)
        cur = nxt
        if not cur.any():
            if keep:
                alpha = alpha[: t + 1]
            break
    return alpha, z, touched


def closure_forward(T, E, lam, batch: Batch):
    """Forward recursion over observation indices only, with runs of null
    emissions summed in closed form through (I - T diag(lam))^-1.

    This is the untruncated sum over paths; it agrees with the trellis
    whenever no state has a null-emitting self-loop, since then no path is
    longer than the trellis bound. Returns ``(loglik, reached)`` where
    ``reached[s, j]`` says whether state ``j`` ever received mass (and so
    had its emission row consulted).
    """
    Q = T.shape[0]
    K = np.linalg.solve(np.eye(Q) - T * lam[None, :], T)
    Et = E.T[batch.obs]  # (S, M, Q)
    S, M = batch.obs.shape
    a = np.zeros((S, Q))
    a[:, 0] = 1.0
    arrived = a.copy()
    final = np.zeros((S, M))
    logz = np.zeros(S)
    for i in range(1, M):
        arr = a @ K
        arrived += arr
        a = arr * Et[:, i]
        if i % _RESCALE == 0:
            scale = a.sum(axis=1)
            ok = scale > 0
            a[ok] /= scale[ok, None]
            logz[ok] += np.log(scale[ok])
        final[:, i] = a[:, Q - 1]
    z = final[np.arange(S), batch.m]
    with np.errstate(divide="ignore"):
        out = np.log(z) + logz
    return out, arrived > 0


def backward_pass(T, E, lam, batch: Batch, steps: int | None = None):
    """Backward recursion; ``beta[t]`` is mass reaching the end in exactly t steps."""
    Eo = _emission_obs(E, batch)
    S, M, Q = Eo.shape
    tg = int(batch.t_max.max()) if steps is None else steps
    cur = np.zeros((S, M, Q))
    cur[np.arange(S), batch.m, Q - 1] = 1.0
    beta = np.zeros((tg + 1, S, M, Q))
    beta[0] = cur
    TT = T.T
    for t in range(1, tg + 1):
        nxt = (cur * lam) @ TT
        nxt[:, :-1] += (Eo[:, 1:] * cur[:, 1:]) @ TT
        cur = nxt
        beta[t] = cur
        if not cur.any():
            break
    return beta


def _remaining(Bc: np.ndarray, t_max: np.ndarray, shift: int, steps: int) -> np.ndarray:
    """R[t, s] = Bc[t_max[s] - t - shift, s], zero where the index is negative."""
    tt = np.arange(steps)[:, None]
    idx = t_max[None, :] - tt - shift
    ok = idx >= 0
    idx = np.clip(idx, 0, Bc.shape[0] - 1)
    out = Bc[idx, np.arange(Bc.shape[1])[None, :]]
    out[~ok] = 0.0
    return out


@dataclass
class _BatchPosteriors:
    z: np.ndarray  # (S,)
    gamma: np.ndarray  # (t, S, M, Q), unnormalized
    trans_null: np.ndarray  # (S, Q, Q) sum_t sum_i alpha * remaining beta, before T*lam
    trans_obs: np.ndarray  # (S, M-1, Q, Q) per observation position i (emits o_{i+1})


def _batch_posteriors(T, E, lam, batch: Batch) -> _BatchPosteriors:
    alpha, z, _ = forward_pass(T, E, lam, batch)
    steps = alpha.shape[0]
    beta = backward_pass(T, E, lam, batch)
    Bc = np.cumsum(beta, axis=0)
    G = _remaining(Bc, batch.t_max, 0, steps)
    H = _remaining(Bc, batch.t_max, 1, steps)
    gamma = alpha * G
    # contract over time: (S, M, Q, t) @ (S, M, t, Q)
    a = np.moveaxis(alpha, 0, -1)
    h = np.moveaxis(H, 0, -2)
    trans_null = (a @ h).sum(axis=1)
    trans_obs = a[:, :-1] @ h[:, 1:]
    return _BatchPosteriors(z, gamma, trans_null, trans_obs)


def _symbol_table(hmm: Hmm, seqs: Iterable[Sequence]) -> dict[str, int]:
    syms = set(hmm.alphabet)
    for s in seqs:
        syms.update(s)
    return {o: k for k, o in enumerate(sorted(syms))}


def _check_obs(hmm: Hmm, obs: Sequence) -> None:
    check_sequence(tuple(obs))
    alphabet = hmm.alphabet
    for i, o in enumerate(obs):
        if o not in alphabet:
            raise UnknownSymbolError(o, i)


def _single(hmm: Hmm, obs: Sequence, t_max: int | None, strict: bool = True):
    obs = tuple(obs)
    if strict:
        _check_obs(hmm, obs)
    else:
        check_sequence(obs)
    m = len(obs) - 1
    if t_max is None:
        t_max = default_t_max(m, len(hmm.states))
    if t_max < m:
        raise ValueError(f"t_max={t_max} is smaller than the observation count {m}")
    symbols = _symbol_table(hmm, [obs])
    T, E, lam = model_arrays(hmm, symbols)
    return obs, m, t_max, T, E, lam, Batch.encode([obs], symbols, t_max)


def _pad_time(arr: np.ndarray, t_max: int) -> np.ndarray:
    if arr.shape[0] == t_max + 1:
        return arr
    out = np.zeros((t_max + 1,) + arr.shape[1:])
    out[: arr.shape[0]] = arr
    return out


def forward(hmm: Hmm, obs: Sequence, t_max: int | None = None) -> np.ndarray:
    """Forward table of shape (t_max+1, m+1, |Q|), states in model order."""
    obs, m, t_max, T, E, lam, batch = _single(hmm, obs, t_max)
    alpha, _, _ = forward_pass(T, E, lam, batch)
    return _pad_time(alpha[:, 0], t_max)


def backward(hmm: Hmm, obs: Sequence, t_max: int | None = None) -> np.ndarray:
    obs, m, t_max, T, E, lam, batch = _single(hmm, obs, t_max)
    return _pad_time(backward_pass(T, E, lam, batch)[:, 0], t_max)


@dataclass
class Trellis:
    alpha: np.ndarray
    beta: np.ndarray
    t_max: int
    m: int
    states: tuple[int, ...]

    def _j(self, q):
        return self.states.index(q)

    def a(self, q: int, t: int, i: int) -> float:
        return float(self.alpha[t, i, self._j(q)])

    def b(self, q: int, t: int, i: int) -> float:
        return float(self.beta[t, i, self._j(q)])

    def dump(self) -> str:
        """Nonzero entries as tab-separated ``table state t i value`` lines."""
        lines = []
        for name, arr in (("alpha", self.alpha), ("beta", self.beta)):
            for t, i, j in zip(*np.nonzero(arr)):
                lines.append(f"{name}\t{self.states[j]}\t{t}\t{i}\t{arr[t, i, j]:.17g}")
        return "\n".join(lines)


def trellis(hmm: Hmm, obs: Sequence, t_max: int | None = None) -> Trellis:
    obs, m, t_max, T, E, lam, batch = _single(hmm, obs, t_max)
    alpha, _, _ = forward_pass(T, E, lam, batch)
    beta = backward_pass(T, E, lam, batch)
    return Trellis(_pad_time(alpha[:, 0], t_max), _pad_time(beta[:, 0], t_max), t_max, m, hmm.states)


@dataclass
class Posteriors:
    """Posterior quantities for one sequence.

    ``gamma[t, i, j]`` is P(state j at time t having emitted o_0..o_i | obs);
    ``delta[(q, r, o)]`` is the expected number of q->r transitions in
    which r emits ``o``, summed over time.
    """

    z: float
    gamma: np.ndarray
    delta: dict[tuple[int, int, str], float]
    states: tuple[int, ...]

    def visits(self) -> dict[int, float]:
        tot = self.gamma.sum(axis=(0, 1))
        return {q: float(tot[j]) for j, q in enumerate(self.states) if tot[j] > 0}


def posteriors(hmm: Hmm, obs: Sequence, t_max: int | None = None) -> Posteriors:
    obs, m, t_max, T, E, lam, batch = _single(hmm, obs, t_max, strict=False)
    post = _batch_posteriors(T, E, lam, batch)
    z = float(post.z[0])
    if z < UNDERFLOW:
        raise UnreachableError("sequence unreachable under model")
    counts = _accumulate(hmm, T, E, lam, batch, post, np.ones(1))
    gamma = _pad_time(post.gamma[:, 0] / z, t_max)
    return Posteriors(z, gamma, dict(counts.emit), hmm.states)


def _accumulate(hmm: Hmm, T, E, lam, batch: Batch, post: _BatchPosteriors, weights) -> CountTable:
    """Sum weighted posteriors of a batch into a count table."""
    states = hmm.states
    z = post.z
    ok = z >= UNDERFLOW
    w = np.where(ok, weights / np.where(ok, z, 1.0), 0.0)
    visits = np.einsum("s,tsij->j", w, post.gamma)
    null_acc = np.einsum("s,sjk->jk", w, post.trans_null) * T * lam[None, :]
    n_pos = post.trans_obs.shape[1]
    sym_acc = np.zeros((len(batch.symbols) + 1,) + T.shape)
    if n_pos:
        np.add.at(sym_acc, batch.obs[:, 1:n_pos + 1], post.trans_obs * w[:, None, None, None])
    sym_acc *= T[None, :, :]
    sym_acc *= E.T[:, None, :]

    counts = CountTable()
    for j in np.nonzero(visits)[0]:
        counts.visits[states[j]] = float(visits[j])

    def add(acc, symbol):
        for j, k in zip(*np.nonzero(acc)):
            c = float(acc[j, k])
            key = (states[j], states[k])
            counts.emit[key + (symbol,)] = c
            counts.trans[key] = counts.trans.get(key, 0.0) + c

    add(null_acc, NULL)
    for v, symbol in enumerate(batch.symbols):
        if sym_acc[v].any():
            add(sym_acc[v], symbol)
    return counts


def _distinct(sequences) -> tuple[list[Sequence], np.ndarray]:
    tally = Counter(tuple(s) for s in sequences)
    seqs = sorted(tally, key=lambda s: (len(s), s))
    return seqs, np.array([tally[s] for s in seqs], dtype=float)


@dataclass
class EStep:
    counts: CountTable
    loglik: float  # over reachable sequences, with multiplicity
    skipped: int  # unreachable sequences (with multiplicity)


def e_step(hmm: Hmm, sequences: Iterable[Sequence], t_max_factor: float = 1.0) -> EStep:
    """Expected counts over a collection of sequences.

    Identical sequences are evaluated once and weighted. Sequences with
    zero probability are skipped and counted in ``skipped``.
    """
    seqs, weights = _distinct(sequences)
    counts = CountTable()
    if not seqs:
        return EStep(counts, 0.0, 0)
    for k, s in enumerate(seqs):
        check_sequence(s, k)
    symbols = _symbol_table(hmm, seqs)
    T, E, lam = model_arrays(hmm, symbols)
    n = len(hmm.states)
    loglik, skipped = 0.0, 0
    for lo in range(0, len(seqs), _CHUNK):
        chunk = seqs[lo:lo + _CHUNK]
        w = weights[lo:lo + _CHUNK]
        t_max = [default_t_max(len(s) - 1, n, t_max_factor) for s in chunk]
        batch = Batch.encode(chunk, symbols, t_max)
        post = _batch_posteriors(T, E, lam, batch)
        ok = post.z >= UNDERFLOW
        skipped += int(w[~ok].sum())
        loglik += float((w[ok] * np.log(post.z[ok])).sum())
        counts = counts + _accumulate(hmm, T, E, lam, batch, post, w)
    return EStep(counts, loglik, skipped)


def expected_counts(hmm: Hmm, corpus: Iterable[Sequence], t_max_factor: float = 1.0) -> CountTable:
    return e_step(hmm, corpus, t_max_factor).counts


def sequence_likelihoods(hmm: Hmm, sequences: list[Sequence], t_max_factor: float = 1.0) -> np.ndarray:
    """Log-probabilities of many sequences; unreachable ones are ``-inf``."""
    sequences = [tuple(s) for s in sequences]
    if not sequences:
        return np.zeros(0)
    symbols = _symbol_table(hmm, sequences)
    T, E, lam = model_arrays(hmm, symbols)
    n = len(hmm.states)
    out = np.empty(len(sequences))
    for lo in range(0, len(sequences), 4 * _CHUNK):
        chunk = sequences[lo:lo + 4 * _CHUNK]
        t_max = [default_t_max(len(s) - 1, n, t_max_factor) for s in chunk]
        _, z, _ = forward_pass(T, E, lam, Batch.encode(chunk, symbols, t_max), keep=False)
        with np.errstate(divide="ignore"):
            out[lo:lo + len(chunk)] = np.where(z >= UNDERFLOW, np.log(np.maximum(z, UNDERFLOW)), UNREACHABLE)
    return out


def sequence_likelihood(hmm: Hmm, obs: Sequence, t_max: int | None = None) -> float:
    """log P(obs), or :data:`UNREACHABLE` (``-inf``) when it cannot be produced."""
    obs = tuple(obs)
    check_sequence(obs)
    m = len(obs) - 1
    if t_max is None:
        t_max = default_t_max(m, len(hmm.states))
    symbols = _symbol_table(hmm, [obs])
    T, E, lam = model_arrays(hmm, symbols)
    _, z, _ = forward_pass(T, E, lam, Batch.encode([obs], symbols, t_max), keep=False)
    return math.log(z[0]) if z[0] >= UNDERFLOW else UNREACHABLE


def format_loglik(x: float) -> str:
    return "unreachable" if x == UNREACHABLE else format(x, ".17g")


def fill_gap(observed: Sequence, gap: int, symbol: str) -> Sequence:
    return tuple(observed[:gap]) + (symbol,) + tuple(observed[gap:])


def predict_missing(hmm: Hmm, observed: Sequence, gap: int, vocabulary: Iterable[str],
                    frequencies: Mapping[str, int] | None = None,
                    t_max_factor: float = 1.0) -> list[tuple[str, float]]:
    """Rank candidate fillers for the event missing at index ``gap``.

    Every symbol is inserted at ``gap`` and the completed sequence scored;
    results are sorted by log-likelihood, then training frequency, then
    symbol. Unreachable completions score ``-inf``.
    """
    observed = tuple(observed)
    check_sequence(observed)
    if not 1 <= gap <= len(observed) - 1:
        raise ValueError(f"gap position {gap} must lie strictly inside the sentinels")
    vocab = sorted(set(vocabulary) - {START, END, NULL})
    if not vocab:
        raise CorpusError("empty vocabulary")
    freq = frequencies or {}
    scores = sequence_likelihoods(hmm, [fill_gap(observed, gap, v) for v in vocab], t_max_factor)
    ranked = sorted(zip(vocab, scores.tolist()), key=lambda vs: (-vs[1], -freq.get(vs[0], 0), vs[0]))
    return ranked

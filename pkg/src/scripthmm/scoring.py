"""Bayesian structure score: log P(M) + log P(D|M).

The prior penalizes states, transitions and violations of mined ordering
constraints of the form "X never follows Y". The likelihood is either
exact (forward algorithm over the corpus) or approximated from expected
counts, in which case it can be updated row by row after a local change.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from statistics import NormalDist
from typing import Iterable

import numpy as np

from .errors import ModelFormatError
from .hmm import END, NULL, START, CountTable, Hmm, Sequence
from .inference import LOG_FLOOR, Batch, closure_forward, model_arrays

_NORMAL = NormalDist()


@dataclass(frozen=True)
class ScoreConfig:
    kappa_q: float = 1.0
    kappa_t: float = 1.0
    kappa_c: float = 1.0
    p0: float = 0.05
    significance: float = 0.01
    mode: str = "exact"
    eventual: bool = False  # "follows" means anywhere later rather than next
    min_opportunities: int = 20

    def __post_init__(self):
        if min(self.kappa_q, self.kappa_t, self.kappa_c) < 0:
            raise ValueError("kappa weights must be >= 0")
        if not 0 < self.significance < 1:
            raise ValueError("significance must be in (0, 1)")
        if not 0 < self.p0 < 1:
            raise ValueError("p0 must be in (0, 1)")
        if self.mode not in ("exact", "approx"):
            raise ValueError(f"unknown scoring mode {self.mode!r}")


# -- ordering constraints ---------------------------------------------------

@dataclass
class ConstraintSet:
    """Rules ``(x, y)`` meaning "x never follows y", with their evidence
    (opportunities n, violations v)."""

    rules: dict[tuple[str, str], tuple[int, int]] = field(default_factory=dict)

    def __len__(self):
        return len(self.rules)

    @property
    def symbols(self) -> frozenset[str]:
        return frozenset(s for rule in self.rules for s in rule)

    def __contains__(self, rule):
        return rule in self.rules

    def __iter__(self):
        return iter(sorted(self.rules))

    def dumps(self) -> str:
        return "".join(f"{x} NEVER_FOLLOWS {y} {n} {v}\n" for (x, y), (n, v) in sorted(self.rules.items()))

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text: str) -> "ConstraintSet":
        rules = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tok = line.split()
            if len(tok) != 5 or tok[1] != "NEVER_FOLLOWS":
                raise ModelFormatError("expected 'X NEVER_FOLLOWS Y n v'", lineno)
            try:
                n, v = int(tok[3]), int(tok[4])
            except ValueError:
                raise ModelFormatError("n and v must be integers", lineno) from None
            x, y = tok[0], tok[2]
            if x == y or {x, y} & {START, END, NULL} or not n >= v >= 0:
                raise ModelFormatError(f"invalid rule {x} NEVER_FOLLOWS {y} {n} {v}", lineno)
            rules[(x, y)] = (n, v)
        return cls(rules)

    @classmethod
    def load(cls, path) -> "ConstraintSet":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ModelFormatError(f"cannot read {path}: {exc}") from exc
        return cls.loads(text)


def z_test(n: int, v: int, p0: float) -> tuple[float, float]:
    """One-sided test that the violation rate v/n is below p0.

    Returns the z statistic and its lower-tail p-value.
    """
    z = (v / n - p0) / math.sqrt(p0 * (1 - p0) / n)
    return z, _NORMAL.cdf(z)


def mine_constraints(corpus: Iterable[Sequence], p0: float = 0.05, significance: float = 0.01,
                     eventual: bool = False, min_opportunities: int = 20) -> ConstraintSet:
    """Find rules "x never follows y" whose violation rate is significantly below p0.

    An opportunity is an occurrence of y with at least one later event in
    the same narrative; it is a violation when x comes next (or anywhere
    later, with ``eventual``).
    """
    opportunities: Counter = Counter()
    violations: Counter = Counter()
    vocab = set()
    for seq in corpus:
        body = seq[1:-1]
        vocab.update(body)
        for k, y in enumerate(body[:-1]):
            opportunities[y] += 1
            followers = set(body[k + 1:]) if eventual else {body[k + 1]}
            for x in followers:
                violations[(x, y)] += 1
    if not opportunities:
        return ConstraintSet()
    rules = {}
    for y in sorted(opportunities):
        n = opportunities[y]
        if n < max(min_opportunities, 1):
            continue
        for x in sorted(vocab):
            if x == y:
                continue
            v = violations[(x, y)]
            if v / n >= p0:
                continue
            _, p = z_test(n, v, p0)
            if p < significance:
                rules[(x, y)] = (n, v)
    return ConstraintSet(rules)


def _null_reach(hmm: Hmm) -> dict[int, int]:
    """Bitmask of states reachable from q by one or more transitions whose
    intermediate states can all emit null."""
    pos = hmm.position
    emit = hmm.emit
    reach: dict[int, int] = {}
    for q in reversed(hmm.states):
        mask = 0
        for r in hmm.trans.get(q, ()):
            mask |= 1 << pos[r]
            if r != q and emit[r].get(NULL, 0.0) > 0:
                mask |= reach[r]
        reach[q] = mask
    return reach


def count_model_violations(hmm: Hmm, constraints: ConstraintSet) -> int:
    """Number of rules the model can violate, i.e. rules (x, y) for which
    x can be output immediately after y."""
    if not len(constraints):
        return 0
    symbols = constraints.symbols
    states = hmm.states
    emitters: dict[str, int] = {}
    for k, q in enumerate(states):
        for o, p in hmm.emit[q].items():
            if p > 0 and o in symbols:
                emitters[o] = emitters.get(o, 0) | (1 << k)
    reach = _null_reach(hmm)
    after: dict[str, int] = {}
    n = 0
    for x, y in constraints.rules:
        ex = emitters.get(x)
        if not ex:
            continue
        if y not in after:
            mask, m = 0, emitters.get(y, 0)
            while m:
                low = m & -m
                mask |= reach[states[low.bit_length() - 1]]
                m ^= low
            after[y] = mask
        if after[y] & ex:
            n += 1
    return n


def log_prior(hmm: Hmm, constraints: ConstraintSet | None = None, config: ScoreConfig = ScoreConfig()) -> float:
    """-(kq |Q| + kt |T| + kc |C|); the normalizer is dropped."""
    n_viol = count_model_violations(hmm, constraints) if constraints and config.kappa_c else 0
    return -(config.kappa_q * len(hmm.states) + config.kappa_t * hmm.n_transitions
             + config.kappa_c * n_viol)


# -- exact likelihood ---------------------------------------------------------

def log_likelihood_exact(hmm: Hmm, corpus: Iterable[Sequence]) -> float:
    """Sum of log P(o) over the corpus; unreachable narratives add the floor."""
    corpus = list(corpus)
    if not corpus:
        return 0.0
    return ExactLikelihood(corpus).evaluate(hmm).total


@dataclass
class LikelihoodCache:
    loglik: np.ndarray  # per distinct sequence
    touched: dict[int, np.ndarray]  # state -> which sequences reach it in the forward pass
    total: float


class ExactLikelihood:
    """Forward-algorithm likelihood of a fixed set of sequences.

    Null runs are summed in closed form, so the value does not depend on
    a truncation bound. After a local change only the sequences whose
    forward pass reached a changed state need to be recomputed: every
    other sequence only uses parameters the change left alone.
    """

    def __init__(self, sequences: Iterable[Sequence]):
        tally = Counter(tuple(s) for s in sequences)
        self.sequences = sorted(tally, key=lambda s: (len(s), s))
        self.weights = np.array([tally[s] for s in self.sequences], dtype=float)
        syms = sorted({o for s in self.sequences for o in s})
        self.symbols = {o: k for k, o in enumerate(syms)}
        self.batch = Batch.encode(self.sequences, self.symbols, 0) if self.sequences else None

    def _run(self, hmm: Hmm, batch: Batch):
        T, E, lam = model_arrays(hmm, self.symbols)
        ll, reached = closure_forward(T, E, lam, batch)
        return np.maximum(ll, LOG_FLOOR), reached

    def evaluate(self, hmm: Hmm) -> LikelihoodCache:
        if self.batch is None:
            return LikelihoodCache(np.zeros(0), {}, 0.0)
        ll, touched = self._run(hmm, self.batch)
        by_state = {q: touched[:, j] for j, q in enumerate(hmm.states)}
        return LikelihoodCache(ll, by_state, float(self.weights @ ll))

    def rescore(self, hmm: Hmm, cache: LikelihoodCache, changed: Iterable[int]) -> float:
        """Total log-likelihood of ``hmm``, which differs from the cached
        model only in the rows of ``changed`` states (of the cached model)."""
        if self.batch is None:
            return 0.0
        mask = np.zeros(len(self.sequences), dtype=bool)
        for q in changed:
            hit = cache.touched.get(q)
            if hit is not None:
                mask |= hit
        if not mask.any():
            return cache.total
        ll = cache.loglik.copy()
        ll[mask], _ = self._run(hmm, self.batch.subset(mask))
        return float(self.weights @ ll)


# -- approximate likelihood ---------------------------------------------------

def _xlogy(c: float, p: float, what) -> float:
    if c == 0:
        return 0.0
    if p <= 0:
        raise ValueError(f"inconsistent count/parameter pair at {what}: count {c} with zero probability")
    return c * math.log(p)


def _row_terms(hmm: Hmm, counts: CountTable, trans_rows=None, emit_rows=None):
    t_terms: dict[int, float] = {}
    e_terms: dict[int, float] = {}
    for (q, r), c in counts.trans.items():
        if trans_rows is None or q in trans_rows:
            t_terms[q] = t_terms.get(q, 0.0) + _xlogy(c, hmm.trans.get(q, {}).get(r, 0.0), (q, r))
    for (q, r, o), c in counts.emit.items():
        if emit_rows is None or r in emit_rows:
            e_terms[r] = e_terms.get(r, 0.0) + _xlogy(c, hmm.emit.get(r, {}).get(o, 0.0), (q, r, o))
    return t_terms, e_terms


def log_likelihood_approx(hmm: Hmm, counts: CountTable) -> float:
    """sum C(q->r) log T(r|q) + sum C(q,r^o) log Omega(o|r)."""
    return ApproxLikelihood(hmm, counts).total


class ApproxLikelihood:
    """Count-based likelihood cached per transition row and emission row."""

    def __init__(self, hmm: Hmm = None, counts: CountTable = None, *, _terms=None):
        if _terms is None:
            _terms = _row_terms(hmm, counts)
        self.trans_terms, self.emit_terms = _terms
        self.total = math.fsum(self.trans_terms.values()) + math.fsum(self.emit_terms.values())

    def update(self, hmm: Hmm, counts: CountTable, changed: Iterable[int],
               removed: Iterable[int] = ()) -> "ApproxLikelihood":
        """Swap the old terms of ``changed`` rows for their values under
        the new model and counts; rows of ``removed`` states are dropped."""
        changed = set(changed)
        drop = changed | set(removed)
        t_new, e_new = _row_terms(hmm, counts, changed, changed)
        t_terms = {q: v for q, v in self.trans_terms.items() if q not in drop}
        e_terms = {q: v for q, v in self.emit_terms.items() if q not in drop}
        t_terms.update(t_new)
        e_terms.update(e_new)
        return ApproxLikelihood(_terms=(t_terms, e_terms))


def score(hmm: Hmm, counts: CountTable, corpus: Iterable[Sequence],
          constraints: ConstraintSet | None = None, config: ScoreConfig = ScoreConfig()) -> float:
    """log P(M) + log P(D|M) up to a model-independent constant."""
    if config.mode == "exact":
        ll = log_likelihood_exact(hmm, corpus)
    else:
        ll = log_likelihood_approx(hmm, counts)
    return log_prior(hmm, constraints, config) + ll

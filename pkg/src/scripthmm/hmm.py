"""Left-to-right HMMs with null emissions, expected-count tables and
prefix tree acceptor construction.

States are integer ids kept in a topological order: ``states[0]`` is the
initial state (emits ``"<"``) and ``states[-1]`` the final state (emits
``">"``). Only forward transitions and self-loops are allowed.
"""

from __future__ import annotations

import heapq
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable

import numpy as np

from .errors import CorpusError, SamplingError

START = "<"
END = ">"
NULL = "λ"
RESERVED = frozenset({START, END, NULL, "&lambda;"})

ROW_TOL = 1e-9


@dataclass(frozen=True)
class Hmm:
    """A left-to-right HMM.

    ``trans[q][r]`` is T(r|q) and ``emit[q][o]`` is Omega(o|q), with ``o``
    possibly :data:`NULL`. Only nonzero entries are stored; the key sets
    define the structure. Instances are treated as immutable.
    """

    states: tuple[int, ...]
    trans: dict[int, dict[int, float]]
    emit: dict[int, dict[str, float]]

    @property
    def initial(self) -> int:
        return self.states[0]

    @property
    def final(self) -> int:
        return self.states[-1]

    @cached_property
    def position(self) -> dict[int, int]:
        return {q: i for i, q in enumerate(self.states)}

    @cached_property
    def parents(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {q: [] for q in self.states}
        for q in self.states:
            for r in self.trans.get(q, {}):
                out.setdefault(r, []).append(q)
        return out

    def successors(self, q: int) -> list[int]:
        pos = self.position
        return sorted(self.trans.get(q, {}), key=pos.__getitem__)

    @property
    def n_transitions(self) -> int:
        return sum(1 for row in self.trans.values() for p in row.values() if p > 0)

    @cached_property
    def alphabet(self) -> frozenset[str]:
        """Non-null symbols emitted with positive probability."""
        return frozenset(o for row in self.emit.values() for o, p in row.items()
                         if p > 0 and o != NULL)

    def null_prob(self, q: int) -> float:
        return self.emit.get(q, {}).get(NULL, 0.0)

    def with_params(self, trans=None, emit=None, states=None) -> "Hmm":
        kw = {}
        if trans is not None:
            kw["trans"] = trans
        if emit is not None:
            kw["emit"] = emit
        if states is not None:
            kw["states"] = tuple(states)
        return replace(self, **kw)


@dataclass
class CountTable:
    """Expected counts C(q), C(q->q') and C(q,q' ^ o).

    Emission counts are keyed by the transition that produced them: the
    symbol ``o`` is emitted by the destination state ``q'``.
    """

    visits: dict[int, float] = field(default_factory=dict)
    trans: dict[tuple[int, int], float] = field(default_factory=dict)
    emit: dict[tuple[int, int, str], float] = field(default_factory=dict)

    def copy(self) -> "CountTable":
        return CountTable(dict(self.visits), dict(self.trans), dict(self.emit))

    def __add__(self, other: "CountTable") -> "CountTable":
        out = self.copy()
        for src, dst in ((other.visits, out.visits), (other.trans, out.trans),
                         (other.emit, out.emit)):
            for k, v in src.items():
                dst[k] = dst.get(k, 0.0) + v
        return out

    def out_totals(self) -> dict[int, float]:
        tot: dict[int, float] = {}
        for (q, _), c in self.trans.items():
            tot[q] = tot.get(q, 0.0) + c
        return tot

    def emission_totals(self) -> dict[int, dict[str, float]]:
        """Per emitting state, counts summed over incoming transitions."""
        tot: dict[int, dict[str, float]] = {}
        for (_, r, o), c in self.emit.items():
            row = tot.setdefault(r, {})
            row[o] = row.get(o, 0.0) + c
        return tot

    def check(self, tol: float = 1e-6) -> str | None:
        """Return a description of the first broken invariant, or None."""
        for table in (self.visits, self.trans, self.emit):
            for k, v in table.items():
                if v < -tol:
                    return f"negative count {v} at {k}"
        for q, out in self.out_totals().items():
            if out > self.visits.get(q, 0.0) + tol:
                return f"transitions out of {q} ({out}) exceed visits ({self.visits.get(q, 0.0)})"
        sums: dict[tuple[int, int], float] = {}
        for (q, r, _), c in self.emit.items():
            sums[(q, r)] = sums.get((q, r), 0.0) + c
        for key in set(sums) | set(self.trans):
            if abs(sums.get(key, 0.0) - self.trans.get(key, 0.0)) > tol:
                return f"emission counts on {key} do not sum to its transition count"
        return None


Sequence = tuple[str, ...]


@dataclass(frozen=True)
class Corpus:
    """Narratives as sentinel-wrapped tuples of event labels."""

    narratives: tuple[Sequence, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "narratives", tuple(tuple(n) for n in self.narratives))
        for idx, seq in enumerate(self.narratives):
            check_sequence(seq, idx)

    @classmethod
    def from_events(cls, event_lists: Iterable[Iterable[str]]) -> "Corpus":
        return cls(tuple((START, *events, END) for events in event_lists))

    def __len__(self):
        return len(self.narratives)

    def __iter__(self):
        return iter(self.narratives)

    def __getitem__(self, idx):
        return self.narratives[idx]

    @cached_property
    def vocabulary(self) -> tuple[str, ...]:
        return tuple(sorted({o for seq in self.narratives for o in seq[1:-1]}))

    @cached_property
    def frequencies(self) -> Counter:
        return Counter(o for seq in self.narratives for o in seq[1:-1])


def check_sequence(seq: Sequence, idx: int | None = None) -> None:
    where = "" if idx is None else f"narrative {idx}: "
    if len(seq) < 2 or seq[0] != START or seq[-1] != END:
        raise CorpusError(f"{where}sequence must start with {START!r} and end with {END!r}")
    for o in seq[1:-1]:
        if o in RESERVED:
            raise CorpusError(f"{where}reserved symbol {o!r} inside narrative")
        if not o or any(c.isspace() for c in o):
            raise CorpusError(f"{where}event labels must be nonempty and contain no whitespace")


def topological_order(states: Iterable[int], edges: dict[int, Iterable[int]],
                      priority: dict[int, float], first: int, last: int) -> list[int]:
    """Kahn's algorithm, ties broken by ``priority``; self-loops ignored.

    Raises ValueError when the non-self edges contain a cycle.
    """
    states = list(states)
    indeg = {q: 0 for q in states}
    for q in states:
        for r in edges.get(q, ()):
            if r != q:
                indeg[r] += 1
    heap = [(priority[q], q) for q in states if indeg[q] == 0 and q != last]
    heapq.heapify(heap)
    order = []
    while heap:
        _, q = heapq.heappop(heap)
        order.append(q)
        for r in edges.get(q, ()):
            if r == q:
                continue
            indeg[r] -= 1
            if indeg[r] == 0 and r != last:
                heapq.heappush(heap, (priority[r], r))
    if indeg.get(last, 1) == 0:
        order.append(last)
    if len(order) != len(states) or order[0] != first:
        raise ValueError("transition graph is not acyclic")
    return order


def build_pta(corpus: Corpus) -> tuple[Hmm, CountTable]:
    """Prefix tree acceptor over the corpus, plus its raw traversal counts.

    Each narrative follows the existing branch as long as its symbols
    agree and branches at the first difference. All branches end in the
    shared final state. Branch probabilities are the raw count ratios.
    """
    if not isinstance(corpus, Corpus):
        corpus = Corpus(tuple(corpus))
    if len(corpus) == 0:
        raise CorpusError("empty corpus")

    q0, interior = 0, []
    child: dict[tuple[int, str], int] = {}
    symbol_of: dict[int, str] = {}
    counts = CountTable()
    edges: list[tuple[int, int, str]] = []
    # final state id assigned after all interior states exist
    FINAL = -1

    for seq in corpus:
        q = q0
        counts.visits[q0] = counts.visits.get(q0, 0.0) + 1
        for o in seq[1:-1]:
            nxt = child.get((q, o))
            if nxt is None:
                nxt = len(interior) + 1
                interior.append(nxt)
                child[(q, o)] = nxt
                symbol_of[nxt] = o
            edges.append((q, nxt, o))
            counts.visits[nxt] = counts.visits.get(nxt, 0.0) + 1
            q = nxt
        edges.append((q, FINAL, END))

    qn = len(interior) + 1
    counts.visits[qn] = float(len(corpus))
    for q, r, o in edges:
        r = qn if r == FINAL else r
        counts.trans[(q, r)] = counts.trans.get((q, r), 0.0) + 1
        counts.emit[(q, r, o)] = counts.emit.get((q, r, o), 0.0) + 1

    trans: dict[int, dict[int, float]] = {}
    for (q, r), c in counts.trans.items():
        trans.setdefault(q, {})[r] = c / counts.visits[q]
    emit = {q0: {START: 1.0}, qn: {END: 1.0}}
    for q in interior:
        emit[q] = {symbol_of[q]: 1.0}
    return Hmm((q0, *interior, qn), trans, emit), counts


@dataclass(frozen=True)
class Violation:
    invariant: str
    where: str

    def __str__(self):
        return f"{self.invariant} ({self.where})"


def validate(hmm: Hmm) -> Violation | None:
    """Check the structural and stochastic invariants of ``hmm``.

    Returns the first violation found, or None when the model is valid.
    """
    states = hmm.states
    if len(states) < 2 or len(set(states)) != len(states):
        return Violation("states must be at least two distinct ids", repr(states))
    known = set(states)
    for q in set(hmm.trans) | set(hmm.emit):
        if q not in known:
            return Violation("unknown state", repr(q))
    q0, qn = hmm.initial, hmm.final
    if hmm.trans.get(qn):
        return Violation("final state has outgoing transition", f"state {qn}")
    if hmm.parents.get(q0):
        return Violation("initial state has incoming transition", f"state {q0}")
    if abs(hmm.emit.get(q0, {}).get(START, 0.0) - 1.0) > ROW_TOL:
        return Violation("initial state must emit '<' with probability 1", f"state {q0}")
    if abs(hmm.emit.get(qn, {}).get(END, 0.0) - 1.0) > ROW_TOL:
        return Violation("final state must emit '>' with probability 1", f"state {qn}")
    pos = hmm.position
    for q in states:
        for r, p in hmm.trans.get(q, {}).items():
            if r not in known:
                return Violation("transition to unknown state", f"{q} -> {r}")
            if not (0.0 <= p <= 1.0) or math.isnan(p):
                return Violation("transition probability outside [0, 1]", f"{q} -> {r}")
            if p > 0 and pos[r] < pos[q]:
                return Violation("transition violates topological order", f"{q} -> {r}")
        for o, p in hmm.emit.get(q, {}).items():
            if not (0.0 <= p <= 1.0) or math.isnan(p):
                return Violation("emission probability outside [0, 1]", f"state {q}, symbol {o!r}")
            if o in (START, END) and p > 0 and q not in (q0, qn):
                return Violation("sentinel symbol emitted by interior state", f"state {q}")
    for q in states[:-1]:
        total = sum(hmm.trans.get(q, {}).values())
        if abs(total - 1.0) > ROW_TOL:
            return Violation("transition row does not sum to 1", f"state {q} sums to {total!r}")
        total = sum(hmm.emit.get(q, {}).values())
        if abs(total - 1.0) > ROW_TOL:
            return Violation("emission row does not sum to 1", f"state {q} sums to {total!r}")
    return None


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample(hmm: Hmm, seed=None, max_steps: int = 10_000) -> Sequence:
    """Generate one narrative; null emissions are dropped from the output.

    ``seed`` may be an int or a ``numpy.random.Generator`` (which is
    advanced in place, for drawing many samples from one stream).
    """
    rng = _rng(seed)
    out = [START]
    q, steps = hmm.initial, 0
    while q != hmm.final:
        if steps >= max_steps:
            raise SamplingError("max_steps exceeded")
        succ = hmm.successors(q)
        probs = np.array([hmm.trans[q][r] for r in succ])
        q = succ[rng.choice(len(succ), p=probs / probs.sum())]
        row = hmm.emit[q]
        symbols = sorted(row)
        probs = np.array([row[o] for o in symbols])
        o = symbols[rng.choice(len(symbols), p=probs / probs.sum())]
        if o != NULL:
            out.append(o)
        steps += 1
    return tuple(out)


def sample_corpus(hmm: Hmm, n: int, seed=None, max_steps: int = 10_000,
                  keep_empty: bool = False) -> Corpus:
    rng = _rng(seed)
    out = []
    while len(out) < n:
        seq = sample(hmm, rng, max_steps)
        if keep_empty or len(seq) > 2:
            out.append(seq)
    return Corpus(tuple(out))

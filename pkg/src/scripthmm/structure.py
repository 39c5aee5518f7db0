"""Greedy structure search over left-to-right HMMs.

Starting from a prefix tree acceptor, the search repeatedly applies the
best-scoring state merge or edge deletion until no change improves the
score. Candidate models are built under the locality-of-change
assumption: counts are updated only where the structure changed and only
the affected parameter rows are re-estimated.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable

from .em import EmConfig, em_fit, m_step, normalize_row, support_of
from .errors import CorpusError, StructureError
from .hmm import END, NULL, START, CountTable, Corpus, Hmm, Sequence, build_pta, topological_order
from .scoring import (ApproxLikelihood, ConstraintSet, ExactLikelihood, ScoreConfig, log_prior,
                      mine_constraints)

log = logging.getLogger(__name__)

PRUNING_MODES = ("all-pairs", "shared-neighbor")


@dataclass(frozen=True)
class SearchConfig:
    batch_size: int = 10
    pruning: str = "all-pairs"
    em: EmConfig = EmConfig()
    score: ScoreConfig = ScoreConfig()
    em_reruns: bool = True
    deletions: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch size r must be >= 1")
        if self.pruning not in PRUNING_MODES:
            raise ValueError(f"pruning must be one of {PRUNING_MODES}")


@dataclass(frozen=True)
class StructureChange:
    kind: str  # "merge" or "delete"
    a: int
    b: int

    def __str__(self):
        return f"{self.kind}\t{self.a}\t{self.b}"


# -- operators ------------------------------------------------------------------

def merge_states(hmm: Hmm, counts: CountTable, p: int, q: int,
                 config: EmConfig = EmConfig()) -> tuple[Hmm, CountTable]:
    """Replace states p and q by one state carrying the union of their
    transitions and emissions and the sum of their counts.

    The merged state keeps the id of whichever of p, q comes first in the
    topological order. A p<->q transition becomes a self-loop.
    """
    if p == q:
        raise StructureError("cannot merge a state with itself")
    if {p, q} & {hmm.initial, hmm.final}:
        raise StructureError("the initial and final states are never merged")
    pos = hmm.position
    if pos[p] > pos[q]:
        p, q = q, p
    r = p

    def ren(s):
        return r if s == q else s

    parents = hmm.parents
    affected = {r} | {ren(s) for s in parents[p] + parents[q]}
    trans: dict[int, dict[int, float]] = {}
    for s, row in hmm.trans.items():
        if s == q:
            continue
        if s in affected:
            trans[s] = {ren(t): 1.0 for t in row}
        else:
            trans[s] = row
    for t in hmm.trans.get(q, ()):
        trans.setdefault(r, {})[ren(t)] = 1.0
    emit = {s: row for s, row in hmm.emit.items() if s != q}
    support = {o for row in (hmm.emit[p], hmm.emit[q]) for o, v in row.items() if v > 0}
    emit[r] = {o: 1.0 for o in support}

    new_counts = counts.copy()
    if q in new_counts.visits:
        new_counts.visits[r] = new_counts.visits.get(r, 0.0) + new_counts.visits.pop(q)
    for key in [k for k in new_counts.trans if k[0] == q or k[1] == q]:
        c = new_counts.trans.pop(key)
        key = (ren(key[0]), ren(key[1]))
        new_counts.trans[key] = new_counts.trans.get(key, 0.0) + c
    for key in [k for k in new_counts.emit if k[0] == q or k[1] == q]:
        c = new_counts.emit.pop(key)
        key = (ren(key[0]), ren(key[1]), key[2])
        new_counts.emit[key] = new_counts.emit.get(key, 0.0) + c

    states = [s for s in hmm.states if s != q]
    if all(pos[s] < pos[p] for s in parents[q] if s not in (p, q)):
        # r can stay where p was
        order = states
    else:
        try:
            order = topological_order(states, trans, pos, hmm.initial, hmm.final)
        except ValueError:
            raise StructureError(f"merging {p} and {q} would create a cycle") from None
    merged = Hmm(tuple(order), trans, emit)
    return m_step(merged, new_counts, config, rows=affected), new_counts


def null_paths(hmm: Hmm, qs: int, qe: int) -> tuple[dict[tuple[int, int], float], float]:
    """Alternative routes from qs to qe whose intermediate states emit null.

    Returns, for each transition on such a route, the probability of
    using it given that the walk goes from qs to qe silently, together
    with the total route probability Z (0 when there is none). The direct
    edge qs->qe and self-loops are excluded.
    """
    pos = hmm.position
    window = hmm.states[pos[qs]:pos[qe] + 1]
    inside = set(window)

    def weight(x):
        return 1.0 if x == qe else hmm.null_prob(x)

    def edges(x):
        for c, p in hmm.trans.get(x, {}).items():
            if c in inside and c != x and p > 0 and not (x == qs and c == qe):
                yield c, p * weight(c)

    fwd = dict.fromkeys(window, 0.0)
    fwd[qs] = 1.0
    for x in window[:-1]:
        if fwd[x] > 0:
            for c, w in edges(x):
                fwd[c] += fwd[x] * w
    z = fwd[qe]
    if z <= 0:
        return {}, 0.0
    bwd = dict.fromkeys(window, 0.0)
    bwd[qe] = 1.0
    for x in reversed(window[:-1]):
        bwd[x] = sum(w * bwd[c] for c, w in edges(x))
    frac = {}
    for x in window[:-1]:
        if fwd[x] > 0:
            for c, w in edges(x):
                f = fwd[x] * w * bwd[c] / z
                if f > 0:
                    frac[(x, c)] = f
    return frac, z


def delete_edge(hmm: Hmm, counts: CountTable, qs: int, qe: int,
                config: EmConfig = EmConfig()) -> tuple[Hmm, CountTable]:
    """Remove the transition qs->qe and reroute its expected count N along
    the silent alternative routes, in proportion to their probability.

    Every edge on a route gains its share of N; intermediate states gain
    the same amount of visits and null emissions, and the emissions that
    qe made on the deleted edge move to the last edge of each route.
    """
    if qe not in hmm.trans.get(qs, {}):
        raise StructureError(f"no transition {qs} -> {qe}")
    if qs == qe:
        raise StructureError("self-loops are not deletion candidates")
    frac, z = null_paths(hmm, qs, qe)
    if z <= 0:
        raise StructureError("no redistribution path")
    n = counts.trans.get((qs, qe), 0.0)
    new = counts.copy()
    new.trans.pop((qs, qe), None)
    moved = {}
    for key in [k for k in new.emit if k[0] == qs and k[1] == qe]:
        moved[key[2]] = new.emit.pop(key)
    touched = {qs, qe}
    for (x, c), f in frac.items():
        touched.update((x, c))
        inc = f * n
        if inc == 0:
            continue
        new.trans[(x, c)] = new.trans.get((x, c), 0.0) + inc
        if c == qe:
            for o, co in moved.items():
                new.emit[(x, qe, o)] = new.emit.get((x, qe, o), 0.0) + co * f
        else:
            new.emit[(x, c, NULL)] = new.emit.get((x, c, NULL), 0.0) + inc
            new.visits[c] = new.visits.get(c, 0.0) + inc
    trans = dict(hmm.trans)
    trans[qs] = {r: p for r, p in hmm.trans[qs].items() if r != qe}
    reduced = hmm.with_params(trans=trans)
    return m_step(reduced, new, config, rows=touched), new


def apply_change(hmm: Hmm, counts: CountTable, change: StructureChange,
                 config: EmConfig = EmConfig()) -> tuple[Hmm, CountTable]:
    if change.kind == "merge":
        return merge_states(hmm, counts, change.a, change.b, config)
    if change.kind == "delete":
        return delete_edge(hmm, counts, change.a, change.b, config)
    raise ValueError(f"unknown change kind {change.kind!r}")


def changed_states(hmm: Hmm, change: StructureChange) -> set[int]:
    """States of ``hmm`` whose parameter rows a change may alter."""
    if change.kind == "merge":
        par = hmm.parents
        return {change.a, change.b, *par[change.a], *par[change.b]}
    pos = hmm.position
    return set(hmm.states[pos[change.a]:pos[change.b] + 1])


def _changed_rows(old: Hmm, new: Hmm, change: StructureChange) -> tuple[set[int], set[int]]:
    """(rows to recompute in ``new``, rows that no longer exist)."""
    if change.kind == "merge":
        pos = old.position
        p, q = sorted((change.a, change.b), key=pos.__getitem__)
        par = old.parents
        rows = {p} | {p if s == q else s for s in par[p] + par[q]}
        return rows, {q}
    return {s for s in changed_states(old, change) if s in new.position}, set()


# -- candidate enumeration ------------------------------------------------------

def _descendants(hmm: Hmm) -> dict[int, int]:
    pos = hmm.position
    desc: dict[int, int] = {}
    for q in reversed(hmm.states):
        mask = 0
        for r in hmm.trans.get(q, {}):
            if r != q:
                mask |= (1 << pos[r]) | desc[r]
        desc[q] = mask
    return desc


def enumerate_candidates(hmm: Hmm, config: SearchConfig = SearchConfig()) -> list[StructureChange]:
    """All acyclic merges of interior state pairs, then all deletable edges,
    each in order of state ordinals."""
    pos = hmm.position
    desc = _descendants(hmm)
    # states reachable from p through at least one other state
    indirect = {}
    for p in hmm.states:
        mask = 0
        for c in hmm.trans.get(p, {}):
            if c != p:
                mask |= desc[c]
        indirect[p] = mask
    interior = hmm.states[1:-1]
    if config.pruning == "shared-neighbor":
        parents = {q: set(v) - {q} for q, v in hmm.parents.items()}
        children = {q: set(hmm.trans.get(q, {})) - {q} for q in hmm.states}
    out = []
    for i, p in enumerate(interior):
        for q in interior[i + 1:]:
            if indirect[p] >> pos[q] & 1:
                continue
            if config.pruning == "shared-neighbor" and not (parents[p] & parents[q] or children[p] & children[q]):
                continue
            out.append(StructureChange("merge", p, q))
    if config.deletions and config.em.allow_null:
        for q in hmm.states:
            for r in hmm.successors(q):
                if r != q and null_paths(hmm, q, r)[1] > 0:
                    out.append(StructureChange("delete", q, r))
    return out


# -- search ----------------------------------------------------------------------

class _MergeScorer:
    """Approximate score of merge candidates computed from per-row count
    totals, without building the merged model.

    Under the count-based likelihood a merge only alters the transition
    rows of the merged state and its parents and the emission row of the
    merged state, so the new score is the old one with those row terms
    swapped. Assumes every row of ``hmm`` is the m_step estimate of
    ``counts``, which holds throughout the search.
    """

    def __init__(self, hmm: Hmm, counts: CountTable, approx: ApproxLikelihood,
                 constraints: ConstraintSet | None, config: SearchConfig):
        self.hmm, self.approx, self.config = hmm, approx, config
        self.out: dict[int, dict[int, float]] = {}
        for (a, b), c in counts.trans.items():
            self.out.setdefault(a, {})[b] = c
        self.emit_tot: dict[int, dict[str, float]] = {}
        for (_, b, o), c in counts.emit.items():
            row = self.emit_tot.setdefault(b, {})
            row[o] = row.get(o, 0.0) + c
        self.vocab = hmm.alphabet - {START, END} if config.em.full_vocabulary else ()
        self.n_trans = hmm.n_transitions
        sc = config.score
        self.rules = constraints.rules if constraints and sc.kappa_c else {}
        if self.rules:
            self.symbols = symbols = constraints.symbols
            pos = hmm.position
            self.emitters: dict[str, int] = {}
            for q in hmm.states:
                for o, v in hmm.emit[q].items():
                    if v > 0 and o in symbols:
                        self.emitters[o] = self.emitters.get(o, 0) | (1 << pos[q])

    def _row(self, support: dict[int, float], counts: dict[int, float]):
        c = self.config.em.pseudocount
        probs = normalize_row({t: counts.get(t, 0.0) + c for t in support})
        term = math.fsum(n * math.log(probs[t]) for t, n in counts.items() if n)
        return probs, term

    def score(self, p: int, q: int) -> float:
        hmm, cfg = self.hmm, self.config
        pos = hmm.position
        if pos[p] > pos[q]:
            p, q = q, p
        par = hmm.parents
        parents = [s for s in dict.fromkeys(par[p] + par[q]) if s != p and s != q]
        new_rows: dict[int, dict[int, float]] = {}
        old_t = new_t = 0.0
        lost = gained = 0
        for s in parents + [p]:
            counts: dict[int, float] = {}
            support: dict[int, float] = {}
            for src in ((s,) if s != p else (p, q)):
                out = self.out.get(src, {})
                for t in hmm.trans[src]:
                    t2 = p if t == q else t
                    support[t2] = 1.0
                    n = out.get(t, 0.0)
                    if n:
                        counts[t2] = counts.get(t2, 0.0) + n
                old_t += self.approx.trans_terms.get(src, 0.0)
                lost += sum(1 for v in hmm.trans[src].values() if v > 0)
            probs, term = self._row(support, counts)
            new_t += term
            gained += sum(1 for v in probs.values() if v > 0)
            new_rows[s] = probs

        tot = dict(self.emit_tot.get(p, {}))
        for o, n in self.emit_tot.get(q, {}).items():
            tot[o] = tot.get(o, 0.0) + n
        symbols = {o for x in (p, q) for o, v in hmm.emit[x].items() if v > 0}
        support = support_of(symbols, cfg.em, self.vocab)
        c = cfg.em.pseudocount
        erow = normalize_row({o: tot.get(o, 0.0) + c for o in support})
        new_e = math.fsum(n * math.log(erow[o]) for o, n in tot.items() if n)
        old_e = self.approx.emit_terms.get(p, 0.0) + self.approx.emit_terms.get(q, 0.0)
        ll = self.approx.total - old_t - old_e + new_t + new_e

        sc = cfg.score
        n_viol = self._violations(p, q, new_rows, erow) if self.rules else 0
        prior = -(sc.kappa_q * (len(hmm.states) - 1) + sc.kappa_t * (self.n_trans - lost + gained)
                  + sc.kappa_c * n_viol)
        return prior + ll

    def _violations(self, p: int, q: int, rows: dict[int, dict[int, float]], erow: dict[str, float]) -> int:
        hmm = self.hmm
        pos = hmm.position
        bp, bq = 1 << pos[p], 1 << pos[q]
        null_p = erow.get(NULL, 0.0) > 0
        memo: dict[int, int] = {}

        def reach(x):
            if x in memo:
                return memo[x]
            mask = 0
            for t in rows[x] if x in rows else hmm.trans.get(x, ()):
                mask |= 1 << pos[t]
                if t != x and (null_p if t == p else hmm.emit[t].get(NULL, 0.0) > 0):
                    mask |= reach(t)
            memo[x] = mask
            return mask

        emitters = {}
        for o, m in self.emitters.items():
            m &= ~(bp | bq)
            if erow.get(o, 0.0) > 0:
                m |= bp
            emitters[o] = m
        for o, v in erow.items():
            if v > 0 and o not in emitters and o in self.symbols:
                emitters[o] = bp
        states = hmm.states
        after: dict[str, int] = {}
        n = 0
        for x, y in self.rules:
            ex = emitters.get(x)
            if not ex:
                continue
            if y not in after:
                mask, m = 0, emitters.get(y, 0)
                while m:
                    low = m & -m
                    mask |= reach(states[low.bit_length() - 1])
                    m ^= low
                after[y] = mask
            if after[y] & ex:
                n += 1
        return n



@dataclass
class SearchResult:
    hmm: Hmm
    counts: CountTable
    scores: list[float] = field(default_factory=list)  # score of each accepted model, in order
    changes: list[StructureChange] = field(default_factory=list)
    evaluated: int = 0


def search(hmm: Hmm, counts: CountTable, sequences: Iterable[Sequence],
           constraints: ConstraintSet | None = None,
           config: SearchConfig = SearchConfig()) -> SearchResult:
    """Greedy hill climbing: take the best candidate while it strictly
    improves the score. Ties go to the earliest candidate in enumeration
    order (merges before deletions, lowest ordinals first)."""
    sc = config.score
    exact = sc.mode == "exact"
    if exact:
        lik = ExactLikelihood(sequences)
        cache = lik.evaluate(hmm)
        ll = cache.total
    else:
        approx = ApproxLikelihood(hmm, counts)
        ll = approx.total
    current = log_prior(hmm, constraints, sc) + ll
    result = SearchResult(hmm, counts, [current])
    debug = log.isEnabledFor(logging.DEBUG)

    while True:
        best = None
        scored = []
        local = None if exact else _MergeScorer(hmm, counts, approx, constraints, config)
        for change in enumerate_candidates(hmm, config):
            if local is not None and change.kind == "merge":
                # built only if accepted
                s = local.score(change.a, change.b)
                new_hmm = new_counts = new_approx = None
            else:
                try:
                    new_hmm, new_counts = apply_change(hmm, counts, change, config.em)
                except StructureError as exc:
                    if debug:
                        log.debug("%s\trejected\t%s", change, exc)
                    continue
                if exact:
                    ll = lik.rescore(new_hmm, cache, changed_states(hmm, change))
                    new_approx = None
                else:
                    rows, removed = _changed_rows(hmm, new_hmm, change)
                    new_approx = approx.update(new_hmm, new_counts, rows, removed)
                    ll = new_approx.total
                s = log_prior(new_hmm, constraints, sc) + ll
            result.evaluated += 1
            if debug:
                scored.append((change, s - current))
            if best is None or s > best[1]:
                best = (change, s, new_hmm, new_counts, new_approx)
        accept = best is not None and best[1] > current
        if debug:
            for change, delta in scored:
                taken = accept and change == best[0]
                log.debug("%s\t%.6g\t%s", change, delta, "accepted" if taken else "-")
        if not accept:
            break
        change, s, new_hmm, new_counts, new_approx = best
        if new_hmm is None:
            new_hmm, new_counts = apply_change(hmm, counts, change, config.em)
            rows, removed = _changed_rows(hmm, new_hmm, change)
            new_approx = approx.update(new_hmm, new_counts, rows, removed)
            s = log_prior(new_hmm, constraints, sc) + new_approx.total
            if s <= current:
                break
        hmm, counts = new_hmm, new_counts
        if exact:
            cache = lik.evaluate(hmm)
            current = log_prior(hmm, constraints, sc) + cache.total
        else:
            approx = new_approx
            current = s
        result.hmm, result.counts = hmm, counts
        result.scores.append(current)
        result.changes.append(change)
    return result


# -- batched learning --------------------------------------------------------------

def join_pta(hmm: Hmm, counts: CountTable, pta: Hmm, pta_counts: CountTable) -> tuple[Hmm, CountTable]:
    """Attach a prefix tree to the model, sharing only the initial and final states.

    Parameters of the result are placeholders; re-estimate before use.
    """
    offset = max(hmm.states) + 1
    ren = {pta.initial: hmm.initial, pta.final: hmm.final}
    for k, q in enumerate(pta.states[1:-1]):
        ren[q] = offset + k
    states = hmm.states[:-1] + tuple(ren[q] for q in pta.states[1:-1]) + (hmm.final,)
    trans = {q: dict(row) for q, row in hmm.trans.items()}
    for q, row in pta.trans.items():
        dst = trans.setdefault(ren[q], {})
        for r, p in row.items():
            dst.setdefault(ren[r], p)
    emit = dict(hmm.emit)
    for q in pta.states[1:-1]:
        emit[ren[q]] = dict(pta.emit[q])
    mapped = CountTable(
        {ren[q]: c for q, c in pta_counts.visits.items()},
        {(ren[q], ren[r]): c for (q, r), c in pta_counts.trans.items()},
        {(ren[q], ren[r], o): c for (q, r, o), c in pta_counts.emit.items()},
    )
    return Hmm(states, trans, emit), counts + mapped


@dataclass
class LearnResult:
    hmm: Hmm
    counts: CountTable
    constraints: ConstraintSet
    searches: list[SearchResult] = field(default_factory=list)
    em_traces: list[list[float]] = field(default_factory=list)


def learn(corpus, config: SearchConfig = SearchConfig(),
          constraints: ConstraintSet | None = None) -> LearnResult:
    """Learn structure and parameters from narratives, r at a time.

    Each batch is added as a fresh prefix tree, the search runs to a local
    optimum over all narratives seen so far, and then (when ``em_reruns``)
    EM re-estimates the parameters on those narratives.
    """
    if not isinstance(corpus, Corpus):
        corpus = Corpus(tuple(corpus))
    if len(corpus) == 0:
        raise CorpusError("empty corpus")
    sc = config.score
    if constraints is None:
        constraints = (mine_constraints(corpus, sc.p0, sc.significance, sc.eventual, sc.min_opportunities)
                       if sc.kappa_c > 0 else ConstraintSet())
    hmm = counts = None
    seen: list[Sequence] = []
    out = None
    r = config.batch_size
    for lo in range(0, len(corpus), r):
        batch = corpus.narratives[lo:lo + r]
        seen.extend(batch)
        pta, pta_counts = build_pta(Corpus(batch))
        if hmm is None:
            hmm, counts = pta, pta_counts
        else:
            hmm, counts = join_pta(hmm, counts, pta, pta_counts)
        hmm = m_step(hmm, counts, config.em)
        res = search(hmm, counts, seen, constraints, config)
        hmm, counts = res.hmm, res.counts
        if out is None:
            out = LearnResult(hmm, counts, constraints)
        out.searches.append(res)
        log.info("batch %d: %d states after %d changes (%d candidates scored)",
                 lo // r + 1, len(hmm.states), len(res.changes), res.evaluated)
        if config.em_reruns:
            fit = em_fit(hmm, seen, config.em)
            hmm, counts = fit.hmm, fit.counts
            out.em_traces.append(fit.trace)
    out.hmm, out.counts = hmm, counts
    return out

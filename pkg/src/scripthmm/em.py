"""MAP parameter estimation by expectation-maximization."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable

from .errors import UnreachableError
from .hmm import END, NULL, START, CountTable, Hmm, Sequence
from .inference import e_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EmConfig:
    max_iters: int = 100
    rel_tol: float = 1e-6
    t_max_factor: float = 1.0
    pseudocount: float = 1.0
    # False fixes Omega(null|q) = 0 everywhere (standard HMM)
    allow_null: bool = True
    # smooth every emission row over the whole vocabulary, not just its support
    full_vocabulary: bool = False

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be > 0")
        if self.pseudocount < 0:
            raise ValueError("pseudocount must be >= 0")
        if self.t_max_factor < 1:
            raise ValueError("t_max_factor must be >= 1")


def emission_support(hmm: Hmm, q: int, config: EmConfig, vocabulary=()) -> list[str]:
    """Symbols a state may emit: its current support, plus null and the
    vocabulary when the config asks for them."""
    return support_of({o for o, p in hmm.emit.get(q, {}).items() if p > 0}, config, vocabulary)


def support_of(symbols: set[str], config: EmConfig, vocabulary=()) -> list[str]:
    support = set(symbols)
    if config.full_vocabulary:
        support.update(vocabulary)
    support.discard(START)
    support.discard(END)
    if config.allow_null:
        support.add(NULL)
    else:
        support.discard(NULL)
    return sorted(support)


def normalize_row(raw: dict) -> dict:
    total = sum(raw.values())
    if total <= 0:
        return {k: 1.0 / len(raw) for k in raw}
    return {k: v / total for k, v in raw.items()}


def m_step(hmm: Hmm, counts: CountTable, config: EmConfig = EmConfig(),
           rows: Iterable[int] | None = None) -> Hmm:
    """Re-estimate parameters from counts, keeping the structure fixed.

    T(r|q) is proportional to C(q->r) + c over the existing successors of
    q, and Omega(o|r) to the summed C(., r ^ o) + c over the emission
    support of r. The initial and final emissions stay pinned. Only the
    states in ``rows`` are re-estimated when it is given.
    """
    c = config.pseudocount
    q0, qn = hmm.initial, hmm.final
    todo = set(hmm.states) if rows is None else set(rows)
    vocab = hmm.alphabet - {START, END} if config.full_vocabulary else ()
    trans = dict(hmm.trans)
    emit = dict(hmm.emit)
    emit_tot: dict[int, dict[str, float]] = {}
    for (_, r, o), v in counts.emit.items():
        if r in todo:
            row = emit_tot.setdefault(r, {})
            row[o] = row.get(o, 0.0) + v
    for q in hmm.states:
        if q not in todo:
            continue
        succ = hmm.trans.get(q)
        if succ and q != qn:
            trans[q] = normalize_row({r: counts.trans.get((q, r), 0.0) + c for r in succ})
        if q == q0:
            emit[q] = {START: 1.0}
        elif q == qn:
            emit[q] = {END: 1.0}
        else:
            tot = emit_tot.get(q, {})
            support = emission_support(hmm, q, config, vocab)
            if support:
                emit[q] = normalize_row({o: tot.get(o, 0.0) + c for o in support})
    return hmm.with_params(trans=trans, emit=emit)


def log_dirichlet_prior(hmm: Hmm, config: EmConfig = EmConfig()) -> float:
    """Unnormalized log density of the Dirichlet prior whose MAP estimate
    adds ``pseudocount`` to every count, evaluated on the model's rows.

    Pinned rows and zero-pseudocount priors contribute nothing.
    """
    c = config.pseudocount
    if c == 0:
        return 0.0
    vocab = hmm.alphabet - {START, END} if config.full_vocabulary else ()
    total = 0.0
    for q in hmm.states[:-1]:
        for p in hmm.trans.get(q, {}).values():
            total += c * math.log(p) if p > 0 else -math.inf
    for q in hmm.states[1:-1]:
        row = hmm.emit.get(q, {})
        for o in emission_support(hmm, q, config, vocab):
            p = row.get(o, 0.0)
            total += c * math.log(p) if p > 0 else -math.inf
    return total


@dataclass
class EmResult:
    hmm: Hmm
    counts: CountTable  # counts from the last E-step; hmm == m_step(counts)
    trace: list[float] = field(default_factory=list)  # log-likelihood per iteration
    objective: list[float] = field(default_factory=list)  # log-likelihood + log prior
    converged: bool = False
    skipped: int = 0


def em_fit(hmm: Hmm, corpus: Iterable[Sequence], config: EmConfig = EmConfig(),
           verbose: bool = False) -> EmResult:
    """Alternate E- and M-steps until the relative change in corpus
    log-likelihood drops below ``rel_tol`` or ``max_iters`` is reached.

    Each entry of the trace is the log-likelihood of the parameters that
    went into that iteration's E-step.
    """
    corpus = [tuple(s) for s in corpus]
    if not corpus:
        raise ValueError("empty corpus")
    result = EmResult(hmm, CountTable())
    for it in range(config.max_iters):
        est = e_step(result.hmm, corpus, config.t_max_factor)
        if est.skipped == len(corpus):
            raise UnreachableError("model excludes corpus")
        result.trace.append(est.loglik)
        result.objective.append(est.loglik + log_dirichlet_prior(result.hmm, config))
        result.skipped = est.skipped
        result.counts = est.counts
        result.hmm = m_step(result.hmm, est.counts, config)
        delta = est.loglik - result.trace[-2] if it else math.nan
        if verbose:
            log.info("%d\t%.10g\t%.3g", it + 1, est.loglik, delta)
        if it and abs(delta) <= config.rel_tol * max(abs(result.trace[-2]), 1e-300):
            result.converged = True
            break
    if result.skipped:
        log.warning("%d narratives unreachable under the model were skipped", result.skipped)
    return result

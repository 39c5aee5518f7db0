"""Known generators for tests and benchmarks."""

from __future__ import annotations

import numpy as np

from .hmm import END, NULL, START, Hmm


def six_state_script(null: float = 0.15) -> Hmm:
    """A doorbell-like script with six events on two branches.

    After hearing the bell and opening the door the visitor is either a
    guest (greet, talk) or a courier (sign, pay); the second event of a
    branch tells which branch the first one was on. Every event is
    omitted with probability ``null`` and two events have synonyms.
    """
    rest = 1 - null
    trans = {
        0: {1: 1.0},
        1: {2: 1.0},
        2: {3: 0.55, 5: 0.45},
        3: {4: 1.0},
        4: {7: 1.0},
        5: {6: 1.0},
        6: {7: 1.0},
    }
    words = {
        1: {"hear": 0.7, "listen": 0.3},
        2: {"open": 1.0},
        3: {"greet": 0.6, "welcome": 0.4},
        4: {"talk": 1.0},
        5: {"sign": 1.0},
        6: {"pay": 1.0},
    }
    emit = {0: {START: 1.0}, 7: {END: 1.0}}
    for q, row in words.items():
        emit[q] = {o: p * rest for o, p in row.items()}
        if null > 0:
            emit[q][NULL] = null
    return Hmm(tuple(range(8)), trans, emit)


def random_script(n_interior: int, n_symbols: int, seed=None, null_max: float = 0.5,
                  self_loops: bool = False, edge_prob: float = 0.4,
                  symbols_per_state: int | None = None) -> Hmm:
    """Random left-to-right HMM with states 0..n_interior+1.

    Every state is reachable and reaches the final state. Null emission
    mass is uniform on [0, null_max]; self-loops (when enabled) only go on
    states that cannot emit null.
    """
    rng = np.random.default_rng(seed)
    n = n_interior + 2
    alphabet = [chr(ord("a") + k) for k in range(n_symbols)]
    succ: dict[int, set[int]] = {q: set() for q in range(n - 1)}
    for q in range(n - 1):
        for r in range(q + 1, n):
            if rng.random() < edge_prob:
                succ[q].add(r)
        if not succ[q]:
            succ[q].add(int(rng.integers(q + 1, n)))
    for r in range(1, n - 1):
        if not any(r in s for s in succ.values()):
            succ[int(rng.integers(0, r))].add(r)

    emit = {0: {START: 1.0}, n - 1: {END: 1.0}}
    k = symbols_per_state or n_symbols
    for q in range(1, n - 1):
        chosen = sorted(rng.choice(n_symbols, size=min(k, n_symbols), replace=False))
        weights = rng.dirichlet(np.ones(len(chosen)))
        lam = float(rng.uniform(0, null_max)) if null_max > 0 else 0.0
        if self_loops and rng.random() < 0.5:
            lam = 0.0
            succ[q].add(q)
        row = {alphabet[c]: float(w) * (1 - lam) for c, w in zip(chosen, weights)}
        if lam > 0:
            row[NULL] = lam
        emit[q] = row
    trans = {}
    for q in range(n - 1):
        targets = sorted(succ[q])
        w = rng.dirichlet(np.ones(len(targets)))
        trans[q] = {r: float(p) for r, p in zip(targets, w)}
    return Hmm(tuple(range(n)), trans, emit)


def perturb(hmm: Hmm, seed=None, strength: float = 0.5) -> Hmm:
    """Same structure, parameters mixed with random rows of the same support."""
    rng = np.random.default_rng(seed)

    def mix(row):
        keys = sorted(row, key=str)
        noise = rng.dirichlet(np.ones(len(keys)))
        return {k: (1 - strength) * row[k] + strength * float(x) for k, x in zip(keys, noise)}

    trans = {q: mix(row) for q, row in hmm.trans.items()}
    emit = {q: (row if q in (hmm.initial, hmm.final) else mix(row)) for q, row in hmm.emit.items()}
    return hmm.with_params(trans=trans, emit=emit)

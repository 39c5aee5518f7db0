"""Brute-force reference computations, independent of the package's trellis code.

Everything here enumerates explicit state paths together with the
choice, at every visited state, of emitting the next observed symbol or
nothing. No dynamic programming is shared with the implementation.
"""

import itertools
import math
from collections import defaultdict

from scripthmm.hmm import END, NULL, START


def complete_paths(hmm, obs, max_steps):
    """Yield (path, emissions, probability) for every way of producing ``obs``.

    ``path`` lists the states from q0 to qn, ``emissions[k]`` is what
    ``path[k + 1]`` emitted (a symbol or NULL).
    """
    body = list(obs[1:-1])
    m = len(body)

    def walk(path, emitted, i, prob):
        q = path[-1]
        steps = len(path) - 1
        if steps >= max_steps:
            return
        for r, p in hmm.trans.get(q, {}).items():
            if p == 0:
                continue
            row = hmm.emit[r]
            if r == hmm.final:
                if i == m:
                    yield path + [r], emitted + [END], prob * p * row.get(END, 0.0)
                continue
            lam = row.get(NULL, 0.0)
            if lam > 0:
                yield from walk(path + [r], emitted + [NULL], i, prob * p * lam)
            if i < m and row.get(body[i], 0.0) > 0:
                yield from walk(path + [r], emitted + [body[i]], i + 1, prob * p * row[body[i]])

    yield from walk([hmm.initial], [], 0, 1.0)


def likelihood(hmm, obs, max_steps):
    return math.fsum(p for _, _, p in complete_paths(hmm, obs, max_steps))


def expected_counts(hmm, obs, max_steps):
    """Posterior expected visits, transitions and emissions for one sequence."""
    paths = list(complete_paths(hmm, obs, max_steps))
    z = math.fsum(p for _, _, p in paths)
    visits, trans, emit = defaultdict(float), defaultdict(float), defaultdict(float)
    for path, emitted, p in paths:
        w = p / z
        for q in path:
            visits[q] += w
        for (q, r), o in zip(zip(path, path[1:]), emitted):
            trans[(q, r)] += w
            emit[(q, r, o)] += w
    return z, dict(visits), dict(trans), dict(emit)


def all_sequences(alphabet, max_len):
    """Every sentinel-wrapped sequence with at most ``max_len`` events."""
    for n in range(max_len + 1):
        for body in itertools.product(sorted(alphabet), repeat=n):
            yield (START, *body, END)


def output_distribution(hmm, max_len):
    """Probability of every output of at most ``max_len`` events."""
    alphabet = sorted(hmm.alphabet - {START, END, NULL})
    bound = max_len + len(hmm.states)
    return {s: likelihood(hmm, s, bound) for s in all_sequences(alphabet, max_len)}

"""Turn raw narrative sentences into event labels.

Each sentence is reduced to a verb and an optional object, sentences are
grouped by agglomerative clustering on a weighted verb/object similarity,
and every cluster is named after its most frequent verb.
"""

from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import CorpusError, ModelFormatError
from .hmm import Corpus

log = logging.getLogger(__name__)

STOPWORDS = frozenset("""
a an the and or but if then than so to of in on at by for with from into onto
up down out off over under again back away about through across around
i you he she it we they me him her us them my your his its our their this that
these those there here is am are was were be been being do does did have has had
will would shall should can could may might must just very too also not no now
all some any each every own same other such only more most please
what who whom which when where how towards toward
""".split())

LINKAGES = ("average", "single", "complete")

_TOKEN = re.compile(r"[a-z0-9]+(?:'[a-z]+)?")


@dataclass(frozen=True)
class Sentence:
    text: str
    verb: str
    object: str | None = None


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def parse_sentence(text: str, stopwords: Iterable[str] = STOPWORDS) -> Sentence:
    """Verb = first content token, object = last content token if it differs."""
    stop = stopwords if isinstance(stopwords, (set, frozenset)) else set(stopwords)
    content = [t for t in tokenize(text) if t not in stop]
    if not content:
        raise CorpusError(f"no content tokens in sentence {text!r}")
    verb, obj = content[0], content[-1]
    return Sentence(text, verb, obj if obj != verb else None)


# -- similarity ------------------------------------------------------------------

def _bigrams(token: str) -> set[str]:
    return {token[k:k + 2] for k in range(len(token) - 1)} or {token}


def lexical_ps(a: str, b: str) -> float:
    """1 for equal tokens, else the Dice coefficient of character bigrams."""
    if a == b:
        return 1.0
    x, y = _bigrams(a), _bigrams(b)
    return 2 * len(x & y) / (len(x) + len(y))


def load_similarity_matrix(path) -> dict[tuple[str, str], float]:
    """Read "token1 token2 value" lines and close them under symmetry."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"cannot read {path}: {exc}") from exc
    table: dict[tuple[str, str], float] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        if len(tok) != 3:
            raise ModelFormatError("similarity lines are 'token1 token2 value'", lineno)
        try:
            v = float(tok[2])
        except ValueError:
            raise ModelFormatError(f"similarity is not a number: {tok[2]!r}", lineno) from None
        if not 0 <= v <= 1:
            raise ModelFormatError(f"similarity must be in [0, 1], got {tok[2]}", lineno)
        a, b = tok[0].lower(), tok[1].lower()
        table[(a, b)] = table[(b, a)] = v
    return table


@dataclass(frozen=True)
class SimilaritySpec:
    w1: float = 0.7
    w2: float = 0.3
    matrix: dict[tuple[str, str], float] | None = field(default=None, hash=False)

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0 or self.w1 + self.w2 <= 0:
            raise ValueError("weights must be >= 0 with a positive sum")

    def ps(self, a: str, b: str) -> float:
        if a == b:
            return 1.0
        if self.matrix is None:
            return lexical_ps(a, b)
        try:
            return self.matrix[(a, b)]
        except KeyError:
            raise KeyError(f"similarity matrix has no entry for the pair ({a}, {b})") from None


def similarity(s1: Sentence, s2: Sentence, spec: SimilaritySpec = SimilaritySpec()) -> float:
    pv = spec.ps(s1.verb, s2.verb)
    if s1.object is None and s2.object is None:
        po = 1.0
    elif s1.object is None or s2.object is None:
        po = 0.0
    else:
        po = spec.ps(s1.object, s2.object)
    return (spec.w1 * pv + spec.w2 * po) / (spec.w1 + spec.w2)


# -- clustering ------------------------------------------------------------------

@dataclass
class Clustering:
    sentences: list[Sentence]
    assignment: list[int]  # cluster index of each sentence
    labels: list[str]  # label of each cluster

    @property
    def clusters(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in self.labels]
        for k, c in enumerate(self.assignment):
            out[c].append(k)
        return out

    def label_of(self, k: int) -> str:
        return self.labels[self.assignment[k]]


def _agglomerate(sim: np.ndarray, sizes: np.ndarray, threshold: float, linkage: str) -> list[int]:
    """Merge the most similar pair of clusters until the best similarity
    falls below ``threshold``. Returns the representative of each item."""
    n = len(sizes)
    sim = sim.astype(float).copy()
    sizes = sizes.astype(float).copy()
    active = np.ones(n, dtype=bool)
    upper = np.triu(np.ones((n, n), dtype=bool), k=1)
    owner = list(range(n))
    while active.sum() > 1:
        live = upper & active[:, None] & active[None, :]
        masked = np.where(live, sim, -np.inf)
        flat = int(np.argmax(masked))  # first maximum = smallest (i, j)
        i, j = divmod(flat, n)
        if masked[i, j] < threshold:
            break
        if linkage == "average":
            row = (sizes[i] * sim[i] + sizes[j] * sim[j]) / (sizes[i] + sizes[j])
        elif linkage == "single":
            row = np.maximum(sim[i], sim[j])
        else:
            row = np.minimum(sim[i], sim[j])
        sim[i, :] = row
        sim[:, i] = row
        sizes[i] += sizes[j]
        active[j] = False
        owner = [i if o == j else o for o in owner]
    return owner


def cluster(sentences: list[Sentence], spec: SimilaritySpec = SimilaritySpec(),
            threshold: float = 0.55, linkage: str = "average") -> Clustering:
    """Agglomerative clustering of sentences, deterministic in input order.

    Sentences with the same verb and object are indistinguishable to the
    similarity, so they start out as one weighted item.
    """
    if not sentences:
        raise CorpusError("no sentences to cluster")
    if linkage not in LINKAGES:
        raise ValueError(f"linkage must be one of {LINKAGES}")
    keys: dict[tuple[str, str | None], int] = {}
    item_of = []
    reps: list[Sentence] = []
    for s in sentences:
        key = (s.verb, s.object)
        if key not in keys:
            keys[key] = len(reps)
            reps.append(s)
        item_of.append(keys[key])
    sizes = np.bincount(item_of, minlength=len(reps))
    m = len(reps)
    sim = np.eye(m)
    for a in range(m):
        for b in range(a + 1, m):
            sim[a, b] = sim[b, a] = similarity(reps[a], reps[b], spec)
    owner = _agglomerate(sim, sizes, threshold, linkage)

    index: dict[int, int] = {}
    for o in owner:
        index.setdefault(o, len(index))
    assignment = [index[owner[it]] for it in item_of]
    verbs: list[Counter] = [Counter() for _ in index]
    for s, c in zip(sentences, assignment):
        verbs[c][s.verb] += 1
    labels, taken = [], set()
    for tally in verbs:
        best = min(tally, key=lambda v: (-tally[v], v))
        name, k = best, 1
        while name in taken:
            k += 1
            name = f"{best}_{k}"
        taken.add(name)
        labels.append(name)
    return Clustering(list(sentences), assignment, labels)


# -- narratives --------------------------------------------------------------------

def loads_narratives(text: str) -> list[list[str]]:
    """Blank-line separated blocks, one sentence per line."""
    out: list[list[str]] = [[]]
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            if out[-1]:
                out.append([])
        elif not line.startswith("#"):
            out[-1].append(line)
    return [block for block in out if block]


def read_narratives(path) -> list[list[str]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"cannot read {path}: {exc}") from exc
    return loads_narratives(text)


def corpus_from_narratives(narratives: list[list[str]], clustering: Clustering) -> Corpus:
    """Replace each sentence by its cluster label.

    ``clustering`` must have been built over the narratives' sentences in
    order. Empty narratives are dropped.
    """
    total = sum(len(n) for n in narratives)
    if total != len(clustering.assignment):
        raise ValueError(f"clustering covers {len(clustering.assignment)} sentences, narratives have {total}")
    events, k, empty = [], 0, 0
    for narrative in narratives:
        if not narrative:
            empty += 1
            continue
        events.append([clustering.label_of(k + i) for i in range(len(narrative))])
        k += len(narrative)
    if empty:
        log.warning("dropped %d empty narratives", empty)
    return Corpus.from_events(events)


def extract(narratives: list[list[str]], spec: SimilaritySpec = SimilaritySpec(), threshold: float = 0.55,
            linkage: str = "average", stopwords: Iterable[str] = STOPWORDS) -> tuple[Corpus, Clustering]:
    """Parse, cluster and relabel in one go."""
    stop = frozenset(stopwords)
    sentences = [parse_sentence(t, stop) for n in narratives for t in n]
    clustering = cluster(sentences, spec, threshold, linkage)
    return corpus_from_narratives(narratives, clustering), clustering

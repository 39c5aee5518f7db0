"""Gap-prediction evaluation: splits, baselines, method runs and reports."""

from __future__ import annotations

import logging
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import CorpusError
from .files import read_corpus
from .hmm import END, Corpus, Sequence
from .inference import predict_missing
from .structure import LearnResult, SearchConfig, learn

log = logging.getLogger(__name__)

METHODS = ("sem-hmm", "sem-hmm-approx", "bmm", "bmm-em", "conditional", "frequency")
HMM_METHODS = METHODS[:4]


@dataclass(frozen=True)
class TestItem:
    observed: Sequence
    gap: int
    truth: str


@dataclass(frozen=True)
class RunConfig:
    split: float = 0.4
    seed: int = 0
    rs: tuple[int, ...] = (10,)
    methods: tuple[str, ...] = METHODS
    search: SearchConfig = SearchConfig()
    domain_filter: bool = True
    min_narratives: int = 50
    min_event_types: int = 3

    def __post_init__(self):
        if not 0 < self.split < 1:
            raise ValueError("split must be in (0, 1)")
        if not self.rs or min(self.rs) < 1:
            raise ValueError("r values must be >= 1")
        for m in self.methods:
            check_method(m)


def check_method(method: str) -> None:
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; valid methods: {', '.join(METHODS)}")


# -- evaluation set --------------------------------------------------------------

def make_eval_set(corpus: Corpus, split: float = 0.4, seed: int = 0) -> tuple[Corpus, list[TestItem]]:
    """Hold out round(split * n) narratives at random and drop one
    uniformly chosen event from each of them."""
    if not 0 < split < 1:
        raise ValueError("split must be in (0, 1)")
    n = len(corpus)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    test_idx = set(perm[:round(split * n)].tolist())
    train = Corpus(tuple(seq for k, seq in enumerate(corpus) if k not in test_idx))
    items, skipped = [], 0
    for k in sorted(test_idx):
        seq = corpus[k]
        if len(seq) < 3:
            skipped += 1
            continue
        gap = int(rng.integers(1, len(seq) - 1))
        items.append(TestItem(seq[:gap] + seq[gap + 1:], gap, seq[gap]))
    if skipped:
        log.warning("excluded %d held-out narratives with no events", skipped)
    return train, items


# -- baselines -------------------------------------------------------------------

class FrequencyBaseline:
    """Most frequent training event missing from the observed narrative."""

    def __init__(self, train: Corpus):
        freq = train.frequencies
        self.ranked = sorted(freq, key=lambda o: (-freq[o], o))

    def predict(self, item: TestItem) -> str:
        if not self.ranked:
            raise CorpusError("training corpus has no events")
        seen = set(item.observed)
        for o in self.ranked:
            if o not in seen:
                return o
        return self.ranked[0]


class ConditionalBaseline:
    """Event that most often follows the one before the gap."""

    def __init__(self, train: Corpus):
        self.fallback = FrequencyBaseline(train)
        follows: dict[str, Counter] = defaultdict(Counter)
        for seq in train:
            for a, b in zip(seq, seq[1:]):
                if b != END:
                    follows[a][b] += 1
        self.best = {a: min(c, key=lambda o: (-c[o], o)) for a, c in follows.items() if c}

    def predict(self, item: TestItem) -> str:
        prev = item.observed[item.gap - 1]
        if prev in self.best:
            return self.best[prev]
        return self.fallback.predict(item)


def baseline_frequency(train: Corpus, item: TestItem) -> str:
    return FrequencyBaseline(train).predict(item)


def baseline_conditional(train: Corpus, item: TestItem) -> str:
    return ConditionalBaseline(train).predict(item)


# -- HMM methods -----------------------------------------------------------------

def method_config(method: str, base: SearchConfig = SearchConfig(), r: int | None = None) -> SearchConfig:
    """Search settings that define each HMM method."""
    check_method(method)
    em = base.em
    score = base.score
    if method == "sem-hmm":
        em, score, reruns = replace(em, allow_null=True), replace(score, mode="exact"), True
    elif method == "sem-hmm-approx":
        em, score, reruns = replace(em, allow_null=True), replace(score, mode="approx"), True
    elif method == "bmm":
        em, reruns = replace(em, allow_null=False), False
    elif method == "bmm-em":
        em, reruns = replace(em, allow_null=False), True
    else:
        raise ValueError(f"{method} is not an HMM method")
    return replace(base, em=em, score=score, em_reruns=reruns, batch_size=r or base.batch_size)


def train_method(method: str, train: Corpus, base: SearchConfig = SearchConfig(),
                 r: int | None = None) -> LearnResult:
    return learn(train, method_config(method, base, r))


def hmm_predictions(model, train: Corpus, items: list[TestItem], t_max_factor: float = 1.0) -> list[str]:
    vocab = train.vocabulary
    freq = train.frequencies
    return [predict_missing(model, it.observed, it.gap, vocab, freq, t_max_factor)[0][0] for it in items]


def run_method(method: str, train: Corpus, items: list[TestItem], config: RunConfig = RunConfig(),
               r: int | None = None) -> tuple[int, int]:
    """(correct, total) for one method on one domain."""
    check_method(method)
    if method == "frequency":
        b = FrequencyBaseline(train)
        preds = [b.predict(it) for it in items]
    elif method == "conditional":
        b = ConditionalBaseline(train)
        preds = [b.predict(it) for it in items]
    else:
        res = train_method(method, train, config.search, r or config.rs[0])
        preds = hmm_predictions(res.hmm, train, items, config.search.em.t_max_factor)
    correct = sum(p == it.truth for p, it in zip(preds, items))
    return correct, len(items)


def accuracy(method: str, train: Corpus, items: list[TestItem], config: RunConfig = RunConfig(),
             r: int | None = None) -> float:
    correct, total = run_method(method, train, items, config, r)
    return correct / total if total else 0.0


# -- reports ---------------------------------------------------------------------

@dataclass
class EvalReport:
    rs: tuple[int, ...]
    methods: tuple[str, ...]
    # domain -> (method, r) -> (correct, total)
    domains: dict[str, dict[tuple[str, int], tuple[int, int]]] = field(default_factory=dict)

    def domain_accuracy(self, domain: str, method: str, r: int) -> float:
        correct, total = self.domains[domain][(method, r)]
        return correct / total if total else 0.0

    def accuracy(self, method: str, r: int) -> float:
        """Macro average over domains."""
        if not self.domains:
            return 0.0
        return float(np.mean([self.domain_accuracy(d, method, r) for d in sorted(self.domains)]))

    def improvement_share(self, better: str = "sem-hmm", worse: str = "conditional", r: int | None = None) -> float:
        """Fraction of domains where ``better`` beats ``worse``."""
        r = r if r is not None else self.rs[0]
        if not self.domains:
            return 0.0
        wins = sum(self.domain_accuracy(d, better, r) > self.domain_accuracy(d, worse, r) for d in self.domains)
        return wins / len(self.domains)

    def table(self) -> str:
        head = ["method"] + [f"r={r}" for r in self.rs]
        rows = [[m] + [f"{100 * self.accuracy(m, r):.1f}" for r in self.rs] for m in self.methods]
        widths = [max(len(row[k]) for row in [head] + rows) for k in range(len(head))]

        def fmt(row):
            return "  ".join(c.ljust(w) if k == 0 else c.rjust(w) for k, (c, w) in enumerate(zip(row, widths)))

        lines = [fmt(head), "  ".join("-" * w for w in widths)] + [fmt(row) for row in rows]
        lines.append(f"domains: {len(self.domains)}")
        if {"sem-hmm", "conditional"} <= set(self.methods) and len(self.domains) > 1:
            for r in self.rs:
                lines.append(f"sem-hmm beats conditional on {100 * self.improvement_share(r=r):.1f}% of domains (r={r})")
        return "\n".join(lines) + "\n"

    def rows(self) -> str:
        out = ["domain\tmethod\tr\tcorrect\ttotal\taccuracy"]
        for d in sorted(self.domains):
            for m in self.methods:
                for r in self.rs:
                    c, t = self.domains[d][(m, r)]
                    out.append(f"{d}\t{m}\t{r}\t{c}\t{t}\t{c / t if t else 0.0:.6f}")
        return "\n".join(out) + "\n"


def evaluate_domain(corpus: Corpus, config: RunConfig = RunConfig()) -> dict[tuple[str, int], tuple[int, int]]:
    train, items = make_eval_set(corpus, config.split, config.seed)
    if len(train) == 0:
        raise CorpusError("no training narratives after the split")
    out = {}
    for m in config.methods:
        if m in HMM_METHODS:
            for r in config.rs:
                out[(m, r)] = run_method(m, train, items, config, r)
        else:
            res = run_method(m, train, items, config)
            for r in config.rs:
                out[(m, r)] = res
    return out


def qualifies(corpus: Corpus, config: RunConfig = RunConfig()) -> bool:
    return len(corpus) >= config.min_narratives and len(corpus.vocabulary) >= config.min_event_types


def _evaluate_named(args):
    name, corpus, config = args
    return name, evaluate_domain(corpus, config)


def evaluate(domains: dict[str, Corpus], config: RunConfig = RunConfig(), jobs: int = 1) -> EvalReport:
    """Evaluate every domain; with several domains the size filter applies
    unless disabled."""
    if len(domains) > 1 and config.domain_filter:
        kept = {n: c for n, c in domains.items() if qualifies(c, config)}
        if len(kept) < len(domains):
            log.info("domain filter kept %d of %d domains", len(kept), len(domains))
        domains = kept
    if not domains:
        raise CorpusError("no domain qualifies for evaluation")
    report = EvalReport(tuple(config.rs), tuple(config.methods))
    work = [(n, domains[n], config) for n in sorted(domains)]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_evaluate_named, work))
    else:
        results = [_evaluate_named(w) for w in work]
    for name, res in results:
        report.domains[name] = res
    return report


def load_domains(path) -> dict[str, Corpus]:
    """A corpus file is one domain; a directory holds one domain per file."""
    path = Path(path)
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.is_file() and not p.name.startswith("."))
        if not files:
            raise CorpusError(f"no corpus files in {path}")
        return {p.stem: read_corpus(p) for p in files}
    return {path.stem: read_corpus(path)}

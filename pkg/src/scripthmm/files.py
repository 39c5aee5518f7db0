"""Text formats for models and corpora.

Model file::

    STATES
    <id> <ordinal>
    TRANS
    <q> <q'> <prob>
    EMIT
    <q> <symbol> <prob>          # the null symbol is written &lambda;
    COUNTS
    V <q> <count>
    T <q> <q'> <count>
    E <q> <q'> <symbol> <count>

Corpus file: one narrative per line, whitespace separated labels, no
sentinels. Lines starting with ``#`` and blank lines are skipped.
"""

from __future__ import annotations

import math
from pathlib import Path

from .errors import ModelFormatError
from .hmm import NULL, CountTable, Corpus, Hmm, validate

NULL_ESCAPE = "&lambda;"
SECTIONS = ("STATES", "TRANS", "EMIT", "COUNTS")


def fmt_float(x: float) -> str:
    return format(x, ".17g")


def _sym_out(o: str) -> str:
    return NULL_ESCAPE if o == NULL else o


def _sym_in(o: str) -> str:
    return NULL if o == NULL_ESCAPE else o


def dumps_model(hmm: Hmm, counts: CountTable | None = None) -> str:
    pos = hmm.position
    lines = ["# scripthmm model", "STATES"]
    lines += [f"{q} {i}" for i, q in enumerate(hmm.states)]
    lines.append("TRANS")
    for q in hmm.states:
        for r in sorted(hmm.trans.get(q, {}), key=pos.__getitem__):
            lines.append(f"{q} {r} {fmt_float(hmm.trans[q][r])}")
    lines.append("EMIT")
    for q in hmm.states:
        row = hmm.emit.get(q, {})
        for o in sorted(row):
            lines.append(f"{q} {_sym_out(o)} {fmt_float(row[o])}")
    lines.append("COUNTS")
    if counts is not None:
        for q in sorted(counts.visits, key=pos.__getitem__):
            lines.append(f"V {q} {fmt_float(counts.visits[q])}")
        for q, r in sorted(counts.trans, key=lambda k: (pos[k[0]], pos[k[1]])):
            lines.append(f"T {q} {r} {fmt_float(counts.trans[(q, r)])}")
        for q, r, o in sorted(counts.emit, key=lambda k: (pos[k[0]], pos[k[1]], k[2])):
            lines.append(f"E {q} {r} {_sym_out(o)} {fmt_float(counts.emit[(q, r, o)])}")
    return "\n".join(lines) + "\n"


def save_model(path, hmm: Hmm, counts: CountTable | None = None) -> None:
    problem = validate(hmm)
    if problem is not None:
        raise ValueError(f"refusing to save invalid model: {problem}")
    Path(path).write_text(dumps_model(hmm, counts), encoding="utf-8")


def _number(tok: str, what: str, lineno: int, prob: bool) -> float:
    try:
        x = float(tok)
    except ValueError:
        raise ModelFormatError(f"{what} is not a number: {tok!r}", lineno) from None
    if not math.isfinite(x) or x < 0 or (prob and x > 1):
        bound = "[0, 1]" if prob else "[0, inf)"
        raise ModelFormatError(f"{what} must be in {bound}, got {tok}", lineno)
    return x


def _state(tok: str, known: dict[int, int], lineno: int, section: str) -> int:
    try:
        q = int(tok)
    except ValueError:
        raise ModelFormatError(f"bad state id {tok!r} in {section}", lineno) from None
    if q not in known:
        raise ModelFormatError(f"unknown state {tok!r} in {section}", lineno)
    return q


def loads_model(text: str) -> tuple[Hmm, CountTable]:
    section = None
    ordinals: dict[int, int] = {}
    trans: dict[int, dict[int, float]] = {}
    emit: dict[int, dict[str, float]] = {}
    counts = CountTable()
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line in SECTIONS:
            if line in seen:
                raise ModelFormatError(f"duplicate section {line}", lineno)
            seen.add(line)
            section = line
            continue
        tok = line.split()
        if section is None:
            raise ModelFormatError("content before first section header", lineno)
        if section == "STATES":
            if len(tok) != 2:
                raise ModelFormatError("STATES lines are '<id> <ordinal>'", lineno)
            try:
                q, k = int(tok[0]), int(tok[1])
            except ValueError:
                raise ModelFormatError("state id and ordinal must be integers", lineno) from None
            if q in ordinals:
                raise ModelFormatError(f"duplicate state {q}", lineno)
            ordinals[q] = k
        elif section == "TRANS":
            if len(tok) != 3:
                raise ModelFormatError("TRANS lines are '<q> <q2> <prob>'", lineno)
            q = _state(tok[0], ordinals, lineno, "TRANS")
            r = _state(tok[1], ordinals, lineno, "TRANS")
            trans.setdefault(q, {})[r] = _number(tok[2], "TRANS probability", lineno, True)
        elif section == "EMIT":
            if len(tok) != 3:
                raise ModelFormatError("EMIT lines are '<q> <symbol> <prob>'", lineno)
            q = _state(tok[0], ordinals, lineno, "EMIT")
            emit.setdefault(q, {})[_sym_in(tok[1])] = _number(tok[2], "EMIT probability", lineno, True)
        else:
            kind = tok[0]
            if kind == "V" and len(tok) == 3:
                q = _state(tok[1], ordinals, lineno, "COUNTS")
                counts.visits[q] = _number(tok[2], "visit count", lineno, False)
            elif kind == "T" and len(tok) == 4:
                q = _state(tok[1], ordinals, lineno, "COUNTS")
                r = _state(tok[2], ordinals, lineno, "COUNTS")
                counts.trans[(q, r)] = _number(tok[3], "transition count", lineno, False)
            elif kind == "E" and len(tok) == 5:
                q = _state(tok[1], ordinals, lineno, "COUNTS")
                r = _state(tok[2], ordinals, lineno, "COUNTS")
                counts.emit[(q, r, _sym_in(tok[3]))] = _number(tok[4], "emission count", lineno, False)
            else:
                raise ModelFormatError("COUNTS lines are 'V q c', 'T q q2 c' or 'E q q2 sym c'", lineno)
    if "STATES" not in seen or not ordinals:
        raise ModelFormatError("missing STATES section")
    order = sorted(ordinals, key=ordinals.__getitem__)
    if sorted(ordinals.values()) != list(range(len(order))):
        raise ModelFormatError("state ordinals must be 0..n-1")
    hmm = Hmm(tuple(order), trans, emit)
    problem = validate(hmm)
    if problem is not None:
        raise ModelFormatError(f"invalid model: {problem}")
    return hmm, counts


def load_model(path) -> tuple[Hmm, CountTable]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"cannot read {path}: {exc}") from exc
    return loads_model(text)


def loads_corpus(text: str) -> Corpus:
    narratives = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            narratives.append(Corpus.from_events([line.split()]).narratives[0])
        except ValueError as exc:
            raise ModelFormatError(str(exc), lineno) from None
    return Corpus(tuple(narratives))


def read_corpus(path) -> Corpus:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"cannot read {path}: {exc}") from exc
    return loads_corpus(text)


def dumps_corpus(corpus: Corpus) -> str:
    return "".join(" ".join(seq[1:-1]) + "\n" for seq in corpus)


def write_corpus(path, corpus: Corpus) -> None:
    Path(path).write_text(dumps_corpus(corpus), encoding="utf-8")

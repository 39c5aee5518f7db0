"""Command line interface: extract, train, evaluate, generate, inspect.

Exit status is 0 on success, 1 for usage errors and 2 for bad input data.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import extraction
from .em import EmConfig
from .errors import ScriptHmmError
from .files import dumps_corpus, load_model, read_corpus, save_model
from .hmm import END, NULL, START, Hmm, sample_corpus
from .inference import trellis
from .pipeline import HMM_METHODS, METHODS, RunConfig, evaluate, hmm_predictions, load_domains, \
    make_eval_set, method_config
from .scoring import ConstraintSet, ScoreConfig
from .structure import PRUNING_MODES, SearchConfig, learn
from .synthetic import six_state_script

log = logging.getLogger("scripthmm")

BUILTINS = {"six-state": six_state_script}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _search_flags(p):
    p.add_argument("--r", type=int, action="append", help="batch size; repeat for several (evaluate)")
    p.add_argument("--mode", choices=("exact", "approx"), default="exact",
                   help="likelihood used by bmm and bmm-em; sem-hmm is exact, sem-hmm-approx approximate")
    p.add_argument("--kappa-q", type=float, default=1.0)
    p.add_argument("--kappa-t", type=float, default=1.0)
    p.add_argument("--kappa-c", type=float, default=1.0)
    p.add_argument("--p0", type=float, default=0.05)
    p.add_argument("--significance", type=float, default=0.01)
    p.add_argument("--pruning", choices=PRUNING_MODES, default="all-pairs")
    p.add_argument("--pseudocount", type=float, default=1.0)
    p.add_argument("--max-iters", type=int, default=100)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scripthmm", description="Learn scripts as left-to-right HMMs with null emissions.")
    parser.add_argument("--config", help="flat key=value file; command line flags override it")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("extract", help="raw narratives -> corpus file")
    p.add_argument("--narratives", required=True, help="blank-line separated narratives, one sentence per line")
    p.add_argument("--corpus", help="output corpus file (default stdout)")
    p.add_argument("--similarity-matrix", help="file of 'token1 token2 value' lines")
    p.add_argument("--threshold", type=float, default=0.55)
    p.add_argument("--w1", type=float, default=0.7)
    p.add_argument("--w2", type=float, default=0.3)
    p.add_argument("--linkage", choices=extraction.LINKAGES, default="average")
    p.add_argument("--clusters", help="also write the sentence -> label assignment here")

    p = sub.add_parser("train", help="corpus -> model file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True, help="output model file")
    p.add_argument("--constraints", help="constraint file to read if it exists, else to write")
    p.add_argument("--method", choices=HMM_METHODS, default="sem-hmm")
    _search_flags(p)

    p = sub.add_parser("evaluate", help="gap-prediction accuracy of methods on held-out narratives")
    p.add_argument("--corpus", required=True, help="corpus file, or a directory with one file per domain")
    p.add_argument("--model", help="also score this trained model as method 'model' (single domain)")
    p.add_argument("--method", action="append", choices=METHODS)
    p.add_argument("--split", type=float, default=0.4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--no-domain-filter", action="store_true")
    p.add_argument("--rows", help="write tab-separated result rows here instead of stdout")
    _search_flags(p)

    p = sub.add_parser("generate", help="sample a corpus from a known model")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--builtin", choices=sorted(BUILTINS))
    src.add_argument("--model")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--null", type=float, default=0.15, help="null emission rate of the builtin script")
    p.add_argument("--corpus", help="output corpus file (default stdout)")
    p.add_argument("--save-model", help="write the generating model here")

    p = sub.add_parser("inspect", help="human-readable summary of a model")
    p.add_argument("--model", required=True)
    p.add_argument("--top", type=int, default=5, help="emissions shown per state")
    p.add_argument("--trellis", metavar="EVENTS", help="dump the forward/backward trellis of this narrative")
    p.add_argument("--t-max", type=int)
    return parser


# -- config file -------------------------------------------------------------------

def read_config(path) -> dict[str, str]:
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _config_defaults(parser, argv) -> dict:
    """Install config file values as subcommand defaults so explicit flags win."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    command = next((a for a in argv if a in COMMANDS), None)
    if not known.config or command is None:
        return {}
    values = read_config(known.config)
    sub = parser._subparsers._group_actions[0].choices[command]
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None or key in ("help", "config"):
            raise UsageError(f"unknown config key {key!r} for {command}")
        conv = action.type or str
        try:
            if isinstance(action, argparse._StoreTrueAction):
                value = raw.lower() in ("1", "true", "yes", "on")
            elif isinstance(action, argparse._AppendAction):
                value = [conv(v.strip()) for v in raw.split(",") if v.strip()]
            else:
                value = conv(raw)
        except ValueError:
            raise UsageError(f"config {key}: bad value {raw!r}") from None
        if action.choices is not None:
            bad = [v for v in (value if isinstance(value, list) else [value]) if v not in action.choices]
            if bad:
                raise UsageError(f"config {key}: invalid choice {bad[0]!r}")
        defaults[key] = value
        action.required = False
    sub.set_defaults(**defaults)
    return defaults


# -- commands ----------------------------------------------------------------------

def _search_config(args) -> SearchConfig:
    em = EmConfig(max_iters=args.max_iters, pseudocount=args.pseudocount)
    score = ScoreConfig(kappa_q=args.kappa_q, kappa_t=args.kappa_t, kappa_c=args.kappa_c,
                        p0=args.p0, significance=args.significance, mode=args.mode)
    r = (args.r or [10])[0]
    return SearchConfig(batch_size=r, pruning=args.pruning, em=em, score=score)


def _write_or_print(text: str, path) -> None:
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_extract(args) -> int:
    narratives = extraction.read_narratives(args.narratives)
    if not narratives:
        raise ScriptHmmError(f"no narratives in {args.narratives}")
    matrix = extraction.load_similarity_matrix(args.similarity_matrix) if args.similarity_matrix else None
    spec = extraction.SimilaritySpec(args.w1, args.w2, matrix)
    corpus, clustering = extraction.extract(narratives, spec, args.threshold, args.linkage)
    _write_or_print(dumps_corpus(corpus), args.corpus)
    if args.clusters:
        lines = [f"{clustering.label_of(k)}\t{s.verb}\t{s.object or '-'}\t{s.text}"
                 for k, s in enumerate(clustering.sentences)]
        Path(args.clusters).write_text("\n".join(lines) + "\n", encoding="utf-8")
    log.info("%d narratives, %d event types", len(corpus), len(clustering.labels))
    return 0


def cmd_train(args) -> int:
    corpus = read_corpus(args.corpus)
    config = method_config(args.method, _search_config(args))
    constraints = None
    if args.constraints and Path(args.constraints).exists():
        constraints = ConstraintSet.load(args.constraints)
    res = learn(corpus, config, constraints)
    save_model(args.model, res.hmm, res.counts)
    if args.constraints and constraints is None:
        res.constraints.save(args.constraints)
    log.info("trained %s: %d states, %d transitions", args.method, len(res.hmm.states), res.hmm.n_transitions)
    return 0


def cmd_evaluate(args) -> int:
    domains = load_domains(args.corpus)
    methods = tuple(args.method or METHODS)
    config = RunConfig(split=args.split, seed=args.seed, rs=tuple(args.r or [10]), methods=methods,
                       search=_search_config(args), domain_filter=not args.no_domain_filter)
    report = evaluate(domains, config, jobs=args.jobs)
    text = report.table()
    if args.model:
        if len(domains) != 1:
            raise UsageError("--model needs a single-domain corpus")
        hmm, _ = load_model(args.model)
        train, items = make_eval_set(next(iter(domains.values())), config.split, config.seed)
        preds = hmm_predictions(hmm, train, items)
        correct = sum(p == it.truth for p, it in zip(preds, items))
        text += f"model {args.model}: {100 * correct / max(len(items), 1):.1f}% ({correct}/{len(items)})\n"
    sys.stdout.write(text)
    if args.rows:
        Path(args.rows).write_text(report.rows(), encoding="utf-8")
    else:
        sys.stdout.write("\n" + report.rows())
    return 0


def cmd_generate(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    if args.builtin:
        hmm = BUILTINS[args.builtin](args.null)
    else:
        hmm, _ = load_model(args.model)
    corpus = sample_corpus(hmm, args.n, args.seed)
    _write_or_print(dumps_corpus(corpus), args.corpus)
    if args.save_model:
        save_model(args.save_model, hmm)
    return 0


def describe(hmm: Hmm, top: int = 5) -> str:
    """States in topological order with their strongest emissions and outgoing transitions."""
    lines = [f"{len(hmm.states)} states, {hmm.n_transitions} transitions"]
    for k, q in enumerate(hmm.states):
        if q == hmm.initial:
            name = "start"
        elif q == hmm.final:
            name = "end"
        else:
            name = f"state {q}"
        lines.append(f"[{k}] {name}")
        row = hmm.emit.get(q, {})
        if q not in (hmm.initial, hmm.final):
            ranked = sorted(row.items(), key=lambda kv: (-kv[1], kv[0]))
            shown = ", ".join(f"{'(null)' if o == NULL else o} {p:.3f}" for o, p in ranked[:top])
            more = f" (+{len(ranked) - top} more)" if len(ranked) > top else ""
            lines.append(f"    emits  {shown}{more}")
        succ = hmm.successors(q)
        if succ:
            shown = ", ".join(f"{'self' if r == q else hmm.position[r]} {hmm.trans[q][r]:.3f}" for r in succ)
            lines.append(f"    next   {shown}")
    return "\n".join(lines) + "\n"


def cmd_inspect(args) -> int:
    hmm, _ = load_model(args.model)
    if args.trellis is not None:
        obs = (START, *args.trellis.split(), END)
        sys.stdout.write(trellis(hmm, obs, args.t_max).dump() + "\n")
    else:
        sys.stdout.write(describe(hmm, args.top))
    return 0


COMMANDS = {"extract": cmd_extract, "train": cmd_train, "evaluate": cmd_evaluate,
            "generate": cmd_generate, "inspect": cmd_inspect}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        defaults = _config_defaults(parser, argv)
    except UsageError as exc:
        print(f"scripthmm: error: {exc}", file=sys.stderr)
        return 1
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    for key, value in defaults.items():
        # append flags add to the config list; a flag on the command line replaces it
        got = getattr(args, key)
        if isinstance(value, list) and isinstance(got, list) and len(got) > len(value):
            setattr(args, key, got[len(value):])
    logging.basicConfig(level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"scripthmm: error: {exc}", file=sys.stderr)
        return 1
    except (ScriptHmmError, ValueError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"scripthmm: error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())


import pytest

from scripthmm.errors import CorpusError
from scripthmm.files import write_corpus
from scripthmm.hmm import END, START, Corpus
from scripthmm.pipeline import TestItem as Item
from scripthmm.pipeline import (METHODS, EvalReport, RunConfig, baseline_conditional,
                                baseline_frequency, evaluate, load_domains, make_eval_set, method_config,
                                run_method, train_method)



class TestEvalSet:
    def test_gap_bookkeeping(self):
        corpus = Corpus.from_events([["a", "b"]] * 5)
        _, items = make_eval_set(corpus, 0.4, seed=1)
        for it in items:
            assert it.observed[:it.gap] + (it.truth,) + it.observed[it.gap:] == (START, "a", "b", END)

    def test_sizes(self):
        corpus = Corpus.from_events([["a", str(k)] for k in range(10)])
        train, items = make_eval_set(corpus, 0.4, seed=3)
        assert len(items) == 4 and len(train) == 6

    def test_seeded(self):
        corpus = Corpus.from_events([["a", str(k)] for k in range(10)])
        assert make_eval_set(corpus, 0.4, 7) == make_eval_set(corpus, 0.4, 7)

    def test_event_free_narratives_are_excluded(self, caplog):
        corpus = Corpus((tuple([START, END]),) * 10, )
        _, items = make_eval_set(corpus, 0.5, 0)
        assert items == []
        assert "excluded 5" in caplog.text

    def test_bad_split(self):
        with pytest.raises(ValueError):
            make_eval_set(Corpus.from_events([["a"]]), 1.0)


def item(events, gap):
    seq = (START, *events, END)
    return Item(seq[:gap] + seq[gap + 1:], gap, seq[gap])


class TestBaselines:
    def test_frequency(self):
        train = Corpus.from_events([["a"]] * 5 + [["b"]] * 3)
        assert baseline_frequency(train, item(["a", "x"], 2)) == "b"

    def test_frequency_fallback(self):
        train = Corpus.from_events([["a"]] * 5 + [["b"]] * 3)
        assert baseline_frequency(train, item(["a", "b", "x"], 3)) == "a"
        assert baseline_frequency(train, item(["x"], 1)) == "a"

    def test_frequency_ties(self):
        train = Corpus.from_events([["b"], ["a"]])
        assert baseline_frequency(train, item(["x"], 1)) == "a"

    def test_conditional(self):
        train = Corpus.from_events([["a", "b"]] * 3 + [["a", "c"]])
        assert baseline_conditional(train, item(["a", "b"], 2)) == "b"

    def test_conditional_on_start(self):
        train = Corpus.from_events([["a", "b"]] * 3 + [["c"]] * 4)
        assert baseline_conditional(train, item(["a", "b"], 1)) == "c"

    def test_conditional_unseen_prefix(self):
        train = Corpus.from_events([["a", "b"]] * 3 + [["c"]])
        assert baseline_conditional(train, item(["z", "q"], 2)) == "a"


class TestMethods:
    def test_unknown(self):
        with pytest.raises(ValueError, match="valid methods: sem-hmm"):
            run_method("hmm", Corpus.from_events([["a"]]), [])

    def test_chain_domain_is_perfect(self):
        corpus = Corpus.from_events([["a", "b", "c"]] * 10)
        train, items = make_eval_set(corpus, 0.4, 0)
        for m in METHODS[:4]:
            assert run_method(m, train, items) == (len(items), len(items))

    def test_bmm_never_emits_null(self):
        corpus = Corpus.from_events([["a", "b", "c"], ["a", "c"], ["b", "c"], ["a", "b"]] * 3)
        res = train_method("bmm", corpus)
        assert all(res.hmm.null_prob(q) == 0 for q in res.hmm.states)
        assert not method_config("bmm").em_reruns
        assert method_config("bmm-em").em_reruns

    def test_sem_modes(self):
        assert method_config("sem-hmm").score.mode == "exact"
        assert method_config("sem-hmm-approx").score.mode == "approx"
        assert method_config("sem-hmm", r=3).batch_size == 3


class TestReport:
    def report(self):
        rep = EvalReport((5, 10), ("sem-hmm", "conditional"))
        rep.domains["x"] = {("sem-hmm", 5): (3, 4), ("sem-hmm", 10): (2, 4),
                            ("conditional", 5): (1, 4), ("conditional", 10): (1, 4)}
        rep.domains["y"] = {("sem-hmm", 5): (1, 2), ("sem-hmm", 10): (1, 2),
                            ("conditional", 5): (2, 2), ("conditional", 10): (2, 2)}
        return rep

    def test_macro_average(self):
        assert self.report().accuracy("sem-hmm", 5) == pytest.approx((0.75 + 0.5) / 2)

    def test_improvement_share(self):
        assert self.report().improvement_share(r=5) == 0.5

    def test_table_layout(self):
        lines = self.report().table().splitlines()
        assert lines[0].split() == ["method", "r=5", "r=10"]
        assert lines[2].split() == ["sem-hmm", "62.5", "50.0"]
        assert lines[4] == "domains: 2"

    def test_rows(self):
        rows = self.report().rows().splitlines()
        assert rows[1] == "x\tsem-hmm\t5\t3\t4\t0.750000"
        assert len(rows) == 1 + 2 * 2 * 2


class TestEvaluate:
    def test_domain_filter(self):
        big = Corpus.from_events([["a", "b", "c"]] * 50)
        small = Corpus.from_events([["a", "b", "c"]] * 10)
        cfg = RunConfig(methods=("frequency", "conditional"))
        rep = evaluate({"big": big, "small": small}, cfg)
        assert list(rep.domains) == ["big"]
        rep = evaluate({"big": big, "small": small}, RunConfig(methods=("frequency",), domain_filter=False))
        assert sorted(rep.domains) == ["big", "small"]

    def test_nothing_qualifies(self):
        small = Corpus.from_events([["a"]] * 3)
        with pytest.raises(CorpusError):
            evaluate({"a": small, "b": small}, RunConfig(methods=("frequency",)))

    def test_bookkeeping(self):
        corpus = Corpus.from_events([["a", "b", "c"], ["a", "c"], ["b", "c", "d"]] * 5)
        rep = evaluate({"d": corpus}, RunConfig(methods=("sem-hmm", "frequency")))
        for (m, r), (c, t) in rep.domains["d"].items():
            assert 0 <= c <= t == 6

    def test_load_domains(self, tmp_path):
        write_corpus(tmp_path / "one.txt", Corpus.from_events([["a"]]))
        write_corpus(tmp_path / "two.txt", Corpus.from_events([["b"]]))
        assert sorted(load_domains(tmp_path)) == ["one", "two"]
        assert list(load_domains(tmp_path / "one.txt")) == ["one"]

    def test_config_validation(self):
        with pytest.raises(ValueError):
            RunConfig(split=0)
        with pytest.raises(ValueError):
            RunConfig(rs=(0,))
        with pytest.raises(ValueError):
            RunConfig(methods=("magic",))

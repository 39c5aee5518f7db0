import math

import pytest
from hypothesis import given, strategies as st

from scripthmm.em import EmConfig, em_fit, log_dirichlet_prior, m_step
from scripthmm.errors import UnreachableError
from scripthmm.hmm import END, NULL, START, CountTable, Corpus, Hmm, build_pta, sample_corpus
from scripthmm.inference import expected_counts, sequence_likelihoods
from scripthmm.synthetic import perturb, random_script

from conftest import chain

A = (START, "a", END)
E0 = (START, END)


def fork():
    return Hmm((0, 1, 2, 3), {0: {1: 0.5, 2: 0.5}, 1: {3: 1.0}, 2: {3: 1.0}},
               {0: {START: 1.0}, 1: {"a": 1.0}, 2: {"b": 1.0}, 3: {END: 1.0}})


class TestMStep:
    def test_prior_only_is_uniform(self):
        h = m_step(fork(), CountTable(), EmConfig(allow_null=False))
        assert h.trans[0] == {1: 0.5, 2: 0.5}

    def test_smoothed_transitions(self):
        counts = CountTable(trans={(0, 1): 3.0, (0, 2): 1.0}, visits={0: 4.0})
        h = m_step(fork(), counts, EmConfig(allow_null=False))
        assert h.trans[0][1] == pytest.approx(4 / 6)
        assert h.trans[0][2] == pytest.approx(2 / 6)

    def test_sentinels_stay_pinned(self):
        counts = CountTable(emit={(0, 1, "a"): 5.0})
        h = m_step(fork(), counts)
        assert h.emit[0] == {START: 1.0}
        assert h.emit[3] == {END: 1.0}

    def test_emission_smoothing_is_over_support(self, m0):
        counts = CountTable(emit={(0, 1, "a"): 7.0, (0, 1, NULL): 3.0})
        h = m_step(m0, counts)
        # one pseudocount for each of a and null
        assert h.emit[1]["a"] == pytest.approx(8 / 12)
        assert h.emit[1][NULL] == pytest.approx(4 / 12)

    def test_without_null(self, m0):
        h = m_step(m0, CountTable(emit={(0, 1, "a"): 7.0}), EmConfig(allow_null=False))
        assert h.emit[1] == {"a": 1.0}

    def test_full_vocabulary_smoothing(self):
        h = m_step(fork(), CountTable(), EmConfig(full_vocabulary=True, allow_null=False))
        assert set(h.emit[1]) == {"a", "b"}

    def test_only_requested_rows(self):
        counts = CountTable(trans={(0, 1): 9.0})
        h = m_step(fork(), counts, rows=[1])
        assert h.trans[0] == {1: 0.5, 2: 0.5}

    @given(st.integers(0, 10_000))
    def test_rows_are_stochastic(self, seed):
        h = random_script(4, 3, seed=seed)
        counts = expected_counts(h, [(START, "a", "b", END), (START, "c", END)])
        new = m_step(h, counts)
        for row in list(new.trans.values()) + list(new.emit.values()):
            assert math.fsum(row.values()) == pytest.approx(1.0, abs=1e-12)

    def test_bad_config(self):
        for kw in ({"max_iters": 0}, {"rel_tol": 0}, {"pseudocount": -1}):
            with pytest.raises(ValueError):
                EmConfig(**kw)


class TestFit:
    def test_single_state_closed_form(self, m0):
        res = em_fit(m0, [A] * 7 + [E0] * 3, EmConfig(max_iters=1))
        assert len(res.trace) == 1
        assert res.hmm.emit[1]["a"] == pytest.approx(8 / 12)

    def test_converges_to_fixed_point(self, m0):
        res = em_fit(m0, [A] * 7 + [E0] * 3)
        assert res.converged
        assert res.hmm.emit[1]["a"] == pytest.approx(8 / 12)

    def test_pta_is_stationary_without_smoothing(self):
        corpus = Corpus.from_events([["a", "b"], ["a", "c"], ["a", "b"], ["d"]])
        cfg = EmConfig(pseudocount=0, allow_null=False)
        pta, _ = build_pta(corpus)
        res = em_fit(pta, corpus, cfg)
        assert res.converged and len(res.trace) <= 2
        assert res.trace[-1] == pytest.approx(res.trace[0], abs=1e-9)

    def test_model_excludes_corpus(self):
        with pytest.raises(UnreachableError, match="model excludes corpus"):
            em_fit(chain({"a": 1.0}), [(START, "b", END)])

    def test_empty_corpus(self, m0):
        with pytest.raises(ValueError):
            em_fit(m0, [])

    def test_verbose_log(self, m0, caplog):
        caplog.set_level("INFO", logger="scripthmm.em")
        em_fit(m0, [A, E0], EmConfig(max_iters=2), verbose=True)
        first = caplog.records[0].getMessage().split("\t")
        assert first[0] == "1" and len(first) == 3

    @given(st.integers(0, 10_000))
    def test_objective_never_decreases(self, seed):
        true = random_script(3, 3, seed=seed)
        corpus = sample_corpus(true, 30, seed=seed)
        res = em_fit(perturb(true, seed=seed + 1), corpus, EmConfig(max_iters=30))
        obj = res.objective
        assert all(b >= a - 1e-8 for a, b in zip(obj, obj[1:]))

    @given(st.integers(0, 10_000))
    def test_sentinels_after_fit(self, seed):
        true = random_script(3, 2, seed=seed)
        res = em_fit(perturb(true, seed=seed), sample_corpus(true, 10, seed=seed), EmConfig(max_iters=5))
        assert res.hmm.emit[res.hmm.initial] == {START: 1.0}
        assert res.hmm.emit[res.hmm.final] == {END: 1.0}

    def test_prior_is_zero_without_pseudocount(self, m0):
        assert log_dirichlet_prior(m0, EmConfig(pseudocount=0)) == 0.0
        assert log_dirichlet_prior(m0) == pytest.approx(math.log(0.7) + math.log(0.3))

    def test_trace_is_likelihood_of_input_params(self, m0):
        corpus = [A, A, E0]
        res = em_fit(m0, corpus, EmConfig(max_iters=1))
        assert res.trace[0] == pytest.approx(sum(sequence_likelihoods(m0, corpus)))

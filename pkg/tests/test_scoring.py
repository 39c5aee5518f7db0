import itertools
import math

import pytest
from hypothesis import given, strategies as st

from scripthmm.em import EmConfig, m_step
from scripthmm.errors import ModelFormatError
from scripthmm.hmm import END, NULL, START, CountTable, Corpus, build_pta, sample_corpus
from scripthmm.inference import LOG_FLOOR, expected_counts, sequence_likelihoods
from scripthmm.scoring import (ApproxLikelihood, ConstraintSet, ExactLikelihood, ScoreConfig,
                               count_model_violations, log_likelihood_approx, log_likelihood_exact,
                               log_prior, mine_constraints, score, z_test)
from scripthmm.structure import enumerate_candidates, merge_states
from scripthmm.synthetic import random_script

import oracle
from conftest import chain

A = (START, "a", END)
E0 = (START, END)


def all_rules(symbols):
    return ConstraintSet({(x, y): (100, 0) for x, y in itertools.permutations(symbols, 2)})


class TestZTest:
    def test_included(self):
        z, p = z_test(200, 1, 0.05)
        assert z == pytest.approx(-2.92, abs=0.01)
        assert p == pytest.approx(0.0018, abs=1e-4)

    def test_excluded_at_one_percent(self):
        z, p = z_test(100, 0, 0.05)
        assert z == pytest.approx(-2.29, abs=0.01)
        assert p == pytest.approx(0.011, abs=1e-3)


class TestMining:
    def test_rule_from_strict_order(self):
        corpus = Corpus.from_events([["a", "b"]] * 200 + [["c"]])
        cs = mine_constraints(corpus)
        assert cs.rules == {("c", "a"): (200, 0)}

    def test_counts(self):
        corpus = Corpus.from_events([["a", "b"]] * 199 + [["a", "c"]] + [["b", "a"]])
        cs = mine_constraints(corpus)
        # a has 200 opportunities; b followed a 199 times, c once
        assert cs.rules[("c", "a")] == (200, 1)
        assert ("b", "a") not in cs

    def test_too_little_evidence(self):
        corpus = Corpus.from_events([["a", "b"]] * 100)
        assert ("b", "a") not in mine_constraints(corpus)  # n=100, v=0 -> p=0.011
        assert ("a", "b") not in mine_constraints(corpus)  # never an opportunity

    def test_high_rate_never_included(self):
        corpus = Corpus.from_events([["a", "b"]] * 90 + [["a", "c"]] * 10)
        assert ("c", "a") not in mine_constraints(corpus)

    def test_deterministic_and_round_trip(self, tmp_path):
        corpus = sample_corpus(random_script(4, 4, seed=3), 300, seed=3)
        cs = mine_constraints(corpus)
        assert cs.dumps() == mine_constraints(corpus).dumps()
        cs.save(tmp_path / "c.txt")
        assert ConstraintSet.load(tmp_path / "c.txt") == cs

    def test_bad_file(self):
        with pytest.raises(ModelFormatError, match="line 2"):
            ConstraintSet.loads("a NEVER_FOLLOWS b 5 0\na NEVER_FOLLOWS a 5 0\n")
        with pytest.raises(ModelFormatError):
            ConstraintSet.loads("a follows b\n")


class TestViolations:
    def test_direct_successor(self):
        assert count_model_violations(chain({"y": 1.0}, {"x": 1.0}), all_rules("xy")) == 1

    def test_same_state_without_self_loop(self):
        assert count_model_violations(chain({"x": 0.5, "y": 0.5}), all_rules("xy")) == 0

    def test_through_silent_state(self):
        h = chain({"y": 1.0}, {NULL: 1.0}, {"x": 1.0})
        assert count_model_violations(h, ConstraintSet({("x", "y"): (50, 0)})) == 1

    def test_blocked_by_non_null_state(self):
        h = chain({"y": 1.0}, {"z": 1.0}, {"x": 1.0})
        assert count_model_violations(h, ConstraintSet({("x", "y"): (50, 0)})) == 0

    @given(st.integers(0, 10_000))
    def test_matches_output_enumeration(self, seed):
        h = random_script(3, 3, seed=seed)
        rules = all_rules("abc")
        outputs = [s for s, p in oracle.output_distribution(h, 3).items() if p > 0]
        # a path touches each state at most once, so length 3 outputs show every adjacency
        brute = sum(any((y, x) in set(zip(s[1:-1], s[2:-1])) for s in outputs) for x, y in rules.rules)
        assert count_model_violations(h, rules) == brute

    @given(st.integers(0, 10_000))
    def test_adding_an_edge_never_helps(self, seed):
        h = random_script(4, 3, seed=seed)
        rules = all_rules("abc")
        before = count_model_violations(h, rules)
        for q in h.states[1:-2]:
            for r in h.states[h.position[q] + 1:-1]:
                if r not in h.trans[q]:
                    trans = dict(h.trans)
                    trans[q] = {**h.trans[q], r: 0.0}
                    trans[q] = {k: 1 / len(trans[q]) for k in trans[q]}
                    assert count_model_violations(h.with_params(trans=trans), rules) >= before


class TestPrior:
    def test_counts_states_and_edges(self, m0):
        assert log_prior(m0) == -5

    def test_zero_weights(self, m0):
        cfg = ScoreConfig(kappa_q=0, kappa_t=0, kappa_c=0)
        assert log_prior(m0, all_rules("ab"), cfg) == 0

    def test_extra_edge(self):
        h = chain({"a": 1.0}, {"b": 1.0})
        trans = dict(h.trans)
        trans[1] = {2: 0.5, 3: 0.5}
        cfg = ScoreConfig(kappa_t=2)
        assert log_prior(h, None, cfg) - log_prior(h.with_params(trans=trans), None, cfg) == 2

    def test_violations_are_penalized(self):
        h = chain({"y": 1.0}, {"x": 1.0})
        assert log_prior(h, all_rules("xy"), ScoreConfig(kappa_c=3)) == -(4 + 3 + 3)

    def test_bad_config(self):
        with pytest.raises(ValueError):
            ScoreConfig(kappa_q=-1)
        with pytest.raises(ValueError):
            ScoreConfig(significance=1.0)
        with pytest.raises(ValueError):
            ScoreConfig(mode="fast")


class TestLikelihood:
    def test_exact_values(self, m0):
        assert log_likelihood_exact(m0, [A]) == pytest.approx(math.log(0.7))
        assert log_likelihood_exact(m0, [A, E0]) == pytest.approx(math.log(0.7) + math.log(0.3))
        assert log_likelihood_exact(m0, []) == 0

    def test_unreachable_gets_floor(self, m0):
        assert log_likelihood_exact(m0, [(START, "b", END)]) == LOG_FLOOR

    def test_approx_equals_exact_on_single_paths(self):
        corpus = Corpus.from_events([["a", "b"], ["a", "c"], ["a", "b"], ["d"]])
        pta, counts = build_pta(corpus)
        pta = m_step(pta, counts, EmConfig(allow_null=False))
        c = expected_counts(pta, corpus)
        assert log_likelihood_approx(pta, c) == pytest.approx(log_likelihood_exact(pta, corpus), abs=1e-9)

    def test_zero_counts(self, m0):
        assert log_likelihood_approx(m0, CountTable()) == 0

    def test_inconsistent_counts(self, m0):
        with pytest.raises(ValueError, match="inconsistent count/parameter pair"):
            log_likelihood_approx(m0, CountTable(emit={(0, 1, "b"): 1.0}))

    @given(st.integers(0, 10_000))
    def test_incremental_update_after_merge(self, seed):
        corpus = sample_corpus(random_script(3, 3, seed=seed), 8, seed=seed)
        pta, counts = build_pta(corpus)
        pta = m_step(pta, counts)
        approx = ApproxLikelihood(pta, counts)
        merges = [c for c in enumerate_candidates(pta) if c.kind == "merge"]
        if not merges:
            return
        p, q = merges[-1].a, merges[-1].b
        new, new_counts = merge_states(pta, counts, p, q)
        par = pta.parents
        rows = {p} | {p if s == q else s for s in par[p] + par[q]}
        updated = approx.update(new, new_counts, rows, {q})
        assert updated.total == pytest.approx(log_likelihood_approx(new, new_counts), abs=1e-9)

    @given(st.integers(0, 10_000))
    def test_rescore_matches_full_evaluation(self, seed):
        corpus = sample_corpus(random_script(3, 3, seed=seed), 8, seed=seed)
        pta, counts = build_pta(corpus)
        pta = m_step(pta, counts)
        lik = ExactLikelihood(corpus)
        cache = lik.evaluate(pta)
        merges = [c for c in enumerate_candidates(pta) if c.kind == "merge"]
        if not merges:
            return
        p, q = merges[0].a, merges[0].b
        new, _ = merge_states(pta, counts, p, q)
        changed = {p, q, *pta.parents[p], *pta.parents[q]}
        assert lik.rescore(new, cache, changed) == pytest.approx(lik.evaluate(new).total, abs=1e-9)

    def test_exact_agrees_with_trellis(self):
        h = random_script(4, 3, seed=5)
        corpus = sample_corpus(h, 20, seed=5)
        assert log_likelihood_exact(h, corpus) == pytest.approx(sum(sequence_likelihoods(h, corpus)), abs=1e-9)


class TestScore:
    def test_modes_agree_on_single_paths(self):
        corpus = Corpus.from_events([["a", "b"], ["c"]])
        pta, counts = build_pta(corpus)
        pta = m_step(pta, counts, EmConfig(allow_null=False))
        c = expected_counts(pta, corpus)
        ex = score(pta, c, corpus, None, ScoreConfig(mode="exact"))
        ap = score(pta, c, corpus, None, ScoreConfig(mode="approx"))
        assert ex == pytest.approx(ap, abs=1e-9)

    def test_no_prior(self, m0):
        cfg = ScoreConfig(kappa_q=0, kappa_t=0, kappa_c=0)
        assert score(m0, CountTable(), [A], None, cfg) == pytest.approx(math.log(0.7))

    def test_prior_improvement_raises_score(self, m0):
        corpus = [A]
        assert score(m0, CountTable(), corpus, None, ScoreConfig(kappa_q=0.5)) > score(m0, CountTable(), corpus)

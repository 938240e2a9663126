from __future__ import annotations

import math

import numpy as np
import pytest

from hsg.answers import Answer, DiagnosticReport, RegexTokenizer, extract_final
from hsg.policies import (
    MockPolicy,
    PolicyCorrector,
    Role,
    RoleContext,
    RuleCorrector,
    ToySoftmaxPolicy,
    correct,
    derive_seed,
)

TOK = RegexTokenizer()
CTX = RoleContext(Role.SNEAKY, {"q": "What is 2+2?"})


def two_way(logits=(0.0, 0.0)):
    init = np.array(logits, dtype=float)
    return ToySoftmaxPolicy(lambda ctx: (("sneaky", "p"), ["\\boxed{4}", "\\boxed{5}"]), init_fn=lambda k, n: init)


class TestRoleContext:
    def test_required_inputs(self):
        with pytest.raises(ValueError):
            RoleContext(Role.DIAGNOSIS, {"a_S": "x"})

    def test_corrector_never_sees_question(self):
        with pytest.raises(ValueError):
            RoleContext(Role.CORRECTION, {"a_S": "x", "a_D": "y", "q": "z"})

    def test_default_template_is_role_name(self):
        assert CTX.prompt_template_id == "sneaky"


class TestMock:
    def test_scripted(self):
        gens = MockPolicy(["fixed"], logprob=-2.5).sample(CTX, 3, seed=0)
        assert [g.text for g in gens] == ["fixed"] * 3
        assert all(g.logprob == -2.5 for g in gens)

    def test_cycles_and_logprob(self):
        m = MockPolicy(["a", "b"], logprob=-1.0)
        assert [g.text for g in m.sample(CTX, 3, 0)] == ["a", "b", "a"]
        assert m.logprob(CTX, "anything") == -1.0

    def test_needs_responses(self):
        with pytest.raises(ValueError):
            MockPolicy([])


class TestToy:
    def test_uniform_frequencies(self):
        gens = two_way().sample(CTX, 10_000, seed=11)
        k = sum(g.text == "\\boxed{4}" for g in gens)
        assert abs(k - 5000) <= 3 * math.sqrt(10_000 * 0.25)

    def test_one_hot(self):
        gens = two_way((20.0, 0.0)).sample(CTX, 10_000, seed=5)
        assert sum(g.index == 0 for g in gens) >= 9999

    def test_logprobs(self):
        assert two_way().logprob(CTX, "\\boxed{5}") == pytest.approx(math.log(0.5), abs=1e-15)
        assert two_way((1.0, 0.0)).logprob(CTX, "\\boxed{4}") == pytest.approx(math.log(math.e / (math.e + 1)),
                                                                                abs=1e-15)

    def test_generation_logprob_is_exact(self):
        p = two_way((0.7, -0.2))
        for g in p.sample(CTX, 5, 1):
            assert g.logprob == p.logprob(CTX, g.text)

    def test_probabilities_sum_to_one(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            p = ToySoftmaxPolicy(lambda c: (("k",), list("abcdef")), init_fn=lambda k, n: rng.normal(0, 5, n))
            assert abs(sum(pr for _, pr in p.distribution(CTX)) - 1) < 1e-12

    def test_seeded_reproducible(self):
        assert [g.index for g in two_way().sample(CTX, 20, 3)] == [g.index for g in two_way().sample(CTX, 20, 3)]

    def test_reference_frozen_and_snapshot(self):
        p = two_way()
        key = ("sneaky", "p")
        p.support(CTX)
        p.apply_gradient(key, np.array([1.0, -1.0]), 0.5)
        assert p.logits_for(key).tolist() == [0.5, -0.5]
        assert p.reference_logits_for(key).tolist() == [0.0, 0.0]
        snap = p.snapshot()
        q = two_way()
        q.restore(snap)
        assert q.logits_for(key).tolist() == [0.5, -0.5]

    def test_out_of_support(self):
        with pytest.raises(ValueError):
            two_way().logprob(CTX, "\\boxed{6}")


class TestCorrector:
    a_s = Answer.from_text("Step 1: 2 + 3 = 5.\nStep 2: 5 * 8 = 41.\nSo \\boxed{41}.", TOK)

    def report(self, text):
        return DiagnosticReport.from_text(text, TOK)

    def test_trusts_correct_verdict(self):
        out = correct(RuleCorrector(), self.a_s, self.report("Verdict: CORRECT\nfine"), TOK)
        assert out.text == self.a_s.text

    def test_explicit_value(self):
        out = correct(RuleCorrector(), self.a_s, self.report("Verdict: INCORRECT\n... correct value 42"), TOK)
        assert out.final_value == "42"

    def test_localized_recompute(self):
        out = correct(RuleCorrector(), self.a_s, self.report("Verdict: INCORRECT\nLocation: Step 2"), TOK)
        assert out.final_value == "40"

    def test_final_restates_last_step(self):
        a_s = Answer.from_text("Step 1: 2 + 3 = 5.\nSo \\boxed{6}.", TOK)
        out = correct(RuleCorrector(), a_s, self.report("Verdict: INCORRECT\nLocation: final"), TOK)
        assert out.final_value == "5"

    def test_unlocalized_error_leaves_answer(self):
        out = correct(RuleCorrector(), self.a_s, self.report("Verdict: INCORRECT\nsomething is off"), TOK)
        assert out.text == self.a_s.text

    def test_stateless(self):
        c = RuleCorrector()
        r = self.report("Verdict: INCORRECT\nLocation: Step 2")
        assert c.correct_text(self.a_s.text, r.text) == c.correct_text(self.a_s.text, r.text)
        assert c.describe() == RuleCorrector().describe()

    def test_policy_corrector_hides_question(self):
        seen = []

        def respond(ctx, i):
            seen.append(dict(ctx.inputs))
            return "fixed \\boxed{42}"

        out = correct(PolicyCorrector(MockPolicy(respond)), self.a_s, self.report("Verdict: INCORRECT\nx"), TOK)
        assert extract_final(out.text) == "42"
        assert set(seen[0]) == {"a_S", "a_D"}


def test_derive_seed_stable():
    assert derive_seed(1, "a") == derive_seed(1, "a") != derive_seed(1, "b")
    assert 0 <= derive_seed("x") < 2**63

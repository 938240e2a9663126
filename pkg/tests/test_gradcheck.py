from __future__ import annotations

import numpy as np

from hsg.gradcheck import KINK_MARGIN, central_difference, gradcheck, random_case, sign_flipped_clip
from hsg.grpo import importance_ratio, log_softmax


class TestGradcheck:
    def test_default_passes(self):
        report = gradcheck(cases=50)
        assert report.ok and report.max_rel_error < 1e-6
        assert report.summary().endswith("PASS")

    def test_sign_flip_is_caught(self):
        report = gradcheck(cases=20, clip_fn=sign_flipped_clip)
        assert not report.ok and report.summary().endswith("FAIL")

    def test_zero_advantage_notes_zero_gradient(self):
        report = gradcheck(cases=10, zero_advantage=True)
        assert report.ok and all(c.note == "zero gradient" for c in report.cases)
        assert "zero gradient" in report.summary()

    def test_temperature_and_kl(self):
        assert gradcheck(cases=30, seed=5, temperature=0.7, beta_kl=0.5).ok

    def test_cases_avoid_clip_edges(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            c = random_case(rng, 0.2, 1.0)
            lp = log_softmax(c["logits"])
            for a, old in zip(c["actions"], c["logprob_old"]):
                rho = importance_ratio(lp[a], old)
                assert min(abs(rho - 0.8), abs(rho - 1.2)) > KINK_MARGIN

    def test_central_difference_on_quadratic(self):
        x = np.array([1.0, -2.0, 0.5])
        assert np.allclose(central_difference(lambda v: float(v @ v), x), 2 * x, atol=1e-8)

"""Finite-difference check of the analytic toy-policy gradient."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from hsg.grpo import clipped_term, importance_ratio, log_softmax, toy_objective, toy_objective_grad

KINK_MARGIN = 1e-3
ZERO_NORM = 1e-9


@dataclass
class GradcheckCase:
    index: int
    support: int
    group: int
    rel_error: float
    ok: bool
    note: str = ""


@dataclass
class GradcheckReport:
    tolerance: float
    cases: list[GradcheckCase] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return bool(self.cases) and all(c.ok for c in self.cases)

    @property
    def max_rel_error(self) -> float:
        return max(c.rel_error for c in self.cases)

    def summary(self) -> str:
        failed = sum(not c.ok for c in self.cases)
        zero = sum(c.note == "zero gradient" for c in self.cases)
        lines = [f"gradcheck: {len(self.cases)} cases, {failed} failed, max rel error {self.max_rel_error:.3e} "
                 f"(tolerance {self.tolerance:g})"]
        if zero:
            lines.append(f"note: {zero} case(s) had a zero gradient (both norms below {ZERO_NORM:g})")
        lines.append("PASS" if self.ok else "FAIL")
        return "\n".join(lines)


def random_case(rng: np.random.Generator, epsilon: float, temperature: float, zero_advantage: bool = False) -> dict:
    """A random toy batch whose ratios sit at least ``KINK_MARGIN`` away from the clip edges."""
    k = int(rng.integers(2, 7))
    g = int(rng.integers(2, 9))
    logits = rng.normal(0.0, 1.5, size=k)
    ref = logits.copy() if zero_advantage else rng.normal(0.0, 1.5, size=k)
    lp = log_softmax(logits, temperature)
    actions = rng.integers(0, k, size=g).tolist()
    old = []
    for a in actions:
        while True:
            candidate = lp[a] + rng.normal(0.0, 0.3)
            rho = importance_ratio(lp[a], candidate)
            if min(abs(rho - (1 - epsilon)), abs(rho - (1 + epsilon))) > KINK_MARGIN:
                break
        old.append(candidate)
    advantages = np.zeros(g) if zero_advantage else rng.normal(0.0, 1.0, size=g)
    return {"logits": logits, "actions": actions, "logprob_old": np.array(old), "advantages": advantages,
            "ref_logits": ref}


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(x)
    for i in range(len(x)):
        up, down = x.copy(), x.copy()
        up[i] += h
        down[i] -= h
        grad[i] = (f(up) - f(down)) / (2 * h)
    return grad


def gradcheck(
    cases: int = 100,
    seed: int = 0,
    epsilon: float = 0.2,
    beta_kl: float = 0.04,
    temperature: float = 1.0,
    tolerance: float = 1e-6,
    clip_fn: Callable[[float, float, float], float] = clipped_term,
    zero_advantage: bool = False,
) -> GradcheckReport:
    """Compare :func:`toy_objective_grad` with central differences of :func:`toy_objective`.

    ``clip_fn`` only reaches the finite-difference side, so a mutated clip
    term must show up as a failure.
    """
    rng = np.random.default_rng(seed)
    report = GradcheckReport(tolerance)
    for i in range(cases):
        c = random_case(rng, epsilon, temperature, zero_advantage)
        args = (c["actions"], c["logprob_old"], c["advantages"], c["ref_logits"], epsilon, beta_kl, temperature)
        analytic = toy_objective_grad(c["logits"], *args)
        numeric = central_difference(lambda x: toy_objective(x, *args, clip_fn=clip_fn), c["logits"])
        na, nn = np.linalg.norm(analytic), np.linalg.norm(numeric)
        if na < ZERO_NORM and nn < ZERO_NORM:
            report.cases.append(GradcheckCase(i, len(c["logits"]), len(c["actions"]), 0.0, True, "zero gradient"))
            continue
        rel = float(np.linalg.norm(analytic - numeric) / max(na, nn))
        report.cases.append(GradcheckCase(i, len(c["logits"]), len(c["actions"]), rel, rel <= tolerance))
    return report


def sign_flipped_clip(ratio: float, advantage: float, epsilon: float) -> float:
    """Deliberately broken clip term, used to prove the check catches mutations."""
    return -clipped_term(ratio, advantage, epsilon)

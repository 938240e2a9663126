"""Group-relative policy optimization numerics.

Advantages are standardized within a sampled group, so no value function is
needed. The objective is the clipped surrogate minus a KL penalty towards a
fixed reference policy, and is *maximized*.

The toy-policy functions below give the exact objective and its analytic
gradient for a softmax policy over a finite support; they exist so that the
optimizer can be verified against finite differences at desk scale.
"""

from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from hsg.errors import RatioOverflow, SupportMismatch


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 8
    clip_epsilon: float = 0.2
    beta_kl_s: float = 0.01
    beta_kl_d: float = 0.04
    delta: float = 1e-8
    # plain gradient-ascent step for the toy backend
    learning_rate: float = 0.5

    def __post_init__(self):
        if self.group_size < 2:
            raise ValueError(f"group_size must be >= 2, got {self.group_size}")
        if not 0 < self.clip_epsilon < 1:
            raise ValueError(f"clip_epsilon must lie in (0, 1), got {self.clip_epsilon}")
        if self.beta_kl_s < 0 or self.beta_kl_d < 0:
            raise ValueError("KL coefficients must be nonnegative")
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")


@dataclass
class GroupBatch:
    rewards: np.ndarray
    advantages: np.ndarray
    logprob_new: np.ndarray
    logprob_old: np.ndarray
    logprob_ref: np.ndarray
    hardest_index: int
    # toy backend only: sampled support indices and the logits key they came from
    actions: list[int] | None = None
    context_key: tuple | None = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.rewards)
        for name in ("advantages", "logprob_new", "logprob_old", "logprob_ref"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has length {len(getattr(self, name))}, expected {n}")
        if self.actions is not None and len(self.actions) != n:
            raise ValueError("actions length mismatch")

    @property
    def size(self) -> int:
        return len(self.rewards)


def argmax_first(values: Sequence[float]) -> int:
    """Index of the maximum, lowest index on ties."""
    best = 0
    for i, v in enumerate(values):
        if v > values[best]:
            best = i
    return best


def group_advantage(rewards: Sequence[float], delta: float = 1e-8) -> np.ndarray:
    """(r - mean) / (std + delta) with the population (divisor G) std."""
    r = np.asarray(rewards, dtype=float)
    if r.size < 1:
        raise ValueError("empty reward group")
    if not delta > 0:
        raise ValueError("delta must be positive")
    if not np.all(np.isfinite(r)):
        raise ValueError("rewards must be finite")
    if r.max() == r.min():
        return np.zeros_like(r)
    # Mean and variance on exact rationals: close rewards (1.0 vs 0.988)
    # otherwise lose digits to cancellation in r - mean.
    exact = [Fraction(x) for x in r.tolist()]
    mu = sum(exact, Fraction(0)) / len(exact)
    sigma = math.sqrt(sum((x - mu) ** 2 for x in exact) / len(exact))
    return np.array([float(x - mu) for x in exact]) / (sigma + delta)


def importance_ratio(logprob_new: float, logprob_old: float) -> float:
    try:
        return math.exp(logprob_new - logprob_old)
    except OverflowError:
        raise RatioOverflow(f"ratio overflow: logprob_new={logprob_new}, logprob_old={logprob_old}") from None


def importance_ratios(logprob_new: Sequence[float], logprob_old: Sequence[float]) -> np.ndarray:
    return np.array([importance_ratio(a, b) for a, b in zip(logprob_new, logprob_old)])


def clipped_term(ratio: float, advantage: float, epsilon: float) -> float:
    clipped = min(max(ratio, 1.0 - epsilon), 1.0 + epsilon)
    return min(ratio * advantage, clipped * advantage)


def kl_exact(p: Sequence[float], q: Sequence[float]) -> float:
    """KL(p || q) over a shared finite support."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise SupportMismatch(f"support sizes differ: {p.shape} vs {q.shape}")
    mask = p > 0
    if np.any(q[mask] <= 0):
        raise SupportMismatch("reference assigns zero probability where the new policy does not")
    return max(float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask])))), 0.0)


def kl_estimator(logprob_new: float | np.ndarray, logprob_ref: float | np.ndarray) -> float | np.ndarray:
    """Per-sample estimator exp(d) - d - 1 with d = logprob_ref - logprob_new."""
    d = np.asarray(logprob_ref, dtype=float) - np.asarray(logprob_new, dtype=float)
    est = np.maximum(np.expm1(d) - d, 0.0)
    return float(est) if est.ndim == 0 else est


def grpo_objective(
    batch: GroupBatch,
    cfg: GrpoConfig,
    beta_kl: float,
    kl: float | None = None,
    clip_fn: Callable[[float, float, float], float] = clipped_term,
) -> float:
    """Mean clipped surrogate minus beta_kl * KL.

    ``kl`` defaults to the sample mean of the per-sample estimator; toy
    callers pass the exact value.
    """
    ratios = importance_ratios(batch.logprob_new, batch.logprob_old)
    surrogate = sum(clip_fn(r, a, cfg.clip_epsilon) for r, a in zip(ratios, batch.advantages)) / batch.size
    if kl is None:
        kl = float(np.mean(kl_estimator(batch.logprob_new, batch.logprob_ref)))
    return float(surrogate - beta_kl * kl)


# --- exact softmax toy policy -------------------------------------------------


def log_softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    z = np.asarray(logits, dtype=float) / temperature
    z = z - z.max()
    return z - math.log(float(np.exp(z).sum()))


def softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    return np.exp(log_softmax(logits, temperature))


def toy_objective(
    logits: np.ndarray,
    actions: Sequence[int],
    logprob_old: Sequence[float],
    advantages: Sequence[float],
    ref_logits: np.ndarray,
    epsilon: float,
    beta_kl: float,
    temperature: float = 1.0,
    clip_fn: Callable[[float, float, float], float] = clipped_term,
) -> float:
    lp = log_softmax(logits, temperature)
    g = len(actions)
    total = 0.0
    for a, old, adv in zip(actions, logprob_old, advantages):
        total += clip_fn(importance_ratio(lp[a], old), adv, epsilon)
    kl = kl_exact(np.exp(lp), softmax(ref_logits, temperature))
    return total / g - beta_kl * kl


def toy_objective_grad(
    logits: np.ndarray,
    actions: Sequence[int],
    logprob_old: Sequence[float],
    advantages: Sequence[float],
    ref_logits: np.ndarray,
    epsilon: float,
    beta_kl: float,
    temperature: float = 1.0,
) -> np.ndarray:
    """Analytic gradient of :func:`toy_objective` with respect to the logits.

    The old and reference policies are constants. A clipped term contributes
    only while the unclipped branch is the active minimum.
    """
    lp = log_softmax(logits, temperature)
    p = np.exp(lp)
    grad = np.zeros_like(p)
    for a, old, adv in zip(actions, logprob_old, advantages):
        rho = importance_ratio(lp[a], old)
        clipped = min(max(rho, 1.0 - epsilon), 1.0 + epsilon)
        if rho * adv <= clipped * adv:
            score = -p.copy()
            score[a] += 1.0
            grad += adv * rho * score / temperature
    grad /= len(actions)
    lq = log_softmax(ref_logits, temperature)
    kl = float(np.sum(p * (lp - lq)))
    grad -= beta_kl * p * (lp - lq - kl) / temperature
    return grad


def toy_policy_gradient(policy, batch: GroupBatch, cfg: GrpoConfig, beta_kl: float) -> np.ndarray:
    """Gradient of the group objective for the logits row the batch was drawn from."""
    if batch.actions is None or batch.context_key is None:
        raise ValueError("toy gradient needs batch.actions and batch.context_key")
    return toy_objective_grad(
        policy.logits_for(batch.context_key),
        batch.actions,
        batch.logprob_old,
        batch.advantages,
        policy.reference_logits_for(batch.context_key),
        cfg.clip_epsilon,
        beta_kl,
        policy.temperature,
    )

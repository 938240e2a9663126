"""Hierarchical reward algebra for the sneaky and diagnosis roles.

All functions are pure and deterministic. Every scalar that reaches the
optimizer is produced here.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

from hsg.answers import (
    DIAGNOSIS_FORMAT,
    SNEAKY_FORMAT,
    Answer,
    AnswerChecker,
    DiagnosticReport,
    FormatSpec,
    Verdict,
)
from hsg.errors import RewardDomainError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RewardConfig:
    tau: float = 0.05
    beta_reward: float = 0.6
    l_min: int = 50
    l_max: int = 600

    def __post_init__(self):
        # above 1 the floor would push rewards past the [tau * beta, 1] range
        if not 0 < self.tau <= 1:
            raise ValueError(f"tau must lie in (0, 1], got {self.tau}")
        if not 0.5 <= self.beta_reward <= 1.0:
            raise ValueError(f"beta_reward must lie in [0.5, 1], got {self.beta_reward}")
        if not 0 < self.l_min < self.l_max:
            raise ValueError(f"need 0 < l_min < l_max, got {self.l_min}, {self.l_max}")


@dataclass(frozen=True)
class RoleFormats:
    sneaky: FormatSpec = SNEAKY_FORMAT
    diagnosis: FormatSpec = DIAGNOSIS_FORMAT


DEFAULT_REWARD = RewardConfig()
DEFAULT_FORMATS = RoleFormats()


def _unit(value: float, name: str) -> float:
    if not (0.0 <= value <= 1.0):  # also rejects NaN
        raise RewardDomainError(f"{name}={value!r} outside [0, 1]")
    return value


def hierarchical_reward(r_main: float, r_secondary: float, cfg: RewardConfig = DEFAULT_REWARD) -> float:
    """max(r_main, tau) * (beta + (1 - beta) * r_secondary), in [tau*beta, 1]."""
    _unit(r_main, "r_main")
    _unit(r_secondary, "r_secondary")
    return max(r_main, cfg.tau) * (cfg.beta_reward + (1.0 - cfg.beta_reward) * r_secondary)


def correctness_reward(candidate: Answer, reference: Answer, checker: AnswerChecker) -> float:
    if reference.final_value is None:
        raise ValueError("reference answer has no extractable final value")
    if candidate.final_value is None:
        log.debug("extraction_failure: no single boxed answer in %r", candidate.text[:80])
        return 0.0
    return 1.0 if checker.equivalent(candidate.final_value, reference.final_value) else 0.0


def length_reward(length: int, cfg: RewardConfig = DEFAULT_REWARD) -> float:
    if length < 0:
        raise ValueError(f"length must be nonnegative, got {length}")
    if length < cfg.l_min:
        return (length / cfg.l_min) ** 2
    if length <= cfg.l_max:
        return 1.0
    return 1.0 / (1.0 + (length - cfg.l_max) ** 2)


def format_reward(text: str, template: FormatSpec) -> float:
    return 1.0 if template.check(text) else 0.0


def reward_s(
    a_s: Answer,
    reference: Answer,
    cfg: RewardConfig,
    checker: AnswerChecker,
    template: FormatSpec = SNEAKY_FORMAT,
) -> float:
    """Individual sneaky reward: wrongness first, then format, then length."""
    aux = hierarchical_reward(format_reward(a_s.text, template), length_reward(a_s.length, cfg), cfg)
    return hierarchical_reward(1.0 - correctness_reward(a_s, reference, checker), aux, cfg)


def diagnosis_recognition(report: DiagnosticReport, sneaky_was_correct: bool) -> float:
    # unparseable verdicts never match
    if report.verdict is Verdict.CLAIMS_ERROR:
        return 0.0 if sneaky_was_correct else 1.0
    if report.verdict is Verdict.CLAIMS_CORRECT:
        return 1.0 if sneaky_was_correct else 0.0
    return 0.0


def reward_d(
    report: DiagnosticReport,
    sneaky_was_correct: bool,
    cfg: RewardConfig,
    template: FormatSpec = DIAGNOSIS_FORMAT,
) -> float:
    aux = hierarchical_reward(format_reward(report.text, template), length_reward(report.length, cfg), cfg)
    return hierarchical_reward(diagnosis_recognition(report, sneaky_was_correct), aux, cfg)


def collaborative_reward_d(r_d: float, correction_success: float, cfg: RewardConfig = DEFAULT_REWARD) -> float:
    return hierarchical_reward(r_d, correction_success, cfg)


def adversarial_reward_s(
    r_s: float, r_d_collab: float, correction_success: float, cfg: RewardConfig = DEFAULT_REWARD
) -> float:
    _unit(r_d_collab, "r_d_collab")
    _unit(correction_success, "correction_success")
    pressure = hierarchical_reward(1.0 - r_d_collab, 1.0 - correction_success, cfg)
    return hierarchical_reward(r_s, pressure, cfg)


@dataclass(frozen=True)
class RewardBundle:
    """Every reward for one (sneaky, diagnosis, correction) triple."""

    r_corr_s: float
    r_format_s: float
    r_length_s: float
    r_s: float
    gamma_diag: float
    r_format_d: float
    r_length_d: float
    r_d: float
    r_corr_c: float
    r_d_collab: float
    r_s_adv: float

    def to_dict(self) -> dict[str, float]:
        return asdict(self)

    def values(self) -> list[float]:
        return list(asdict(self).values())


def reward_bundle(
    a_s: Answer,
    a_d: DiagnosticReport,
    a_c: Answer,
    reference: Answer,
    cfg: RewardConfig,
    checker: AnswerChecker,
    formats: RoleFormats = DEFAULT_FORMATS,
) -> RewardBundle:
    r_corr_s = correctness_reward(a_s, reference, checker)
    r_format_s = format_reward(a_s.text, formats.sneaky)
    r_length_s = length_reward(a_s.length, cfg)
    r_s = reward_s(a_s, reference, cfg, checker, formats.sneaky)

    gamma = diagnosis_recognition(a_d, sneaky_was_correct=r_corr_s == 1.0)
    r_format_d = format_reward(a_d.text, formats.diagnosis)
    r_length_d = length_reward(a_d.length, cfg)
    r_d = reward_d(a_d, r_corr_s == 1.0, cfg, formats.diagnosis)

    r_corr_c = correctness_reward(a_c, reference, checker)
    r_d_collab = collaborative_reward_d(r_d, r_corr_c, cfg)
    r_s_adv = adversarial_reward_s(r_s, r_d_collab, r_corr_c, cfg)
    bundle = RewardBundle(
        r_corr_s, r_format_s, r_length_s, r_s, gamma, r_format_d, r_length_d, r_d, r_corr_c, r_d_collab, r_s_adv
    )
    assert all(math.isfinite(v) for v in bundle.values())
    return bundle

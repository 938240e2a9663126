"""Alternating hide (sneaky) and seek (diagnosis) rounds.

An S-round samples a group of sneaky answers for one problem, diagnoses and
corrects each, scores them with the adversarial reward and takes one GRPO
step on the sneaky policy. The paired D-round takes the hardest sneaky answer
of that group, samples a group of diagnoses for it, scores them with the
collaborative reward and takes one GRPO step on the diagnosis policy.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence, TypeVar

import numpy as np

from hsg.answers import Answer, AnswerChecker, AnswerRole, CanonicalChecker, DiagnosticReport, Tokenizer
from hsg.data import DatasetRecord
from hsg.errors import BackendError
from hsg.grpo import (
    GroupBatch,
    GrpoConfig,
    argmax_first,
    group_advantage,
    grpo_objective,
    kl_estimator,
    kl_exact,
    toy_policy_gradient,
)
from hsg.policies import Corrector, Generation, Policy, Role, RoleContext, correct, derive_seed
from hsg.rewards import DEFAULT_FORMATS, RewardBundle, RewardConfig, RoleFormats, reward_bundle

log = logging.getLogger(__name__)

T = TypeVar("T")


@dataclass
class Actors:
    sneaky: Policy
    diagnosis: Policy
    corrector: Corrector


@dataclass
class GameSettings:
    reward: RewardConfig
    grpo: GrpoConfig
    tokenizer: Tokenizer
    checker: AnswerChecker = field(default_factory=CanonicalChecker)
    formats: RoleFormats = DEFAULT_FORMATS
    seed: int = 0
    max_workers: int = 1
    sneaky_template: str = "sneaky"
    diagnosis_template: str = "diagnosis"


@dataclass
class GroupEntry:
    a_d: DiagnosticReport
    a_c: Answer
    bundle: RewardBundle
    advantage: float
    logprob_old: float
    logprob_new: float
    logprob_ref: float
    index: int | None = None
    a_s: Answer | None = None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        if self.a_s is not None:
            out["a_s"] = self.a_s.to_dict()
        out.update(
            a_d=self.a_d.to_dict(),
            a_c=self.a_c.to_dict(),
            bundle=self.bundle.to_dict(),
            advantage=self.advantage,
            logprob_old=self.logprob_old,
            logprob_new=self.logprob_new,
            logprob_ref=self.logprob_ref,
            index=self.index,
        )
        return out


@dataclass
class RoundRecord:
    round_index: int
    role_updated: str  # "S" or "D"
    problem_id: str
    question: str
    reference: str
    entries: list[GroupEntry]
    rewards: list[float]
    advantages: list[float]
    objective: float
    kl: float
    hardest_index: int
    updated: bool
    context_key: list[str] | None = None
    a_s_star: Answer | None = None
    a_s_star_reward: float | None = None
    source_round: int | None = None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "round_index": self.round_index,
            "role_updated": self.role_updated,
            "problem_id": self.problem_id,
            "question": self.question,
            "reference": self.reference,
        }
        if self.role_updated == "D":
            out["source_round"] = self.source_round
            out["a_s_star"] = self.a_s_star.to_dict()
            out["a_s_star_reward"] = self.a_s_star_reward
        out.update(
            entries=[e.to_dict() for e in self.entries],
            rewards=self.rewards,
            advantages=self.advantages,
            objective=self.objective,
            kl=self.kl,
            hardest_index=self.hardest_index,
            updated=self.updated,
            context_key=self.context_key,
        )
        return out


def fan_out(fn: Callable[[int], T], n: int, max_workers: int) -> list[T]:
    """Run ``fn(0..n-1)``, concurrently when allowed; results keep index order."""
    if max_workers <= 1 or n <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=min(max_workers, n)) as pool:
        return list(pool.map(fn, range(n)))


class HideAndSeekGame:
    def __init__(self, settings: GameSettings, actors: Actors):
        self.settings = settings
        self.actors = actors

    # -- contexts

    def sneaky_context(self, problem: DatasetRecord) -> RoleContext:
        return RoleContext(Role.SNEAKY, {"q": problem.question}, self.settings.sneaky_template)

    def diagnosis_context(self, problem: DatasetRecord, a_s_text: str) -> RoleContext:
        return RoleContext(
            Role.DIAGNOSIS, {"a_truth": problem.reference_answer, "a_S": a_s_text}, self.settings.diagnosis_template
        )

    # -- helpers

    def _answer(self, text: str, role: AnswerRole = AnswerRole.SNEAKY) -> Answer:
        return Answer.from_text(text, self.settings.tokenizer, role)

    def _seek(self, problem: DatasetRecord, a_s: Answer, seed: int) -> tuple[DiagnosticReport, Answer]:
        gen = self.actors.diagnosis.sample(self.diagnosis_context(problem, a_s.text), 1, seed)[0]
        a_d = DiagnosticReport.from_text(gen.text, self.settings.tokenizer)
        return a_d, correct(self.actors.corrector, a_s, a_d, self.settings.tokenizer)

    def _bundle(self, a_s: Answer, a_d: DiagnosticReport, a_c: Answer, reference: Answer) -> RewardBundle:
        s = self.settings
        return reward_bundle(a_s, a_d, a_c, reference, s.reward, s.checker, s.formats)

    def _optimize(
        self, policy: Policy, ctx: RoleContext, gens: Sequence[Generation], rewards: Sequence[float], beta_kl: float
    ) -> tuple[GroupBatch, float, float, bool]:
        """Advantages, objective at the sampling policy, and one update when trainable."""
        grpo = self.settings.grpo
        advantages = group_advantage(rewards, grpo.delta)
        old = np.array([g.logprob if g.logprob is not None else 0.0 for g in gens])
        trainable = getattr(policy, "trainable", False)
        key = None
        actions = None
        if trainable:
            key = policy.support(ctx)[0]
            actions = [g.index for g in gens]
            ref = policy.reference_log_probs(key)[actions]
        else:
            ref = old.copy()
        batch = GroupBatch(
            rewards=np.asarray(rewards, dtype=float),
            advantages=advantages,
            logprob_new=old.copy(),
            logprob_old=old,
            logprob_ref=np.asarray(ref, dtype=float),
            hardest_index=argmax_first(list(rewards)),
            actions=actions,
            context_key=key,
        )
        if trainable:
            kl = kl_exact(np.exp(policy.log_probs(key)), np.exp(policy.reference_log_probs(key)))
        else:
            kl = float(np.mean(kl_estimator(batch.logprob_new, batch.logprob_ref)))
        objective = grpo_objective(batch, grpo, beta_kl, kl)
        if trainable:
            grad = toy_policy_gradient(policy, batch, grpo, beta_kl)
            policy.apply_gradient(key, grad, grpo.learning_rate)
        return batch, objective, kl, trainable

    def _retrying(self, fn: Callable[[int], T], what: str) -> T:
        try:
            return fn(0)
        except BackendError as exc:
            log.warning("%s aborted (%s); retrying once with fresh samples", what, exc)
            return fn(1)

    # -- rounds

    def run_s_round(self, problem: DatasetRecord, round_index: int) -> RoundRecord:
        return self._retrying(lambda attempt: self._s_round(problem, round_index, attempt), f"S-round {round_index}")

    def run_d_round(self, problem: DatasetRecord, round_index: int, sneaky_group: RoundRecord) -> RoundRecord:
        return self._retrying(
            lambda attempt: self._d_round(problem, round_index, sneaky_group, attempt), f"D-round {round_index}"
        )

    def _s_round(self, problem: DatasetRecord, round_index: int, attempt: int) -> RoundRecord:
        s = self.settings
        g = s.grpo.group_size
        ctx = self.sneaky_context(problem)
        gens = self.actors.sneaky.sample(ctx, g, derive_seed(s.seed, round_index, "sneaky", attempt))
        answers = [self._answer(gen.text) for gen in gens]
        seeks = fan_out(
            lambda i: self._seek(problem, answers[i], derive_seed(s.seed, round_index, "seek", i, attempt)),
            g,
            s.max_workers,
        )
        reference = self._answer(problem.reference_answer, AnswerRole.REFERENCE)
        bundles = [self._bundle(a, d, c, reference) for a, (d, c) in zip(answers, seeks)]
        rewards = [b.r_s_adv for b in bundles]
        batch, objective, kl, updated = self._optimize(self.actors.sneaky, ctx, gens, rewards, s.grpo.beta_kl_s)
        entries = [
            GroupEntry(d, c, b, float(batch.advantages[i]), float(batch.logprob_old[i]), float(batch.logprob_new[i]),
                       float(batch.logprob_ref[i]), gens[i].index, a_s=answers[i])
            for i, (a, (d, c), b) in enumerate(zip(answers, seeks, bundles))
        ]
        return RoundRecord(
            round_index, "S", problem.id, problem.question, problem.reference_answer, entries, rewards,
            batch.advantages.tolist(), objective, kl, batch.hardest_index, updated,
            list(batch.context_key) if batch.context_key else None,
        )

    def _d_round(self, problem: DatasetRecord, round_index: int, sneaky_group: RoundRecord, attempt: int) -> RoundRecord:
        s = self.settings
        g = s.grpo.group_size
        star = sneaky_group.hardest_index
        a_s = sneaky_group.entries[star].a_s
        ctx = self.diagnosis_context(problem, a_s.text)
        gens = self.actors.diagnosis.sample(ctx, g, derive_seed(s.seed, round_index, "diagnosis", attempt))
        reports = [DiagnosticReport.from_text(gen.text, s.tokenizer) for gen in gens]
        corrected = fan_out(lambda i: correct(self.actors.corrector, a_s, reports[i], s.tokenizer), g, s.max_workers)
        reference = self._answer(problem.reference_answer, AnswerRole.REFERENCE)
        bundles = [self._bundle(a_s, d, c, reference) for d, c in zip(reports, corrected)]
        rewards = [b.r_d_collab for b in bundles]
        batch, objective, kl, updated = self._optimize(self.actors.diagnosis, ctx, gens, rewards, s.grpo.beta_kl_d)
        entries = [
            GroupEntry(d, c, b, float(batch.advantages[i]), float(batch.logprob_old[i]), float(batch.logprob_new[i]),
                       float(batch.logprob_ref[i]), gens[i].index)
            for i, (d, c, b) in enumerate(zip(reports, corrected, bundles))
        ]
        return RoundRecord(
            round_index, "D", problem.id, problem.question, problem.reference_answer, entries, rewards,
            batch.advantages.tolist(), objective, kl, batch.hardest_index, updated,
            list(batch.context_key) if batch.context_key else None,
            a_s_star=a_s, a_s_star_reward=sneaky_group.rewards[star], source_round=sneaky_group.round_index,
        )

"""Policy backends for the sneaky, diagnosis, correction and judge actors.

Backends share a two-method surface, ``sample(ctx, n, seed)`` and
``logprob(ctx, text)``. The toy softmax backend is differentiable and holds the
only trainable state in the package; the mock backend is scripted; the
endpoint backend lives in :mod:`hsg.endpoint`.
"""

from __future__ import annotations

import enum
import hashlib
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Protocol, Sequence

import numpy as np

from hsg.answers import (
    FINAL_LOCATION,
    Answer,
    AnswerRole,
    DiagnosticReport,
    Tokenizer,
    Verdict,
    replace_final,
)
from hsg.grpo import log_softmax
from hsg.steps import parse_steps, recompute_from


class Role(str, enum.Enum):
    SNEAKY = "sneaky"
    DIAGNOSIS = "diagnosis"
    CORRECTION = "correction"
    JUDGE = "judge"


_REQUIRED = {
    Role.SNEAKY: {"q"},
    Role.DIAGNOSIS: {"a_truth", "a_S"},
    Role.CORRECTION: {"a_S", "a_D"},
    Role.JUDGE: {"q", "a_S", "first", "second"},
}
# the corrector must not see the question
_FORBIDDEN = {Role.CORRECTION: {"q", "a_truth"}}


@dataclass(frozen=True)
class RoleContext:
    role: Role
    inputs: Mapping[str, str]
    prompt_template_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "role", Role(self.role))
        missing = _REQUIRED[self.role] - set(self.inputs)
        if missing:
            raise ValueError(f"{self.role.value} context missing inputs {sorted(missing)}")
        leaked = _FORBIDDEN.get(self.role, set()) & set(self.inputs)
        if leaked:
            raise ValueError(f"{self.role.value} context must not receive {sorted(leaked)}")
        if not self.prompt_template_id:
            object.__setattr__(self, "prompt_template_id", self.role.value)


@dataclass(frozen=True)
class Generation:
    text: str
    logprob: float | None
    index: int | None = None


class Policy(Protocol):
    def sample(self, ctx: RoleContext, n: int, seed: int) -> list[Generation]: ...

    def logprob(self, ctx: RoleContext, text: str) -> float: ...


def derive_seed(*parts: Any) -> int:
    """Stable 63-bit seed from arbitrary printable parts."""
    digest = hashlib.sha256("\x1f".join(map(str, parts)).encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


class MockPolicy:
    """Scripted backend.

    ``responses`` is either a list cycled across calls, or a callable
    ``(ctx, call_index) -> text``. Every generation carries the configured
    constant log-probability.
    """

    trainable = False

    def __init__(self, responses: Sequence[str] | Callable[[RoleContext, int], str], logprob: float = 0.0):
        if not callable(responses) and not responses:
            raise ValueError("mock policy needs at least one scripted response")
        self.responses = responses
        self.constant_logprob = logprob
        self._calls = 0
        self._lock = threading.Lock()

    def _next(self, ctx: RoleContext) -> str:
        with self._lock:
            i = self._calls
            self._calls += 1
        if callable(self.responses):
            return self.responses(ctx, i)
        return self.responses[i % len(self.responses)]

    def sample(self, ctx: RoleContext, n: int, seed: int) -> list[Generation]:
        if n < 1:
            raise ValueError("n must be >= 1")
        return [Generation(self._next(ctx), self.constant_logprob) for _ in range(n)]

    def logprob(self, ctx: RoleContext, text: str) -> float:
        return self.constant_logprob

    @property
    def calls(self) -> int:
        return self._calls

    def restore_calls(self, calls: int) -> None:
        """Resume the script where a previous process left it."""
        with self._lock:
            self._calls = calls

    def describe(self) -> dict[str, Any]:
        return {"kind": "mock", "logprob": self.constant_logprob, "calls": self._calls}


SupportFn = Callable[[RoleContext], "tuple[tuple, list[str]]"]


def key_to_str(key: tuple) -> str:
    return "|".join(map(str, key))


def key_from_str(text: str) -> tuple:
    return tuple(text.split("|"))


class ToySoftmaxPolicy:
    """Softmax over a finite candidate list per context key.

    ``support_fn`` maps a context to ``(key, candidates)``. Logits rows are
    created lazily (zeros unless ``init_fn`` says otherwise); the row at
    creation time is frozen as the reference policy. Both trained roles may
    share one instance; their keys are disjoint because they start with the
    role name.
    """

    trainable = True

    def __init__(
        self,
        support_fn: SupportFn,
        temperature: float = 1.0,
        init_fn: Callable[[tuple, int], np.ndarray] | None = None,
    ):
        if not temperature > 0:
            raise ValueError("temperature must be positive")
        self.support_fn = support_fn
        self.temperature = temperature
        self.init_fn = init_fn
        self._logits: dict[tuple, np.ndarray] = {}
        self._reference: dict[tuple, np.ndarray] = {}
        self._lock = threading.Lock()

    def _row(self, key: tuple, size: int) -> np.ndarray:
        with self._lock:
            if key not in self._logits:
                init = np.zeros(size) if self.init_fn is None else np.asarray(self.init_fn(key, size), dtype=float)
                self._reference[key] = init.copy()
                self._logits[key] = init.copy()
        row = self._logits[key]
        if row.shape != (size,):
            raise ValueError(f"support size for {key} changed from {row.shape[0]} to {size}")
        return row

    def support(self, ctx: RoleContext) -> tuple[tuple, list[str]]:
        key, candidates = self.support_fn(ctx)
        self._row(key, len(candidates))
        return key, candidates

    def logits_for(self, key: tuple) -> np.ndarray:
        return self._logits[key]

    def reference_logits_for(self, key: tuple) -> np.ndarray:
        return self._reference[key]

    def log_probs(self, key: tuple) -> np.ndarray:
        return log_softmax(self._logits[key], self.temperature)

    def reference_log_probs(self, key: tuple) -> np.ndarray:
        return log_softmax(self._reference[key], self.temperature)

    def distribution(self, ctx: RoleContext) -> list[tuple[str, float]]:
        key, candidates = self.support(ctx)
        probs = np.exp(self.log_probs(key))
        return list(zip(candidates, probs.tolist()))

    def sample(self, ctx: RoleContext, n: int, seed: int) -> list[Generation]:
        if n < 1:
            raise ValueError("n must be >= 1")
        key, candidates = self.support(ctx)
        lp = self.log_probs(key)
        p = np.exp(lp)
        rng = np.random.default_rng(seed)
        picks = rng.choice(len(candidates), size=n, p=p / p.sum())
        return [Generation(candidates[i], float(lp[i]), int(i)) for i in picks]

    def logprob(self, ctx: RoleContext, text: str) -> float:
        key, candidates = self.support(ctx)
        try:
            i = candidates.index(text)
        except ValueError:
            raise ValueError("text is not in the toy support for this context") from None
        return float(self.log_probs(key)[i])

    def apply_gradient(self, key: tuple, grad: np.ndarray, learning_rate: float) -> None:
        """Gradient *ascent* step on one logits row."""
        self._logits[key] = self._logits[key] + learning_rate * np.asarray(grad, dtype=float)

    def snapshot(self) -> dict[str, Any]:
        return {
            "temperature": self.temperature,
            "logits": {key_to_str(k): v.tolist() for k, v in sorted(self._logits.items())},
            "reference": {key_to_str(k): v.tolist() for k, v in sorted(self._reference.items())},
        }

    def restore(self, snap: Mapping[str, Any]) -> None:
        self._logits = {key_from_str(k): np.array(v, dtype=float) for k, v in snap["logits"].items()}
        self._reference = {key_from_str(k): np.array(v, dtype=float) for k, v in snap["reference"].items()}

    def describe(self) -> dict[str, Any]:
        return {"kind": "toy", "temperature": self.temperature}


# --- correction ---------------------------------------------------------------


class Corrector(Protocol):
    def correct_text(self, a_s_text: str, a_d_text: str) -> str: ...


@dataclass(frozen=True)
class RuleCorrector:
    """Deterministic desk corrector; has no trainable state.

    When the report claims an error it uses, in order: an explicit
    ``correct value N`` field, or a recomputation of the step chain starting
    at the localized step (``final`` restates the last step's value).
    Anything else leaves the answer unchanged.
    """

    name: str = "rule-v1"

    def correct_text(self, a_s_text: str, a_d_text: str) -> str:
        report = DiagnosticReport.from_text(a_d_text, _NullTokenizer())
        if report.verdict is not Verdict.CLAIMS_ERROR:
            return a_s_text
        if report.correct_value is not None:
            return replace_final(a_s_text, report.correct_value)
        if report.location is None:
            return a_s_text
        steps = parse_steps(a_s_text)
        if not steps:
            return a_s_text
        if report.location == FINAL_LOCATION:
            value = steps[-1].value
        else:
            value = recompute_from(steps, int(report.location))
            if value is None:
                return a_s_text
        return replace_final(a_s_text, str(value))

    def describe(self) -> dict[str, Any]:
        return {"kind": "rule", "name": self.name}


class _NullTokenizer:
    name = "null"

    def count(self, text: str) -> int:
        return 0


@dataclass
class PolicyCorrector:
    """Corrector backed by any fixed policy (e.g. a remote model).

    Only the sneaky answer and the diagnosis are passed on.
    """

    policy: Policy
    template_id: str = "correction"
    seed: int = 0
    calls: int = field(default=0, init=False)

    def correct_text(self, a_s_text: str, a_d_text: str) -> str:
        ctx = RoleContext(Role.CORRECTION, {"a_S": a_s_text, "a_D": a_d_text}, self.template_id)
        seed = derive_seed(self.seed, "correct", a_s_text, a_d_text)
        return self.policy.sample(ctx, 1, seed)[0].text

    def describe(self) -> dict[str, Any]:
        inner = getattr(self.policy, "describe", lambda: {"kind": type(self.policy).__name__})()
        return {"kind": "policy", "policy": inner}


def correct(corrector: Corrector, a_s: Answer, a_d: DiagnosticReport, tokenizer: Tokenizer) -> Answer:
    """Produce the corrected answer from the sneaky answer and the diagnosis only."""
    text = corrector.correct_text(a_s.text, a_d.text)
    return Answer.from_text(text, tokenizer, AnswerRole.CORRECTION)

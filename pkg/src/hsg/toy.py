"""Toy chain-arithmetic domain for desk-scale self-play.

Problems are short operation chains ("Start with 7. Multiply by 6. Add 5.").
The sneaky support for a problem holds the correct solution plus distractors
of distinct kinds:

  result_shift  every step right, boxed answer shifted        (Type A)
  contaminated  one step wrong and labelled as such            (Type B)
  subtle        one constant misread, arithmetic consistent    (neither)
  unboxed       correct work without a boxed answer            (format failure)

Diagnosis candidates are four strategies rendered against the answer being
diagnosed: accept, flag the final line, flag a marked step, or audit every
line. The rule corrector can repair shifts and slips once they are localized,
but nothing in the answer text exposes a misread constant, so subtle errors
are the only ones no diagnosis repairs.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from hsg.answers import AnswerChecker, CanonicalChecker, extract_final
from hsg.errors import VerifierUnavailable
from hsg.policies import Role, RoleContext, derive_seed
from hsg.steps import OPS, first_slip, parse_steps

SNEAKY_KINDS = ("correct", "result_shift", "contaminated", "subtle", "unboxed")
DIAGNOSIS_ACTIONS = ("accept", "flag_final", "flag_marked", "audit")

_OP_WORDS = {"*": "Multiply by", "+": "Add", "-": "Subtract"}
_WORD_OPS = {v.lower(): k for k, v in _OP_WORDS.items()}
_START = re.compile(r"Start with (\d+)\.")
_OP_SENTENCE = re.compile(r"(Multiply by|Add|Subtract) (\d+)\.")

DEFAULT_MARKERS = (
    r"deliberately (?:wrong|incorrect)",
    r"intentional(?:ly)? (?:wrong|error|mistake)",
    r"\bi made an? (?:mistake|error)\b",
    r"\bthis (?:step |line )?is wrong\b",
    r"\((?:wrong|incorrect|error)\)",
    r"\[(?:wrong|incorrect|error)\]",
    r"should actually be",
)


@dataclass(frozen=True)
class ToyProblem:
    id: str
    start: int
    ops: tuple[tuple[str, int], ...]

    @property
    def question(self) -> str:
        parts = [f"Start with {self.start}."]
        parts += [f"{_OP_WORDS[op]} {c}." for op, c in self.ops]
        parts.append("What number results?")
        return " ".join(parts)

    @property
    def family(self) -> str:
        return f"chain-{len(self.ops)}"

    def trace(self) -> list[tuple[int, str, int, int]]:
        out = []
        value = self.start
        for op, c in self.ops:
            new = OPS[op](value, c)
            out.append((value, op, c, new))
            value = new
        return out

    @property
    def answer(self) -> int:
        return self.trace()[-1][3]

    @property
    def reference_answer(self) -> str:
        return f"\\boxed{{{self.answer}}}"

    def to_record(self, split: str = "train") -> dict:
        return {
            "id": self.id,
            "question": self.question,
            "reference_answer": self.reference_answer,
            "source": "toy",
            "split": split,
        }


def parse_question(question: str, problem_id: str = "") -> ToyProblem:
    m = _START.search(question)
    if m is None:
        raise ValueError(f"not a toy question: {question!r}")
    ops = tuple((_WORD_OPS[w.lower()], int(c)) for w, c in _OP_SENTENCE.findall(question))
    if not ops:
        raise ValueError(f"toy question has no operations: {question!r}")
    return ToyProblem(problem_id, int(m.group(1)), ops)


def generate_problems(n: int, seed: int, min_ops: int = 2, max_ops: int = 4, prefix: str = "toy") -> list[ToyProblem]:
    rng = np.random.default_rng(derive_seed(seed, "toy-problems", prefix))
    problems = []
    for i in range(n):
        start = int(rng.integers(2, 13))
        value = start
        ops = []
        for _ in range(int(rng.integers(min_ops, max_ops + 1))):
            op = str(rng.choice(["+", "-", "*"]))
            if op == "*" and value > 60:
                op = "+"
            if op == "-" and value < 4:
                op = "+"
            if op == "+":
                c = int(rng.integers(2, 16))
            elif op == "-":
                c = int(rng.integers(1, value))
            else:
                c = int(rng.integers(2, 6))
            value = OPS[op](value, c)
            ops.append((op, c))
        problems.append(ToyProblem(f"{prefix}-{i:04d}", start, tuple(ops)))
    return problems


# --- rendering ------------------------------------------------------------------

_PREAMBLE = "Let me work through this one operation at a time, keeping track of the running value."


def _step_line(k: int, lhs: int, op: str, rhs: int, value: int, note: str = "") -> str:
    if op == "+":
        verb = f"Adding {rhs} to the running value"
    elif op == "-":
        verb = f"Subtracting {rhs} from the running value"
    else:
        verb = f"Multiplying the running value by {rhs}"
    return f"Step {k}: {verb} gives {lhs} {op} {rhs} = {value}.{note}"


def render_chain(rows: Sequence[tuple[int, str, int, int]], notes: dict[int, str] | None = None) -> list[str]:
    notes = notes or {}
    return [_step_line(k, *row, notes.get(k, "")) for k, row in enumerate(rows, start=1)]


def _carry(rows: list[tuple[int, str, int, int]], start_index: int) -> list[tuple[int, str, int, int]]:
    """Re-chain rows after position ``start_index`` onto its (possibly wrong) value."""
    out = rows[: start_index + 1]
    value = out[-1][3]
    for _, op, c, _ in rows[start_index + 1:]:
        new = OPS[op](value, c)
        out.append((value, op, c, new))
        value = new
    return out


def _solution(lines: list[str], conclusion: str) -> str:
    return "\n".join([_PREAMBLE, *lines, conclusion])


class TypeBDetector:
    """Flags explicit contamination: self-admission markers, or a step whose
    carried operand contradicts the value stated on the previous line."""

    def __init__(self, markers: Sequence[str] = DEFAULT_MARKERS, check_contradiction: bool = True):
        self.markers = tuple(markers)
        self._pattern = re.compile("|".join(f"(?:{m})" for m in self.markers), re.I) if self.markers else None
        self.check_contradiction = check_contradiction

    def marker_hit(self, text: str) -> bool:
        return bool(self._pattern and self._pattern.search(text))

    def marked_step(self, text: str) -> int | None:
        if self._pattern is None:
            return None
        for line in text.splitlines():
            m = re.match(r"\s*Step\s+(\d+):", line)
            if m and self._pattern.search(line):
                return int(m.group(1))
        return None

    def contradiction(self, text: str) -> bool:
        steps = parse_steps(text)
        return any(cur.lhs != prev.value for prev, cur in zip(steps, steps[1:]))

    def fires(self, text: str) -> bool:
        return self.marker_hit(text) or (self.check_contradiction and self.contradiction(text))


class ToyDomain:
    def __init__(
        self,
        num_distractors: int = 3,
        checker: AnswerChecker | None = None,
        detector: TypeBDetector | None = None,
    ):
        if num_distractors < 1:
            raise ValueError("need at least one distractor")
        self.num_distractors = num_distractors
        self.checker = checker or CanonicalChecker()
        self.detector = detector or TypeBDetector()

    # -- sneaky side

    def candidate_kinds(self) -> list[str]:
        cycle = SNEAKY_KINDS[1:]
        return ["correct"] + [cycle[i % len(cycle)] for i in range(self.num_distractors)]

    def sneaky_candidates(self, problem: ToyProblem) -> list[str]:
        out = []
        for variant, kind in enumerate(self.candidate_kinds()):
            out.append(self.render(problem, kind, variant))
        return out

    def render(self, problem: ToyProblem, kind: str, variant: int = 0) -> str:
        rows = problem.trace()
        rng = np.random.default_rng(derive_seed("toy-render", problem.question, kind, variant))
        pos = int(rng.integers(0, len(rows)))
        shift = int(rng.integers(1, 4)) + variant // len(SNEAKY_KINDS)
        if kind == "correct":
            lines = render_chain(rows)
            return _solution(lines, f"After the last operation the running value is {rows[-1][3]}, "
                                    f"so the answer is \\boxed{{{rows[-1][3]}}}.")
        if kind == "result_shift":
            lines = render_chain(rows)
            return _solution(lines, f"Putting everything together, the answer is \\boxed{{{rows[-1][3] + shift}}}.")
        if kind == "contaminated":
            lhs, op, c, value = rows[pos]
            rows = _carry(rows[:pos] + [(lhs, op, c, value + shift)] + rows[pos + 1:], pos)
            lines = render_chain(rows, {pos + 1: " (this step is deliberately wrong)"})
            return _solution(lines, f"After the last operation the running value is {rows[-1][3]}, "
                                    f"so the answer is \\boxed{{{rows[-1][3]}}}.")
        if kind == "subtle":
            lhs, op, c, _ = rows[pos]
            misread = c + shift
            rows = _carry(rows[:pos] + [(lhs, op, misread, OPS[op](lhs, misread))] + rows[pos + 1:], pos)
            lines = render_chain(rows)
            return _solution(lines, f"After the last operation the running value is {rows[-1][3]}, "
                                    f"so the answer is \\boxed{{{rows[-1][3]}}}.")
        if kind == "unboxed":
            lines = render_chain(rows)
            return _solution(lines, f"After the last operation the running value is {rows[-1][3]}, "
                                    f"so the answer is {rows[-1][3]}.")
        raise ValueError(f"unknown sneaky kind {kind!r}")

    # -- diagnosis side

    def surface(self, a_s_text: str, a_truth_text: str) -> str:
        """What a diagnosis can observe: agreement with the reference, or a marker."""
        final = extract_final(a_s_text)
        truth = extract_final(a_truth_text) or a_truth_text
        if final is not None and self.checker.equivalent(final, truth):
            return "agrees"
        if self.detector.marker_hit(a_s_text):
            return "marked"
        return "mismatch"

    def diagnosis_candidates(self, a_s_text: str, a_truth_text: str) -> list[str]:
        return [self.render_diagnosis(action, a_s_text, a_truth_text) for action in DIAGNOSIS_ACTIONS]

    def render_diagnosis(self, action: str, a_s_text: str, a_truth_text: str) -> str:
        truth = extract_final(a_truth_text) or a_truth_text
        if action == "accept":
            return ("Verdict: CORRECT\nI read the solution line by line against the reference answer "
                    f"{truth}; the reasoning and the final answer look consistent with it.")
        if action == "flag_final":
            return ("Verdict: INCORRECT\nThe boxed answer is not the value produced by the last computed line, "
                    "so the conclusion does not follow from the work shown.\nLocation: final answer")
        if action == "flag_marked":
            marked = self.detector.marked_step(a_s_text)
            if marked is not None:
                return (f"Verdict: INCORRECT\nThe author labels Step {marked} as wrong, so the value written "
                        f"there cannot be trusted.\nLocation: Step {marked}")
            return ("Verdict: INCORRECT\nThe final answer disagrees with the reference, but no line of the "
                    "solution is explicitly labelled as faulty.")
        if action == "audit":
            steps = parse_steps(a_s_text)
            slip = first_slip(steps)
            if slip is not None:
                return (f"Verdict: INCORRECT\nRecomputing every line, Step {slip} does not evaluate to the value "
                        f"written there.\nLocation: Step {slip}")
            final = extract_final(a_s_text)
            if steps and (final is None or not self.checker.equivalent(final, str(steps[-1].value))):
                return ("Verdict: INCORRECT\nEvery line evaluates correctly, but the boxed answer differs from "
                        "the last computed value.\nLocation: final answer")
            if final is not None and self.checker.equivalent(final, truth):
                return ("Verdict: CORRECT\nRecomputing every line, each operation evaluates correctly and the "
                        "result matches the reference.")
            return ("Verdict: INCORRECT\nEvery line evaluates correctly, yet the result disagrees with the "
                    "reference answer; the error is not in the arithmetic.")
        raise ValueError(f"unknown diagnosis action {action!r}")

    # -- policy support

    def support(self, ctx: RoleContext) -> tuple[tuple, list[str]]:
        if ctx.role is Role.SNEAKY:
            problem = parse_question(ctx.inputs["q"])
            return ("sneaky", problem.family), self.sneaky_candidates(problem)
        if ctx.role is Role.DIAGNOSIS:
            a_s, truth = ctx.inputs["a_S"], ctx.inputs["a_truth"]
            family = f"chain-{len(parse_steps(a_s))}"
            return ("diagnosis", family, self.surface(a_s, truth)), self.diagnosis_candidates(a_s, truth)
        raise ValueError(f"toy policy has no support for role {ctx.role.value}")

    # -- verification

    def verify_steps(self, problem: ToyProblem | str, text: str) -> list[bool]:
        """Per-step check of a solution against the problem's exact trace."""
        if isinstance(problem, str):
            problem = parse_question(problem)
        steps = parse_steps(text)
        if not steps:
            raise VerifierUnavailable("no parseable steps in answer")
        truth = problem.trace()
        flags = []
        for k, row in enumerate(truth):
            flags.append(k < len(steps) and (steps[k].lhs, steps[k].op, steps[k].rhs, steps[k].value) == row)
        flags += [False] * (len(steps) - len(truth))
        return flags

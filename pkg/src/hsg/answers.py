"""Answer extraction, equivalence checking, token counting and output grammars.

Everything here is a pure function of text. The reward engine composes these
leaves; the corrector and the evaluation harness reuse the same grammars so
that a report is parsed identically everywhere.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Protocol

BOXED = "\\boxed"


def boxed_contents(text: str) -> list[str]:
    """Return the brace-balanced contents of every ``\\boxed{...}`` in order.

    Unterminated markers are ignored.
    """
    found = []
    start = 0
    while True:
        idx = text.find(BOXED, start)
        if idx < 0:
            return found
        pos = idx + len(BOXED)
        while pos < len(text) and text[pos].isspace():
            pos += 1
        start = pos
        if pos >= len(text) or text[pos] != "{":
            continue
        depth = 0
        for end in range(pos, len(text)):
            ch = text[end]
            if ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    found.append(text[pos + 1:end].strip())
                    start = end + 1
                    break
        else:
            return found


def extract_final(text: str) -> str | None:
    """The boxed answer, or None unless exactly one marker is present."""
    contents = boxed_contents(text)
    if len(contents) != 1:
        return None
    return contents[0]


def replace_final(text: str, value: str) -> str:
    """Rewrite the (single) boxed answer; append one if there is none."""
    idx = text.find(BOXED + "{")
    if idx < 0:
        return text.rstrip() + f"\n\nCorrected answer: \\boxed{{{value}}}"
    pos = idx + len(BOXED)
    depth = 0
    for end in range(pos, len(text)):
        if text[end] == "{":
            depth += 1
        elif text[end] == "}":
            depth -= 1
            if depth == 0:
                return text[:idx] + f"\\boxed{{{value}}}" + text[end + 1:]
    return text[:idx] + f"\\boxed{{{value}}}"


# --- tokenization -----------------------------------------------------------


class Tokenizer(Protocol):
    name: str

    def count(self, text: str) -> int: ...


class RegexTokenizer:
    """Word-and-punctuation tokenizer.

    The version string is recorded in run metadata; changing the pattern
    requires a new name because length rewards depend on it.
    """

    name = "regex-v1"
    _pattern = re.compile(r"\w+|[^\w\s]")

    def tokenize(self, text: str) -> list[str]:
        return self._pattern.findall(text)

    def count(self, text: str) -> int:
        return len(self._pattern.findall(text))


TOKENIZERS: dict[str, type] = {RegexTokenizer.name: RegexTokenizer}


def get_tokenizer(name: str) -> Tokenizer:
    try:
        return TOKENIZERS[name]()
    except KeyError:
        raise ValueError(f"unknown tokenizer {name!r}; known: {sorted(TOKENIZERS)}") from None


# --- equivalence ------------------------------------------------------------

_TEXT_WRAP = re.compile(r"\\(?:text|mathrm|textbf|mbox)\{([^{}]*)\}")
_FRAC = re.compile(r"^(-?)\\frac\{([^{}]+)\}\{([^{}]+)\}$")
_THOUSANDS = re.compile(r"^[-+]?\d{1,3}(,\d{3})+(\.\d+)?$")


def canonical_form(value: str) -> Fraction | str:
    """Canonical representation used for answer equivalence.

    Numbers (integers, decimals, ``a/b`` and ``\\frac{a}{b}``) become exact
    rationals; anything else is whitespace-stripped and case-folded.
    """
    s = value.strip().strip("$").strip()
    s = _TEXT_WRAP.sub(r"\1", s)
    for junk in ("\\left", "\\right", "\\!", "\\,", "\\;", "\\ "):
        s = s.replace(junk, "")
    s = s.replace("\\dfrac", "\\frac").replace("\\tfrac", "\\frac")
    s = s.strip().rstrip(".").strip()
    m = _FRAC.match(s)
    if m:
        s = f"{m.group(1)}{m.group(2)}/{m.group(3)}"
    if _THOUSANDS.match(s):
        s = s.replace(",", "")
    compact = re.sub(r"\s+", "", s)
    try:
        return Fraction(compact)
    except (ValueError, ZeroDivisionError):
        return compact.casefold()


class AnswerChecker(Protocol):
    name: str

    def equivalent(self, candidate: str, reference: str) -> bool: ...


class CanonicalChecker:
    """Default checker: exact match of canonical forms."""

    name = "canonical-v1"

    def equivalent(self, candidate: str, reference: str) -> bool:
        return canonical_form(candidate) == canonical_form(reference)


# --- answers and reports -----------------------------------------------------


class AnswerRole(str, enum.Enum):
    SNEAKY = "sneaky"
    CORRECTION = "correction"
    REFERENCE = "reference"


@dataclass(frozen=True)
class Answer:
    text: str
    final_value: str | None
    length: int
    role: AnswerRole = AnswerRole.SNEAKY

    @classmethod
    def from_text(cls, text: str, tokenizer: Tokenizer, role: AnswerRole = AnswerRole.SNEAKY) -> Answer:
        return cls(text=text, final_value=extract_final(text), length=tokenizer.count(text), role=AnswerRole(role))

    def to_dict(self) -> dict[str, Any]:
        return {"text": self.text, "final_value": self.final_value, "length": self.length}


class Verdict(str, enum.Enum):
    CLAIMS_ERROR = "claims_error"
    CLAIMS_CORRECT = "claims_correct"
    UNPARSEABLE = "unparseable"


FINAL_LOCATION = "final"

_VERDICT_LINE = re.compile(r"^\s*verdict\s*:\s*(incorrect|correct)\b", re.I | re.M)
_LOCATION_LINE = re.compile(r"^\s*location\s*:\s*(?:step\s+(\d+)|(final))", re.I | re.M)
_STEP_MENTION = re.compile(r"\bstep\s+(\d+)\b", re.I)
_CORRECT_VALUE = re.compile(
    r"correct\s+(?:final\s+)?value\s*(?:is\s*)?[:=]?\s*([-+]?\d[\d,]*(?:\.\d+)?(?:/\d+)?)", re.I
)


def parse_verdict(text: str) -> Verdict:
    """Verdict grammar: the first line of the form ``Verdict: INCORRECT|CORRECT``."""
    m = _VERDICT_LINE.search(text)
    if m is None:
        return Verdict.UNPARSEABLE
    return Verdict.CLAIMS_ERROR if m.group(1).lower() == "incorrect" else Verdict.CLAIMS_CORRECT


def parse_location(text: str) -> int | str | None:
    """Error localization named by a report.

    An explicit ``Location:`` line wins; otherwise the first ``Step k``
    mentioned after the verdict line.
    """
    m = _LOCATION_LINE.search(text)
    if m:
        return int(m.group(1)) if m.group(1) else FINAL_LOCATION
    verdict = _VERDICT_LINE.search(text)
    rest = text[verdict.end():] if verdict else text
    m = _STEP_MENTION.search(rest)
    return int(m.group(1)) if m else None


def parse_correct_value(text: str) -> str | None:
    m = _CORRECT_VALUE.search(text)
    return m.group(1).rstrip(".,") if m else None


@dataclass(frozen=True)
class DiagnosticReport:
    text: str
    verdict: Verdict
    length: int
    location: int | str | None = None
    correct_value: str | None = None

    @classmethod
    def from_text(cls, text: str, tokenizer: Tokenizer) -> DiagnosticReport:
        return cls(
            text=text,
            verdict=parse_verdict(text),
            length=tokenizer.count(text),
            location=parse_location(text),
            correct_value=parse_correct_value(text),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "text": self.text,
            "verdict": self.verdict.value,
            "length": self.length,
            "location": self.location,
            "correct_value": self.correct_value,
        }


# --- format templates ---------------------------------------------------------

RULE_KINDS = ("boxed_count", "line_prefix", "rationale", "forbidden")


@dataclass(frozen=True)
class FormatRule:
    """One structural check.

    kinds:
      boxed_count  exactly ``count`` balanced boxed markers
      line_prefix  some line starts with ``value`` (after leading whitespace)
      rationale    a non-blank line other than the one starting with ``value``
      forbidden    ``value`` does not occur in the text
    """

    kind: str
    value: str = ""
    count: int = 1

    def __post_init__(self):
        if self.kind not in RULE_KINDS:
            raise ValueError(f"unknown format rule kind {self.kind!r}")

    def check(self, text: str) -> bool:
        if self.kind == "boxed_count":
            return len(boxed_contents(text)) == self.count
        lines = text.splitlines()
        if self.kind == "line_prefix":
            return any(line.lstrip().startswith(self.value) for line in lines)
        if self.kind == "rationale":
            return any(line.strip() and not line.lstrip().startswith(self.value) for line in lines)
        return self.value not in text

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind}
        if self.kind == "boxed_count":
            out["count"] = self.count
        else:
            out["value"] = self.value
        return out


@dataclass(frozen=True)
class FormatSpec:
    rules: tuple[FormatRule, ...] = field(default_factory=tuple)

    @classmethod
    def from_rules(cls, rules: Iterable[dict[str, Any]]) -> FormatSpec:
        built = []
        for raw in rules:
            unknown = set(raw) - {"kind", "value", "count"}
            if unknown:
                raise ValueError(f"unknown format rule fields: {sorted(unknown)}")
            built.append(FormatRule(**raw))
        return cls(tuple(built))

    def check(self, text: str) -> bool:
        return all(rule.check(text) for rule in self.rules)

    def to_list(self) -> list[dict[str, Any]]:
        return [r.to_dict() for r in self.rules]


SNEAKY_FORMAT = FormatSpec((FormatRule("boxed_count", count=1),))
DIAGNOSIS_FORMAT = FormatSpec((FormatRule("line_prefix", "Verdict:"), FormatRule("rationale", "Verdict:")))

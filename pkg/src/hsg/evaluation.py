"""Measurement: correction accuracy, judge win rate, stealthiness, error types.

Percentages are reported with two decimals, rounded half-up. Table averages
and improvements are computed from the rounded per-dataset values, which is
how printed tables line up digit for digit.
"""

from __future__ import annotations

import enum
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal, localcontext
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

from hsg.answers import AnswerChecker, CanonicalChecker, extract_final
from hsg.errors import BackendError, FixtureError, VerifierUnavailable
from hsg.game import fan_out
from hsg.policies import Corrector, Policy, Role, RoleContext, derive_seed
from hsg.toy import TypeBDetector

log = logging.getLogger(__name__)

TWO_PLACES = Decimal("0.01")


def percent(value: Fraction | float | int) -> Decimal:
    """``100 * value`` rounded half-up to two decimals."""
    frac = Fraction(value)
    with localcontext() as ctx:
        ctx.prec = 50
        exact = Decimal(frac.numerator) * 100 / Decimal(frac.denominator)
        return exact.quantize(TWO_PLACES, rounding=ROUND_HALF_UP)


def mean_displayed(values: Sequence[Decimal]) -> Decimal:
    with localcontext() as ctx:
        ctx.prec = 50
        return (sum(values, Decimal(0)) / len(values)).quantize(TWO_PLACES, rounding=ROUND_HALF_UP)


# --- fixtures ------------------------------------------------------------------


class Which(str, enum.Enum):
    D = "D"
    DSTAR = "Dstar"


_REQUIRED_ITEM_FIELDS = ("id", "question", "reference_answer", "a_s", "diagnostic_d", "diagnostic_dstar")


@dataclass
class EvalItem:
    id: str
    question: str
    reference_answer: str
    a_s: str
    diagnostic_d: str
    diagnostic_dstar: str
    model: str = ""
    dataset: str = ""
    # Precomputed corrections / outcomes; None means "compute" (or, for
    # outcomes of failed backend calls, "excluded").
    correction_d: str | None = None
    correction_dstar: str | None = None
    outcome_d: bool | None = None
    outcome_dstar: bool | None = None
    failed_d: bool = False
    failed_dstar: bool = False

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any], where: str = "item") -> EvalItem:
        if not isinstance(raw, Mapping):
            raise FixtureError(f"{where}: expected a JSON object")
        missing = [k for k in _REQUIRED_ITEM_FIELDS if not isinstance(raw.get(k), str)]
        if missing:
            raise FixtureError(f"{where}: missing field(s) {missing}")
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise FixtureError(f"{where}: unknown field(s) {sorted(unknown)}")
        return cls(**raw)

    def diagnostic(self, which: Which) -> str:
        return self.diagnostic_d if which is Which.D else self.diagnostic_dstar

    def to_dict(self) -> dict[str, Any]:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def load_items(path: str | Path) -> list[EvalItem]:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise FixtureError(f"cannot read {path}: {exc}") from exc
    items = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FixtureError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from exc
        items.append(EvalItem.from_dict(raw, f"{path}:{lineno}"))
    return items


# --- correction accuracy ---------------------------------------------------------


@dataclass(frozen=True)
class AccCount:
    correct: int
    total: int
    excluded: int = 0

    @property
    def fraction(self) -> Fraction:
        return Fraction(self.correct, self.total) if self.total else Fraction(0)

    @property
    def rate(self) -> float:
        return float(self.fraction)


def correction_outcome(
    item: EvalItem, which: Which, corrector: Corrector | None, checker: AnswerChecker
) -> bool | None:
    """Whether the correction guided by ``which`` matches the reference; None if it failed."""
    outcome = item.outcome_d if which is Which.D else item.outcome_dstar
    if outcome is not None:
        return bool(outcome)
    if item.failed_d if which is Which.D else item.failed_dstar:
        return None
    corrected = item.correction_d if which is Which.D else item.correction_dstar
    if corrected is None:
        if corrector is None:
            raise FixtureError(f"item {item.id}: no outcome, no correction and no corrector")
        try:
            corrected = corrector.correct_text(item.a_s, item.diagnostic(which))
        except BackendError as exc:
            log.warning("item %s: correction failed (%s); excluded", item.id, exc)
            return None
    final = extract_final(corrected)
    truth = extract_final(item.reference_answer) or item.reference_answer
    return final is not None and checker.equivalent(final, truth)


def acc_corr_count(
    items: Sequence[EvalItem],
    which: Which | str,
    corrector: Corrector | None = None,
    checker: AnswerChecker | None = None,
    max_workers: int = 1,
) -> AccCount:
    which = Which(which)
    checker = checker or CanonicalChecker()
    ordered = sorted(items, key=lambda it: it.id)
    outcomes = fan_out(lambda i: correction_outcome(ordered[i], which, corrector, checker), len(ordered), max_workers)
    # sequential fold in id order
    correct = total = excluded = 0
    for ok in outcomes:
        if ok is None:
            excluded += 1
            continue
        total += 1
        correct += ok
    return AccCount(correct, total, excluded)


def acc_corr(items, which, corrector=None, checker=None, max_workers: int = 1) -> float:
    return acc_corr_count(items, which, corrector, checker, max_workers).rate


def stealthiness(items, which: Which | str = Which.DSTAR, corrector=None, checker=None) -> float:
    """Correction failure rate, ``1 - ACC_corr``."""
    count = acc_corr_count(items, which, corrector, checker)
    return float(1 - count.fraction) if count.total else 0.0


# --- judging ---------------------------------------------------------------------


class Preference(str, enum.Enum):
    A_BETTER = "A_better"
    B_BETTER = "B_better"
    TIE = "tie"


class Outcome(str, enum.Enum):
    WIN = "win"
    TIE = "tie"
    LOSS = "loss"


@dataclass(frozen=True)
class JudgeVerdict:
    """Two passes: first shows (D, D*) as (A, B); second shows (D*, D)."""

    first_pass: Preference | None
    second_pass: Preference | None
    unparseable: bool = False

    @property
    def aggregate(self) -> Outcome:
        first = self.first_pass or Preference.TIE
        second = self.second_pass or Preference.TIE
        # de-swap: in both passes, which diagnosis was preferred
        pick1 = {Preference.A_BETTER: "D", Preference.B_BETTER: "D*"}.get(first)
        pick2 = {Preference.A_BETTER: "D*", Preference.B_BETTER: "D"}.get(second)
        if pick1 == pick2 == "D*":
            return Outcome.WIN
        if pick1 == pick2 == "D":
            return Outcome.LOSS
        return Outcome.TIE

    def to_dict(self) -> dict[str, Any]:
        return {
            "first_pass": self.first_pass.value if self.first_pass else None,
            "second_pass": self.second_pass.value if self.second_pass else None,
            "aggregate": self.aggregate.value,
            "unparseable": self.unparseable,
        }


_BRACKET = re.compile(r"\[\[\s*(A|B|TIE)\s*\]\]", re.I)
_PREFERRED = re.compile(r"^\s*preferred\s*:\s*(A|B|tie)\b", re.I | re.M)


def parse_preference(text: str) -> Preference | None:
    """Last ``[[A]]``/``[[B]]``/``[[TIE]]`` tag, else a ``Preferred: X`` line."""
    tags = _BRACKET.findall(text)
    token = tags[-1] if tags else None
    if token is None:
        m = _PREFERRED.search(text)
        token = m.group(1) if m else None
    if token is None:
        return None
    return {"a": Preference.A_BETTER, "b": Preference.B_BETTER, "tie": Preference.TIE}[token.lower()]


def judge_pair(
    judge: Policy,
    question: str,
    a_s: str,
    diag_d: str,
    diag_dstar: str,
    seed: int = 0,
    template_id: str = "judge",
) -> JudgeVerdict:
    passes = []
    for k, (first, second) in enumerate(((diag_d, diag_dstar), (diag_dstar, diag_d))):
        ctx = RoleContext(Role.JUDGE, {"q": question, "a_S": a_s, "first": first, "second": second}, template_id)
        text = judge.sample(ctx, 1, derive_seed(seed, "judge", k))[0].text
        passes.append(parse_preference(text))
    unparseable = passes[0] is None and passes[1] is None
    if unparseable:
        log.warning("judge output unparseable in both passes; counted as tie")
    return JudgeVerdict(passes[0], passes[1], unparseable)


@dataclass(frozen=True)
class WinRate:
    wins: int
    ties: int
    losses: int

    @property
    def total(self) -> int:
        return self.wins + self.ties + self.losses

    @property
    def fraction(self) -> Fraction:
        return Fraction(self.wins - self.losses, self.total)

    @property
    def rate(self) -> float:
        return float(self.fraction)

    def as_tuple(self) -> tuple[int, int, int, float]:
        return self.wins, self.ties, self.losses, self.rate


def win_rate(verdicts: Iterable[JudgeVerdict | Outcome | str]) -> WinRate:
    counts = Counter()
    for v in verdicts:
        outcome = v.aggregate if isinstance(v, JudgeVerdict) else Outcome(v)
        counts[outcome] += 1
    if not counts:
        raise ValueError("win_rate needs at least one verdict")
    return WinRate(counts[Outcome.WIN], counts[Outcome.TIE], counts[Outcome.LOSS])


def judge_items(judge: Policy, items: Sequence[EvalItem], seed: int = 0, max_workers: int = 1) -> list[JudgeVerdict]:
    ordered = sorted(items, key=lambda it: it.id)
    return fan_out(
        lambda i: judge_pair(judge, ordered[i].question, ordered[i].a_s, ordered[i].diagnostic_d,
                             ordered[i].diagnostic_dstar, derive_seed(seed, ordered[i].id)),
        len(ordered),
        max_workers,
    )


# --- error types -----------------------------------------------------------------


@dataclass(frozen=True)
class ErrorTypeLabel:
    has_type_a: bool
    has_type_b: bool
    low_confidence: bool = False

    @property
    def category(self) -> str:
        if self.has_type_a and self.has_type_b:
            return "both"
        if self.has_type_a:
            return "a_only"
        if self.has_type_b:
            return "b_only"
        return "neither"


StepVerifier = Callable[[str, str], Sequence[bool]]


def classify_error_type(
    question: str,
    a_s: str,
    reference: str,
    checker: AnswerChecker | None = None,
    step_verifier: StepVerifier | None = None,
    detector: TypeBDetector | None = None,
) -> ErrorTypeLabel:
    """Type A: every verified step right but the final answer differs.
    Type B: a contamination detector fires."""
    checker = checker or CanonicalChecker()
    detector = detector or TypeBDetector()
    final = extract_final(a_s)
    truth = extract_final(reference) or reference
    wrong_final = final is None or not checker.equivalent(final, truth)
    low_confidence = False
    steps_ok = False
    if step_verifier is None:
        low_confidence = True
    else:
        try:
            flags = step_verifier(question, a_s)
            steps_ok = bool(flags) and all(flags)
        except VerifierUnavailable:
            low_confidence = True
    return ErrorTypeLabel(steps_ok and wrong_final, detector.fires(a_s), low_confidence)


CATEGORIES = ("a_only", "b_only", "both", "neither")


def error_type_distribution(labels: Sequence[ErrorTypeLabel], weights: Sequence[float] | None = None) -> dict[str, float]:
    """Proportions of A only, B only, A and B, and neither. Sums to 1."""
    if not labels:
        raise ValueError("error_type_distribution needs at least one label")
    weights = [1.0] * len(labels) if weights is None else list(weights)
    totals = dict.fromkeys(CATEGORIES, 0.0)
    for label, w in zip(labels, weights):
        totals[label.category] += w
    norm = sum(totals.values())
    dist = {k: v / norm for k, v in totals.items()}
    # put rounding residue on the largest class so the four sum to 1
    top = max(CATEGORIES, key=lambda k: dist[k])
    dist[top] = 1.0 - sum(v for k, v in dist.items() if k != top)
    return dist


# --- tables ----------------------------------------------------------------------


@dataclass
class CorrectionRow:
    model: str
    which: Which
    by_dataset: dict[str, Decimal]
    average: Decimal
    improvement: Decimal | None = None


@dataclass
class CorrectionTable:
    datasets: list[str]
    rows: list[CorrectionRow] = field(default_factory=list)

    def row(self, model: str, which: Which | str) -> CorrectionRow:
        which = Which(which)
        for r in self.rows:
            if r.model == model and r.which is which:
                return r
        raise KeyError((model, which))


def _ordered_unique(values: Iterable[str]) -> list[str]:
    return list(dict.fromkeys(values))


def correction_table(
    items: Sequence[EvalItem],
    corrector: Corrector | None = None,
    checker: AnswerChecker | None = None,
    datasets: Sequence[str] | None = None,
) -> CorrectionTable:
    models = _ordered_unique(it.model for it in items)
    datasets = list(datasets) if datasets else _ordered_unique(it.dataset for it in items)
    table = CorrectionTable(datasets)
    for model in models:
        averages = {}
        for which in Which:
            cells = {}
            for ds in datasets:
                subset = [it for it in items if it.model == model and it.dataset == ds]
                if not subset:
                    raise FixtureError(f"no items for model {model!r} on dataset {ds!r}")
                cells[ds] = percent(acc_corr_count(subset, which, corrector, checker).fraction)
            averages[which] = mean_displayed(list(cells.values()))
            table.rows.append(CorrectionRow(model, which, cells, averages[which]))
        table.rows[-1].improvement = averages[Which.DSTAR] - averages[Which.D]
    return table


def format_correction_table(table: CorrectionTable) -> str:
    head = ["Model", "Guidance", *table.datasets, "Aver"]
    body = []
    for r in table.rows:
        aver = f"{r.average}%" + (f" (+{r.improvement})" if r.improvement is not None else "")
        body.append([r.model, "ACC_corr|" + ("D*" if r.which is Which.DSTAR else "D"),
                     *[f"{r.by_dataset[d]}%" for d in table.datasets], aver])
    return _aligned(head, body)


@dataclass
class JudgeRow:
    model: str
    counts: WinRate
    acc_improvement: Decimal | None = None

    @property
    def rate_percent(self) -> Decimal:
        return percent(self.counts.fraction)


def judge_table(verdicts_by_model: Mapping[str, Sequence[JudgeVerdict | Outcome | str]],
                improvements: Mapping[str, Decimal] | None = None) -> list[JudgeRow]:
    improvements = improvements or {}
    return [JudgeRow(m, win_rate(v), improvements.get(m)) for m, v in verdicts_by_model.items()]


def format_judge_table(rows: Sequence[JudgeRow]) -> str:
    head = ["Model", "Win", "Tie", "Loss", "Win Rate", "ACC_corr up"]
    body = [[r.model, str(r.counts.wins), str(r.counts.ties), str(r.counts.losses), f"{r.rate_percent}%",
             "-" if r.acc_improvement is None else f"{r.acc_improvement}%"] for r in rows]
    return _aligned(head, body)


def _aligned(head: list[str], body: list[list[str]]) -> str:
    widths = [max(len(row[i]) for row in [head, *body]) for i in range(len(head))]
    lines = [" | ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in [head, *body]]
    lines.insert(1, "-+-".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def evaluate_items(
    items: Sequence[EvalItem],
    corrector: Corrector | None = None,
    checker: AnswerChecker | None = None,
    judge: Policy | None = None,
    judge_dataset: str | None = None,
    step_verifier: StepVerifier | None = None,
    seed: int = 0,
    max_workers: int = 1,
) -> dict[str, Any]:
    """Full report: correction table, optional judge table, stealthiness, error types."""
    if not items:
        raise FixtureError("no evaluation items")
    checker = checker or CanonicalChecker()
    table = correction_table(items, corrector, checker)
    report: dict[str, Any] = {
        "correction": [
            {"model": r.model, "which": r.which.value, "by_dataset": {k: str(v) for k, v in r.by_dataset.items()},
             "average": str(r.average), "improvement": None if r.improvement is None else str(r.improvement)}
            for r in table.rows
        ],
        "correction_text": format_correction_table(table),
    }
    models = _ordered_unique(it.model for it in items)
    report["stealthiness"] = {
        m: {w.value: stealthiness([it for it in items if it.model == m], w, corrector, checker) for w in Which}
        for m in models
    }
    labels = [classify_error_type(it.question, it.a_s, it.reference_answer, checker, step_verifier)
              for it in sorted(items, key=lambda it: it.id)]
    report["error_types"] = error_type_distribution(labels)
    report["error_types_low_confidence"] = sum(lb.low_confidence for lb in labels)
    if judge is not None:
        ds = judge_dataset or table.datasets[-1]
        verdicts = {}
        improvements = {}
        for m in models:
            subset = [it for it in items if it.model == m and it.dataset == ds]
            verdicts[m] = judge_items(judge, subset, seed, max_workers)
            improvements[m] = table.row(m, Which.DSTAR).by_dataset[ds] - table.row(m, Which.D).by_dataset[ds]
        rows = judge_table(verdicts, improvements)
        report["judge"] = [
            {"model": r.model, "wins": r.counts.wins, "ties": r.counts.ties, "losses": r.counts.losses,
             "win_rate": str(r.rate_percent), "acc_corr_improvement": str(r.acc_improvement),
             "unparseable": sum(v.unparseable for v in verdicts[r.model])}
            for r in rows
        ]
        report["judge_text"] = format_judge_table(rows)
    return report

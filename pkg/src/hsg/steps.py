"""Step-chain grammar shared by the toy domain, the rule corrector and the
step verifier.

A chain solution is a sequence of lines ``Step k: ... a OP b = c`` where each
step's left operand is meant to be the previous step's result.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

STEP_LINE = re.compile(r"Step\s+(\d+):[^\n]*?(-?\d+)\s*([+\-*])\s*(-?\d+)\s*=\s*(-?\d+)")

OPS = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
}


@dataclass(frozen=True)
class Step:
    index: int
    lhs: int
    op: str
    rhs: int
    value: int

    @property
    def arithmetic_ok(self) -> bool:
        return OPS[self.op](self.lhs, self.rhs) == self.value


def parse_steps(text: str) -> list[Step]:
    steps = [
        Step(int(m.group(1)), int(m.group(2)), m.group(3), int(m.group(4)), int(m.group(5)))
        for m in STEP_LINE.finditer(text)
    ]
    return steps


def first_slip(steps: list[Step]) -> int | None:
    """Index of the first step whose arithmetic or carried operand is wrong."""
    for pos, step in enumerate(steps):
        if not step.arithmetic_ok:
            return step.index
        if pos > 0 and step.lhs != steps[pos - 1].value:
            return step.index
    return None


def recompute_from(steps: list[Step], index: int) -> int | None:
    """Recompute the chain from step ``index`` onward.

    Step ``index`` keeps its stated left operand; later steps carry the
    recomputed value forward. Returns the new final value, or None when the
    index does not name a step.
    """
    positions = [s.index for s in steps]
    if index not in positions:
        return None
    start = positions.index(index)
    value = OPS[steps[start].op](steps[start].lhs, steps[start].rhs)
    for step in steps[start + 1:]:
        value = OPS[step.op](value, step.rhs)
    return value

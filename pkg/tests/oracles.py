"""Independent oracles used by the tests.

Nothing here imports the reward, advantage or objective code under test.
Reward algebra runs on exact rationals; text parsing uses deliberately naive
re-implementations that only need to handle the toy and hand-built texts.
"""

from __future__ import annotations

import math
import re
from fractions import Fraction

TAU = Fraction(1, 20)
BETA = Fraction(3, 5)
L_MIN, L_MAX = 50, 600


def R(main, secondary, tau=TAU, beta=BETA) -> Fraction:
    main, secondary = Fraction(main), Fraction(secondary)
    assert 0 <= main <= 1 and 0 <= secondary <= 1
    return max(main, tau) * (beta + (1 - beta) * secondary)


def length(n: int, l_min=L_MIN, l_max=L_MAX) -> Fraction:
    if n < l_min:
        return Fraction(n, l_min) ** 2
    if n <= l_max:
        return Fraction(1)
    return Fraction(1, 1 + (n - l_max) ** 2)


def tokens(text: str) -> int:
    count = 0
    word = False
    for ch in text:
        if ch.isalnum() or ch == "_":
            if not word:
                count += 1
            word = True
        else:
            word = False
            if not ch.isspace():
                count += 1
    return count


def boxed(text: str) -> list[str]:
    # toy and hand-built texts never nest braces inside a boxed answer
    return re.findall(r"\\boxed\{([^{}]*)\}", text)


def final(text: str) -> str | None:
    b = boxed(text)
    return b[0].strip() if len(b) == 1 else None


def value(s: str) -> Fraction | str:
    try:
        return Fraction(s.replace(" ", ""))
    except (ValueError, ZeroDivisionError):
        return s.strip().lower()


def same(a: str | None, b: str | None) -> bool:
    return a is not None and b is not None and value(a) == value(b)


def verdict(text: str) -> str:
    for line in text.splitlines():
        head = line.strip().lower()
        if head.startswith("verdict:"):
            word = head[len("verdict:"):].strip()
            if word.startswith("incorrect"):
                return "error"
            if word.startswith("correct"):
                return "correct"
    return "unparseable"


def sneaky_format(text: str) -> int:
    return int(len(boxed(text)) == 1)


def diagnosis_format(text: str) -> int:
    lines = [ln.strip() for ln in text.splitlines()]
    has_verdict = any(ln.startswith("Verdict:") for ln in lines)
    has_rationale = any(ln and not ln.startswith("Verdict:") for ln in lines)
    return int(has_verdict and has_rationale)


def bundle(a_s: str, a_d: str, a_c: str, reference: str) -> dict[str, Fraction]:
    """Every reward for one triple, computed from the raw texts."""
    ref = final(reference)
    r_corr_s = Fraction(int(same(final(a_s), ref)))
    r_format_s = Fraction(sneaky_format(a_s))
    r_length_s = length(tokens(a_s))
    r_s = R(1 - r_corr_s, R(r_format_s, r_length_s))
    v = verdict(a_d)
    sneaky_correct = r_corr_s == 1
    gamma = Fraction(int((v == "error" and not sneaky_correct) or (v == "correct" and sneaky_correct)))
    r_format_d = Fraction(diagnosis_format(a_d))
    r_length_d = length(tokens(a_d))
    r_d = R(gamma, R(r_format_d, r_length_d))
    r_corr_c = Fraction(int(same(final(a_c), ref)))
    r_d_collab = R(r_d, r_corr_c)
    r_s_adv = R(r_s, R(1 - r_d_collab, 1 - r_corr_c))
    return {
        "r_corr_s": r_corr_s, "r_format_s": r_format_s, "r_length_s": r_length_s, "r_s": r_s,
        "gamma_diag": gamma, "r_format_d": r_format_d, "r_length_d": r_length_d, "r_d": r_d,
        "r_corr_c": r_corr_c, "r_d_collab": r_d_collab, "r_s_adv": r_s_adv,
    }


def advantages(rewards) -> list[float]:
    """(r - mean) / (population std + 1e-8), the mean and variance taken exactly."""
    r = [Fraction(x) for x in rewards]
    mu = sum(r) / len(r)
    var = sum((x - mu) ** 2 for x in r) / len(r)
    sigma = math.sqrt(var)  # the only rounding step besides the final division
    return [float(x - mu) / (sigma + 1e-8) for x in r]


def clip_term(rho: float, adv: float, eps: float) -> float:
    lo, hi = 1 - eps, 1 + eps
    c = lo if rho < lo else hi if rho > hi else rho
    return min(rho * adv, c * adv)


def softmax(logits, temperature=1.0) -> list[float]:
    m = max(logits)
    e = [math.exp((x - m) / temperature) for x in logits]
    s = math.fsum(e)
    return [x / s for x in e]


def kl(p, q) -> float:
    return math.fsum(pi * math.log(pi / qi) for pi, qi in zip(p, q) if pi > 0)


def objective(logits, actions, old_logprobs, advs, ref_logits, eps, beta, temperature=1.0) -> float:
    p = softmax(logits, temperature)
    q = softmax(ref_logits, temperature)
    terms = [clip_term(math.exp(math.log(p[a]) - old), adv, eps) for a, old, adv in zip(actions, old_logprobs, advs)]
    return math.fsum(terms) / len(actions) - beta * kl(p, q)


# --- toy chain arithmetic, recomputed from scratch ---------------------------------

_STEP = re.compile(r"Step (\d+):.*?(-?\d+) ([+*-]) (-?\d+) = (-?\d+)")


def chain_steps(text: str) -> list[tuple[int, int, str, int, int]]:
    return [tuple(int(g) if g not in "+-*" else g for g in m.groups()) for m in _STEP.finditer(text)]


def apply(a: int, op: str, b: int) -> int:
    return a + b if op == "+" else a - b if op == "-" else a * b

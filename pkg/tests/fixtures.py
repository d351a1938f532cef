"""Deterministic synthetic corpora for tests."""

from __future__ import annotations

import random


def gsm8k_style_golds(n: int = 100, seed: int = 1319) -> list[tuple[str, float]]:
    """Gold solutions shaped like math-corpus answers: worked steps followed
    by a '#### <answer>' tag. Returns (gold_text, tagged_answer) pairs."""
    rng = random.Random(seed)
    out = []
    for i in range(n):
        a = rng.randint(2, 120)
        b = rng.randint(2, 60)
        c = rng.randint(1, 9)
        style = i % 4
        if style == 0:
            answer: float = a * b
            text = (f"Each crate holds {a} apples and there are {b} crates.\n"
                    f"So there are {a} * {b} = {answer} apples.\n"
                    f"#### {answer}")
        elif style == 1:
            answer = a + b - c
            text = (f"He starts with {a}, buys {b} more, then loses {c}.\n"
                    f"{a} + {b} - {c} = {answer}.\n#### {answer}")
        elif style == 2:
            answer = round(a + b / 2, 1)
            text = (f"Half of {b} is {b / 2}, plus {a} gives "
                    f"{a} + {b / 2} = {answer}.\n#### {answer}")
        else:
            answer = a * 1000 + b
            text = (f"The total comes to {a},{b:03d} dollars this year.\n"
                    f"#### {a},{b:03d}")
        out.append((text, float(answer)))
    return out


def number_extraction_strings(n: int = 50, seed: int = 216) -> list[str]:
    """Synthetic strings mixing markers, separators, decimals, signs, and
    number-free text."""
    rng = random.Random(seed)
    shapes = [
        lambda r: f"He pays {r.randint(1, 40)} each month. "
                  f"#### {r.randint(100, 999)}",
        lambda r: f"the total is {r.randint(1, 9)},{r.randint(0, 999):03d}."
                  f"{r.randint(0, 9)} dollars.",
        lambda r: f"costs ${r.randint(1, 9)} then ${r.randint(1, 9)}, "
                  f"so -{r.randint(1, 9)} net",
        lambda r: f"between {r.randint(1900, 1999)}-{r.randint(2000, 2099)} "
                  f"it grew",
        lambda r: "no digits in this one at all",
        lambda r: f"#### {r.choice(['-', '+'])}{r.randint(1, 500)}",
        lambda r: f"{r.randint(1, 99)}.{r.randint(1, 99)} then "
                  f"{r.randint(1, 99)}.",
        lambda r: f"answer: {r.randint(10_000, 999_999):,}",
        lambda r: f"#### no number after marker but {r.randint(1, 99)} before",
        lambda r: f"+{r.randint(1, 50)} and {r.randint(1, 9)},"
                  f"{r.randint(1000, 9999)}",
    ]
    return [shapes[i % len(shapes)](rng) for i in range(n)]

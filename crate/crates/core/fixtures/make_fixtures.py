#!/usr/bin/env python3
"""Regenerates the long-tail profiling corpus and its golden histogram.

The golden file is computed here from the drawn year list, not by the Rust
profiler, so the two implementations check each other.
"""

import json
import math
import random
from pathlib import Path

HERE = Path(__file__).resolve().parent
WIDTH = 200
N = 2000

SUBJECTS = ["the council", "a merchant", "the garrison", "the abbey", "a poet", "the harbor"]
VERBS = ["was founded", "was rebuilt", "changed hands", "was recorded", "fell silent"]


def draw_year(rng):
    # Mentions thin out roughly exponentially with distance from the present.
    back = int(rng.expovariate(1 / 450.0))
    year = 2024 - back
    if year <= 0:
        year -= 1  # no year zero: astronomical 0 is 1 BCE
    return max(year, -3000)


def phrase(year, rng):
    if year < 0:
        return f"{-year} BCE" if rng.random() < 0.5 else f"{-year} BC"
    if year < 100:
        return f"AD {year}" if rng.random() < 0.5 else f"{year} AD"
    return str(year) if rng.random() < 0.7 else f"{year} AD"


def main():
    rng = random.Random(20240601)
    years = [draw_year(rng) for _ in range(N)]
    with open(HERE / "longtail_corpus.jsonl", "w") as f:
        for i, y in enumerate(years):
            text = f"In {phrase(y, rng)} {rng.choice(SUBJECTS)} {rng.choice(VERBS)} ."
            f.write(json.dumps({"id": i, "text": text}) + "\n")

    counts = {}
    for y in years:
        k = math.floor(y / WIDTH)
        counts[k] = counts.get(k, 0) + 1
    lo, hi = min(counts), max(counts)
    with open(HERE / "longtail_gregorian_200.csv", "w") as f:
        f.write("bin_start,bin_end,count\n")
        for k in range(lo, hi + 1):
            f.write(f"{k * WIDTH},{(k + 1) * WIDTH},{counts.get(k, 0)}\n")


if __name__ == "__main__":
    main()

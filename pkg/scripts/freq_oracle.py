#!/usr/bin/env python3
"""Counting oracle for the seeded-selection statistics check.

A deliberately naive, standalone restatement of the portable generator
(no imports from the package) counts how often each pool index comes up.
The frozen counts asserted in tests/test_acceptance.py came from this
script; rerun it to re-derive them:

    python scripts/freq_oracle.py [seed] [pool_size] [draws]
"""
import sys

MASK = (1 << 64) - 1


def stream(seed):
    state = seed & MASK
    while True:
        state = (state + 0x9E3779B97F4A7C15) & MASK
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        yield z ^ (z >> 31)


def main() -> None:
    seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
    pool = int(sys.argv[2]) if len(sys.argv) > 2 else 4
    draws = int(sys.argv[3]) if len(sys.argv) > 3 else 10_000

    span = MASK + 1
    limit = span - (span % pool)
    counts = [0] * pool
    generator = stream(seed)
    for _ in range(draws):
        value = next(generator)
        while value >= limit:  # rejection sampling, mirrors the generator
            value = next(generator)
        counts[value % pool] += 1

    print(f"seed={seed} pool={pool} draws={draws}")
    print("counts:", counts)
    print("freqs: ", [round(c / draws, 4) for c in counts])
    low, high = 0.22, 0.28
    verdict = all(low <= c / draws <= high for c in counts)
    print(f"all within [{low}, {high}]: {verdict}")


if __name__ == "__main__":
    main()

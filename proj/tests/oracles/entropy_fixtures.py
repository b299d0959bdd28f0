"""Normalised entropy fixtures evaluated in 60-digit arithmetic.

Each input is a list of binary64 probabilities (written with repr, so the C++
side reads back the identical doubles). The expected value is computed from
those exact doubles with mpmath: -sum p ln p / ln n, with 0 ln 0 = 0.

    python3 entropy_fixtures.py   # rewrites tests/data/entropy/fixtures.json
"""
import json
import pathlib
import random

import mpmath

mpmath.mp.dps = 60
OUT = pathlib.Path(__file__).resolve().parent.parent / "data" / "entropy" / "fixtures.json"


def brute(p):
    n = len(p)
    h = mpmath.mpf(0)
    for x in p:
        x = mpmath.mpf(x)
        if x > 0:
            h -= x * mpmath.log(x)
    return h / mpmath.log(n)


def main():
    rng = random.Random(6)
    cases = [
        ("three_way", [0.7, 0.2, 0.1]),
        ("two_way_even", [0.5, 0.5]),
        ("skewed_pair", [0.99, 0.01]),
        ("with_zeros", [0.6, 0.0, 0.4, 0.0]),
    ]
    for n in (2, 3, 5, 7, 10, 13, 50):
        cases.append((f"uniform_{n}", [1.0 / n] * n))
    for n in (2, 4, 9):
        cases.append((f"point_mass_{n}", [1.0] + [0.0] * (n - 1)))
    for i in range(24):
        n = rng.randint(2, 30)
        w = [rng.random() ** 3 for _ in range(n)]
        if i % 4 == 0:
            w[rng.randrange(n)] = 0.0
        s = sum(w)
        cases.append((f"random_{i:02d}", [x / s for x in w]))
    fixtures = [{"name": name, "p": p, "expected": mpmath.nstr(brute(p), 25, strip_zeros=False)} for name, p in cases]
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(fixtures, indent=1) + "\n")
    three = next(f for f in fixtures if f["name"] == "three_way")
    print(f"wrote {len(fixtures)} fixtures; three_way = {three['expected']}")


if __name__ == "__main__":
    main()

"""Thirty paired human / judge scores on the 1-5 scale with exactly twenty
identical pairs and twenty-seven pairs within one point.

    python3 agreement_fixture.py   # rewrites tests/data/agreement/path.json
"""
import json
import pathlib
import random

OUT = pathlib.Path(__file__).resolve().parent.parent / "data" / "agreement" / "path.json"


def main():
    rng = random.Random(30)
    human, judge = [], []
    for kind in ["exact"] * 20 + ["off_by_one"] * 7 + ["off_by_more"] * 3:
        h = rng.randint(1, 5)
        if kind == "exact":
            j = h
        elif kind == "off_by_one":
            j = h + 1 if h < 5 and (h == 1 or rng.random() < 0.5) else h - 1
        else:
            j = rng.choice([x for x in range(1, 6) if abs(x - h) >= 2])
        human.append(h)
        judge.append(j)
    order = list(range(30))
    rng.shuffle(order)
    human = [human[i] for i in order]
    judge = [judge[i] for i in order]
    exact = sum(h == j for h, j in zip(human, judge))
    near = sum(abs(h - j) <= 1 for h, j in zip(human, judge))
    assert (exact, near) == (20, 27)
    doc = {"human": human, "judge": judge, "exact": exact, "within_one": near,
           "exact_rounded": f"{exact / 30:.2f}", "within_one_rounded": f"{near / 30:.2f}"}
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(doc, indent=1) + "\n")
    print(f"exact {exact}/30 -> {doc['exact_rounded']}, within one {near}/30 -> {doc['within_one_rounded']}")


if __name__ == "__main__":
    main()

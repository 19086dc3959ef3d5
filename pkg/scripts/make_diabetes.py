"""Generate the bundled diabetes dataset.

Produces datasets/diabetes/train.csv and test.csv: 768 rows, 8 numeric
features, binary outcome (unlikely/likely). Values are drawn from
class-conditional distributions fitted by eye to the published Pima
summary statistics, so the file is synthetic but statistically familiar:
glucose, bmi, age, and pregnancies carry most of the signal.

Regeneration is byte-identical for a fixed seed. The train/test split
seed is searched so that a handful of row ids referenced throughout the
test-suite transcripts (33, 49, 57, 188, 293) all land in the test split.
"""

from __future__ import annotations

import argparse
import csv
import os

import numpy as np

N_ROWS = 768
N_POSITIVE = 268
TEST_FRACTION = 0.2
# Conversation fixtures refer to these rows by id; they must be servable
# from the default (test) frame.
REQUIRED_TEST_IDS = (33, 49, 57, 188, 293)

FEATURES = (
    "pregnancies",
    "glucose",
    "blood_pressure",
    "skin_thickness",
    "insulin",
    "bmi",
    "pedigree",
    "age",
)


def _sample_class(rng: np.random.Generator, n: int, positive: bool) -> dict:
    """Draw n rows for one outcome class."""
    if positive:
        preg = rng.poisson(4.6, n)
        glucose = rng.normal(141.0, 29.0, n)
        pressure = rng.normal(74.0, 12.0, n)
        skin = rng.normal(33.0, 9.0, n)
        insulin = np.exp(rng.normal(np.log(150.0), 0.55, n))
        bmi = rng.normal(35.2, 6.4, n)
        pedigree = np.exp(rng.normal(np.log(0.49), 0.60, n))
        age = 21.0 + rng.gamma(2.6, 6.0, n)
    else:
        preg = rng.poisson(3.2, n)
        glucose = rng.normal(110.0, 24.0, n)
        pressure = rng.normal(70.0, 11.0, n)
        skin = rng.normal(27.0, 9.0, n)
        insulin = np.exp(rng.normal(np.log(105.0), 0.50, n))
        bmi = rng.normal(30.5, 6.2, n)
        pedigree = np.exp(rng.normal(np.log(0.40), 0.55, n))
        age = 21.0 + rng.gamma(1.6, 5.5, n)
    return {
        "pregnancies": np.clip(preg, 0, 17).astype(int),
        "glucose": np.clip(np.round(glucose), 44, 199).astype(int),
        "blood_pressure": np.clip(np.round(pressure), 24, 122).astype(int),
        "skin_thickness": np.clip(np.round(skin), 7, 99).astype(int),
        "insulin": np.clip(np.round(insulin), 14, 846).astype(int),
        "bmi": np.round(np.clip(bmi, 18.2, 67.1), 1),
        "pedigree": np.round(np.clip(pedigree, 0.078, 2.42), 3),
        "age": np.clip(np.round(age), 21, 81).astype(int),
    }


def build_rows(seed: int) -> list[dict]:
    rng = np.random.default_rng(seed)
    pos = _sample_class(rng, N_POSITIVE, True)
    neg = _sample_class(rng, N_ROWS - N_POSITIVE, False)
    labels = np.array([1] * N_POSITIVE + [0] * (N_ROWS - N_POSITIVE))
    order = rng.permutation(N_ROWS)

    rows = []
    for new_id, src in enumerate(order):
        cls, idx = (pos, src) if src < N_POSITIVE else (neg, src - N_POSITIVE)
        row = {"id": new_id}
        for name in FEATURES:
            row[name] = cls[name][idx]
        row["outcome"] = "likely" if labels[src] == 1 else "unlikely"
        rows.append(row)
    return rows


def find_split_seed(start: int = 0) -> int:
    """Smallest seed whose shuffled test block contains every required id."""
    n_test = int(round(N_ROWS * TEST_FRACTION))
    for seed in range(start, start + 100_000):
        perm = np.random.default_rng(seed).permutation(N_ROWS)
        test_ids = set(perm[:n_test].tolist())
        if all(i in test_ids for i in REQUIRED_TEST_IDS):
            return seed
    raise RuntimeError("no split seed found")


def split_rows(rows: list[dict], split_seed: int):
    n_test = int(round(N_ROWS * TEST_FRACTION))
    perm = np.random.default_rng(split_seed).permutation(len(rows))
    test_idx = set(perm[:n_test].tolist())
    train = [r for i, r in enumerate(rows) if i not in test_idx]
    test = [r for i, r in enumerate(rows) if i in test_idx]
    return train, test


def write_csv(path: str, rows: list[dict]) -> None:
    header = ["id", *FEATURES, "outcome"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([row[h] for h in header])


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="datasets/diabetes")
    ap.add_argument("--seed", type=int, default=20)
    args = ap.parse_args()

    rows = build_rows(args.seed)
    split_seed = find_split_seed()
    train, test = split_rows(rows, split_seed)

    os.makedirs(args.out, exist_ok=True)
    write_csv(os.path.join(args.out, "train.csv"), train)
    write_csv(os.path.join(args.out, "test.csv"), test)
    print(f"wrote {len(train)} train / {len(test)} test rows (split seed {split_seed})")


if __name__ == "__main__":
    main()

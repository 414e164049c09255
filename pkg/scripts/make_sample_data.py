"""Regenerate the small CSV files in sample_data/."""

import csv
import os

import numpy as np

HERE = os.path.join(os.path.dirname(__file__), os.pardir, "sample_data")


def write(name, header, columns):
    with open(os.path.join(HERE, name), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([f"{v:.6g}" for v in row])


def main():
    rng = np.random.default_rng(2024)
    n, p = 120, 20
    x = rng.standard_normal((n, p))
    names = [f"g{j + 1}" for j in range(p)]
    eta = 1.2 * x[:, 0] - 1.0 * x[:, 1] + 0.8 * x[:, 2]
    age = rng.normal(60, 8, n)
    outcome = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(float)
    write("toy_binomial.csv", ["outcome", "age"] + names, [outcome, age] + list(x.T))
    y = eta + rng.standard_normal(n)
    write("toy_gaussian.csv", ["y"] + names, [y] + list(x.T))
    fail = rng.exponential(1.0, n) / np.exp(0.6 * eta)
    cens = rng.exponential(1.5, n)
    write("toy_cox.csv", ["time", "status", "age"] + names,
          [np.minimum(fail, cens), (fail <= cens).astype(float), age] + list(x.T))


if __name__ == "__main__":
    main()

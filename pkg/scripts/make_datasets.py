"""Regenerate the bundled benchmark CSVs from the copies of UCI datasets
that ship inside scikit-learn. Labels are written as 1 (positive) / 0.

    python3 scripts/make_datasets.py
"""
from pathlib import Path

import numpy as np
from sklearn import datasets

OUT = Path(__file__).resolve().parents[1] / "src" / "divprune" / "datasets"


def write(name, X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(int)
    header = ",".join([f"x{j}" for j in range(X.shape[1])] + ["label"])
    lines = [header]
    for row, label in zip(X, y):
        lines.append(",".join(repr(float(v)) for v in row) + f",{label}")
    (OUT / f"{name}.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"{name}: {X.shape[0]} x {X.shape[1]}, positives {int(y.sum())}")


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    bc = datasets.load_breast_cancer()
    write("breast_cancer", bc.data, bc.target == 1)

    iris = datasets.load_iris()
    write("iris_versicolor", iris.data, iris.target == 1)

    wine = datasets.load_wine()
    write("wine_class1", wine.data, wine.target == 1)

    diab = datasets.load_diabetes()
    write("diabetes_median", diab.data, diab.target > np.median(diab.target))

    digits = datasets.load_digits()
    for a, b in ((3, 8), (1, 7), (4, 9)):
        keep = np.isin(digits.target, (a, b))
        write(f"digits_{a}v{b}", digits.data[keep], digits.target[keep] == b)


if __name__ == "__main__":
    main()

"""Export the Breast Cancer Wisconsin (Diagnostic) data bundled with
scikit-learn to CSV with a `diagnosis` label column (B/M).

    python3 tools/export_breast_cancer.py data/breast_cancer.csv
"""
import csv
import sys

from sklearn.datasets import load_breast_cancer


def main():
    ds = load_breast_cancer()
    names = [n.replace(" ", "_") for n in ds.feature_names]
    with open(sys.argv[1], "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["diagnosis"] + names)
        for row, target in zip(ds.data, ds.target):
            # sklearn encodes malignant as 0, benign as 1
            w.writerow(["M" if target == 0 else "B"] + [repr(float(v)) for v in row])


if __name__ == "__main__":
    main()

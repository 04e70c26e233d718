"""Write the paired CSFM files that synthetic.cfg expects, next to this script."""
import argparse
import os

import numpy as np

from twoview.data import save_feature_matrix


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=1200, help="total samples (last 200 are the test split)")
    ap.add_argument("--d", type=int, default=12)
    ap.add_argument("--shared", type=int, default=3, help="number of shared latent factors")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    S = rng.standard_normal((args.n, args.shared))
    views = []
    for _ in range(2):
        X = np.c_[S, rng.standard_normal((args.n, args.d - args.shared))] @ rng.standard_normal((args.d, args.d))
        views.append(X / X.std(axis=0))
    here = os.path.dirname(os.path.abspath(__file__))
    cut = args.n - 200
    for i, X in enumerate(views, 1):
        save_feature_matrix(os.path.join(here, f"train{i}.csfm"), X[:cut])
        save_feature_matrix(os.path.join(here, f"test{i}.csfm"), X[cut:])


if __name__ == "__main__":
    main()

"""Marginal calibration is not enough once covariates go missing.

Fits one impute-then-predict quantile pipeline on MCAR Gaussian data, then
calibrates it two ways: plain split calibration (one quantile for everyone)
and subset calibration that re-masks the calibration rows to each test
pattern. Both cover 90% on average; only the second holds group by group.

Runs in under a minute. Expected output: split-CQR coverage drifts from
above 0.9 on fully observed rows to well below on heavily masked ones,
while the per-pattern column stays near 0.9 everywhere.
"""

import numpy as np

from cpmda.conformal import CqrScore, conformal_quantile, mda_exact_set
from cpmda.core import IncompleteDataset, Mask
from cpmda.impute import concat_mask_matrix, fit_imputer, impute_matrix
from cpmda.regress import fit_mlp_quantile

ALPHA = 0.1
D = 6
BETA = np.array([1.0, 2.0, -1.0, 1.5, -0.5, 1.0])
PHI = 0.8

rng = np.random.default_rng(7)
L = np.linalg.cholesky(PHI * np.ones((D, D)) + (1 - PHI) * np.eye(D))


def draw(n, p=0.2):
    X = 1.0 + rng.standard_normal((n, D)) @ L.T
    y = X @ BETA + rng.standard_normal(n)
    return X, rng.random((n, D)) < p, y


def main():
    Xt, Mt, yt = draw(500)
    train = IncompleteDataset(Xt, Mt, yt)
    imputer = fit_imputer(train, "iterative_ridge")

    def featurize(V, M):
        return concat_mask_matrix(impute_matrix(imputer, V, M), M)

    model = fit_mlp_quantile(
        featurize(Xt, Mt), yt, levels=(ALPHA / 2, 1 - ALPHA / 2), hidden=(32,)
    )
    score = CqrScore(model=model, featurize=featurize)

    Xc, Mc, yc = draw(400)
    cal = IncompleteDataset(Xc, Mc, yc)
    q_split = conformal_quantile(score.scores(Xc, Mc, yc), ALPHA)
    print(f"split calibration adds a flat {q_split:+.3f} to every band\n")

    print("mask size   split-CQR   per-pattern subset")
    for size in range(0, D, 2):
        hits_split = hits_exact = 0
        n_group = 300
        Xs, _, ys = draw(n_group)
        for i in range(n_group):
            bits = np.zeros(D, dtype=int)
            bits[rng.permutation(D)[:size]] = 1
            m = Mask.from_bits(bits)
            lo, hi = score.bands(Xs[i : i + 1], m.bits_array[None, :])[0]
            hits_split += lo - q_split <= ys[i] <= hi + q_split
            hits_exact += mda_exact_set(score, cal, Xs[i], m, ALPHA).contains(ys[i])
        print(
            f"{size:>9}   {hits_split / n_group:>9.3f}   {hits_exact / n_group:>18.3f}"
        )

    print("\nThe flat padding cannot track how uncertainty grows with the")
    print("mask, so the first column drifts; re-masked subset calibration")
    print("recalibrates inside each pattern and stays near 0.90.")


if __name__ == "__main__":
    main()

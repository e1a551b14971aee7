"""The analytic side: what missingness does to a Gaussian linear model.

Three short exhibits, no fitting involved.

1. Hiding more coordinates can only inflate the conditional covariance of
   the hidden block. Checked as a positive-semidefinite certificate on a
   random covariance.
2. The ideal interval length therefore grows with the mask, quantified by
   the oracle's interquantile range per pattern.
3. Pattern-conditional validity has a price: any distribution-free method
   must hedge by Delta(rho, n) on a pattern of probability rho. The bound
   decays fast in rho and grows with n, capped by rho * sqrt(n + 1).
"""

import numpy as np

from cpmda.core import Mask
from cpmda.oracle import (
    GaussianLinearModel,
    gaussian_conditional,
    hardness_delta,
    interquantile_glm,
    variance_isotone_check,
)

rng = np.random.default_rng(3)

print("1. variance isotonicity")
A = rng.standard_normal((5, 5))
Sigma = A @ A.T + 0.1 * np.eye(5)
m_small = Mask.from_bits([1, 0, 0, 0, 0])
_, cov_small = gaussian_conditional(np.zeros(5), Sigma, np.zeros(4), m_small)
for bits in ([1, 1, 0, 0, 0], [1, 1, 0, 1, 0], [1, 1, 1, 1, 1]):
    m_big = Mask.from_bits(bits)
    eig = variance_isotone_check(Sigma, m_small, m_big)
    _, cov_big = gaussian_conditional(
        np.zeros(5), Sigma, np.zeros(m_big.obs.size), m_big
    )
    print(
        f"   {m_small} vs {m_big}: certificate eigenvalue {eig:+.1e},"
        f"  Var(coord 1 | observed) {cov_small[0, 0]:.2f} -> {cov_big[0, 0]:.2f}"
    )
print("   the covariance difference is positive semidefinite with rank equal")
print("   to the number of newly hidden coordinates, so its smallest")
print("   eigenvalue sits at numerical zero while the diagonal inflates.\n")

print("2. ideal interval length per pattern (equicorrelated model, d=4)")
glm = GaussianLinearModel(
    beta=np.array([1.0, 2.0, -1.0, 3.0]),
    sigma2_eps=1.0,
    mu=np.ones(4),
    Sigma=0.8 * np.ones((4, 4)) + 0.2 * np.eye(4),
)
x = np.array([1.3, 0.2, 0.8, 1.9])
for bits in ([0, 0, 0, 0], [0, 1, 0, 0], [0, 1, 0, 1], [1, 1, 1, 1]):
    m = Mask.from_bits(bits)
    width = interquantile_glm(glm, x[m.obs], m, 0.05, 0.95)
    print(f"   mask {m}: oracle 90% interval width {width:6.2f}")
print()

print("3. hardness of pattern-conditional validity")
print("   rho      n    Delta    rho*sqrt(n+1)")
for rho in (0.05, 0.2):
    for n in (20, 200):
        b = hardness_delta(rho, n)
        print(f"   {rho:4.2f}  {n:>5}  {b.delta:6.3f}  {b.loose_bound:10.3f}")
print("   rare patterns (small rho) are cheap to protect; frequent ones")
print("   force a real coverage concession.")

# Equidistribution of the random walk generated by the two elementary shears.
#
# Start from an irrational point and from the fixed point 0. The first cloud
# spreads over the torus and its bounded-Lipschitz distance to the uniform
# grid drops; the second never moves.
import numpy as np

from ergolab.diffeo import ToralLinear
from ergolab.equidist import equidistribution_curve
from ergolab.walk import GeneratorMeasure, max_ball_mass, empirical_pushforward

A = ToralLinear(np.array([[1, 1], [0, 1]]))
B = ToralLinear(np.array([[1, 0], [1, 1]]))
mu = GeneratorMeasure.uniform([A, B], [(0, False), (1, False), (0, True), (1, True)])

x = [np.sqrt(2) - 1, np.sqrt(3) - 1]
N = 4000

# ball masses fall off as the walk goes on
for n in (0, 5, 10, 20):
    nu = empirical_pushforward(mu, x, n, N, seed=1)
    print(f"n={n:2d}  max mass of a 1/32-ball: {max_ball_mass(nu, 1 / 32).mass:.4f}")

curve = equidistribution_curve(mu, x, [0, 5, 10, 20, 40], N, rho=1 / 32, reference="vol", lp_atoms=800)
print("\n   n        W1    mc_err   sub_err")
for n, w, mc, sub in curve.rows():
    print(f"{n:4d}  {w:8.4f}  {mc:8.4f}  {sub:8.4f}")

fixed = equidistribution_curve(mu, [0.0, 0.0], [0, 40], 500, rho=1 / 32, reference="vol", lp_atoms=800)
print("\nfixed point:", np.round(fixed.w1, 4))

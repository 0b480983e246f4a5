# Robust decompositions: how much mass must be thrown away so that every ball
# of radius r carries at most r^(2 alpha)?
#
# A walk that has not yet spread out needs heavy trimming at large alpha; after
# more steps the same alpha costs almost nothing.
import numpy as np

from ergolab.diffeo import ToralLinear
from ergolab.dimension import covering_number, log_scales, robust_decompose
from ergolab.walk import GeneratorMeasure, empirical_pushforward

A = ToralLinear(np.array([[1, 1], [0, 1]]))
B = ToralLinear(np.array([[1, 0], [1, 1]]))
mu = GeneratorMeasure.uniform([A, B], [(0, False), (1, False), (0, True), (1, True)])
x = [np.sqrt(2) - 1, np.sqrt(3) - 1]
scales = log_scales(2.0**-7, 2.0**-3, 4)

for n in (3, 8, 20):
    nu = empirical_pushforward(mu, x, n, 3000, seed=0)
    trash = [robust_decompose(nu, a, scales).trash for a in (0.25, 0.5, 0.75)]
    cover = covering_number(nu.points, 2.0**-5)
    print(f"n={n:2d}  cells hit at 1/32: {cover:4d}   trash at alpha .25/.5/.75:",
          "  ".join(f"{t:.3f}" for t in trash))

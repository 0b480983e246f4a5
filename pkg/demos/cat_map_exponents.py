# Lyapunov exponents and Fourier escape for the cat map on the 2-torus.
#
# A linear toral map has the same derivative everywhere, so the top log
# singular value of a length-n word divided by n should already sit at log of
# the larger eigenvalue. Frequencies run off to infinity under the dual map,
# which makes every truncated Fourier block nilpotent.
import numpy as np

from ergolab.cocycle import cartan
from ergolab.diffeo import DiffeoWord, ToralLinear
from ergolab.equidist import fourier_transfer_spectrum
from ergolab.walk import GeneratorMeasure

A = np.array([[2, 1], [1, 1]])
cat = ToralLinear(A)
top = np.log(np.max(np.linalg.eigvalsh(A)))

for n in (1, 5, 20):
    c = cartan([0.1, 0.2], DiffeoWord.from_codes([0] * n), [cat])
    print(f"n={n:3d}  top exponent {c.lambdas[-1] / n:.12f}  (log eigenvalue {top:.12f})")

spec = fourier_transfer_spectrum(GeneratorMeasure([cat], np.ones(1)), K=8)
print("cat map, K=8: block radius", spec.block_radius)

# adding the inverse keeps some frequencies bouncing back and forth
sym = GeneratorMeasure.uniform([cat], [(0, False), (0, True)])
spec = fourier_transfer_spectrum(sym, K=8)
print("uniform on {A, A^-1}, K=8: block radius %.6f" % spec.block_radius)
print("leading eigenvalues:", np.round(np.abs(spec.leading_eigs), 6))

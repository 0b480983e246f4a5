# Exponential moments of additive functionals on a two-state chain.
#
# For a chain whose observable has nonpositive mean from every state, the
# exact moment E_x exp(gamma S_n) stays below exp(gamma eps n). The transfer
# matrix gives the left side without any sampling.
import numpy as np

from ergolab.walk import FiniteChain, ldp_moment_check

chain = FiniteChain(np.array([[0.9, 0.1], [0.2, 0.8]]), np.array([-1.0, 0.2]))

for eps in (0.1, 0.25, 0.5):
    worst = max(
        (ldp_moment_check(chain, eps, n) for n in range(1, 201)),
        key=lambda r: r.lhs / r.rhs,
    )
    print(f"eps={eps:4.2f}  gamma={worst.gamma:.4f}  worst n={worst.n:3d}  "
          f"lhs/rhs={worst.lhs / worst.rhs:.6f}  pass={worst.passed}")

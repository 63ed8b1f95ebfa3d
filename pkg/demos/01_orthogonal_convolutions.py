"""
Orthogonal convolutions
-----------------------

Builds a few kernels whose convolution operator preserves inner products,
checks the self-correlation test on them, and then uses the penalty to pull
a random kernel toward orthogonality.
"""

import numpy as np

from isonet.convops import Support, apply_adjoint, apply_operator, delta_kernel, kernel_self_correlation
from isonet.isometry import extreme_singular_values, isometry_residual, ortho_penalty

rng = np.random.default_rng(0)

###############################################################################
# The delta kernel is the identity operator, and its adjoint is too.

x = rng.standard_normal((1, 4, 10, 10))
d = delta_kernel(4, 4, 3)
print("delta acts as identity:", np.array_equal(apply_operator(d, x), x))

###############################################################################
# A 1x1 rotation mixes channels without changing lengths. A signed permutation
# with per-channel spatial shifts is also orthogonal on the infinite grid.

Q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
rot = np.zeros((4, 4, 3, 3))
rot[:, :, 1, 1] = Q

shifted = np.zeros((4, 4, 3, 3))
for c, (m, dy, dx) in enumerate([(2, 0, 0), (0, 2, 1), (3, 1, 2), (1, 2, 2)]):
    shifted[m, c, dy, dx] = 1.0

for name, A in [("delta", d), ("rotation", rot), ("shifted permutation", shifted)]:
    print(f"{name:20s} residual(full) = {isometry_residual(A):.1e}")

###############################################################################
# The adjoint identity holds for any kernel.

A = rng.standard_normal((5, 4, 3, 3))
y = rng.standard_normal((1, 5, 10, 10))
print("<Ax, y> - <x, A*y> =", np.sum(apply_operator(A, x) * y) - np.sum(x * apply_adjoint(A, y)))

###############################################################################
# Gradient descent on the penalty alone. The "same" residual only looks at
# offsets up to k0 and is what the penalty minimizes; the "full" residual
# also sees the outer ring of offsets and usually stalls well above zero.

A = rng.standard_normal((8, 8, 3, 3)) / np.sqrt(72)
for step in range(2001):
    if step % 500 == 0:
        smax, smin = extreme_singular_values(A, iterations=100)
        print(f"step {step:4d}  same {isometry_residual(A, Support.SAME):.2e}  "
              f"full {isometry_residual(A, Support.FULL):.3f}  sigma in [{smin:.3f}, {smax:.3f}]")
    _, g = ortho_penalty(A, 1.0)
    A -= 0.1 * g

R = kernel_self_correlation(A, Support.FULL)
print("largest off-center self-correlation entry:", np.abs(R - delta_kernel(8, 8, 5)).max())

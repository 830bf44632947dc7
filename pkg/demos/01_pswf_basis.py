"""Build the PSWF basis for a few bandwidths and look at what it gives us.

Run:  python3 demos/01_pswf_basis.py
"""

import numpy as np

from blindsr.pswf import build_basis, phi_matrix

for b_max in (4.0, 8.0, 16.0, 32.0):
    basis = build_basis(b_max)
    mags = np.abs(basis.eigenvalues)
    phi = phi_matrix(basis)
    print(f"B_max={b_max:5.1f}  c={basis.c:7.3f}  d={basis.d:3d}  theta0={basis.theta0:.4f}  "
          f"|lambda_0|={mags[0]:.3f}  |lambda_2d|={mags[-1]:.1e}  cond(Phi)={phi.cond:.1e}")

# The eigenvalues sit on a plateau of height sqrt(2 pi / c) for about 2c/pi
# orders and then fall off a cliff.  d is picked where they drop below epsilon.
basis = build_basis(8.0)
print("\n j   |lambda_j|")
for j, lam in enumerate(basis.eigenvalues):
    print(f"{j:2d}   {abs(lam):.3e}")

"""
Power densities, their derivative and its adjoint
=================================================

Solve the Neumann problem on a disk mesh, look at the power densities of
the four linear boundary currents, and check the derivative and the
adjoint numerically.
"""
import numpy as np

from aet.mesh import generate_disk_mesh
from aet.operator import adjoint_apply, derivative_apply, forward, inner_x, norm_y, pairing_y
from aet.phantom import currents_full, geometric_phantom

mesh = generate_disk_mesh(0.5, 1 / 32)
print(mesh)

# With sigma = 1 and f = x1 the potential is x1 / 2, so H = 1/4 everywhere.
# The discrete answer is off by a constant set by the inscribed polygon.
currents = currents_full()
H, _ = forward(mesh, np.ones(mesh.n_nodes), currents[:1])
print("constant conductivity: H in [%.6f, %.6f]" % (H[0].min(), H[0].max()))

# The default phantom: background 1 with three inclusions.
sigma = geometric_phantom(mesh)
H, cache = forward(mesh, sigma, currents)
for c, h in zip(currents, H):
    print(f"{c.name:>16}: H in [{h.min():.3f}, {h.max():.3f}]")

# Taylor test: the remainder of the linearization shrinks like t^2.
rng = np.random.default_rng(0)
kappa = rng.standard_normal(mesh.n_nodes)
d = derivative_apply(mesh, sigma, cache, 0, kappa)
for t in (1e-1, 1e-2, 1e-3):
    Ht, _ = forward(mesh, sigma + t * kappa, currents[:1])
    print(f"t={t:g}  remainder={norm_y(mesh, Ht[0] - H[0] - t * d, 2.2):.3e}")

# The adjoint is the exact transpose of the discrete derivative.
omega = rng.standard_normal(mesh.n_triangles)
lhs = pairing_y(mesh, d, omega)
rhs = inner_x(mesh, kappa, adjoint_apply(mesh, sigma, cache, 0, omega))
print(f"<H'k, w> = {lhs:.12e}\n<k, H'*w> = {rhs:.12e}")

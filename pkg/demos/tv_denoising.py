"""
The TV proximal map
===================

With the TV penalty the update from the dual variable to the conductivity
is a total-variation denoising problem on the mesh. Here it is applied to
a noisy phantom for a few weights.
"""
import numpy as np

from aet.mesh import generate_disk_mesh
from aet.metrics import rel_err_l1
from aet.penalty import tv_denoise, tv_seminorm
from aet.phantom import geometric_phantom

mesh = generate_disk_mesh(0.5, 1 / 32)
clean = geometric_phantom(mesh)
noisy = clean + 0.3 * np.random.default_rng(1).standard_normal(mesh.n_nodes)
print(f"TV(clean) = {tv_seminorm(mesh, clean):.3f}, TV(noisy) = {tv_seminorm(mesh, noisy):.3f}")

for beta in (1e-3, 1e-2, 3e-2, 1e-1):
    r = tv_denoise(mesh, noisy, beta, tol=1e-6, max_iter=100_000, full_output=True)
    print(f"beta={beta:<6g} iterations={r.iterations:5d} TV={tv_seminorm(mesh, r.z):.3f} "
          f"e_L1={rel_err_l1(mesh, r.z, clean):.4f}")

# A large weight flattens every inclusion and leaves the mean.
z = tv_denoise(mesh, noisy, 10.0, tol=1e-6, max_iter=100_000)
print("beta=10: range %.4f, mean %.4f" % (np.ptp(z), np.average(z, weights=mesh.node_mass)))

"""
Limited-angle currents
======================

Drive currents only through the upper half of the boundary
(``alpha = pi``) and compare the reconstruction error near the driven
part with the error in the lower half.
"""
import math

import numpy as np

from aet.io import write_vtk
from aet.mesh import generate_disk_mesh
from aet.metrics import rel_err_l1
from aet.penalty import PenaltySpec
from aet.phantom import add_noise, currents_limited, geometric_phantom, synthesize_data
from aet.tpg import AlgoConfig, run

fine = generate_disk_mesh(0.5, 1 / 64)
coarse = generate_disk_mesh(0.5, 1 / 32)
currents = currents_limited(math.pi)
y, _ = synthesize_data(fine, geometric_phantom(fine), currents, coarse)
y_delta, delta = add_noise(coarse, y, 0.02, q=2.2, rng=0)
sigma_true = geometric_phantom(coarse)

res = run(coarse, currents, y_delta, AlgoConfig(max_sweeps=150), PenaltySpec("L1"), delta)
upper = coarse.nodes[:, 1] > 0
print(f"n_delta={res.n_delta} converged={res.converged}")
print(f"e_L1 upper (driven) half: {rel_err_l1(coarse, res.sigma, sigma_true, mask=upper):.4f}")
print(f"e_L1 lower half:          {rel_err_l1(coarse, res.sigma, sigma_true, mask=~upper):.4f}")

write_vtk("limited_angle.vtk", coarse, point_data={"sigma_rec": res.sigma, "sigma_true": sigma_true})
print("wrote limited_angle.vtk")

"""Exploratory checks for the strip-gradient and FD shape-derivative oracles."""
import time

import numpy as np

from corshape.fem import Field, OperatorSpec, solve_state_ensemble
from corshape.levelset import LevelSet, material_fraction
from corshape.mesh import generate_structured_mesh
from corshape.objectives import (
    assemble_shape_derivative,
    dirichlet_energy_gradient,
    dirichlet_energy_mean,
)

SIGMA_FACTOR = 1.0e7


def poisson_ensemble(mesh, ls, load_values, ersatz=1e-3, tol=1e-10, mean=False):
    frac = material_fraction(ls)
    density = frac + (1.0 - frac) * ersatz
    sigma = SIGMA_FACTOR / mesh.h_min**2
    op = OperatorSpec("poisson", density, absorption=sigma * (1.0 - frac))
    loads = [Field(v) for v in load_values]
    mean_load = loads[0] if mean else None
    return solve_state_ensemble(
        mesh, op, loads, load_kind="body", mean_load=mean_load, tol=tol
    )


# ---- 1D strip check ----
t0 = time.time()
mesh = generate_structured_mesh(140, 10, (0.0, 1.4, 0.0, 0.1))
x = mesh.vertices[:, 0]
phi = np.maximum(0.205 - x, x - 1.205)
ls = LevelSet(phi, mesh)
ens = poisson_ensemble(mesh, ls, [np.ones(mesh.n_nodes)])
gd = dirichlet_energy_gradient(ens, ls)
expected = -0.5 * 0.25
print(f"strip solve time {time.time()-t0:.2f}s, n tris {gd.triangles.size}")
print("strip: gd mean", gd.values.mean(), "expected", expected)
print("strip: rel dev of mean", abs(gd.values.mean() - expected) / abs(expected))
print("strip: max rel dev", np.abs(gd.values - expected).max() / abs(expected))

# ---- FD shape derivative check (disk, Dirichlet energy) ----
n = 64
mesh = generate_structured_mesh(n, n, (0.0, 1.0, 0.0, 1.0))
cx, cy = 0.5 + 1.0 / (3 * n), 0.5 + 1.0 / (7 * n)
r = 0.3
d = np.hypot(mesh.vertices[:, 0] - cx, mesh.vertices[:, 1] - cy)
phi0 = d - r
w = 1.0 + 0.3 * np.sin(3.0 * mesh.vertices[:, 0] + 1.0) * np.cos(2.0 * mesh.vertices[:, 1])
f = [np.ones(mesh.n_nodes)]


def energy(phi):
    ls = LevelSet(phi, mesh)
    ens = poisson_ensemble(mesh, ls, f)
    return dirichlet_energy_mean(ens)


t0 = time.time()
ls0 = LevelSet(phi0, mesh)
ens0 = poisson_ensemble(mesh, ls0, f)
gd0 = dirichlet_energy_gradient(ens0, ls0)
assembled = assemble_shape_derivative(gd0, ls0, w)
print(f"disk solve time {time.time()-t0:.2f}s")
for t in (1e-3, 2e-3, 5e-3):
    fd = (energy(phi0 - t * w) - energy(phi0 + t * w)) / (2 * t)
    print(f"FD t={t}: fd={fd:.6e} assembled={assembled:.6e} "
          f"rel={abs(fd - assembled) / abs(fd):.4f}")
print(f"total {time.time()-t0:.2f}s")

import numpy as np
import pytest

from corshape.levelset import (
    CflError,
    CircleHole,
    LevelSet,
    RectHole,
    advect,
    cfl_timestep,
    density_from_levelset,
    extend_velocity,
    initialize_levelset,
    interface_lengths,
    interface_normals,
    interface_triangles,
    material_fraction,
    redistance,
)
from corshape.mesh import generate_structured_mesh


def unit_mesh(n=100):
    return generate_structured_mesh(n, n, (0.0, 1.0, 0.0, 1.0))


def disk_levelset(mesh, center=(0.5, 0.5), radius=0.2):
    """Material disk: phi = |x - c| - r (negative inside the disk)."""
    d = np.hypot(mesh.vertices[:, 0] - center[0], mesh.vertices[:, 1] - center[1])
    return LevelSet(d - radius, mesh)


def zero_level_radius(ls, center=(0.5, 0.5)):
    """Interpolated zero crossing along the +x ray from the center."""
    mesh = ls.mesh
    n = mesh.nx
    row = round(center[1] * n) * (n + 1)
    xs = mesh.vertices[row : row + n + 1, 0]
    phi = ls.phi[row : row + n + 1]
    start = np.searchsorted(xs, center[0])
    for i in range(start, n):
        if phi[i] <= 0.0 < phi[i + 1]:
            t = phi[i] / (phi[i] - phi[i + 1])
            return xs[i] + t * (xs[i + 1] - xs[i]) - center[0]
    raise AssertionError("no zero crossing found")


def test_initialize_no_holes_negative_inside():
    mesh = generate_structured_mesh(10, 10, (0.0, 1.0, 0.0, 1.0))
    ls = initialize_levelset(mesh, [])
    interior = np.all(
        (mesh.vertices > 1e-12) & (mesh.vertices < 1.0 - 1e-12), axis=1
    )
    assert np.all(ls.phi[interior] < 0.0)


def test_initialize_single_circle_closed_form():
    mesh = unit_mesh(40)
    hole = CircleHole(0.5, 0.5, 0.2)
    ls = initialize_levelset(mesh, [hole])
    d = np.hypot(mesh.vertices[:, 0] - 0.5, mesh.vertices[:, 1] - 0.5)
    assert np.allclose(ls.phi, 0.2 - d, atol=1e-14)


def test_initialize_two_disjoint_holes_union():
    mesh = unit_mesh(40)
    h1 = CircleHole(0.25, 0.5, 0.1)
    h2 = CircleHole(0.75, 0.5, 0.1)
    ls = initialize_levelset(mesh, [h1, h2])
    # positive exactly inside either hole, negative in the material
    inside1 = h1.signed_inside(mesh.vertices) > 0
    inside2 = h2.signed_inside(mesh.vertices) > 0
    assert np.all(ls.phi[inside1 | inside2] > 0.0)
    assert np.all(ls.phi[~(inside1 | inside2)] <= 0.0)


def test_initialize_rejects_bad_holes():
    mesh = unit_mesh(10)
    with pytest.raises(ValueError):
        initialize_levelset(mesh, [CircleHole(0.5, 0.5, 0.0)])
    with pytest.raises(ValueError):
        initialize_levelset(mesh, [CircleHole(0.95, 0.5, 0.2)])
    with pytest.raises(ValueError):
        initialize_levelset(mesh, [RectHole(0.4, 0.2, 0.1, 0.3)])


def test_advect_zero_velocity_is_identity():
    mesh = unit_mesh(20)
    ls = disk_levelset(mesh)
    out = advect(ls, np.zeros(mesh.n_nodes), dt=0.004, substeps=5)
    assert np.array_equal(out.phi, ls.phi)


def test_advect_expanding_circle():
    mesh = unit_mesh(100)
    ls = disk_levelset(mesh, radius=0.2)
    v = np.ones(mesh.n_nodes)
    out = advect(ls, v, dt=0.005, substeps=10)  # total time 0.05
    r = zero_level_radius(out)
    assert abs(r - 0.25) <= 2 * mesh.dx


def test_advect_shrinking_circle():
    mesh = unit_mesh(100)
    ls = disk_levelset(mesh, radius=0.2)
    out = advect(ls, -np.ones(mesh.n_nodes), dt=0.005, substeps=10)
    r = zero_level_radius(out)
    assert abs(r - 0.15) <= 2 * mesh.dx


def test_advect_cfl_violation_reports_admissible_dt():
    mesh = unit_mesh(50)
    ls = disk_levelset(mesh)
    with pytest.raises(CflError) as err:
        advect(ls, np.full(mesh.n_nodes, 2.0), dt=0.05)
    assert err.value.admissible <= 0.9 * mesh.h_min / 2.0 * (1 + 1e-9)
    assert cfl_timestep(ls, np.full(mesh.n_nodes, 2.0), cfl=0.9) >= err.value.admissible


def test_advect_sup_norm_bound():
    mesh = unit_mesh(60)
    ls = disk_levelset(mesh)  # signed-distance cone
    v = np.full(mesh.n_nodes, 0.8)
    out = advect(ls, v, dt=0.005, substeps=8)
    t = 0.005 * 8
    assert np.max(np.abs(out.phi)) <= np.max(np.abs(ls.phi)) + 0.8 * t + 1e-12


def test_redistance_removes_scaling():
    mesh = unit_mesh(80)
    exact = disk_levelset(mesh, radius=0.3)
    scaled = LevelSet(3.0 * exact.phi, mesh)
    out = redistance(scaled)
    # compare in a band around the interface where the distance is to the circle
    band = np.abs(exact.phi) < 0.15
    err = np.max(np.abs(out.phi[band] - exact.phi[band]))
    assert err <= 2 * mesh.dx


def test_redistance_idempotent_within_h():
    mesh = unit_mesh(60)
    ls = LevelSet(2.5 * disk_levelset(mesh, radius=0.25).phi, mesh)
    once = redistance(ls)
    twice = redistance(once)
    assert np.max(np.abs(twice.phi - once.phi)) <= mesh.dx


def test_redistance_preserves_interface_signs():
    mesh = unit_mesh(40)
    rng = np.random.default_rng(3)
    ls = disk_levelset(mesh, radius=0.27)
    noisy = LevelSet(ls.phi * (1.0 + 0.3 * rng.random(mesh.n_nodes)), mesh)
    out = redistance(noisy)
    assert np.array_equal(np.sign(out.phi), np.sign(noisy.phi))


def test_redistance_uniform_sign_is_error():
    mesh = unit_mesh(10)
    with pytest.raises(ValueError):
        redistance(LevelSet(np.full(mesh.n_nodes, -1.0), mesh))


def test_redistance_gradient_statistics():
    mesh = unit_mesh(60)
    ls = LevelSet(np.tanh(disk_levelset(mesh, radius=0.3).phi * 4.0), mesh)
    out = redistance(ls)
    from corshape.mesh import p1_gradients

    g = p1_gradients(mesh)
    grads = np.einsum("tiv,ti->tv", g, out.phi[mesh.triangles])
    norms = np.hypot(grads[:, 0], grads[:, 1])
    good = (norms >= 0.8) & (norms <= 1.2)
    assert good.mean() >= 0.95


def test_density_pure_phases():
    mesh = unit_mesh(10)
    ls = LevelSet(np.full(mesh.n_nodes, -1.0), mesh)
    assert np.all(density_from_levelset(ls, 1e-3) == 1.0)
    ls = LevelSet(np.full(mesh.n_nodes, 1.0), mesh)
    assert np.all(density_from_levelset(ls, 1e-3) == 1e-3)


def test_density_half_cut_triangle():
    # phi = (0, -1, 1): the zero line joins a vertex to the midpoint of the
    # opposite edge, cutting the triangle in half.
    mesh = generate_structured_mesh(1, 1, (0.0, 1.0, 0.0, 1.0))
    phi = np.zeros(4)
    # triangle 0 is (v0, v1, v3)
    phi[0], phi[1], phi[3] = 0.0, -1.0, 1.0
    phi[2] = -1.0
    ls = LevelSet(phi, mesh)
    eps = 1e-3
    rho = density_from_levelset(ls, eps)
    assert abs(rho[0] - 0.5 * (1 + eps)) <= 1e-14


def test_density_monotone_in_phi():
    mesh = unit_mesh(20)
    rng = np.random.default_rng(5)
    phi = rng.standard_normal(mesh.n_nodes)
    lower = phi - rng.random(mesh.n_nodes)  # pointwise decrease
    d1 = density_from_levelset(LevelSet(phi, mesh), 1e-3)
    d2 = density_from_levelset(LevelSet(lower, mesh), 1e-3)
    assert np.all(d2 >= d1 - 1e-14)


def test_material_fraction_disk_area():
    mesh = unit_mesh(100)
    ls = disk_levelset(mesh, radius=0.3)
    frac = material_fraction(ls)
    area = float(frac @ mesh.areas)
    assert abs(area - np.pi * 0.09) <= 2e-4


def test_interface_triangles_and_lengths_circle():
    mesh = unit_mesh(80)
    ls = disk_levelset(mesh, radius=0.3)
    tris = interface_triangles(ls)
    assert tris.size > 0
    lengths = interface_lengths(ls, tris)
    perimeter = lengths.sum()
    assert abs(perimeter - 2 * np.pi * 0.3) <= 0.05 * 2 * np.pi * 0.3
    normals = interface_normals(ls, tris)
    assert np.allclose(np.linalg.norm(normals, axis=1), 1.0, atol=1e-12)


def test_interface_normals_degenerate_phi_rejected():
    mesh = generate_structured_mesh(2, 2, (0.0, 1.0, 0.0, 1.0))
    phi = np.zeros(mesh.n_nodes)
    phi[0] = -1e-14
    phi[-1] = 1e-14
    ls = LevelSet(phi, mesh)
    tris = interface_triangles(ls)
    with pytest.raises(ValueError):
        interface_normals(ls, tris)


def test_extend_velocity_zero_source():
    mesh = unit_mesh(30)
    ls = disk_levelset(mesh)
    tris = interface_triangles(ls)
    v = extend_velocity(tris, np.zeros(tris.size), ls, smoothing=0.0)
    assert np.all(v == 0.0)


def test_extend_velocity_nodal_average():
    mesh = unit_mesh(30)
    ls = disk_levelset(mesh)
    tris = interface_triangles(ls)
    v = extend_velocity(tris, -np.ones(tris.size), ls, smoothing=0.0)
    touched = np.unique(mesh.triangles[tris])
    assert np.allclose(v[touched], -1.0, atol=1e-12)
    untouched = np.setdiff1d(np.arange(mesh.n_nodes), touched)
    assert np.all(v[untouched] == 0.0)


def test_extend_velocity_linear():
    mesh = unit_mesh(25)
    ls = disk_levelset(mesh)
    tris = interface_triangles(ls)
    rng = np.random.default_rng(11)
    src = rng.standard_normal(tris.size)
    for smoothing in (0.0, mesh.h_min**2):
        v1 = extend_velocity(tris, src, ls, smoothing=smoothing)
        v3 = extend_velocity(tris, 3.0 * src, ls, smoothing=smoothing)
        assert np.allclose(v3, 3.0 * v1, atol=1e-9 * max(1.0, np.abs(v1).max()))

"""Turn a scenario description into meshes, kernels and load ensembles.

The load model of a scenario is factorized exactly once per run: the loaded
boundary is fixed, so the factor loads do not depend on the evolving shape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ScenarioSpec
from .correlation import (
    ClosedFormKernel,
    FiniteRankKernel,
    LowRankFactorization,
    assemble_correlation_matrix,
    factors_to_loads,
    finite_rank_correlated_pair,
    pivoted_cholesky,
)
from .fem import (
    Field,
    FieldKind,
    HookeLaw,
    OperatorSpec,
    assemble_mass,
    vector_boundary_mass,
)
from .levelset import CircleHole, RectHole
from .mesh import (
    BoundaryTag,
    Mesh,
    Rect,
    boundary_mass_matrix,
    generate_structured_mesh,
    tag_boundary,
)
from .objectives import TrackingData

__all__ = ["KernelPlan", "ScenarioSetup", "build_scenario", "factorize_scenario_loads"]


@dataclass
class KernelPlan:
    """One correlation kernel plus how its factors become load fields."""

    kernel: object
    region: object  # BoundaryTag or "domain"
    mass: object  # matrix used both for assembly and factor recovery
    component: int | None = None  # lift scalar factors into this vector slot


# Scale of the reaction term clamping the scalar state on the void region;
# relative to the stiffness it induces a boundary layer of width h/100.
VOID_PENALTY_FACTOR = 1.0e4


@dataclass
class ScenarioSetup:
    mesh: Mesh
    holes: list
    objective: str
    plans: list[KernelPlan]
    load_kind: str  # "surface" | "body"
    operator_kind: str  # "poisson" | "elasticity"
    law: HookeLaw | None = None
    mean_load: Field | None = None
    tracking: TrackingData | None = None

    def operator(self, density: np.ndarray, ls) -> OperatorSpec:
        if self.operator_kind == "elasticity":
            return OperatorSpec("elasticity", density, law=self.law)
        from .levelset import void_region_mass

        sigma = VOID_PENALTY_FACTOR / self.mesh.h_min**2
        return OperatorSpec(
            "poisson", density, absorption=sigma * void_region_mass(ls)
        )


def _default_holes(spec: ScenarioSpec) -> list:
    x0, x1, y0, y1 = spec.box
    w, h = x1 - x0, y1 - y0
    r = 0.14 * h
    holes = []
    for fx in (0.2, 0.5, 0.8):
        for fy in (0.3, 0.62):
            holes.append(CircleHole(x0 + fx * w, y0 + fy * h, r))
    if spec.preset in ("poisson_dirichlet", "poisson_tracking"):
        # A single centered hole keeps the observation region material.
        holes = [CircleHole(x0 + 0.5 * w, y0 + 0.78 * h, 0.12 * min(w, h))]
    return holes


def _resolve_holes(spec: ScenarioSpec) -> list:
    out = []
    for entry in spec.holes:
        if entry == "default":
            out.extend(_default_holes(spec))
        elif entry[0] == "circle":
            out.append(CircleHole(*entry[1:]))
        elif entry[0] == "rect":
            out.append(RectHole(*entry[1:]))
        else:
            raise ValueError(f"unknown hole spec {entry!r}")
    return out


def _segment_nodes(mesh: Mesh, tag: BoundaryTag, x_range) -> np.ndarray:
    """Nodes of tagged edges whose midpoints fall in the given x interval."""
    idx = mesh.edges_with_tag(tag)
    mids = mesh.edge_midpoints()[idx]
    lo, hi = x_range
    keep = (mids[:, 0] >= lo - 1e-12) & (mids[:, 0] <= hi + 1e-12)
    return np.unique(mesh.boundary_edges[idx[keep]])


def build_scenario(spec: ScenarioSpec) -> ScenarioSetup:
    """Mesh, boundary tags, hole list and kernel plans for a scenario."""
    x0, x1, y0, y1 = spec.box
    mesh = generate_structured_mesh(spec.nx, spec.ny, spec.box)
    holes = _resolve_holes(spec)

    if spec.objective == "compliance":
        mesh = tag_boundary(mesh, Rect(x0, x1, y0, y0), BoundaryTag.DIRICHLET)
        if spec.preset == "bridge_correlated" or (
            spec.preset == "custom" and spec.objective == "compliance"
        ):
            for lo, hi in (spec.load_segment_a, spec.load_segment_b):
                mesh = tag_boundary(mesh, Rect(lo, hi, y1, y1), BoundaryTag.NEUMANN)
            ga = np.zeros(2 * mesh.n_nodes)
            gb = np.zeros(2 * mesh.n_nodes)
            nodes_a = _segment_nodes(mesh, BoundaryTag.NEUMANN, spec.load_segment_a)
            nodes_b = _segment_nodes(mesh, BoundaryTag.NEUMANN, spec.load_segment_b)
            ga[2 * nodes_a] = spec.load_vector_a[0]
            ga[2 * nodes_a + 1] = spec.load_vector_a[1]
            gb[2 * nodes_b] = spec.load_vector_b[0]
            gb[2 * nodes_b + 1] = spec.load_vector_b[1]
            kernel = finite_rank_correlated_pair(
                Field(ga, FieldKind.VECTOR2), Field(gb, FieldKind.VECTOR2), spec.alpha
            )
            mass = vector_boundary_mass(mesh, BoundaryTag.NEUMANN)
            plans = [KernelPlan(kernel, BoundaryTag.NEUMANN, mass)]
        else:  # bridge_kernel
            mesh = tag_boundary(mesh, Rect(x0, x1, y1, y1), BoundaryTag.NEUMANN)
            mass = boundary_mass_matrix(mesh, BoundaryTag.NEUMANN)
            plans = [
                KernelPlan(
                    ClosedFormKernel(
                        1, spec.amplitude_x, "h", spec.kernel_index, spec.correlation_length
                    ),
                    BoundaryTag.NEUMANN,
                    mass,
                    component=1,
                ),
                KernelPlan(
                    ClosedFormKernel(
                        2, spec.amplitude_y, "k", spec.kernel_index, spec.correlation_length
                    ),
                    BoundaryTag.NEUMANN,
                    mass,
                    component=2,
                ),
            ]
        return ScenarioSetup(
            mesh=mesh,
            holes=holes,
            objective="compliance",
            plans=plans,
            load_kind="surface",
            operator_kind="elasticity",
            law=HookeLaw(spec.lame_lambda, spec.lame_mu),
        )

    # Poisson objectives: state clamped on the whole box boundary, the free
    # boundary inside the box is handled by pinning fully-void nodes.
    mesh = tag_boundary(mesh, Rect(x0, x1, y0, y1), BoundaryTag.DIRICHLET)
    source = Field(np.full(mesh.n_nodes, spec.source_value))
    mass = assemble_mass(mesh)
    plans = [KernelPlan(FiniteRankKernel([(source, source, 1.0)]), "domain", mass)]
    tracking = None
    if spec.objective == "tracking":
        tb = Rect(*spec.tracking_box)
        centroids = mesh.vertices[mesh.triangles].mean(axis=1)
        subset = np.flatnonzero(tb.contains(centroids))
        if subset.size == 0:
            raise ValueError("tracking box contains no triangle centroid")
        tracking = TrackingData(
            Field(np.full(mesh.n_nodes, spec.tracking_target)), subset
        )
    return ScenarioSetup(
        mesh=mesh,
        holes=holes,
        objective=spec.objective,
        plans=plans,
        load_kind="body",
        operator_kind="poisson",
        mean_load=source,
        tracking=tracking,
    )


def factorize_scenario_loads(
    setup: ScenarioSetup,
    epsilon: float,
    max_rank: int | None = None,
    truncate: bool = False,
) -> tuple[list[Field], list[LowRankFactorization]]:
    """Factorize every kernel plan once and recover its nodal load fields.

    Closed-form kernels are factorized per component and their scalar
    factors lifted into vector fields with the other component zero.
    """
    loads: list[Field] = []
    facs: list[LowRankFactorization] = []
    vector = setup.operator_kind == "elasticity"
    for plan in setup.plans:
        matrix = assemble_correlation_matrix(
            plan.kernel, setup.mesh, plan.region, mass=plan.mass
        )
        fac = pivoted_cholesky(matrix, epsilon, max_rank=max_rank, strict=not truncate)
        facs.append(fac)
        kind = FieldKind.VECTOR2 if (vector and plan.component is None) else FieldKind.SCALAR
        recovered = factors_to_loads(fac, plan.mass, kind=kind)
        if plan.component is not None:
            for ld in recovered:
                lifted = np.zeros(2 * setup.mesh.n_nodes)
                lifted[plan.component - 1 :: 2] = ld.values
                loads.append(Field(lifted, FieldKind.VECTOR2))
        else:
            loads.extend(recovered)
    return loads, facs

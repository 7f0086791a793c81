"""Augmented-Lagrangian level-set descent loop.

Per iteration: Ersatz density from the level set, one deterministic solve
per load factor, mean objective and gradient density, a smoothed descent
velocity combining objective and volume-constraint terms, a CFL-limited
transport step and periodic redistancing.  The kernel factorization happens
once up front since the loaded boundary never moves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import OptimizationConfig
from .fem import StateEnsemble, solve_state_ensemble
from .levelset import (
    LevelSet,
    advect,
    extend_velocity,
    initialize_levelset,
    interface_triangles,
    material_fraction,
    redistance,
)
from .mesh import BoundaryTag, volume
from .objectives import (
    GradientDensity,
    compliance_gradient,
    compliance_mean,
    dirichlet_energy_gradient,
    dirichlet_energy_mean,
    tracking_adjoints,
    tracking_gradient,
    tracking_mean,
)
from .scenarios import ScenarioSetup, build_scenario, factorize_scenario_loads

__all__ = [
    "HistoryRecord",
    "OptimizationHistory",
    "StepCollapseError",
    "OptimizationStageError",
    "augmented_lagrangian_value",
    "multiplier_update",
    "step_control",
    "run_optimization",
]

DT_FLOOR_FACTOR = 1e-6
GROW_AFTER_DECREASES = 5
GROW_FACTOR = 1.2


@dataclass
class HistoryRecord:
    iteration: int
    objective: float
    volume: float
    lam: float
    penalty: float
    dt: float
    rank: int


@dataclass
class OptimizationHistory:
    records: list[HistoryRecord] = field(default_factory=list)

    def append(self, rec: HistoryRecord) -> None:
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.records])

    def volumes(self) -> np.ndarray:
        return np.array([r.volume for r in self.records])


class StepCollapseError(RuntimeError):
    """The step-size floor was reached; the run terminates gracefully."""


class OptimizationStageError(RuntimeError):
    """A pipeline stage failed; carries the iteration and stage name."""

    def __init__(self, stage: str, iteration: int, cause: Exception):
        self.stage = stage
        self.iteration = iteration
        super().__init__(f"stage '{stage}' failed at iteration {iteration}: {cause}")


def augmented_lagrangian_value(
    objective: float, vol: float, target: float, lam: float, b: float
) -> float:
    """L = M + lam (vol - target) + (b/2)(vol - target)^2."""
    violation = vol - target
    return objective + lam * violation + 0.5 * b * violation * violation


def multiplier_update(
    lam: float,
    b: float,
    vol: float,
    target: float,
    growth: float = 1.2,
    b_max: float = math.inf,
) -> tuple[float, float]:
    """First-order multiplier step plus capped penalty growth."""
    if b <= 0.0:
        raise ValueError("penalty parameter must be positive")
    return lam + b * (vol - target), min(growth * b, b_max)


def step_control(
    lagrangian_history,
    proposed_dt: float,
    cfl_dt: float,
    dt_floor: float,
) -> float:
    """Adapt the step from the recent augmented-Lagrangian values.

    Halve after an increase, grow by 1.2 after five consecutive decreases,
    and never exceed the CFL bound.

    Raises
    ------
    StepCollapseError
        When the adapted step falls below ``dt_floor``.
    """
    values = list(lagrangian_history)
    dt = proposed_dt
    if len(values) >= 2 and values[-1] > values[-2]:
        dt = 0.5 * proposed_dt
    elif len(values) >= GROW_AFTER_DECREASES + 1:
        tail = values[-(GROW_AFTER_DECREASES + 1):]
        if all(b < a for a, b in zip(tail, tail[1:])):
            dt = GROW_FACTOR * proposed_dt
    dt = min(dt, cfl_dt)
    if dt < dt_floor:
        raise StepCollapseError(f"step size {dt:.3e} fell below the floor {dt_floor:.3e}")
    return dt


@dataclass
class _Evaluation:
    objective: float
    vol: float
    gd: GradientDensity
    density: np.ndarray
    ensemble: StateEnsemble | None


def _evaluate(
    setup: ScenarioSetup, ls: LevelSet, loads, cfg: OptimizationConfig, iteration: int
) -> _Evaluation:
    def stage(name, fn):
        try:
            return fn()
        except Exception as err:  # noqa: BLE001 - re-raised with context
            raise OptimizationStageError(name, iteration, err) from err

    frac = stage("density", lambda: material_fraction(ls))
    density = frac + (1.0 - frac) * cfg.ersatz
    vol = volume(setup.mesh, frac)

    if not loads:
        # Rank-zero correlation: the objective vanishes and the shape only
        # moves under the volume constraint.
        tris = interface_triangles(ls)
        gd = GradientDensity(tris, np.zeros(tris.size), setup.objective)
        return _Evaluation(0.0, vol, gd, density, None)

    def solve():
        return solve_state_ensemble(
            setup.mesh,
            setup.operator(density, ls),
            loads,
            load_kind=setup.load_kind,
            mean_load=setup.mean_load,
            tol=cfg.solver_tol,
        )

    ens = stage("ensemble", solve)

    if setup.objective == "compliance":
        obj = stage("objective", lambda: compliance_mean(ens))
        gd = stage("gradient", lambda: compliance_gradient(ens, ls))
    elif setup.objective == "dirichlet_energy":
        obj = stage("objective", lambda: dirichlet_energy_mean(ens))
        gd = stage("gradient", lambda: dirichlet_energy_gradient(ens, ls))
    else:
        obj = stage("objective", lambda: tracking_mean(ens, setup.tracking))

        def grad():
            with_adj = tracking_adjoints(ens, setup.tracking)
            return tracking_gradient(with_adj, ls)

        gd = stage("gradient", grad)
    return _Evaluation(obj, vol, gd, density, ens)


def run_optimization(cfg: OptimizationConfig) -> OptimizationHistory:
    """Run the full descent loop and return the per-iteration history.

    Writes ``history.csv`` and periodic VTK snapshots when an output
    directory is configured; on a stage failure the partial history is
    flushed before the error propagates.
    """
    from .io import write_history, write_vtk

    setup = build_scenario(cfg.scenario)
    mesh = setup.mesh
    ls = initialize_levelset(mesh, setup.holes)
    loads, facs = factorize_scenario_loads(
        setup, cfg.cholesky_epsilon, cfg.cholesky_max_rank, cfg.truncate_rank
    )
    rank = len(loads)
    smoothing = cfg.velocity_smoothing if cfg.velocity_smoothing is not None else mesh.h_min**2
    # Deformations vanish on the clamped and loaded boundary parts.
    frozen = np.union1d(
        mesh.nodes_with_tag(BoundaryTag.DIRICHLET), mesh.nodes_with_tag(BoundaryTag.NEUMANN)
    )

    out_dir = Path(cfg.output_dir) if cfg.output_dir else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    history = OptimizationHistory()

    def flush():
        if out_dir is not None:
            write_history(history, out_dir / "history.csv")

    def snapshot(i, ls, ev):
        if out_dir is None or i % cfg.snapshot_every != 0:
            return
        grad_cells = np.zeros(mesh.n_triangles)
        grad_cells[ev.gd.triangles] = ev.gd.values
        write_vtk(mesh, ls.phi, ev.density, out_dir / f"shape_{i:04d}.vtk", grad_cells)

    target = cfg.volume_target
    lam = cfg.lambda0
    area = mesh.box.area

    try:
        ev = _evaluate(setup, ls, loads, cfg, 0)
        # Scale-aware default penalty; the unit floor keeps zero-objective
        # (constraint-only) runs moving.
        b0 = cfg.b0 if cfg.b0 is not None else 10.0 * max(abs(ev.objective), 1.0) / area
        b = b0
        b_max = cfg.b_max_factor * b0
        history.append(
            HistoryRecord(0, ev.objective, ev.vol, lam, b, 0.0, rank)
        )
        lagrangians = [augmented_lagrangian_value(ev.objective, ev.vol, target, lam, b)]
        snapshot(0, ls, ev)

        dt_prev: float | None = None
        dt_floor = DT_FLOOR_FACTOR * mesh.h_min
        for i in range(1, cfg.iterations + 1):
            violation = ev.vol - target
            source = -(ev.gd.values + lam + b * violation)
            v = extend_velocity(ev.gd.triangles, source, ls, smoothing=smoothing)
            v[frozen] = 0.0
            vmax = float(np.max(np.abs(v))) if v.size else 0.0
            if vmax == 0.0:
                dt = 0.0
                history.append(HistoryRecord(i, ev.objective, ev.vol, lam, b, dt, rank))
                lagrangians.append(lagrangians[-1])
                continue
            cfl_dt = cfg.cfl * mesh.h_min / vmax
            proposed = dt_prev if dt_prev is not None else cfl_dt
            try:
                dt = step_control(lagrangians, proposed, cfl_dt, dt_floor)
            except StepCollapseError:
                break
            ls = advect(ls, v, dt)
            if i % cfg.redistance_every == 0:
                phi = ls.phi
                if np.any(phi > 0.0) and np.any(phi < 0.0):
                    ls = redistance(ls)
            ev = _evaluate(setup, ls, loads, cfg, i)
            if i % cfg.al_update_every == 0:
                lam, b = multiplier_update(
                    lam, b, ev.vol, target, growth=cfg.b_growth, b_max=b_max
                )
            history.append(HistoryRecord(i, ev.objective, ev.vol, lam, b, dt, rank))
            lagrangians.append(
                augmented_lagrangian_value(ev.objective, ev.vol, target, lam, b)
            )
            snapshot(i, ls, ev)
            dt_prev = dt
    except OptimizationStageError:
        flush()
        raise

    flush()
    return history

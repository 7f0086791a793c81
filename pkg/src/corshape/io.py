"""File output: history CSV, legacy VTK snapshots, factor and report tables."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .correlation import LowRankFactorization
from .mesh import Mesh
from .optimizer import HistoryRecord, OptimizationHistory

__all__ = [
    "HISTORY_HEADER",
    "write_history",
    "read_history",
    "write_vtk",
    "export_factors_csv",
    "write_oracle_report",
]

HISTORY_HEADER = "iter,objective,volume,lambda,penalty,dt,rank"


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_history(history: OptimizationHistory, path) -> None:
    """Write the run history with a byte-exact header and full precision."""
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8", newline="") as fh:
            fh.write(HISTORY_HEADER + "\n")
            for r in history.records:
                fh.write(
                    f"{r.iteration},{_fmt(r.objective)},{_fmt(r.volume)},"
                    f"{_fmt(r.lam)},{_fmt(r.penalty)},{_fmt(r.dt)},{r.rank}\n"
                )
    except OSError as err:
        raise OSError(f"cannot write history to {path}: {err}") from None


def read_history(path) -> OptimizationHistory:
    """Inverse of :func:`write_history`; round-trips values bitwise."""
    path = Path(path)
    records = []
    with path.open("r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != HISTORY_HEADER:
            raise ValueError(f"unexpected history header {header!r}")
        for line in fh:
            it, obj, vol, lam, pen, dt, rank = line.rstrip("\n").split(",")
            records.append(
                HistoryRecord(
                    int(it), float(obj), float(vol), float(lam), float(pen),
                    float(dt), int(rank),
                )
            )
    return OptimizationHistory(records)


def write_vtk(
    mesh: Mesh,
    phi: np.ndarray,
    density: np.ndarray,
    path,
    grad_density: np.ndarray | None = None,
) -> None:
    """Legacy ASCII VTK snapshot: phi as point data, densities as cell data."""
    phi = np.asarray(phi, dtype=float)
    density = np.asarray(density, dtype=float)
    if phi.shape != (mesh.n_nodes,):
        raise ValueError("phi must hold one value per node")
    if density.shape != (mesh.n_triangles,):
        raise ValueError("density must hold one value per triangle")
    if grad_density is not None:
        grad_density = np.asarray(grad_density, dtype=float)
        if grad_density.shape != (mesh.n_triangles,):
            raise ValueError("grad_density must hold one value per triangle")
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8") as fh:
            fh.write("# vtk DataFile Version 4.2\n")
            fh.write("corshape snapshot\n")
            fh.write("ASCII\n")
            fh.write("DATASET UNSTRUCTURED_GRID\n")
            fh.write(f"POINTS {mesh.n_nodes} double\n")
            for x, y in mesh.vertices:
                fh.write(f"{x!r} {y!r} 0.0\n")
            fh.write(f"CELLS {mesh.n_triangles} {4 * mesh.n_triangles}\n")
            for a, b, c in mesh.triangles:
                fh.write(f"3 {a} {b} {c}\n")
            fh.write(f"CELL_TYPES {mesh.n_triangles}\n")
            fh.writelines("5\n" for _ in range(mesh.n_triangles))
            fh.write(f"POINT_DATA {mesh.n_nodes}\n")
            fh.write("SCALARS phi double 1\nLOOKUP_TABLE default\n")
            fh.writelines(f"{v!r}\n" for v in phi)
            fh.write(f"CELL_DATA {mesh.n_triangles}\n")
            fh.write("SCALARS density double 1\nLOOKUP_TABLE default\n")
            fh.writelines(f"{v!r}\n" for v in density)
            if grad_density is not None:
                fh.write("SCALARS grad_density double 1\nLOOKUP_TABLE default\n")
                fh.writelines(f"{v!r}\n" for v in grad_density)
    except OSError as err:
        raise OSError(f"cannot write VTK file {path}: {err}") from None


def export_factors_csv(fac: LowRankFactorization, path) -> None:
    """One factor per column; the header carries k and the residual row."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k"] + [str(k + 1) for k in range(fac.rank)])
        writer.writerow(["trace_error"] + [_fmt(r) for r in fac.residuals])
        for i in range(fac.dim):
            writer.writerow([str(i)] + [_fmt(v) for v in fac.factors[i]])


def write_oracle_report(rows: list[dict], path) -> None:
    """Comparison table ``quantity, formula_value, oracle_value, tolerance, pass``."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["quantity", "formula_value", "oracle_value", "tolerance", "pass"])
        for row in rows:
            writer.writerow(
                [
                    row["quantity"],
                    _fmt(row["formula_value"]),
                    _fmt(row["oracle_value"]),
                    _fmt(row["tolerance"]),
                    "true" if row["pass"] else "false",
                ]
            )

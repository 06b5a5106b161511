"""Solution metrics and field export (VTK legacy ASCII, CSV)."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from phasetopo.element import spatial_stress
from phasetopo.material import double_well

SUMMARY_COLUMNS = ("v_sol", "C_sol_J", "U_sol_m", "P_sol", "svm_max_Pa", "svm_avg_Pa", "newton_total")
OMEGA_F_THRESHOLD = 0.5


class PostprocError(ValueError):
    pass


@dataclass
class SolutionSummary:
    v_sol: float
    C_sol: float
    U_sol: float
    P_sol: float
    svm_max: float
    svm_avg: float
    F_tot: float
    V_sol: float
    newton_total: int = 0

    def row(self):
        return (self.v_sol, self.C_sol, self.U_sol, self.P_sol, self.svm_max, self.svm_avg, self.newton_total)


def _quad_values(model, nodal):
    """Interpolate nodal values to quadrature points: (ne, nq[, k])."""
    return np.einsum("qa,ea...->eq...", model.geom.N, nodal[model.mesh.elements])


def _wJ(model):
    return np.broadcast_to(model.geom.wJ, (model.mesh.n_elements, len(model.geom.rule.weights)))


def volume_fraction(model, phi) -> float:
    return float((_wJ(model) * _quad_values(model, np.asarray(phi, float))).sum()) / model.volume


def applied_resultant(model, phi) -> np.ndarray:
    """int phi b dOmega + int_GammaN t dGamma as a vector (N)."""
    d = model.dim
    F = model.traction.reshape(-1, d + 1)[:, :d].sum(axis=0)
    if model.body_force is not None:
        F = F + volume_fraction(model, phi) * model.volume * model.body_force
    return F


def compliance(model, phi, u) -> float:
    """Work of the applied loads on u (J)."""
    d = model.dim
    c = float(model.traction.reshape(-1, d + 1)[:, :d].ravel() @ np.asarray(u).ravel())
    if model.body_force is not None and np.any(model.body_force):
        phq = _quad_values(model, np.asarray(phi, float))
        uq = _quad_values(model, np.asarray(u, float))
        c += float((_wJ(model) * phq * (uq @ model.body_force)).sum())
    return c


def structural_displacement(C_sol: float, F_tot) -> float:
    F = float(np.linalg.norm(np.atleast_1d(F_tot)))
    if F == 0.0:
        raise PostprocError("total applied force is zero; U_sol undefined")
    return C_sol / F


def perimeter(model, phi, gamma) -> float:
    """int gamma |grad phi|^2 / 2 + psi0(phi) / gamma."""
    phi = np.asarray(phi, float)
    grad = np.einsum("eqai,ea->eqi", np.broadcast_to(model.geom.dNdX, _wJ(model).shape + model.geom.dNdX.shape[-2:]),
                     phi[model.mesh.elements])
    psi, _, _ = double_well(_quad_values(model, phi))
    dens = 0.5 * gamma * (grad**2).sum(-1) + psi / gamma
    return float((_wJ(model) * dens).sum())


def deviator_norm(sig, dim):
    """Euclidean norm of the stress deviator from Voigt vectors (..., nv).

    2D (plane strain) uses the in-plane tensor only, as the formulation does.
    """
    if dim == 2:
        s11, s22, s12 = sig[..., 0], sig[..., 1], sig[..., 2]
        m = (s11 + s22) / 2.0
        return np.sqrt((s11 - m) ** 2 + (s22 - m) ** 2 + 2 * s12**2)
    s11, s22, s33, s23, s13, s12 = (sig[..., i] for i in range(6))
    m = (s11 + s22 + s33) / 3.0
    return np.sqrt((s11 - m) ** 2 + (s22 - m) ** 2 + (s33 - m) ** 2 + 2 * (s23**2 + s13**2 + s12**2))


def von_mises(model, state, threshold=OMEGA_F_THRESHOLD):
    """(sigma_vm at quadrature points, max, average over phi > threshold)."""
    if state.sigma_hat is None:
        raise PostprocError("no recovered stresses in state")
    svm = deviator_norm(spatial_stress(model.geom, state.sigma_hat), model.dim)
    phq = _quad_values(model, state.phi)
    mask = phq > threshold
    wJ = _wJ(model)
    V_sol = float((wJ * mask).sum())
    if V_sol == 0.0:
        raise PostprocError(f"no material above phi = {threshold}; average stress undefined")
    return svm, float(svm.max()), float((wJ * svm * mask).sum()) / V_sol


def summarize(model, state, newton_total=0) -> SolutionSummary:
    v = volume_fraction(model, state.phi)
    C = compliance(model, state.phi, state.u)
    F = applied_resultant(model, state.phi)
    U = structural_displacement(C, F)
    P = perimeter(model, state.phi, model.phase.gamma)
    try:
        _, smax, savg = von_mises(model, state)
    except PostprocError:
        smax, savg = float("nan"), float("nan")
    return SolutionSummary(v, C, U, P, smax, savg, float(np.linalg.norm(F)), v * model.volume, newton_total)


def write_summary_csv(rows, path):
    """One line per SolutionSummary (or raw tuple) under the standard header."""
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SUMMARY_COLUMNS)
            for r in rows:
                w.writerow([repr(float(x)) if not isinstance(x, int) else x for x in (r.row() if hasattr(r, "row") else r)])
    except OSError as exc:
        raise OSError(f"cannot write summary to {path}: {exc}") from exc


_VTK_CELL = {2: 9, 3: 12}


def write_vtk(model, state, path, title="phase-field topology"):
    """Legacy ASCII unstructured grid with phi, u (point) and sigma_vm (cell)."""
    mesh = model.mesh
    pts = mesh.nodes if mesh.dim == 3 else np.column_stack([mesh.nodes, np.zeros(mesh.n_nodes)])
    u = state.u if mesh.dim == 3 else np.column_stack([state.u, np.zeros(mesh.n_nodes)])
    nen = mesh.elements.shape[1]
    if state.sigma_hat is not None:
        svm_q = deviator_norm(spatial_stress(model.geom, state.sigma_hat), mesh.dim)
        svm = (_wJ(model) * svm_q).sum(1) / _wJ(model).sum(1)
    else:
        svm = np.zeros(mesh.n_elements)
    fmt = "%.17g"
    path = Path(path)
    try:
        with path.open("w") as fh:
            fh.write(f"# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
            fh.write(f"POINTS {mesh.n_nodes} double\n")
            np.savetxt(fh, pts, fmt=fmt)
            fh.write(f"CELLS {mesh.n_elements} {mesh.n_elements * (nen + 1)}\n")
            np.savetxt(fh, np.column_stack([np.full(mesh.n_elements, nen), mesh.elements]), fmt="%d")
            fh.write(f"CELL_TYPES {mesh.n_elements}\n")
            np.savetxt(fh, np.full(mesh.n_elements, _VTK_CELL[mesh.dim]), fmt="%d")
            fh.write(f"POINT_DATA {mesh.n_nodes}\nSCALARS phi double 1\nLOOKUP_TABLE default\n")
            np.savetxt(fh, state.phi, fmt=fmt)
            fh.write("VECTORS u double\n")
            np.savetxt(fh, u, fmt=fmt)
            fh.write(f"CELL_DATA {mesh.n_elements}\nSCALARS sigma_vm double 1\nLOOKUP_TABLE default\n")
            np.savetxt(fh, svm, fmt=fmt)
    except OSError as exc:
        raise OSError(f"cannot write VTK file {path}: {exc}") from exc
    return path


def export_fields(model, state, out_dir, stem="solution", newton_total=0):
    """Write <stem>.vtk and <stem>_summary.csv; returns (vtk path, summary)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vtk = write_vtk(model, state, out / f"{stem}.vtk")
    summary = summarize(model, state, newton_total)
    write_summary_csv([summary], out / f"{stem}_summary.csv")
    return vtk, summary

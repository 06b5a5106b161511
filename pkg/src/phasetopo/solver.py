"""Allen-Cahn pseudo-time loop with an inner Newton-Raphson solve."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from phasetopo.assembly import (
    NAND,
    SAND,
    AssemblyError,
    FieldState,
    Model,
    ReducedSystem,
    SingularSystemError,
    apply_dirichlet,
    assemble,
    nand_project,
    solve_linear,
)
from phasetopo.element import CondensationError, condense, strain_energy_rate
from phasetopo.material import stiffness_scale

log = logging.getLogger(__name__)

CONVERGED = "converged"
TIME_LIMIT = "time-limit"
DIVERGED = "diverged"


class SetupError(RuntimeError):
    pass


@dataclass
class ConvergenceParams:
    c_ac: float = 1e-6
    c_res: float = 1e-8
    # residual floor relative to the magnitude of the assembled terms; see README
    rtol: float = 1e-12
    max_iter: int = 15
    t_final: float | None = None
    max_steps: int = 100_000
    wall_limit: float | None = None  # seconds of computing time


@dataclass
class TimeStepper:
    dt0: float = 1e-2
    lower: float = 1e-5
    upper: float = 1e3
    fast_iters: int = 5
    slow_iters: int = 10
    dt: float = field(default=None)

    def __post_init__(self):
        if self.dt is None:
            self.dt = self.dt0

    @property
    def bounds(self):
        return self.lower * self.dt0, self.upper * self.dt0

    def accepted(self, iterations: int):
        lo, hi = self.bounds
        if iterations <= self.fast_iters:
            self.dt = min(2.0 * self.dt, hi)
        elif iterations >= self.slow_iters:
            self.dt = max(0.5 * self.dt, lo)

    def rejected(self) -> bool:
        """Shrink after a failed solve; False once the lower bound is exhausted."""
        lo, _ = self.bounds
        if self.dt <= lo * (1 + 1e-12):
            return False
        self.dt = max(0.25 * self.dt, lo)
        return True


@dataclass
class StepRecord:
    t: float
    dt: float
    newton_iters: int
    E_AC: float
    E_dphi: float
    E_du: float
    v: float
    compliance: float


@dataclass
class SolverReport:
    steps: list = field(default_factory=list)
    rejected: int = 0
    status: str = ""
    wall_time: float = 0.0
    residual_history: list = field(default_factory=list)

    @property
    def total_newton(self) -> int:
        return sum(s.newton_iters for s in self.steps)

    @property
    def accepted(self) -> int:
        return len(self.steps)

    CSV_COLUMNS = ("t", "dt", "newton_iters", "E_AC", "E_dphi", "E_du", "v", "compliance")

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.CSV_COLUMNS)
            for s in self.steps:
                row = asdict(s)
                w.writerow([row[c] if isinstance(row[c], int) else repr(float(row[c])) for c in self.CSV_COLUMNS])


@dataclass
class NewtonResult:
    state: FieldState | None
    iterations: int
    norms: list
    ok: bool


def _converged(conv: ConvergenceParams, red: ReducedSystem) -> bool:
    """Absolute target once every entry's round-off level is discounted."""
    return red.excess(conv.rtol) < conv.c_res


def _reduce(model, system, fields):
    dofs = model.dofs
    if fields == ("u",):
        red = apply_dirichlet(system, dofs, subset=dofs.u_dofs().ravel())
        red.border = None
        return red
    if fields == ("phi",):
        return apply_dirichlet(system, dofs, subset=dofs.phi_dofs())
    return apply_dirichlet(system, dofs)


def newton_solve(model, state, dt, conv, mode=SAND, fields=("u", "phi")):
    """Solve the step residual from ``state``; never mutates ``state``.

    Returns a NewtonResult with ``ok=False`` (and no state) on failure.
    """
    st = state.copy()
    norms = []
    it = 0
    try:
        while True:
            system = assemble(model, st, dt, mode)
            red = _reduce(model, system, fields)
            norms.append(red.norm)
            if not np.isfinite(norms[-1]):
                return NewtonResult(None, it, norms, False)
            # at least one update per step, as in the reference algorithm
            if it > 0 and _converged(conv, red):
                st.sigma_hat, st.eps_hat = system.sigma_hat, system.eps_hat
                return NewtonResult(st, it, norms, True)
            if it >= conv.max_iter:
                return NewtonResult(None, it, norms, False)
            try:
                # eliminating the multiplier by Schur complement keeps the
                # volume constraint exact to round-off
                dx = solve_linear(red, "schur")
            except SingularSystemError:
                dx = solve_linear(red, "bordered")
            x = model.pack(st)
            x[red.free] -= dx[: len(red.free)]
            model.unpack(x, st)
            if red.border is not None:
                st.lam -= dx[-1]
            it += 1
    except (SingularSystemError, CondensationError, AssemblyError, FloatingPointError, np.linalg.LinAlgError) as exc:
        log.debug("newton failure: %s", exc)
        return NewtonResult(None, it, norms, False)


def _integrate_abs(model, values):
    """Integral over the domain of |values| interpolated from nodes.

    ``values`` is (n_nodes,) or (n_nodes, k); vectors use the Euclidean norm.
    """
    geom = model.geom
    ve = values[model.mesh.elements]
    vq = np.einsum("qa,ea...->eq...", geom.N, ve)
    if vq.ndim == 3:
        vq = np.linalg.norm(vq, axis=-1)
    else:
        vq = np.abs(vq)
    return float((np.broadcast_to(geom.wJ, vq.shape) * vq).sum())


def allen_cahn_error(model, state, dt, A_du, T_phi):
    """(E_AC, E_dphi, E_du) between ``state`` and its previous-step copies."""
    V = model.volume
    E_phi = T_phi / (V * dt) * _integrate_abs(model, state.phi - state.phi_n)
    E_u = T_phi / (A_du * V * dt) * _integrate_abs(model, state.u - state.u_n)
    return 0.5 * (E_phi + E_u), E_phi, E_u


@dataclass
class ReferenceSolution:
    u: np.ndarray
    eps_hat: np.ndarray
    A_du: float
    ebar: float


def reference_solution(model: Model) -> ReferenceSolution:
    """Elastic solve at phi = 1 everywhere.

    Gives the displacement normalization A_du = (1/V) int |u| and the
    volume-averaged strain-energy-density rate 1/2 C'(1) eps:eps.
    """
    st = model.initial_state(1.0)
    st.phi[:] = 1.0
    st.commit()
    if not np.any(model.traction) and (model.body_force is None or not np.any(model.body_force)):
        raise SetupError("no applied load: the reference displacement vanishes")
    system = assemble(model, st, 1.0, SAND)
    red = _reduce(model, system, ("u",))
    try:
        du = solve_linear(red)
    except SingularSystemError as exc:
        raise SetupError(f"singular reference stiffness (insufficient supports?): {exc}") from None
    x = model.pack(st)
    x[red.free] -= du
    model.unpack(x, st)
    nq = len(model.geom.rule.weights)
    f = np.ones((model.mesh.n_elements, nq))
    _, eps, _, _ = condense(model.geom, f, model.u_element(st.u))
    A = _integrate_abs(model, st.u) / model.volume
    if not A > 0:
        raise SetupError("degenerate displacement normalization")
    _, df1, _ = stiffness_scale(1.0, model.material.delta, model.material.p)
    ebar = 0.5 * float(df1) * float(strain_energy_rate(model.geom, eps).sum()) / model.volume
    return ReferenceSolution(st.u, eps, A, ebar)


def volume_fraction_of(model, phi):
    return float(model.node_weights @ phi) / model.volume


def compliance_of(model, state):
    c = float(model.traction @ model.pack(state))
    if model.body_force is not None and np.any(model.body_force):
        geom = model.geom
        N = geom.N
        phi_q = model.phi_element(state.phi) @ N.T
        uq = np.einsum("qa,eai->eqi", N, state.u[model.mesh.elements])
        c += float((np.broadcast_to(geom.wJ, phi_q.shape) * phi_q * (uq @ model.body_force)).sum())
    return c


def check_convexity(model, dt):
    """Warn when the step violates the Allen-Cahn convexity guard."""
    ph = model.phase
    lhs = ph.tau / dt
    if model.control.kind == "vm":
        lhs += model.control.kappa_v
    rhs = 2.0 * ph.kappa_phi / ph.gamma
    if lhs < rhs:
        log.warning("convexity guard violated at dt=%.3g: %.3g < %.3g", dt, lhs, rhs)
        return False
    return True


def _nand_step(model, state, dt, conv):
    """Staggered step: phase field with frozen mechanics, then equilibrium
    with C(phi_n). Returns (state, iterations) or (None, iterations)."""
    r_phi = newton_solve(model, state, dt, conv, NAND, ("phi",))
    if not r_phi.ok:
        return None, r_phi.iterations
    r_u = newton_solve(model, r_phi.state, dt, conv, NAND, ("u",))
    if not r_u.ok:
        return None, r_phi.iterations + r_u.iterations
    st = r_u.state
    free_phi = model.dofs.phi_dofs()[~model.dofs.fixed[model.dofs.phi_dofs()]] // (model.dim + 1)
    proj = nand_project(st, free_phi)
    proj.sigma_hat, proj.eps_hat = st.sigma_hat, st.eps_hat
    return proj, r_phi.iterations + r_u.iterations


def run(model: Model, phi0: float, conv: ConvergenceParams, stepper: TimeStepper | None = None,
        mode: str = SAND, callback=None, reference: ReferenceSolution | None = None):
    """Pseudo-time loop until E_AC < c_ac or t > t_final.

    ``callback(step_index, state, record)`` runs after each accepted step.
    Returns (state, report, reference).
    """
    t_start = time.perf_counter()
    stepper = stepper or TimeStepper()
    ref = reference or reference_solution(model)
    T_phi = model.phase.T_phi
    t_final = conv.t_final if conv.t_final is not None else 1e4 * T_phi
    report = SolverReport()

    state = model.initial_state(phi0)
    if mode == NAND:
        nq = len(model.geom.rule.weights)
        f, _, _ = stiffness_scale(model.phi_element(state.phi) @ model.geom.N.T, model.material.delta, model.material.p)
        _, state.eps_hat, _, _ = condense(model.geom, f, model.u_element(state.u))
        assert state.eps_hat.shape[0] == model.mesh.n_elements and nq > 0

    t = 0.0
    E_ac = np.inf
    while True:
        if E_ac < conv.c_ac:
            report.status = CONVERGED
            break
        out_of_wall = conv.wall_limit is not None and time.perf_counter() - t_start > conv.wall_limit
        if t >= t_final or len(report.steps) >= conv.max_steps or out_of_wall:
            report.status = TIME_LIMIT
            break
        dt = stepper.dt
        check_convexity(model, dt)
        if mode == SAND:
            res = newton_solve(model, state, dt, conv, SAND)
            new, iters = (res.state if res.ok else None), res.iterations
            report.residual_history.append(res.norms)
        else:
            new, iters = _nand_step(model, state, dt, conv)
        if new is None:
            report.rejected += 1
            log.info("t=%.4g: Newton failed with dt=%.3g, reducing", t, dt)
            if not stepper.rejected():
                report.status = DIVERGED
                log.error("time step underflow at t=%.4g", t)
                break
            continue
        t += dt
        E_ac, E_phi, E_u = allen_cahn_error(model, new, dt, ref.A_du, T_phi)
        new.commit()
        state = new
        rec = StepRecord(t, dt, iters, E_ac, E_phi, E_u, volume_fraction_of(model, state.phi), compliance_of(model, state))
        report.steps.append(rec)
        log.info("t=%.4g dt=%.3g iters=%d E_AC=%.3e v=%.4f C=%.4g", t, dt, iters, E_ac, rec.v, rec.compliance)
        if callback is not None:
            callback(len(report.steps), state, rec)
        stepper.accepted(iters)
    report.wall_time = time.perf_counter() - t_start
    return state, report, ref

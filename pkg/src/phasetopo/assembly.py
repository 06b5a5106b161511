"""Global residual/tangent assembly, Dirichlet reduction and linear solves."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from phasetopo.element import (
    ElementGeometry,
    element_residual_tangent,
    kind_for,
    shape_functions,
)
from phasetopo.material import MaterialParams, PhaseParams, VolumeControl, elastic_tensor
from phasetopo.mesh import NEUMANN, DofMap, Mesh

SAND = "sand"
NAND = "nand"


class AssemblyError(RuntimeError):
    pass


class SingularSystemError(RuntimeError):
    pass


@dataclass
class FieldState:
    phi: np.ndarray
    u: np.ndarray
    lam: float = 0.0
    phi_n: np.ndarray | None = None
    u_n: np.ndarray | None = None
    sigma_hat: np.ndarray | None = None
    eps_hat: np.ndarray | None = None

    def copy(self) -> "FieldState":
        return copy.deepcopy(self)

    def commit(self):
        """Make the current fields the previous-step copies."""
        self.phi_n = self.phi.copy()
        self.u_n = self.u.copy()


class Model:
    """Everything needed to assemble one discrete problem."""

    def __init__(
        self,
        mesh: Mesh,
        regions,
        material: MaterialParams,
        phase: PhaseParams,
        control: VolumeControl,
        body_force=None,
    ):
        self.mesh = mesh
        self.regions = list(regions)
        self.material = material
        self.phase = phase
        self.control = control
        self.dim = d = mesh.dim
        self.body_force = None if body_force is None else np.asarray(body_force, dtype=float)
        self.C_A = elastic_tensor(material, d)
        self.geom = ElementGeometry(mesh, self.C_A)
        self.dofs = DofMap(mesh, self.regions, with_lambda=control.kind == "vc")
        per = d + 1
        self.edofs = (mesh.elements[:, :, None] * per + np.arange(per)).reshape(mesh.n_elements, -1)
        self._pattern()
        self.traction = self._traction_vector()
        wN = np.broadcast_to(self.geom.wN, (mesh.n_elements, kind_for(d).n_nodes))
        self.node_weights = np.bincount(mesh.elements.ravel(), weights=wN.ravel(), minlength=mesh.n_nodes)
        self.volume = float(self.node_weights.sum())

    def _pattern(self):
        n = self.dofs.n_total
        nd = self.edofs.shape[1]
        rows = np.repeat(self.edofs, nd, axis=1).ravel()
        cols = np.tile(self.edofs, (1, nd)).ravel()
        key = rows * n + cols
        uniq, self._inverse = np.unique(key, return_inverse=True)
        self._rows = uniq // n
        self._cols = uniq % n
        self._nnz = len(uniq)

    def _traction_vector(self):
        d = self.dim
        F = np.zeros(self.dofs.n_total)
        for r in self.regions:
            if r.kind != NEUMANN:
                continue
            X = self.mesh.nodes[r.faces]
            fd = d - 1
            pts = np.array([[-1.0], [1.0]]) / np.sqrt(3.0) if fd == 1 else np.array(
                [[-1, -1], [1, -1], [1, 1], [-1, 1]]) / np.sqrt(3.0)
            if fd == 1:
                N = 0.5 * np.stack([1 - pts[:, 0], 1 + pts[:, 0]], axis=1)
                jac = np.linalg.norm(X[:, 1] - X[:, 0], axis=1)[:, None] / 2.0 * np.ones(len(pts))
            else:
                N, dN = shape_functions(kind_for(2), pts)
                tx = np.einsum("fai,qa->fqi", X, dN[..., 0])
                ty = np.einsum("fai,qa->fqi", X, dN[..., 1])
                jac = np.linalg.norm(np.cross(tx, ty), axis=-1)
            nodal = np.einsum("fq,qa->fa", jac, N)  # integral of N_a over each face
            for c in range(d):
                np.add.at(F, r.faces * (d + 1) + c, nodal * r.data[c])
        return F

    # vector packing -------------------------------------------------------
    def pack(self, state: FieldState) -> np.ndarray:
        x = np.empty(self.dofs.n_total)
        per = self.dim + 1
        x.reshape(-1, per)[:, : self.dim] = state.u
        x.reshape(-1, per)[:, self.dim] = state.phi
        return x

    def unpack(self, x, state: FieldState):
        per = self.dim + 1
        xx = x.reshape(-1, per)
        state.u = xx[:, : self.dim].copy()
        state.phi = xx[:, self.dim].copy()

    def initial_state(self, phi0: float) -> FieldState:
        nn = self.mesh.n_nodes
        phi = np.full(nn, float(phi0))
        u = np.zeros((nn, self.dim))
        st = FieldState(phi, u)
        x = self.pack(st)
        x[self.dofs.fixed] = self.dofs.prescribed[self.dofs.fixed]
        self.unpack(x, st)
        st.commit()
        return st

    def phi_element(self, phi):
        return phi[self.mesh.elements]

    def u_element(self, u):
        return u[self.mesh.elements].reshape(self.mesh.n_elements, -1)


@dataclass
class GlobalSystem:
    residual: np.ndarray  # over all entries (n_total)
    tangent: sp.csr_matrix  # n_total x n_total
    border: np.ndarray | None = None  # d r_lambda / d x over all entries
    r_lambda: float = 0.0
    sigma_hat: np.ndarray | None = None
    eps_hat: np.ndarray | None = None
    # per-entry sum of |contributions|; sets the round-off floor of the residual
    magnitude: np.ndarray | None = None
    lambda_magnitude: float = 0.0


@dataclass
class ReducedSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    border: np.ndarray | None = None
    r_lambda: float = 0.0
    free: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    magnitude: np.ndarray | None = None
    lambda_magnitude: float = 0.0

    @property
    def norm(self) -> float:
        r2 = float(self.rhs @ self.rhs)
        if self.border is not None:
            r2 += self.r_lambda**2
        return float(np.sqrt(r2))

    def excess(self, rtol: float) -> float:
        """Residual norm after discounting each entry's round-off level."""
        if self.magnitude is None:
            return self.norm
        over = np.maximum(np.abs(self.rhs) - rtol * self.magnitude, 0.0)
        r2 = float(over @ over)
        if self.border is not None:
            r2 += max(abs(self.r_lambda) - rtol * self.lambda_magnitude, 0.0) ** 2
        return float(np.sqrt(r2))


def assemble(model: Model, state: FieldState, dt: float, mode: str = SAND) -> GlobalSystem:
    """Residual and tangent of the condensed (Allen-Cahn augmented) system.

    In NAND mode the equilibrium uses C(phi_n) and the elastic driving force
    is evaluated with the strains stored in ``state.eps_hat`` at phi_n.
    """
    if not dt > 0:
        raise AssemblyError(f"time step must be positive, got {dt}")
    frozen = None
    if mode == NAND:
        if state.eps_hat is None:
            raise AssemblyError("NAND assembly needs the previous condensed strains")
        frozen = {
            "phi_n": model.phi_element(state.phi_n),
            "eps_n": state.eps_hat,
            "u_n": model.u_element(state.u_n),
        }
    out = element_residual_tangent(
        model.geom,
        model.u_element(state.u),
        model.phi_element(state.phi),
        model.phi_element(state.phi_n),
        model.material,
        model.phase,
        model.control,
        dt,
        mode=mode,
        frozen=frozen,
        body_force=model.body_force,
    )
    n = model.dofs.n_total
    R = np.bincount(model.edofs.ravel(), weights=out.residual.ravel(), minlength=n)
    R += model.traction
    mag = np.bincount(model.edofs.ravel(), weights=np.abs(out.residual).ravel(), minlength=n) + np.abs(model.traction)
    data = np.bincount(model._inverse, weights=out.tangent.ravel(), minlength=model._nnz)
    D = sp.csr_matrix((data, (model._rows, model._cols)), shape=(n, n))
    # |D||x| bounds the cancelling element terms (nearly rigid elements carry huge ones)
    mag += abs(D) @ np.abs(model.pack(state))

    border, r_lam, lam_mag = None, 0.0, 0.0
    if model.control.kind == "vc":
        border = np.zeros(n)
        phi_idx = model.dofs.phi_dofs()
        border[phi_idx] = model.node_weights
        R[phi_idx] += state.lam * model.node_weights
        mag[phi_idx] += abs(state.lam) * model.node_weights
        r_lam = float(model.node_weights @ state.phi - model.control.vbar * model.volume)
        lam_mag = float(model.node_weights @ np.abs(state.phi) + model.control.vbar * model.volume)
    if not np.all(np.isfinite(R)):
        bad = int(np.flatnonzero(~np.isfinite(R))[0]) // (model.dim + 1)
        raise AssemblyError(f"non-finite residual at node {bad}")
    return GlobalSystem(R, D, border, r_lam, out.sigma_hat, out.eps_hat, mag, lam_mag)


def apply_dirichlet(system: GlobalSystem, dofs: DofMap, subset=None) -> ReducedSystem:
    """Restrict to free entries (optionally a subset of them).

    Constrained entries already hold their prescribed values, so the
    restriction is symmetric and no right-hand-side correction is needed.
    """
    free = dofs.free if subset is None else np.intersect1d(dofs.free, subset)
    K = system.tangent[free][:, free].tocsr()
    border = None if system.border is None else system.border[free]
    mag = None if system.magnitude is None else system.magnitude[free]
    return ReducedSystem(K, system.residual[free].copy(), border, system.r_lambda, free, mag, system.lambda_magnitude)


def reactions(system: GlobalSystem, dofs: DofMap) -> np.ndarray:
    """Support forces (on the body) at constrained displacement entries."""
    out = np.zeros(dofs.n_total)
    out[dofs.fixed] = -system.residual[dofs.fixed]
    return out


def nand_project(state: FieldState, free_phi=None) -> FieldState:
    """Clamp the phase field to [0, 1]."""
    st = state.copy()
    if free_phi is None:
        st.phi = np.clip(st.phi, 0.0, 1.0)
    else:
        st.phi[free_phi] = np.clip(st.phi[free_phi], 0.0, 1.0)
    return st


class _ScaledLU:
    """LU of diag(d) A diag(d) in a symmetric fill-reducing order.

    Pivots stay on the diagonal: threshold pivoting lets the fill explode
    once f(phi) spans many decades, while the scaled tangent is
    quasi-definite in practice (negative u block, positive phi block).
    Each solve is refined against A and rejected if still inaccurate.
    """

    REFINE = 2
    TOL = 1e-8

    def __init__(self, A):
        self.A = A.tocsr()
        diag = np.abs(A.diagonal())
        self.d = np.where(diag > 0, 1.0 / np.sqrt(np.where(diag > 0, diag, 1.0)), 1.0)
        S = sp.diags(self.d)
        try:
            self.lu = spla.splu((S @ A @ S).tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                options=dict(SymmetricMode=True))
        except RuntimeError as exc:
            raise SingularSystemError(str(exc)) from None

    def _raw(self, b):
        return self.d * self.lu.solve(self.d * b)

    def solve(self, b):
        x = self._raw(b)
        scale = np.linalg.norm(b)
        for _ in range(self.REFINE):
            r = b - self.A @ x
            if not np.linalg.norm(r) > self.TOL * scale:
                break
            x = x + self._raw(r)
        if np.linalg.norm(b - self.A @ x) > self.TOL * scale:
            raise SingularSystemError("inaccurate factorization (small diagonal pivots)")
        return x


def _factorize(A):
    return _ScaledLU(A)


def solve_linear(system: ReducedSystem, method: str = "bordered") -> np.ndarray:
    """Newton update solving ``D dx = R`` (with the multiplier row if present).

    ``method='bordered'`` factorizes the matrix extended by the multiplier
    row and column; ``'schur'`` factorizes D alone and eliminates the
    multiplier with two back-substitutions.  Returns dx, followed by the
    multiplier update when a border exists.
    """
    A, r = system.matrix, system.rhs
    if A.shape[0] == 0 and system.border is None:
        return np.zeros(0)
    if system.border is None:
        dx = _factorize(A).solve(r)
    elif method == "bordered":
        w = sp.csr_matrix(system.border[None, :])
        big = sp.bmat([[A, w.T], [w, None]], format="csc")
        dx = _factorize(big).solve(np.append(r, system.r_lambda))
    elif method == "schur":
        lu = _factorize(A)
        y1 = lu.solve(r)
        y2 = lu.solve(system.border)
        s = float(system.border @ y2)
        if s == 0.0:
            raise SingularSystemError("vanishing Schur complement of the multiplier row")
        dl = (float(system.border @ y1) - system.r_lambda) / s
        dx = np.append(y1 - y2 * dl, dl)
    else:
        raise ValueError(f"unknown linear solve method {method!r}")
    if not np.all(np.isfinite(dx)):
        raise SingularSystemError("non-finite Newton update")
    return dx

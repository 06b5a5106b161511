"""Mixed Q1/H1 elements with assumed stress and strain fields.

Stress and strain coefficients are interpolated in parent coordinates and
mapped with the normalized centre Jacobian ``T = J0 / sqrt(det J0)``::

    sigma = T sigma_xi T^T
    eps   = (det J0 / det J) T^-T eps_xi T^-1

Both coefficient sets are condensed out per element, so the element
exposes a residual and a symmetric tangent in nodal (u, phi) only.
All kernels are batched over elements with numpy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from phasetopo.material import bound_penalty, double_well, stiffness_scale
from phasetopo.mesh import H1_NODES, Q1_NODES, Mesh

GAUSS = 1.0 / np.sqrt(3.0)

VOIGT_PAIRS = {
    2: [(0, 0), (1, 1), (0, 1)],
    3: [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)],
}


class DegenerateElementError(ValueError):
    pass


class CondensationError(ArithmeticError):
    pass


@dataclass(frozen=True)
class ElementKind:
    name: str
    dim: int
    n_nodes: int
    n_stress: int
    n_strain: int

    @property
    def n_voigt(self) -> int:
        return 3 if self.dim == 2 else 6


Q1 = ElementKind("Q1", 2, 4, 5, 7)
H1 = ElementKind("H1", 3, 8, 18, 21)


def kind_for(dim: int) -> ElementKind:
    return Q1 if dim == 2 else H1


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray


def gauss_rule(dim: int) -> QuadratureRule:
    """Tensor 2-point Gauss rule on [-1, 1]^dim."""
    corners = Q1_NODES if dim == 2 else H1_NODES
    return QuadratureRule(corners * GAUSS, np.ones(len(corners)))


def shape_functions(kind: ElementKind, xi):
    """Bilinear/trilinear Lagrange functions and their parent gradients.

    ``xi`` may be a single point or an array of points (..., dim).
    """
    xi = np.asarray(xi, dtype=float)
    corners = Q1_NODES if kind.dim == 2 else H1_NODES
    # factors (1 + xi_k c_k) / 2 per direction
    fac = 0.5 * (1.0 + xi[..., None, :] * corners)
    N = fac.prod(axis=-1)
    dN = np.empty(xi.shape[:-1] + corners.shape)
    for k in range(kind.dim):
        others = np.delete(fac, k, axis=-1).prod(axis=-1)
        dN[..., k] = 0.5 * corners[:, k] * others
    return N, dN


def stress_basis(kind: ElementKind, xi) -> np.ndarray:
    """Assumed stress interpolation in parent coordinates (tensor shear)."""
    if kind.dim == 2:
        x, e = xi
        return np.array([
            [1, e, 0, 0, 0],
            [0, 0, 1, x, 0],
            [0, 0, 0, 0, 1],
        ], dtype=float)
    x, e, z = xi
    N = np.zeros((6, 18))
    N[0, 0:4] = [1, e, z, e * z]
    N[1, 4:8] = [1, x, z, x * z]
    N[2, 8:12] = [1, x, e, x * e]
    N[3, 12:14] = [1, x]
    N[4, 14:16] = [1, e]
    N[5, 16:18] = [1, z]
    return N


def strain_basis(kind: ElementKind, xi) -> np.ndarray:
    """Assumed strain interpolation in parent coordinates (engineering shear)."""
    if kind.dim == 2:
        x, e = xi
        return np.array([
            [1, x, e, 0, 0, 0, 0],
            [0, 0, 0, 1, x, e, 0],
            [0, 0, 0, 0, 0, 0, 1],
        ], dtype=float)
    x, e, z = xi
    N = np.zeros((6, 21))
    N[0, 0:5] = [1, x, e, z, e * z]
    N[1, 5:10] = [1, x, e, z, x * z]
    N[2, 10:15] = [1, x, e, z, x * e]
    N[3, 15:17] = [1, x]
    N[4, 17:19] = [1, e]
    N[5, 19:21] = [1, z]
    return N


@dataclass(frozen=True)
class TransformT:
    J0: np.ndarray
    T: np.ndarray
    T_inv: np.ndarray
    det_J0: np.ndarray


def transform_tensor(J0) -> TransformT:
    """Normalized centre-Jacobian transformation (batched over leading axes)."""
    J0 = np.asarray(J0, dtype=float)
    det = np.linalg.det(J0)
    if np.any(det <= 0):
        raise DegenerateElementError("non-positive Jacobian determinant at the element centre")
    T = J0 / np.sqrt(det)[..., None, None]
    return TransformT(J0, T, np.linalg.inv(T), det)


def _voigt_map(M, dim, engineering):
    """Voigt matrix of A -> M A M^T for stress-like or strain-like vectors."""
    pairs = VOIGT_PAIRS[dim]
    nv = len(pairs)
    Q = np.zeros(M.shape[:-2] + (nv, nv))
    for k, (i, j) in enumerate(pairs):
        A = np.zeros((dim, dim))
        if i == j:
            A[i, i] = 1.0
        else:
            v = 0.5 if engineering else 1.0
            A[i, j] = A[j, i] = v
        MA = M @ A @ np.swapaxes(M, -1, -2)
        for r, (a, b) in enumerate(pairs):
            s = 2.0 if (engineering and a != b) else 1.0
            Q[..., r, k] = s * MA[..., a, b]
    return Q


def stress_to_spatial(sig_xi, T):
    """Parent stress vector(s) to spatial: sigma = T sigma_xi T^T."""
    T = np.asarray(T, dtype=float)
    return np.einsum("...ij,...j->...i", _voigt_map(T, T.shape[-1], False), sig_xi)


def strain_to_spatial(eps_xi, T, detJ, detJ0):
    """Parent strain vector(s) to spatial: eps = (J0/J) T^-T eps_xi T^-1."""
    T = np.asarray(T, dtype=float)
    Tit = np.swapaxes(np.linalg.inv(T), -1, -2)
    Q = _voigt_map(Tit, T.shape[-1], True)
    return (np.asarray(detJ0) / np.asarray(detJ))[..., None] * np.einsum("...ij,...j->...i", Q, eps_xi)


def strain_displacement(dNdX, dim):
    """Engineering-strain B matrices (..., nv, nen*dim) from spatial gradients."""
    nen = dNdX.shape[-2]
    pairs = VOIGT_PAIRS[dim]
    B = np.zeros(dNdX.shape[:-2] + (len(pairs), nen * dim))
    for r, (i, j) in enumerate(pairs):
        if i == j:
            B[..., r, i::dim] = dNdX[..., :, i]
        else:
            B[..., r, i::dim] = dNdX[..., :, j]
            B[..., r, j::dim] = dNdX[..., :, i]
    return B


class ElementGeometry:
    """Per-element quadrature data for a mesh.

    On uniform grids every array carries a leading axis of length one and
    broadcasts over elements.
    """

    def __init__(self, mesh: Mesh, C_A: np.ndarray):
        self.kind = kind = kind_for(mesh.dim)
        self.dim = d = mesh.dim
        self.n_elements = mesh.n_elements
        self.rule = rule = gauss_rule(d)
        self.N, dN = shape_functions(kind, rule.points)  # (nq, nen), (nq, nen, d)
        X = mesh.nodes[mesh.elements[:1] if mesh.uniform else mesh.elements]  # (ne, nen, d)

        J = np.einsum("eai,qaj->eqij", X, dN)
        detJ = np.linalg.det(J)
        if np.any(detJ <= 0):
            bad = int(np.argwhere(detJ <= 0)[0, 0])
            raise DegenerateElementError(f"element {bad} has a non-positive Jacobian")
        _, dN0 = shape_functions(kind, np.zeros(d))
        J0 = np.einsum("eai,aj->eij", X, dN0)
        self.transform = tr = transform_tensor(J0)
        self.detJ = detJ
        self.wJ = rule.weights * detJ  # (ne, nq)
        self.dNdX = np.einsum("qaj,eqji->eqai", dN, np.linalg.inv(J))
        self.B = strain_displacement(self.dNdX, d)  # (ne, nq, nv, nen*d)

        Ns = np.stack([stress_basis(kind, p) for p in rule.points])  # (nq, nv, ns)
        Ne = np.stack([strain_basis(kind, p) for p in rule.points])
        Qs = _voigt_map(tr.T, d, False)  # (ne, nv, nv)
        Qe = _voigt_map(np.swapaxes(tr.T_inv, -1, -2), d, True)
        self.S_modes = np.einsum("eij,qjk->eqik", Qs, Ns)
        scale = tr.det_J0[:, None] / detJ
        self.E_modes = scale[..., None, None] * np.einsum("eij,qjk->eqik", Qe, Ne)

        self.G = np.einsum("eq,eqvi,eqvj->eij", self.wJ, self.S_modes, self.E_modes)
        self.H = np.einsum("eq,eqvi,eqvj->eij", self.wJ, self.S_modes, self.B)
        # K(phi) = sum_q f(phi_q) Kq
        self.Kq = np.einsum("eq,eqvi,vw,eqwj->eqij", self.wJ, self.E_modes, C_A, self.E_modes)
        self.mass = np.einsum("eq,qa,qb->eab", self.wJ, self.N, self.N)
        self.lap = np.einsum("eq,eqai,eqbi->eab", self.wJ, self.dNdX, self.dNdX)
        self.wN = np.einsum("eq,qa->ea", self.wJ, self.N)  # consistent nodal weights

    def at(self, name, elems):
        """Slice a per-element array, honouring broadcast geometry."""
        a = getattr(self, name)
        return a if a.shape[0] == 1 else a[elems]


@dataclass
class KernelOutput:
    residual: np.ndarray  # (ne, ndofe)
    tangent: np.ndarray  # (ne, ndofe, ndofe)
    sigma_hat: np.ndarray
    eps_hat: np.ndarray


def local_dofs(dim, nen):
    """Element-local positions of u components and phi in interleaved order."""
    per = dim + 1
    u = (np.arange(nen)[:, None] * per + np.arange(dim)).ravel()
    phi = np.arange(nen) * per + dim
    return u, phi


def condense(geom: ElementGeometry, f, u_e, elems=slice(None)):
    """Solve the local stress/strain saddle problem for given stiffness scale.

    Returns (sigma_hat, eps_hat, Kinv, Sinv).  ``f`` holds the stiffness
    scale at quadrature points (ne, nq).
    """
    Kq, G, H = geom.at("Kq", elems), geom.at("G", elems), geom.at("H", elems)
    K = np.einsum("eq,eqij->eij", f, Kq)
    try:
        Kinv = np.linalg.inv(K)
        KiGt = Kinv @ np.swapaxes(G, -1, -2)
        Sinv = np.linalg.inv(G @ KiGt)
    except np.linalg.LinAlgError as exc:
        raise CondensationError(f"singular local stress/strain block: {exc}") from None
    sig = np.einsum("eij,ej->ei", Sinv, np.einsum("eij,ej->ei", H, u_e))
    eps = np.einsum("eij,ej->ei", KiGt, sig)
    return sig, eps, Kinv, Sinv


def strain_energy_rate(geom, eps_hat, elems=slice(None)):
    """eps_hat^T Kq eps_hat per quadrature point, i.e. the integral weight of
    C_A eps:eps over each quadrature cell."""
    Kq = geom.at("Kq", elems)
    return np.einsum("ei,eqij,ej->eq", eps_hat, Kq, eps_hat)


def element_residual_tangent(
    geom: ElementGeometry,
    u_e,
    phi_e,
    phin_e,
    material,
    phase,
    control,
    dt,
    mode="sand",
    frozen=None,
    body_force=None,
    elems=slice(None),
):
    """Condensed residual and tangent over interleaved (u, phi) element DOFs.

    ``frozen`` (NAND only) carries ``phi_n`` element values and the
    previous condensed strains ``eps_n``; the stiffness then follows
    phi_n and the elastic driving force is evaluated at (phi_n, eps_n).
    The volume-constraint multiplier term is added by the assembler.
    """
    d = geom.dim
    nen = geom.kind.n_nodes
    ne = phi_e.shape[0]
    N = geom.N
    wJ = np.broadcast_to(geom.at("wJ", elems), (ne, N.shape[0]))
    H = geom.at("H", elems)
    G = geom.at("G", elems)
    iu, ip = local_dofs(d, nen)
    ndofe = nen * (d + 1)
    R = np.zeros((ne, ndofe))
    D = np.zeros((ne, ndofe, ndofe))

    phi_q = phi_e @ N.T
    if mode == "sand":
        f, df, d2f = stiffness_scale(phi_q, material.delta, material.p)
    elif mode == "nand":
        phin_q = frozen["phi_n"] @ N.T
        f, df, _ = stiffness_scale(phin_q, material.delta, material.p)
    else:
        raise ValueError(f"unknown mode {mode!r}")

    sig, eps, Kinv, Sinv = condense(geom, f, u_e, elems)
    R[:, iu] = -np.einsum("eij,ei->ej", H, sig)
    HtS = np.swapaxes(H, -1, -2) @ Sinv
    D[:, iu[:, None], iu[None, :]] = -(HtS @ H)

    Kq = geom.at("Kq", elems)
    if mode == "sand":
        kq = np.einsum("eqij,ej->eqi", Kq, eps)
        e_q = np.einsum("eqi,ei->eq", kq, eps)
        R[:, ip] = -0.5 * (df * e_q) @ N
        V = np.einsum("eqi,qa->eia", df[..., None] * kq, N)
        KiV = Kinv @ V
        GKiV = G @ KiV
        Dup = -(HtS @ GKiV)
        D[:, iu[:, None], ip[None, :]] = Dup
        D[:, ip[:, None], iu[None, :]] = np.swapaxes(Dup, 1, 2)
        Dpp = (
            -0.5 * np.einsum("eq,qa,qb->eab", d2f * e_q, N, N)
            + np.swapaxes(V, -1, -2) @ KiV
            - np.swapaxes(GKiV, -1, -2) @ (Sinv @ GKiV)
        )
    else:
        e_q = strain_energy_rate(geom, frozen["eps_n"], elems)
        R[:, ip] = -0.5 * (df * e_q) @ N
        Dpp = np.zeros((ne, nen, nen))

    # phase-field terms
    tau = phase.tau
    mass = np.broadcast_to(geom.at("mass", elems), (ne, nen, nen))
    lap = np.broadcast_to(geom.at("lap", elems), (ne, nen, nen))
    dphi_q = phi_q - phin_e @ N.T
    _, dpsi, d2psi = double_well(phi_q)
    _, db, d2b = bound_penalty(phi_q)
    kg = phase.kappa_phi * phase.gamma
    kig = phase.kappa_phi / phase.gamma
    drive = tau / dt * dphi_q + kig * dpsi + phase.kappa_b * db
    curv = kig * d2psi + phase.kappa_b * d2b
    rp = (wJ * drive) @ N + kg * np.einsum("eab,eb->ea", lap, phi_e)
    Dpp = Dpp + (tau / dt) * mass + kg * lap + np.einsum("eq,qa,qb->eab", wJ * curv, N, N)
    if control.kind == "vm":
        rp = rp + control.kappa_v * np.einsum("eab,eb->ea", mass, phi_e)
        Dpp = Dpp + control.kappa_v * mass
    R[:, ip] += rp
    D[:, ip[:, None], ip[None, :]] += Dpp

    if body_force is not None and np.any(body_force):
        b = np.asarray(body_force, dtype=float)
        u_nodes = u_e.reshape(ne, nen, d)
        bu_q = np.einsum("qa,eai,i->eq", N, u_nodes, b)
        # body-force density scales with the phase field
        src_phi = phi_q if mode == "sand" else frozen["phi_n"] @ N.T
        R[:, iu] += np.einsum("eq,qa,i->eai", wJ * src_phi, N, b).reshape(ne, -1)
        if mode == "sand":
            R[:, ip] += (wJ * bu_q) @ N
            C = np.einsum("eq,qa,qb,i->eaib", wJ, N, N, b).reshape(ne, nen * d, nen)
            D[:, iu[:, None], ip[None, :]] += C
            D[:, ip[:, None], iu[None, :]] += np.swapaxes(C, 1, 2)
        else:
            R[:, ip] += (wJ * np.einsum("qa,eai,i->eq", N, frozen["u_n"].reshape(ne, nen, d), b)) @ N

    if not (np.all(np.isfinite(R)) and np.all(np.isfinite(D))):
        bad = np.flatnonzero(~np.isfinite(R).all(axis=1) | ~np.isfinite(D).all(axis=(1, 2)))
        raise FloatingPointError(f"non-finite element contribution in element {int(np.arange(ne)[bad[0]])}")
    return KernelOutput(R, D, sig, eps)


def element_lagrangian(geom, u_e, phi_e, phin_e, material, phase, control, dt, body_force=None, elems=slice(None)):
    """Condensed element functional whose gradient is the SAND residual
    (without the multiplier and traction terms)."""
    N = geom.N
    ne = phi_e.shape[0]
    wJ = np.broadcast_to(geom.at("wJ", elems), (ne, N.shape[0]))
    phi_q = phi_e @ N.T
    f, _, _ = stiffness_scale(phi_q, material.delta, material.p)
    sig, _, _, _ = condense(geom, f, u_e, elems)
    H = geom.at("H", elems)
    # at the local stationary point the mixed terms reduce to -1/2 u.H^T sigma
    mech = -0.5 * np.einsum("ej,eij,ei->e", u_e, H, sig)
    psi, _, _ = double_well(phi_q)
    b, _, _ = bound_penalty(phi_q)
    lap = np.broadcast_to(geom.at("lap", elems), (ne,) + geom.lap.shape[1:])
    dphi = phi_q - phin_e @ N.T
    dens = phase.tau / (2 * dt) * dphi**2 + phase.kappa_phi / phase.gamma * psi + phase.kappa_b * b
    if control.kind == "vm":
        dens = dens + 0.5 * control.kappa_v * phi_q**2
    out = mech + (wJ * dens).sum(axis=1) + 0.5 * phase.kappa_phi * phase.gamma * np.einsum("ea,eab,eb->e", phi_e, lap, phi_e)
    if body_force is not None and np.any(body_force):
        d = geom.dim
        u_nodes = u_e.reshape(ne, -1, d)
        out = out + (wJ * phi_q * np.einsum("qa,eai,i->eq", N, u_nodes, np.asarray(body_force))).sum(axis=1)
    return out


def spatial_stress(geom: ElementGeometry, sigma_hat, elems=slice(None)):
    """Recovered stress vectors at quadrature points, (ne, nq, nv)."""
    return np.einsum("eqvi,ei->eqv", geom.at("S_modes", elems), sigma_hat)

"""Independent checks shared by the unit and acceptance tests.

Each function returns a scalar error measure; the callers own the
tolerances.
"""

import numpy as np

from phasetopo.assembly import Model, apply_dirichlet, assemble
from phasetopo.element import (
    VOIGT_PAIRS,
    ElementGeometry,
    element_lagrangian,
    element_residual_tangent,
    local_dofs,
    spatial_stress,
    strain_basis,
    stress_basis,
)
from phasetopo.material import MaterialParams, PhaseParams, VolumeControl, elastic_tensor
from phasetopo.mesh import DIRICHLET, NEUMANN, PASSIVE, Box, build_box_grid, plane, select_region
from phasetopo.solver import ConvergenceParams, newton_solve


def random_element(dim, rng, amplitude=0.2):
    """Unit square/cube element with randomly moved corners (det J > 0)."""
    m = build_box_grid((1.0,) * dim, (1,) * dim)
    while True:
        X = m.nodes + amplitude * rng.uniform(-1, 1, m.nodes.shape)
        mesh = m.with_nodes(X)
        try:
            return mesh, ElementGeometry(mesh, np.eye(3 if dim == 2 else 6))
        except ValueError:
            continue


def energy_equivalence_error(dim, rng, n=100):
    """Largest relative gap between the spatial work integral of the mapped
    assumed fields and the parent-domain integral scaled by det J0."""
    worst = 0.0
    for _ in range(n):
        _, g = random_element(dim, rng)
        s = rng.normal(size=g.kind.n_stress)
        e = rng.normal(size=g.kind.n_strain)
        spatial = float(s @ g.G[0] @ e)
        parent = sum(
            w * (stress_basis(g.kind, p) @ s) @ (strain_basis(g.kind, p) @ e)
            for p, w in zip(g.rule.points, g.rule.weights)
        )
        parent *= float(g.transform.det_J0[0])
        worst = max(worst, abs(spatial - parent) / max(abs(spatial), abs(parent)))
    return worst


def element_derivative_errors(dim, rng, h=1e-6):
    """(residual vs gradient of the element functional, tangent vs residual
    differences, tangent asymmetry), all relative to the largest entry."""
    mesh, _ = random_element(dim, rng, 0.1)
    mat = MaterialParams(E=1.0, nu=0.25, p=3.0, delta=0.1)
    ph = PhaseParams(gamma=0.5, kappa_phi=0.3, kappa_b=2.0)
    ctl = VolumeControl.minimization(0.7)
    g = ElementGeometry(mesh, elastic_tensor(mat, dim))
    nen = g.kind.n_nodes
    iu, ip = local_dofs(dim, nen)
    x = np.zeros(nen * (dim + 1))
    x[iu] = 0.3 * rng.normal(size=len(iu))
    x[ip] = rng.uniform(-0.2, 1.2, size=nen)
    phin = rng.uniform(0, 1, nen)[None]
    bf = np.array([0.3, -0.2, 0.1][:dim])

    def residual(y):
        o = element_residual_tangent(g, y[iu][None], y[ip][None], phin, mat, ph, ctl, 0.5, body_force=bf)
        return o.residual[0], o.tangent[0]

    def energy(y):
        return element_lagrangian(g, y[iu][None], y[ip][None], phin, mat, ph, ctl, 0.5, body_force=bf)[0]

    R, D = residual(x)
    eye = np.eye(len(x))
    R_fd = np.array([(energy(x + h * e) - energy(x - h * e)) / (2 * h) for e in eye])
    D_fd = np.array([(residual(x + h * e)[0] - residual(x - h * e)[0]) / (2 * h) for e in eye]).T
    scale_R, scale_D = np.abs(R).max(), np.abs(D).max()
    return (
        np.abs(R - R_fd).max() / scale_R,
        np.abs(D - D_fd).max() / scale_D,
        np.abs(D - D.T).max() / scale_D,
    )


def _voigt_tensor(vec, dim):
    S = np.zeros((dim, dim))
    for k, (i, j) in enumerate(VOIGT_PAIRS[dim]):
        S[i, j] = S[j, i] = vec[k]
    return S


def patch_stress_error(dim, rng, distort="interior", amplitude=0.15):
    """Traction patch test on a 2x2 (2x2x2) block of the unit square/cube.

    Every boundary face carries t = sigma0 n for a random constant stress
    sigma0; rigid motions are removed with a minimal set of point supports
    and phi is held at 1 by a passive region.  ``distort='interior'``
    moves the interior node so the elements stop being parallelograms;
    ``'graded'`` moves the middle grid lines, leaving unequal rectangles.
    Returns max |sigma_h - sigma0| / max |sigma0| over all quadrature points.
    """
    m = build_box_grid((1.0,) * dim, (2,) * dim)
    X = m.nodes.copy()
    shift = amplitude * rng.uniform(-1, 1, dim)
    if distort == "interior":
        centre = np.flatnonzero(np.all(np.isclose(X, 0.5), axis=1))
        X[centre] += shift
    elif distort == "graded":
        mid = np.isclose(X, 0.5)
        X[mid] += np.broadcast_to(shift, X.shape)[mid]
    else:
        raise ValueError(distort)
    m = m.with_nodes(X)

    sigma0 = rng.normal(size=len(VOIGT_PAIRS[dim])) * 1e6
    S0 = _voigt_tensor(sigma0, dim)
    regions = [select_region(m, Box((None,) * dim, (None,) * dim), PASSIVE, 1.0, "solid")]
    for axis in range(dim):
        for side in (0, 1):
            n = np.zeros(dim)
            n[axis] = 1.0 if side else -1.0
            regions.append(select_region(m, plane(dim, axis, float(side)), NEUMANN, S0 @ n, f"t{axis}{side}"))
    origin = np.flatnonzero(np.all(np.isclose(m.nodes, 0.0), axis=1))[0]
    regions.append(select_region(m, _point(m.nodes[origin]), DIRICHLET, 0.0, "pin"))
    for k in range(1, dim):
        # corner along axis k-1 fixes the remaining rotations
        tip = m.nodes[np.argmax(m.nodes[:, k - 1] - m.nodes[:, k:].sum(axis=1) * 10)]
        regions.append(select_region(m, _point(tip), DIRICHLET, 0.0, f"roll{k}", components=tuple(range(k, dim))))
    model = Model(m, regions, MaterialParams(E=10e9, nu=0.25), PhaseParams(), VolumeControl.minimization(0.0))
    res = newton_solve(model, model.initial_state(1.0), 1.0, ConvergenceParams(c_res=1e-30, max_iter=3), fields=("u",))
    sig = spatial_stress(model.geom, res.state.sigma_hat)
    return float(np.abs(sig - sigma0).max() / np.abs(sigma0).max())


def _point(x):
    return Box(tuple(x), tuple(x))


def global_tangent_error(model, rng, dt=0.3, h_rel=1e-6):
    """Column-wise relative gap between the assembled (bordered) tangent and
    central differences of the reduced residual, at a random state."""
    st = model.initial_state(0.5)
    nn = model.mesh.n_nodes
    # displacement scale: nodal load over stiffness
    ref_u = np.abs(model.traction).max() / model.material.E
    st.phi = rng.uniform(0.2, 0.9, nn)
    st.phi_n = rng.uniform(0.2, 0.9, nn)
    st.u = ref_u * rng.normal(size=(nn, model.dim))
    st.lam = float(rng.normal()) * 1e3
    x0 = model.pack(st)
    x0[model.dofs.fixed] = model.dofs.prescribed[model.dofs.fixed]
    model.unpack(x0, st)

    def reduced(x, lam):
        s = st.copy()
        model.unpack(x, s)
        s.lam = lam
        red = apply_dirichlet(assemble(model, s, dt), model.dofs)
        r = red.rhs
        return np.append(r, red.r_lambda) if red.border is not None else r, red

    r0, red = reduced(x0, st.lam)
    A = red.matrix.toarray()
    if red.border is not None:
        w = red.border
        A = np.block([[A, w[:, None]], [w[None, :], np.zeros((1, 1))]])
    free = red.free
    worst = 0.0
    for k in range(A.shape[1]):
        if k < len(free):
            step = h_rel * max(abs(x0[free[k]]), ref_u if (free[k] % (model.dim + 1)) < model.dim else 1.0)
            xp, xm = x0.copy(), x0.copy()
            xp[free[k]] += step
            xm[free[k]] -= step
            col = (reduced(xp, st.lam)[0] - reduced(xm, st.lam)[0]) / (2 * step)
        else:
            step = h_rel * max(abs(st.lam), 1.0)
            col = (reduced(x0, st.lam + step)[0] - reduced(x0, st.lam - step)[0]) / (2 * step)
        worst = max(worst, np.linalg.norm(A[:, k] - col) / np.linalg.norm(A[:, k]))
    return worst

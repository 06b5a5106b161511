"""Stiffness interpolation laws, isotropic elasticity and phase-field potentials.

All scalar laws accept numpy arrays and return ``(value, first, second)``
derivative triples where noted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MaterialParams:
    E: float = 10e9
    nu: float = 0.25
    delta: float = 1e-3
    p: float = 10.0

    def __post_init__(self):
        if not self.E > 0:
            raise ValueError(f"Young modulus must be positive, got {self.E}")
        if not -1.0 < self.nu < 0.5:
            raise ValueError(f"Poisson ratio must lie in (-1, 0.5), got {self.nu}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"void stiffness ratio must lie in (0, 1), got {self.delta}")
        if not self.p > 0:
            raise ValueError(f"interpolation exponent must be positive, got {self.p}")


@dataclass(frozen=True)
class PhaseParams:
    """Phase-field regularization: thickness ``gamma`` (m), perimeter
    stiffness ``kappa_phi`` (N/m), bounding stiffness ``kappa_b`` (Pa) and
    characteristic time ``T_phi`` (s)."""

    gamma: float = 0.01
    kappa_phi: float = 1e6
    kappa_b: float = 1e12
    T_phi: float = 1.0

    def __post_init__(self):
        for name in ("gamma", "kappa_phi", "kappa_b", "T_phi"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")

    @property
    def tau(self) -> float:
        """Discrete viscosity kappa_phi * T_phi / gamma (Pa s)."""
        return self.kappa_phi * self.T_phi / self.gamma


@dataclass(frozen=True)
class VolumeControl:
    """Either a hard volume constraint (``kind='vc'``, target ``vbar``) or a
    volume penalty (``kind='vm'``, cost ``kappa_v`` in Pa)."""

    kind: str
    vbar: float | None = None
    kappa_v: float | None = None

    def __post_init__(self):
        if self.kind == "vc":
            if self.vbar is None or self.kappa_v is not None:
                raise ValueError("volume constraint needs vbar only")
            if not 0.0 <= self.vbar <= 1.0:
                raise ValueError(f"vbar must lie in [0, 1], got {self.vbar}")
        elif self.kind == "vm":
            if self.kappa_v is None or self.vbar is not None:
                raise ValueError("volume minimization needs kappa_v only")
            if self.kappa_v < 0:
                raise ValueError(f"kappa_v must be non-negative, got {self.kappa_v}")
        else:
            raise ValueError(f"unknown volume control kind {self.kind!r}")

    @classmethod
    def constraint(cls, vbar: float) -> "VolumeControl":
        return cls("vc", vbar=vbar)

    @classmethod
    def minimization(cls, kappa_v: float) -> "VolumeControl":
        return cls("vm", kappa_v=kappa_v)


def _power(phi, p):
    """Odd extension sign(phi)|phi|^p and its first two derivatives.

    Keeps the stiffness law real and monotone for phi < 0 whatever p is.
    """
    a = np.abs(phi)
    s = np.sign(phi)
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = p * a ** (p - 1.0)
        d2 = s * p * (p - 1.0) * a ** (p - 2.0)
    d2 = np.where(a == 0.0, 0.0, d2)
    return s * a**p, d1, d2


def stiffness_scale(phi, delta=1e-3, p=10.0):
    """Scalar stiffness law f = delta + (1 - delta) exp(p phi^p) / exp(p).

    Returns ``(f, f', f'')``.
    """
    phi = np.asarray(phi, dtype=float)
    pw, d1, d2 = _power(phi, p)
    # far above 1 the law overflows to inf; callers treat that as a failed iterate
    with np.errstate(over="ignore", invalid="ignore"):
        g = np.exp(p * (pw - 1.0))
        f = delta + (1.0 - delta) * g
        df = (1.0 - delta) * g * p * d1
        d2f = (1.0 - delta) * g * (p * d2 + (p * d1) ** 2)
    return f, df, d2f


def stiffness_scale_variant1(phi, delta=1e-3, p=10.0):
    """Power-law blend phi^p + delta (1 - phi)^p."""
    phi = np.asarray(phi, dtype=float)
    return phi**p + delta * (1.0 - phi) ** p


def stiffness_scale_variant2(phi, delta=1e-3):
    """Harmonic (Reuss-type) blend [phi + (1 - phi)/delta]^-1.

    Diverges where the bracket vanishes; the raw value is returned.
    """
    phi = np.asarray(phi, dtype=float)
    with np.errstate(divide="ignore"):
        return 1.0 / (phi + (1.0 - phi) / delta)


def elastic_tensor(params: MaterialParams, dim: int) -> np.ndarray:
    """Isotropic stiffness in Voigt form acting on engineering strains.

    2D is plane strain with ordering (11, 22, 12); 3D uses
    (11, 22, 33, 23, 13, 12).
    """
    E, nu = params.E, params.nu
    if nu >= 0.5:
        raise ValueError("incompressible material gives a singular elastic tensor")
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = E / (2.0 * (1.0 + nu))
    if dim == 2:
        return np.array([
            [lam + 2 * mu, lam, 0.0],
            [lam, lam + 2 * mu, 0.0],
            [0.0, 0.0, mu],
        ])
    if dim == 3:
        C = np.zeros((6, 6))
        C[:3, :3] = lam
        C[np.arange(3), np.arange(3)] += 2 * mu
        C[np.arange(3, 6), np.arange(3, 6)] = mu
        return C
    raise ValueError(f"dimension must be 2 or 3, got {dim}")


def double_well(phi):
    """psi0 = [phi (phi - 1)]^2 with first and second derivatives."""
    phi = np.asarray(phi, dtype=float)
    q = phi * (phi - 1.0)
    return q * q, 2.0 * q * (2.0 * phi - 1.0), 12.0 * phi * phi - 12.0 * phi + 2.0


def bound_penalty(phi):
    """Quadratic penalty outside [0, 1]; C1 with a piecewise-constant curvature."""
    phi = np.asarray(phi, dtype=float)
    over = np.maximum(phi - 1.0, 0.0)
    under = np.minimum(phi, 0.0)
    b = 0.5 * (over**2 + under**2)
    db = over + under
    d2b = ((phi > 1.0) | (phi < 0.0)).astype(float)
    return b, db, d2b

"""Rules of thumb turning design intent into phase-field parameters."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class GuidelineInputs:
    h_e: float
    ebar: float
    T_phi: float = 1.0
    v_target: float | None = None
    vbar: float | None = None

    def __post_init__(self):
        if self.ebar < 0:
            raise ValueError("strain-energy-density rate must be non-negative")
        for v in (self.v_target, self.vbar):
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"volume fraction {v} outside [0, 1]")


def estimate_ebar(model) -> float:
    """Volume-averaged 1/2 C'(1) eps:eps of the full-material elastic solution (Pa)."""
    from phasetopo.solver import SetupError, reference_solution

    try:
        return reference_solution(model).ebar
    except SetupError as exc:
        if "no applied load" in str(exc):
            return 0.0
        raise


def suggest_gamma(h_e: float) -> float:
    if not h_e > 0:
        raise ValueError("element size must be positive")
    return float(h_e)


def suggest_kappa_phi(formulation: str, gamma: float, ebar: float | None = None, kappa_v: float | None = None) -> float:
    """kappa_phi = gamma * ebar (volume constraint) or gamma * kappa_v (minimization)."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    if formulation == "vc":
        scale = ebar
    elif formulation == "vm":
        scale = kappa_v
    else:
        raise ValueError(f"unknown formulation {formulation!r}")
    if scale is None or not scale > 0:
        raise ValueError(f"{formulation} rule needs a positive {'ebar' if formulation == 'vc' else 'kappa_v'}")
    return gamma * scale


def suggest_kappa_b(kappa_phi: float, factor: float = 1e3, length: float = 1.0) -> float:
    """Bounding stiffness factor * kappa_phi / length (Pa)."""
    if not kappa_phi > 0:
        raise ValueError("kappa_phi must be positive")
    return factor * kappa_phi / length


def tau_phi(kappa_phi: float, T_phi: float, gamma: float) -> float:
    if not (kappa_phi > 0 and T_phi > 0 and gamma > 0):
        raise ValueError("kappa_phi, T_phi and gamma must be positive")
    return kappa_phi * T_phi / gamma


def target_volume_fraction(kappa_v: float, ebar: float) -> float:
    """Expected final volume fraction ebar / (kappa_v + ebar)."""
    if kappa_v < 0 or ebar < 0:
        raise ValueError("kappa_v and ebar must be non-negative")
    if kappa_v == 0 and ebar == 0:
        raise ValueError("target volume fraction undefined for kappa_v = ebar = 0")
    return ebar / (kappa_v + ebar)


def kappa_v_from_target(v_target: float, ebar: float) -> float:
    """Volume penalty reaching ``v_target`` under the target rule."""
    if not 0.0 < v_target <= 1.0:
        raise ValueError(f"target fraction must lie in (0, 1], got {v_target}")
    if not ebar > 0:
        raise ValueError("ebar must be positive")
    return ebar * (1.0 - v_target) / v_target


def suggest(formulation: str, h_e: float, ebar: float, kappa_v: float | None = None,
            v_target: float | None = None, T_phi: float = 1.0, gamma: float | None = None) -> dict:
    """Full parameter suggestion as a flat dict (SI units)."""
    gamma = suggest_gamma(h_e) if gamma is None else gamma
    out = {"h_e": h_e, "ebar": ebar, "gamma": gamma, "T_phi": T_phi}
    if formulation == "vm":
        if kappa_v is None:
            if v_target is None:
                raise ValueError("volume minimization needs kappa_v or a target fraction")
            kappa_v = kappa_v_from_target(v_target, ebar)
        out["kappa_v"] = kappa_v
        out["v_target"] = target_volume_fraction(kappa_v, ebar)
        kphi = suggest_kappa_phi("vm", gamma, kappa_v=kappa_v)
    else:
        kphi = suggest_kappa_phi("vc", gamma, ebar=ebar)
    out["kappa_phi"] = kphi
    out["kappa_b"] = suggest_kappa_b(kphi)
    out["tau"] = tau_phi(kphi, T_phi, gamma)
    return out

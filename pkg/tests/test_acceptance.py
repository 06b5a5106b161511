"""Acceptance criteria 1-12.

Each test records one ``CRITERION n: PASS|FAIL`` line, printed as it runs
(visible with ``-s``) and again in the pytest terminal summary.  The
60x30 cantilever runs are shared between criteria through a cache, so
criteria 5, 8 and 9 reuse the same volume-constrained solve.

Run directly with ``python tests/test_acceptance.py`` for the lines alone.
"""

import csv
import functools
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from conftest import small_block3d, small_cantilever
from oracles import energy_equivalence_error, global_tangent_error, patch_stress_error
from phasetopo import cli
from phasetopo import params as guide
from phasetopo.config import preset
from phasetopo.material import VolumeControl, stiffness_scale
from phasetopo.solver import CONVERGED, NAND, SAND

RESULTS = {}
WORK = Path(tempfile.mkdtemp(prefix="phasetopo-acceptance-"))


def record(n, ok, detail):
    line = f"CRITERION {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line, flush=True)
    return ok


# ---------------------------------------------------------------- shared runs

def cantilever60(control="vc", g=500e6, mode=SAND, c_ac=None, t_final=None):
    spec = preset("cantilever2d").scaled(0.5)
    spec = cli.set_load(spec, g)
    if control == "vm":
        spec = replace(spec, control=VolumeControl.minimization(100e6))
    changes = {"mode": mode}
    if c_ac is not None:
        changes["c_ac"] = c_ac
    if t_final is not None:
        changes["t_final"] = t_final
    return replace(spec, **changes)


@functools.lru_cache(maxsize=None)
def solve(control="vc", g=500e6, mode=SAND, c_ac=None, t_final=None):
    """(status, summary, report, nodal phi) of a 60x30 cantilever run."""
    spec = cantilever60(control, g, mode, c_ac, t_final)
    tag = f"{control}_{g / 1e6:g}_{mode}_{c_ac}_{t_final}"
    model = spec.build_model()
    status, summary, report = cli.execute(spec, WORK / tag, figures=False)
    import meshio

    phi = np.asarray(meshio.read(WORK / tag / "solution.vtk").point_data["phi"]).ravel()
    assert phi.shape == (model.mesh.n_nodes,)
    return status, summary, report, phi


def _describe(status, summary, report):
    return f"{status}, v_sol={summary.v_sol:.4f}, steps={report.accepted}, newton={report.total_newton}"


# ------------------------------------------------------------------- criteria

def test_c01_stiffness_law_at_zero():
    f0, _, _ = stiffness_scale(0.0, 1e-3, 10.0)
    err = abs(f0 - 1e-3)
    assert record(1, err < 1e-4, f"|f(0) - delta| = {err:.3e}")


def test_c02_patch_test_distorted():
    rng = np.random.default_rng(2)
    e2 = patch_stress_error(2, rng, "interior")
    e3 = patch_stress_error(3, rng, "interior")
    assert record(2, max(e2, e3) < 1e-10, f"stress error Q1 {e2:.2e}, H1 {e3:.2e}")


def test_c03_energy_equivalence():
    rng = np.random.default_rng(3)
    e2 = energy_equivalence_error(2, rng, 100)
    e3 = energy_equivalence_error(3, rng, 100)
    assert record(3, max(e2, e3) < 1e-12, f"relative gap Q1 {e2:.2e}, H1 {e3:.2e}")


def test_c04_global_tangent():
    rng = np.random.default_rng(4)
    errs = {}
    for n in ((2, 1), (2, 2)):
        for name, ctl in (("vc", VolumeControl.constraint(0.5)), ("vm", VolumeControl.minimization(1e6))):
            errs[f"{n[0]}x{n[1]} {name}"] = global_tangent_error(small_cantilever(*n, control=ctl), rng)
    errs["3d vc"] = global_tangent_error(small_block3d(control=VolumeControl.constraint(0.5)), rng)
    worst = max(errs.values())
    assert record(4, worst < 1e-6, "max column error " + ", ".join(f"{k} {v:.1e}" for k, v in errs.items()))


@pytest.mark.slow
def test_c05_volume_constraint_exact():
    status, summary, report, _ = solve("vc")
    ok = status == CONVERGED and abs(summary.v_sol - 0.4) < 1e-3
    assert record(5, ok, _describe(status, summary, report))


@pytest.mark.slow
def test_c06_volume_minimization_target():
    status, summary, report, _ = solve("vm")
    ebar = guide.estimate_ebar(cantilever60("vm").build_model())
    v_tar = guide.target_volume_fraction(100e6, ebar)
    ok = status == CONVERGED and 0.35 <= summary.v_sol <= 0.50
    assert record(6, ok, _describe(status, summary, report) + f", rule target {v_tar:.3f} (ebar {ebar / 1e6:.0f} MPa)")


@pytest.mark.slow
def test_c07_sand_versus_nand():
    s_status, s_sum, s_rep, _ = solve("vc", c_ac=1e-4)
    budget = s_rep.steps[-1].t if s_rep.steps else None
    n_status, n_sum, n_rep, _ = solve("vc", mode=NAND, c_ac=1e-4, t_final=budget)
    ok = s_status == CONVERGED and n_status != CONVERGED and s_rep.total_newton < n_rep.total_newton
    detail = f"SAND {_describe(s_status, s_sum, s_rep)}; NAND {_describe(n_status, n_sum, n_rep)}; budget t={budget}"
    assert record(7, ok, detail)


@pytest.mark.slow
def test_c08_load_dependence():
    vm = {g: solve("vm", g=g) for g in (250e6, 750e6)}
    vc = {g: solve("vc", g=g) for g in (250e6, 500e6, 750e6)}
    all_conv = all(r[0] == CONVERGED for r in list(vm.values()) + list(vc.values()))
    v_vm = {g: r[1].v_sol for g, r in vm.items()}
    v_vc = [r[1].v_sol for r in vc.values()]
    ok = all_conv and v_vm[750e6] > v_vm[250e6] and max(v_vc) - min(v_vc) < 1e-3
    detail = (f"VM v(250)={v_vm[250e6]:.4f} v(750)={v_vm[750e6]:.4f}; VC spread {max(v_vc) - min(v_vc):.2e}; "
              f"statuses " + ", ".join(r[0] for r in list(vm.values()) + list(vc.values())))
    assert record(8, ok, detail)


@pytest.mark.slow
def test_c09_bounds_without_projection():
    status, _, _, phi = solve("vc")
    ok = status == CONVERGED and phi.min() > -0.01 and phi.max() < 1.01
    assert record(9, ok, f"{status}, nodal phi in [{phi.min():.4f}, {phi.max():.4f}]")


def test_c10_ebar_full_resolution():
    spec = cli.set_load(preset("cantilever2d"), 500e6)
    assert spec.divisions == (120, 60)
    ebar = guide.estimate_ebar(spec.build_model())
    rel = abs(ebar - 80e6) / 80e6
    assert record(10, rel < 0.10, f"ebar = {ebar / 1e6:.1f} MPa against 80 MPa (relative gap {rel:.2f})")


@pytest.mark.slow
def test_c11_three_d_smoke():
    spec = replace(preset("cantilever3d").scaled(0.25), wall_limit=3600.0)  # stated runtime bound
    assert spec.divisions == (20, 10, 10)
    model = spec.build_model()
    ebar = guide.estimate_ebar(model)
    kappa_v = spec.control.kappa_v
    v_tar = guide.target_volume_fraction(kappa_v, ebar)
    status, summary, report = cli.execute(spec, WORK / "cantilever3d", auto_params=True, figures=False)
    exit_code = cli.EXIT_OK if status == CONVERGED else cli.EXIT_FAILED
    ok = exit_code == 0 and abs(summary.v_sol - v_tar) <= 0.15
    assert record(11, ok, f"exit {exit_code}, {_describe(status, summary, report)}, target {v_tar:.3f}")


def test_c12_stiffness_law_csv():
    out = WORK / "laws.csv"
    assert cli.main(["laws", "--out", str(out)]) == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    phi = np.array([float(r["phi"]) for r in rows])
    fC = np.array([float(r["f_C"]) for r in rows])
    fC1 = np.array([float(r["f_C1"]) for r in rows])
    span = (phi[0], phi[-1])
    monotone = bool(np.all(np.diff(fC) >= 0) and fC[-1] > fC[0])
    non_monotone = bool(np.any(np.diff(fC1) < 0) and np.any(np.diff(fC1) > 0))
    ok = np.allclose(span, (-0.25, 1.25)) and monotone and non_monotone
    assert record(12, ok, f"phi in [{span[0]}, {span[1]}], f_C monotone {monotone}, f_C1 non-monotone {non_monotone}")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-s"]))

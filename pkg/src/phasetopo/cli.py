"""Command-line entry point: run, sweep, suggest, preset, laws."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from phasetopo import params as guide
from phasetopo.config import PRESETS, ConfigError, dump_config, parse_config, preset
from phasetopo.material import (
    MaterialParams,
    PhaseParams,
    VolumeControl,
    stiffness_scale,
    stiffness_scale_variant1,
    stiffness_scale_variant2,
)
from phasetopo.mesh import NEUMANN, MeshError
from phasetopo.postproc import SUMMARY_COLUMNS, export_fields, write_summary_csv, write_vtk
from phasetopo.solver import CONVERGED, SetupError, reference_solution, run

log = logging.getLogger("phasetopo")

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2
SWEEP_PARAMS = ("vbar", "kappa_v", "g", "c_ac")
LAW_C_A = 10.0


def _load_spec(args):
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read {args.config}: {exc.strerror}", "config") from None
        spec = parse_config(text)
    elif args.preset:
        spec = preset(args.preset)
    else:
        raise ConfigError("give --preset or --config", "")
    if args.scale != 1.0:
        spec = spec.scaled(args.scale)
    changes = {}
    if getattr(args, "mode", None):
        changes["mode"] = args.mode
    if getattr(args, "c_ac", None) is not None:
        changes["c_ac"] = args.c_ac
    if getattr(args, "t_final", None) is not None:
        changes["t_final"] = args.t_final
    if getattr(args, "wall_limit", None) is not None:
        changes["wall_limit"] = args.wall_limit
    if getattr(args, "snapshot_every", None) is not None:
        changes["snapshot_every"] = args.snapshot_every
    if getattr(args, "out_dir", None):
        changes["out_dir"] = args.out_dir
    return replace(spec, **changes)


def apply_auto_params(spec, model=None):
    """Replace gamma, kappa_phi and kappa_b with the guideline values."""
    model = model or spec.build_model()
    ebar = guide.estimate_ebar(model)
    kind = spec.control.kind
    s = guide.suggest(kind, model.mesh.h_e, ebar, kappa_v=spec.control.kappa_v if kind == "vm" else None,
                      T_phi=spec.phase.T_phi)
    phase = PhaseParams(gamma=s["gamma"], kappa_phi=s["kappa_phi"], kappa_b=s["kappa_b"], T_phi=spec.phase.T_phi)
    return replace(spec, phase=phase), s


def set_load(spec, g):
    """Rescale every traction region to magnitude ``g`` (Pa)."""
    regions = []
    for r in spec.regions:
        if r.kind == NEUMANN:
            t = np.asarray(r.value, float)
            n = np.linalg.norm(t)
            if n == 0:
                raise ConfigError("cannot rescale a zero traction", "g")
            r = replace(r, value=tuple(float(v) for v in t * (g / n)))
        regions.append(r)
    return replace(spec, regions=regions)


def execute(spec, out_dir, auto_params=False, quiet=True, figures=True):
    """Run one problem and write its outputs. Returns (status, summary, report)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = spec.build_model()
    if auto_params:
        spec, sugg = apply_auto_params(spec, model)
        log.info("auto-params: %s", ", ".join(f"{k}={v:.4g}" for k, v in sugg.items()))
        model = spec.build_model()
    (out / "problem.yaml").write_text(dump_config(spec))

    snaps = spec.snapshot_every

    def snapshot(i, state, rec):
        if snaps and i % snaps == 0:
            write_vtk(model, state, out / f"snapshot_{i:05d}.vtk")

    state, report, ref = run(model, spec.initial_phi, spec.convergence(), spec.stepper(), spec.mode,
                             callback=snapshot if snaps else None)
    report.write_csv(out / "convergence.csv")
    _, summary = export_fields(model, state, out, "solution", report.total_newton)
    if figures:
        from phasetopo import plotting

        plotting.plot_convergence(report, out / "convergence.png")
        plotting.plot_phi(model.mesh, state.phi, out / "phi.png", f"{spec.name}: v = {summary.v_sol:.3f}")
    if not quiet:
        print(f"{spec.name}: {report.status} after {report.accepted} steps "
              f"({report.rejected} rejected, {report.total_newton} Newton iterations, {report.wall_time:.1f} s)")
        for k, v in zip(SUMMARY_COLUMNS, summary.row()):
            print(f"  {k:>14s} = {v:.6g}")
        print(f"  outputs in {out}")
    return report.status, summary, report


def cmd_run(args):
    spec = _load_spec(args)
    out = Path(spec.out_dir)
    status, _, _ = execute(spec, out, args.auto_params, quiet=False)
    return EXIT_OK if status == CONVERGED else EXIT_FAILED


def _sweep_one(job):
    spec, param, value, out, auto = job
    try:
        if param == "vbar":
            spec = replace(spec, control=VolumeControl.constraint(value))
        elif param == "kappa_v":
            # perimeter stiffness co-varies with the volume penalty
            spec = replace(spec, control=VolumeControl.minimization(value),
                           phase=replace(spec.phase, kappa_phi=value * spec.phase.gamma))
        elif param == "g":
            spec = set_load(spec, value)
        else:
            spec = replace(spec, c_ac=value)
        status, summary, _ = execute(spec, out, auto, quiet=True)
        row = dict(zip(SUMMARY_COLUMNS, summary.row()))
        row["status"] = status
    except Exception as exc:  # a failed point is recorded, the sweep goes on
        row = {c: float("nan") for c in SUMMARY_COLUMNS}
        row["status"] = f"error: {exc}"
    row["param"], row["value"] = param, value
    return row


def workers() -> int:
    try:
        return max(1, int(os.environ.get("TOPO_THREADS", os.cpu_count() or 1)))
    except ValueError:
        return 1


def cmd_sweep(args):
    spec = _load_spec(args)
    if args.param not in SWEEP_PARAMS:
        raise ConfigError(f"sweep parameter must be one of {', '.join(SWEEP_PARAMS)}", "param")
    if args.param == "vbar" and spec.control.kind != "vc":
        raise ConfigError("vbar sweeps need a volume-constraint problem", "param")
    if args.param == "kappa_v" and spec.control.kind != "vm":
        raise ConfigError("kappa_v sweeps need a volume-minimization problem", "param")
    unit = {"kappa_v": 1e6, "g": 1e6}.get(args.param, 1.0)
    values = [float(v) * unit for v in args.values.split(",")]
    root = Path(spec.out_dir)
    jobs = [(spec, args.param, v, root / f"{args.param}_{i:02d}", args.auto_params) for i, v in enumerate(values)]
    n = min(workers(), len(jobs))
    if n > 1:
        with ProcessPoolExecutor(max_workers=n) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(j) for j in jobs]
    root.mkdir(parents=True, exist_ok=True)
    cols = ("param", "value", "status") + SUMMARY_COLUMNS
    with open(root / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in cols})
    from phasetopo import plotting

    plotting.plot_sweep(args.param, [v / unit for v in values], rows, root / "sweep.png")
    for r in rows:
        print(f"{args.param}={r['value'] / unit:<10g} {r['status']:<12s} v_sol={r['v_sol']:.4f} newton={r['newton_total']}")
    return EXIT_OK if all(r["status"] == CONVERGED for r in rows) else EXIT_FAILED


def cmd_suggest(args):
    spec = _load_spec(args)
    model = spec.build_model()
    ebar = guide.estimate_ebar(model)
    kind = spec.control.kind
    kv = spec.control.kappa_v if kind == "vm" else None
    if args.v_target is not None:
        kind, kv = "vm", None
    s = guide.suggest(kind, model.mesh.h_e, ebar, kappa_v=kv, v_target=args.v_target, T_phi=spec.phase.T_phi)
    units = {"h_e": "m", "ebar": "Pa", "gamma": "m", "T_phi": "s", "kappa_v": "Pa", "v_target": "",
             "kappa_phi": "N/m", "kappa_b": "Pa", "tau": "Pa s"}
    print(f"parameter suggestions for {spec.name} ({kind}, mesh {'x'.join(map(str, spec.divisions))})")
    for k, v in s.items():
        print(f"  {k:<10s} {v:>14.6g} {units[k]}")
    return EXIT_OK


def cmd_preset(args):
    if args.action == "list":
        for name in PRESETS:
            p = preset(name)
            print(f"{name:<14s} {p.dim}D {'x'.join(map(str, p.divisions))} {p.control.kind}")
        return EXIT_OK
    if not args.name:
        raise ConfigError("preset dump needs a name", "preset")
    sys.stdout.write(dump_config(preset(args.name)))
    return EXIT_OK


def stiffness_laws(n=301, lo=-0.25, hi=1.25, C_A=LAW_C_A, delta=1e-3, p=10.0):
    """Sampled scalar stiffness laws (exponential, power blend, inverse blend) times C_A."""
    phi = np.linspace(lo, hi, n)
    m = MaterialParams(delta=delta, p=p)
    f, _, _ = stiffness_scale(phi, m.delta, m.p)
    with np.errstate(divide="ignore"):
        f2 = stiffness_scale_variant2(phi, m.delta)
    return phi, {"f_C": C_A * f, "f_C1": C_A * stiffness_scale_variant1(phi, m.delta, m.p), "f_C2": C_A * f2}


def cmd_laws(args):
    phi, curves = stiffness_laws(args.samples)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("phi",) + tuple(curves))
        for i, x in enumerate(phi):
            w.writerow([repr(float(x))] + [repr(float(c[i])) for c in curves.values()])
    from phasetopo import plotting

    plotting.plot_laws(phi, curves, out.with_suffix(".png"))
    print(f"wrote {out} and {out.with_suffix('.png')}")
    return EXIT_OK


def _common(p, mesh_only=False):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--preset", choices=sorted(PRESETS))
    src.add_argument("--config", help="YAML problem file")
    p.add_argument("--scale", type=float, default=1.0, help="multiply mesh divisions")
    if mesh_only:
        return
    p.add_argument("--mode", choices=("sand", "nand"))
    p.add_argument("--out-dir")
    p.add_argument("--snapshot-every", type=int, help="write a VTK snapshot every N accepted steps")
    p.add_argument("--c-ac", type=float, help="Allen-Cahn convergence threshold")
    p.add_argument("--t-final", type=float, help="pseudo-time budget (s)")
    p.add_argument("--wall-limit", type=float, help="computing-time budget (s)")
    p.add_argument("--auto-params", action="store_true", help="apply the suggested gamma, kappa_phi, kappa_b")


def build_parser():
    ap = argparse.ArgumentParser(prog="phasetopo", description="Phase-field topology optimization")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="solve one problem")
    _common(p)
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("sweep", help="repeat a run over parameter values")
    _common(p)
    p.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    p.add_argument("--values", required=True, help="comma separated; kappa_v and g in MPa")
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("suggest", help="print guideline parameters")
    _common(p, mesh_only=True)
    p.add_argument("--v-target", type=float, help="target volume fraction (volume minimization)")
    p.set_defaults(func=cmd_suggest)
    p = sub.add_parser("preset", help="list or dump built-in problems")
    p.add_argument("action", choices=("list", "dump"))
    p.add_argument("name", nargs="?")
    p.set_defaults(func=cmd_preset)
    p = sub.add_parser("laws", help="sample the scalar stiffness laws to CSV")
    p.add_argument("--out", default="stiffness_laws.csv")
    p.add_argument("--samples", type=int, default=301)
    p.set_defaults(func=cmd_laws)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, MeshError, SetupError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

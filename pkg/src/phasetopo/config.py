"""Problem description files: YAML schema with unit suffixes, presets, dump.

Quantities may be plain numbers (SI) or strings such as ``"500 MPa"``.
"""

from __future__ import annotations

import copy
import re
from dataclasses import dataclass, field, replace

import yaml

from phasetopo.assembly import NAND, SAND, Model
from phasetopo.material import MaterialParams, PhaseParams, VolumeControl
from phasetopo.mesh import DIRICHLET, NEUMANN, PASSIVE, REGION_KINDS, Box, build_box_grid, select_region
from phasetopo.solver import ConvergenceParams, TimeStepper


class ConfigError(ValueError):
    """Schema violation, reported with the key path and source line."""

    def __init__(self, message, path="", line=None):
        where = path or "<root>"
        if line is not None:
            where += f" (line {line})"
        super().__init__(f"{where}: {message}")
        self.path = path
        self.line = line


# unit -> (dimension, factor to SI)
UNITS = {
    "Pa": ("stress", 1.0), "kPa": ("stress", 1e3), "MPa": ("stress", 1e6), "GPa": ("stress", 1e9),
    "N": ("force", 1.0), "kN": ("force", 1e3), "MN": ("force", 1e6),
    "N/m": ("line", 1.0), "kN/m": ("line", 1e3), "MN/m": ("line", 1e6), "GN/m": ("line", 1e9),
    "N/m^3": ("body", 1.0), "kN/m^3": ("body", 1e3), "MN/m^3": ("body", 1e6),
    "m": ("length", 1.0), "cm": ("length", 1e-2), "mm": ("length", 1e-3),
    "s": ("time", 1.0), "ms": ("time", 1e-3),
    "Pa s": ("viscosity", 1.0), "MPa s": ("viscosity", 1e6),
}
# units tried, largest first, when writing quantities back out
DUMP_UNITS = {
    "stress": ("GPa", "MPa", "kPa", "Pa"), "line": ("GN/m", "MN/m", "kN/m", "N/m"), "length": ("m",),
    "time": ("s",), "force": ("MN", "kN", "N"), "body": ("MN/m^3", "kN/m^3", "N/m^3"),
}

_QUANTITY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(.*?)\s*$")


def parse_quantity(value, dimension=None, path="", line=None) -> float:
    """Number or '<number> <unit>' string -> SI float."""
    if isinstance(value, bool):
        raise ConfigError("expected a number", path, line)
    if isinstance(value, (int, float)):
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"expected a number or quantity string, got {type(value).__name__}", path, line)
    m = _QUANTITY.match(value)
    if not m:
        raise ConfigError(f"cannot parse quantity {value!r}", path, line)
    num, unit = float(m.group(1)), m.group(2)
    if not unit:
        return num
    if unit not in UNITS:
        raise ConfigError(f"unknown unit {unit!r}", path, line)
    dim, factor = UNITS[unit]
    if dimension is not None and dim != dimension:
        raise ConfigError(f"unit {unit!r} is a {dim}, expected a {dimension}", path, line)
    return num * factor


def format_quantity(x: float, dimension: str | None):
    """Inverse of parse_quantity that round-trips exactly."""
    if dimension not in DUMP_UNITS or x == 0.0:
        return x
    units = DUMP_UNITS[dimension]
    for unit in units:
        factor = UNITS[unit][1]
        scaled = float(repr(x / factor))
        if (abs(scaled) >= 1.0 or unit == units[-1]) and scaled * factor == x:
            return f"{scaled!r} {unit}"
    return x


@dataclass
class RegionSpec:
    name: str
    kind: str
    lo: tuple
    hi: tuple
    value: tuple | float = 0.0
    components: tuple | None = None


@dataclass
class ProblemSpec:
    name: str
    dim: int
    extents: tuple
    divisions: tuple
    regions: list
    material: MaterialParams = field(default_factory=MaterialParams)
    control: VolumeControl = field(default_factory=lambda: VolumeControl.constraint(0.4))
    phase: PhaseParams = field(default_factory=PhaseParams)
    body_force: tuple | None = None
    mode: str = SAND
    dt0: float = 1e-2
    c_ac: float = 1e-6
    c_res: float = 1e-8
    rtol: float = 1e-12
    max_iter: int = 15
    t_final: float | None = None
    wall_limit: float | None = None
    phi0: float | None = None
    out_dir: str = "out"
    snapshot_every: int = 0

    @property
    def initial_phi(self) -> float:
        if self.phi0 is not None:
            return self.phi0
        return self.control.vbar if self.control.kind == "vc" else 1.0

    def scaled(self, factor: float) -> "ProblemSpec":
        """Same problem with mesh divisions multiplied by ``factor``."""
        if not factor > 0:
            raise ConfigError(f"scale must be positive, got {factor}", "scale")
        divs = tuple(max(1, int(round(n * factor))) for n in self.divisions)
        return replace(self, divisions=divs)

    def convergence(self) -> ConvergenceParams:
        return ConvergenceParams(c_ac=self.c_ac, c_res=self.c_res, rtol=self.rtol, max_iter=self.max_iter,
                                 t_final=self.t_final, wall_limit=self.wall_limit)

    def stepper(self) -> TimeStepper:
        return TimeStepper(dt0=self.dt0)

    def build_mesh(self):
        return build_box_grid(self.extents, self.divisions)

    def build_model(self) -> Model:
        mesh = self.build_mesh()
        regions = []
        for r in self.regions:
            where = Box(r.lo, r.hi)
            if r.kind == PASSIVE:
                regions.append(select_region(mesh, where, r.kind, r.value, r.name))
            else:
                regions.append(select_region(mesh, where, r.kind, r.value, r.name, r.components))
        return Model(mesh, regions, self.material, self.phase, self.control, self.body_force)


# schema ------------------------------------------------------------------

_MATERIAL = {"E": "stress", "nu": None, "delta": None, "p": None}
_PHASE = {"gamma": "length", "kappa_phi": "line", "kappa_b": "stress", "T_phi": "time"}
_SOLVER = {"mode": "str", "dt0": "time", "c_ac": None, "c_res": None, "rtol": None, "max_iter": "int",
           "t_final": "time", "wall_limit": "time", "phi0": None}
_OUTPUT = {"dir": "str", "snapshot_every": "int"}
_REGION = {"name", "kind", "lo", "hi", "value", "components"}
_TOP = {"name", "geometry", "material", "formulation", "phase", "solver", "output"}


def _line_map(text):
    """Map key paths ('a.b[0].c') to 1-based source lines."""
    lines = {}

    def walk(node, path):
        lines.setdefault(path, node.start_mark.line + 1)
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                p = f"{path}.{k.value}" if path else str(k.value)
                lines[p] = k.start_mark.line + 1
                walk(v, p)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                walk(v, f"{path}[{i}]")

    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed YAML: {getattr(exc, 'problem', exc)}", "", mark.line + 1 if mark else None) from None
    if root is not None:
        walk(root, "")
    return lines


class _Reader:
    def __init__(self, lines):
        self.lines = lines

    def fail(self, msg, path):
        raise ConfigError(msg, path, self.lines.get(path))

    def mapping(self, obj, path, allowed, required=()):
        if not isinstance(obj, dict):
            self.fail("expected a mapping", path)
        for k in obj:
            if k not in allowed:
                self.fail(f"unknown key {k!r}", f"{path}.{k}" if path else str(k))
        for k in required:
            if k not in obj:
                self.fail(f"missing required key {k!r}", path)
        return obj

    def quantity(self, obj, path, dimension):
        p_line = self.lines.get(path)
        return parse_quantity(obj, dimension, path, p_line)

    def vector(self, obj, path, n, dimension, allow_none=False):
        if not isinstance(obj, list) or len(obj) != n:
            self.fail(f"expected a list of {n} values", path)
        out = []
        for i, v in enumerate(obj):
            if v is None and allow_none:
                out.append(None)
            else:
                out.append(self.quantity(v, f"{path}[{i}]", dimension))
        return tuple(out)

    def typed(self, obj, path, kind):
        if kind == "str":
            if not isinstance(obj, str):
                self.fail("expected a string", path)
            return obj
        if kind == "int":
            if isinstance(obj, bool) or not isinstance(obj, int):
                self.fail("expected an integer", path)
            return obj
        if obj is None:
            return None
        return self.quantity(obj, path, kind)


def parse_config(text: str) -> ProblemSpec:
    """Parse and validate a YAML problem description into SI units."""
    lines = _line_map(text)
    data = yaml.safe_load(text)
    rd = _Reader(lines)
    if data is None:
        raise ConfigError("empty configuration")
    rd.mapping(data, "", _TOP, required=("geometry", "formulation"))

    geo = rd.mapping(data["geometry"], "geometry", {"extents", "divisions", "regions", "body_force"},
                     required=("extents", "divisions", "regions"))
    ext = geo["extents"]
    if not isinstance(ext, list) or len(ext) not in (2, 3):
        rd.fail("extents must list 2 or 3 lengths", "geometry.extents")
    dim = len(ext)
    extents = rd.vector(ext, "geometry.extents", dim, "length")
    divs = geo["divisions"]
    if not isinstance(divs, list) or len(divs) != dim or not all(isinstance(v, int) and v >= 1 for v in divs):
        rd.fail(f"divisions must list {dim} positive integers", "geometry.divisions")
    body = None
    if geo.get("body_force") is not None:
        body = rd.vector(geo["body_force"], "geometry.body_force", dim, "body")

    if not isinstance(geo["regions"], list) or not geo["regions"]:
        rd.fail("at least one region is required", "geometry.regions")
    regions = []
    for i, r in enumerate(geo["regions"]):
        path = f"geometry.regions[{i}]"
        rd.mapping(r, path, _REGION, required=("kind", "lo", "hi"))
        kind = r["kind"]
        if kind not in REGION_KINDS:
            rd.fail(f"kind must be one of {', '.join(REGION_KINDS)}", f"{path}.kind")
        lo = rd.vector(r["lo"], f"{path}.lo", dim, "length", allow_none=True)
        hi = rd.vector(r["hi"], f"{path}.hi", dim, "length", allow_none=True)
        comps = r.get("components")
        if comps is not None:
            if kind != DIRICHLET or not isinstance(comps, list) or not all(isinstance(c, int) and 0 <= c < dim for c in comps):
                rd.fail("components: list of axis indices, Dirichlet regions only", f"{path}.components")
            comps = tuple(comps)
        if kind == PASSIVE:
            value = float(rd.typed(r.get("value", 1.0), f"{path}.value", None))
        elif kind == NEUMANN:
            if "value" not in r:
                rd.fail("traction regions need a value", path)
            value = rd.vector(r["value"], f"{path}.value", dim, "stress")
        else:
            value = rd.vector(r.get("value", [0.0] * dim), f"{path}.value", dim, "length")
        regions.append(RegionSpec(r.get("name", f"region{i}"), kind, lo, hi, value, comps))

    mat_raw = rd.mapping(data.get("material") or {}, "material", _MATERIAL)
    mkw = {k: rd.typed(v, f"material.{k}", _MATERIAL[k]) for k, v in mat_raw.items()}
    try:
        material = MaterialParams(**mkw)
    except ValueError as exc:
        rd.fail(str(exc), "material")

    form = data["formulation"]
    if not isinstance(form, dict) or len(form) != 1 or next(iter(form)) not in ("vc", "vm"):
        rd.fail("formulation required: exactly one of 'vc' or 'vm'", "formulation")
    kind = next(iter(form))
    body_f = form[kind]
    if kind == "vc":
        rd.mapping(body_f, "formulation.vc", {"vbar"}, required=("vbar",))
        vbar = rd.typed(body_f["vbar"], "formulation.vc.vbar", None)
        try:
            control = VolumeControl.constraint(vbar)
        except ValueError as exc:
            rd.fail(str(exc), "formulation.vc.vbar")
    else:
        rd.mapping(body_f, "formulation.vm", {"kappa_v"}, required=("kappa_v",))
        kv = rd.typed(body_f["kappa_v"], "formulation.vm.kappa_v", "stress")
        try:
            control = VolumeControl.minimization(kv)
        except ValueError as exc:
            rd.fail(str(exc), "formulation.vm.kappa_v")

    ph_raw = rd.mapping(data.get("phase") or {}, "phase", _PHASE)
    pkw = {k: rd.typed(v, f"phase.{k}", _PHASE[k]) for k, v in ph_raw.items()}
    try:
        phase = PhaseParams(**pkw)
    except ValueError as exc:
        rd.fail(str(exc), "phase")

    sv = rd.mapping(data.get("solver") or {}, "solver", _SOLVER)
    skw = {k: rd.typed(v, f"solver.{k}", _SOLVER[k]) for k, v in sv.items()}
    if skw.get("mode", SAND) not in (SAND, NAND):
        rd.fail("mode must be 'sand' or 'nand'", "solver.mode")
    for key in ("dt0", "c_ac", "c_res", "rtol", "wall_limit"):
        if key in skw and not skw[key] > 0:
            rd.fail("must be positive", f"solver.{key}")
    if skw.get("max_iter", 1) < 1:
        rd.fail("must be at least 1", "solver.max_iter")

    out = rd.mapping(data.get("output") or {}, "output", _OUTPUT)
    okw = {k: rd.typed(v, f"output.{k}", _OUTPUT[k]) for k, v in out.items()}
    name = data.get("name", "problem")
    if not isinstance(name, str):
        rd.fail("expected a string", "name")

    return ProblemSpec(
        name=name, dim=dim, extents=extents, divisions=tuple(divs), regions=regions,
        material=material, control=control, phase=phase, body_force=body,
        out_dir=okw.get("dir", "out"), snapshot_every=okw.get("snapshot_every", 0), **skw,
    )


def _vec(values, dimension):
    return [None if v is None else format_quantity(float(v), dimension) for v in values]


def to_dict(spec: ProblemSpec) -> dict:
    regions = []
    for r in spec.regions:
        d = {"name": r.name, "kind": r.kind, "lo": _vec(r.lo, "length"), "hi": _vec(r.hi, "length")}
        if r.kind == NEUMANN:
            d["value"] = _vec(r.value, "stress")
        elif r.kind == DIRICHLET:
            d["value"] = _vec(r.value, "length")
            if r.components is not None:
                d["components"] = list(r.components)
        else:
            d["value"] = float(r.value)
        regions.append(d)
    geo = {"extents": _vec(spec.extents, "length"), "divisions": list(spec.divisions), "regions": regions}
    if spec.body_force is not None:
        geo["body_force"] = _vec(spec.body_force, "body")
    m, ph = spec.material, spec.phase
    if spec.control.kind == "vc":
        form = {"vc": {"vbar": float(spec.control.vbar)}}
    else:
        form = {"vm": {"kappa_v": format_quantity(float(spec.control.kappa_v), "stress")}}
    solver = {"mode": spec.mode, "dt0": format_quantity(spec.dt0, "time"), "c_ac": spec.c_ac, "c_res": spec.c_res,
              "rtol": spec.rtol, "max_iter": spec.max_iter}
    if spec.t_final is not None:
        solver["t_final"] = format_quantity(spec.t_final, "time")
    if spec.wall_limit is not None:
        solver["wall_limit"] = format_quantity(spec.wall_limit, "time")
    if spec.phi0 is not None:
        solver["phi0"] = float(spec.phi0)
    return {
        "name": spec.name,
        "geometry": geo,
        "material": {"E": format_quantity(m.E, "stress"), "nu": m.nu, "delta": m.delta, "p": m.p},
        "formulation": form,
        "phase": {"gamma": format_quantity(ph.gamma, "length"), "kappa_phi": format_quantity(ph.kappa_phi, "line"),
                  "kappa_b": format_quantity(ph.kappa_b, "stress"), "T_phi": format_quantity(ph.T_phi, "time")},
        "solver": solver,
        "output": {"dir": spec.out_dir, "snapshot_every": spec.snapshot_every},
    }


def dump_config(spec: ProblemSpec) -> str:
    return yaml.safe_dump(to_dict(spec), sort_keys=False, default_flow_style=None, width=100)


# presets -----------------------------------------------------------------

def _cantilever2d():
    return ProblemSpec(
        name="cantilever2d", dim=2, extents=(2.0, 1.0), divisions=(120, 60),
        regions=[
            RegionSpec("clamp", DIRICHLET, (0.0, None), (0.0, None), (0.0, 0.0)),
            RegionSpec("load", NEUMANN, (2.0, 0.0), (2.0, 0.2), (0.0, -500e6)),
        ],
        material=MaterialParams(E=10e9, nu=0.25, delta=1e-3, p=10.0),
        control=VolumeControl.constraint(0.4),
        phase=PhaseParams(gamma=0.01, kappa_phi=1e6, kappa_b=1e12, T_phi=1.0),
        c_ac=1e-6,
    )


def _cantilever3d():
    return ProblemSpec(
        name="cantilever3d", dim=3, extents=(2.0, 1.0, 1.0), divisions=(80, 40, 40),
        regions=[
            RegionSpec("clamp", DIRICHLET, (0.0, None, None), (0.0, None, None), (0.0, 0.0, 0.0)),
            RegionSpec("load", NEUMANN, (2.0, None, 0.0), (2.0, None, 0.2), (0.0, 0.0, -500e6)),
        ],
        material=MaterialParams(E=10e9, nu=0.25, delta=1e-3, p=10.0),
        control=VolumeControl.minimization(100e6),
        phase=PhaseParams(gamma=0.02, kappa_phi=1e6, kappa_b=1e12, T_phi=1.0),
        c_ac=1e-2,
    )


def _bridge3d():
    lx, lz, lbc, slab_bottom = 44.0, 8.8, 1.76, 8.6  # deck slab 0.2 m thick
    return ProblemSpec(
        name="bridge3d", dim=3, extents=(lx, 8.8, lz), divisions=(150, 30, 30),
        regions=[
            RegionSpec("support_left", DIRICHLET, (0.0, None, 0.0), (lbc, None, 0.0), (0.0, 0.0, 0.0)),
            RegionSpec("support_right", DIRICHLET, (lx - lbc, None, 0.0), (lx, None, 0.0), (0.0, 0.0, 0.0)),
            RegionSpec("deck", PASSIVE, (None, None, slab_bottom), (None, None, lz), 1.0),
            RegionSpec("load", NEUMANN, (None, None, lz), (None, None, lz), (0.0, 0.0, -150e6)),
        ],
        material=MaterialParams(E=10e9, nu=0.25, delta=1e-3, p=10.0),
        control=VolumeControl.minimization(1000e6),
        phase=PhaseParams(gamma=0.2, kappa_phi=200e6, kappa_b=1e12, T_phi=1.0),
        c_ac=1e-2,
    )


PRESETS = {"cantilever2d": _cantilever2d, "cantilever3d": _cantilever3d, "bridge3d": _bridge3d}


def preset(name: str) -> ProblemSpec:
    try:
        return copy.deepcopy(PRESETS[name]())
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}", "preset") from None


def with_overrides(spec: ProblemSpec, **changes) -> ProblemSpec:
    """Copy with solver/formulation fields replaced; ``None`` values are ignored."""
    changes = {k: v for k, v in changes.items() if v is not None}
    return replace(spec, **changes)


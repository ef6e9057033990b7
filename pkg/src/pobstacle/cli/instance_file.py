"""TOML-style instance/config files.

Sections: ``[domain]``, ``[operator]``, ``[data]``, ``[solver]``, ``[probes]``.
Scalar fields are a number, an expression string over ``x`` (``y`` in 2D) and
``t``, or ``{file = "name.pobf"}`` pointing at a binary field file.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from ..checkpoint import read_field, write_field, atomic_write_text
from ..lattice import GridField, LatticeDomain
from ..operators import EllipticityPair, OperatorKind, OperatorSpec, sym_eigvals
from ..solvers import ProblemInstance, SolverConfig, cfl_bound
from .expr import ExpressionError, evaluate

__all__ = ["InstanceFileError", "Manifest", "parse_instance_file", "load_manifest",
           "parse_manifest_text", "parse_config_text", "export_instance", "METHODS"]

METHODS = ("obstacle", "penalized", "projection", "elliptic")

_SECTIONS = {
    "domain": {"low", "high", "T", "h", "tau"},
    "operator": {"kind", "lambda", "Lambda", "mu", "A", "b", "branches", "diffusivity"},
    "data": {"f", "phi", "psi", "g", "p", "q", "beta1", "name"},
    "solver": {"method", "delta", "eps_mollify", "time_scheme", "cfl_safety", "delta_sweep",
               "tol_fixed_point", "tol_sweep", "max_iters", "coincidence_tol"},
    "probes": None,  # free-form: names plus per-probe tables
}


class InstanceFileError(ValueError):
    """Parse or validation failure, tagged with ``path:line``."""


@dataclass
class Manifest:
    instance: ProblemInstance
    config: SolverConfig
    method: str = "obstacle"
    probes: dict = field(default_factory=dict)
    source: str = ""
    manufactured: object = None
    resolved: dict = field(default_factory=dict)


class _Lines:
    """Best-effort ``(section, key) -> line`` lookup for error anchoring."""

    def __init__(self, text: str):
        self.index = {}
        section = ""
        for no, line in enumerate(text.splitlines(), 1):
            s = line.split("#", 1)[0].strip()
            m = re.match(r"^\[\s*([A-Za-z0-9_.\-]+)\s*\]$", s)
            if m:
                section = m.group(1)
                self.index.setdefault((section, None), no)
                continue
            m = re.match(r"^([A-Za-z0-9_\-]+)\s*=", s)
            if m:
                self.index.setdefault((section, m.group(1)), no)

    def line(self, section: str, key: str | None = None) -> int:
        return self.index.get((section, key)) or self.index.get((section, None)) or 1


class _Ctx:
    def __init__(self, text: str, origin: str, base: Path):
        self.lines = _Lines(text)
        self.origin = origin
        self.base = base

    def fail(self, section, key, msg):
        raise InstanceFileError(f"{self.origin}:{self.lines.line(section, key)}: {msg}")


def _number(ctx, sec, key, v, positive=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        ctx.fail(sec, key, f"{key} must be a number")
    v = float(v)
    if not math.isfinite(v) or (positive and v <= 0):
        ctx.fail(sec, key, f"{key} must be {'positive' if positive else 'finite'}")
    return v


def _vector(ctx, sec, key, v):
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return [float(v)]
    if not isinstance(v, list) or not v:
        ctx.fail(sec, key, f"{key} must be a number or a nonempty list")
    return [_number(ctx, sec, key, x) for x in v]


def _scalar_field(ctx, sec, key, item, dom: LatticeDomain) -> np.ndarray:
    """Number, expression string or ``{file = ...}`` sampled on the full lattice."""
    if isinstance(item, bool):
        ctx.fail(sec, key, f"{key}: booleans are not fields")
    if isinstance(item, (int, float)):
        return np.full(dom.shape, float(item))
    if isinstance(item, str):
        mesh = dom.mesh()
        env = {"x": mesh[0], "t": mesh[-1]}
        if dom.n == 2:
            env["y"] = mesh[1]
        try:
            return evaluate(item, **env)
        except ExpressionError as exc:
            ctx.fail(sec, key, f"{key}: {exc}")
    if isinstance(item, dict) and set(item) == {"file"}:
        path = ctx.base / str(item["file"])
        try:
            fld = read_field(path)
        except (OSError, ValueError) as exc:
            ctx.fail(sec, key, f"{key}: cannot read field file: {exc}")
        if fld.domain.shape != dom.shape:
            ctx.fail(sec, key, f"{key}: field file shape {fld.domain.shape} does not match {dom.shape}")
        return np.array(fld.values)
    ctx.fail(sec, key, f"{key} must be a number, an expression string or {{file = ...}}")


def _matrix_field(ctx, sec, key, item, dom):
    n = dom.n
    if isinstance(item, list):
        want = 1 if n == 1 else 3
        if len(item) != want:
            ctx.fail(sec, key, f"{key} needs {want} entries ({'a11' if n == 1 else 'a11, a12, a22'})")
        parts = [_scalar_field(ctx, sec, key, it, dom) for it in item]
        if n == 1:
            return parts[0][..., None, None]
        A = np.empty(dom.shape + (2, 2))
        A[..., 0, 0], A[..., 0, 1], A[..., 1, 0], A[..., 1, 1] = parts[0], parts[1], parts[1], parts[2]
        return A
    return _scalar_field(ctx, sec, key, item, dom)[..., None, None] * np.eye(n)


def _vector_field(ctx, sec, key, item, dom):
    if not isinstance(item, list) or len(item) != dom.n:
        ctx.fail(sec, key, f"{key} must be a list of {dom.n} entries")
    return np.stack([_scalar_field(ctx, sec, key, it, dom) for it in item], axis=-1)


def _check_keys(ctx, data):
    for sec, val in data.items():
        if sec not in _SECTIONS:
            ctx.fail(sec, None, f"unknown section [{sec}]")
        if not isinstance(val, dict):
            ctx.fail(sec, None, f"[{sec}] must be a table")
        allowed = _SECTIONS[sec]
        if allowed is None:
            continue
        for key in val:
            if key not in allowed:
                ctx.fail(sec, key, f"unknown key {key!r} in [{sec}]")


def _domain(ctx, d: dict, op_hint: dict) -> LatticeDomain:
    sec = "domain"
    for key in ("low", "high", "T", "h"):
        if key not in d:
            ctx.fail(sec, None, f"[domain] is missing {key!r}")
    low = _vector(ctx, sec, "low", d["low"])
    high = _vector(ctx, sec, "high", d["high"])
    T = _number(ctx, sec, "T", d["T"], positive=True)
    h = _number(ctx, sec, "h", d["h"], positive=True)
    if "tau" in d:
        tau = _number(ctx, sec, "tau", d["tau"], positive=True)
    else:
        # largest tau dividing T under the explicit stability bound
        n = len(low)
        Lam = float(op_hint.get("Lambda", op_hint.get("diffusivity", 1.0)))
        mu = op_hint.get("mu", 0.0)
        mu = float(mu) if isinstance(mu, (int, float)) and not isinstance(mu, bool) else 0.0
        bound = 0.9 * h * h / (2 * n * Lam + (2 * Lam if n == 2 else 0) + h * math.sqrt(n) * mu)
        tau = T / math.ceil(T / bound)
    try:
        return LatticeDomain.box(low, high, T, h, tau)
    except ValueError as exc:
        ctx.fail(sec, None, str(exc))


def _operator(ctx, o: dict, dom: LatticeDomain) -> OperatorSpec:
    sec = "operator"
    kind = o.get("kind", "heat")
    kinds = ("heat",) + tuple(k.value for k in OperatorKind)
    if kind not in kinds:
        ctx.fail(sec, "kind", f"operator kind must be one of {', '.join(kinds)}")
    try:
        if kind == "heat":
            return OperatorSpec.heat(dom, _number(ctx, sec, "diffusivity", o.get("diffusivity", 1.0),
                                                  positive=True))
        lam = _number(ctx, sec, "lambda", o.get("lambda", 1.0), positive=True)
        Lam = _number(ctx, sec, "Lambda", o.get("Lambda", lam), positive=True)
        mu = _scalar_field(ctx, sec, "mu", o["mu"], dom) if "mu" in o else None
        if kind in ("pucci_plus", "pucci_minus"):
            return OperatorSpec.pucci(dom, kind == "pucci_plus", lam, Lam, 0.0 if mu is None else mu)
        if kind == "linear":
            if "A" not in o:
                ctx.fail(sec, None, "linear operator needs A")
            A = _matrix_field(ctx, sec, "A", o["A"], dom)
            b = _vector_field(ctx, sec, "b", o["b"], dom) if "b" in o else None
            e = sym_eigvals(A.reshape(-1, dom.n, dom.n))
            if e.min() <= 0:
                ctx.fail(sec, "A", "A must be positive definite")
            ell = EllipticityPair(lam, Lam) if ("lambda" in o or "Lambda" in o) else None
            if ell is not None and (e.min() < lam - 1e-12 or e.max() > Lam + 1e-12):
                ctx.fail(sec, "A", "A leaves the ellipticity range [lambda, Lambda]")
            return OperatorSpec.linear(dom, A, b, mu, ell)
        branches = o.get("branches")
        if not isinstance(branches, list) or not branches:
            ctx.fail(sec, "branches", "bellman operator needs a nonempty branches list")
        built = []
        for br in branches:
            if not isinstance(br, dict) or "A" not in br:
                ctx.fail(sec, "branches", "each branch needs A (and optionally b)")
            A = _matrix_field(ctx, sec, "branches", br["A"], dom)
            b = _vector_field(ctx, sec, "branches", br["b"], dom) if "b" in br else None
            built.append((A, b))
        if mu is None:
            mu = max((float(np.linalg.norm(b, axis=-1).max()) for _, b in built if b is not None),
                     default=0.0)
        return OperatorSpec.bellman(dom, built, EllipticityPair(lam, Lam), mu)
    except ValueError as exc:
        if isinstance(exc, InstanceFileError):
            raise
        ctx.fail(sec, None, str(exc))


def _config(ctx, s: dict):
    sec = "solver"
    method = s.get("method", "obstacle")
    if method not in METHODS:
        ctx.fail(sec, "method", f"method must be one of {', '.join(METHODS)}")
    kw = {}
    for key in ("delta", "eps_mollify", "cfl_safety", "tol_fixed_point", "tol_sweep", "coincidence_tol"):
        if key in s:
            kw[key] = _number(ctx, sec, key, s[key])
    if "max_iters" in s:
        if not isinstance(s["max_iters"], int) or isinstance(s["max_iters"], bool):
            ctx.fail(sec, "max_iters", "max_iters must be an integer")
        kw["max_iters"] = s["max_iters"]
    if "time_scheme" in s:
        kw["time_scheme"] = s["time_scheme"]
    if "delta_sweep" in s:
        kw["delta_sweep"] = tuple(_vector(ctx, sec, "delta_sweep", s["delta_sweep"]))
    try:
        return SolverConfig(**kw), method
    except ValueError as exc:
        ctx.fail(sec, None, str(exc))


def _load_toml(text: str, origin: str) -> dict:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        msg = str(exc)
        m = re.search(r"line (\d+)", msg)
        line = m.group(1) if m else "1"
        raise InstanceFileError(f"{origin}:{line}: syntax error: {msg}") from None


def parse_config_text(text: str, origin: str = "<config>", base: Path | None = None,
                      defaults: SolverConfig | None = None, method: str | None = None):
    """Solver/probe overrides from a config file: ``(config, method, probes)``."""
    ctx = _Ctx(text, origin, base or Path("."))
    data = _load_toml(text, origin)
    _check_keys(ctx, data)
    extra = set(data) - {"solver", "probes"}
    if extra:
        ctx.fail(sorted(extra)[0], None, "config files may only hold [solver] and [probes]")
    solver = dict(data.get("solver", {}))
    if defaults is not None:
        base_kw = defaults.to_dict()
        base_kw.update({k: v for k, v in solver.items() if k != "method"})
        base_kw = {k: v for k, v in base_kw.items() if v is not None}
        if method and "method" not in solver:
            base_kw["method"] = method
        elif "method" in solver:
            base_kw["method"] = solver["method"]
        solver = base_kw
    cfg, meth = _config(ctx, solver)
    return cfg, meth, data.get("probes", {})


def parse_manifest_text(text: str, origin: str = "<instance>", base: Path | None = None,
                        h: float | None = None) -> Manifest:
    """Build a manifest; ``h`` re-samples the instance at another spacing (tau scales with h^2)."""
    ctx = _Ctx(text, origin, base or Path("."))
    data = _load_toml(text, origin)
    _check_keys(ctx, data)
    if h is not None and "domain" in data:
        d = dict(data["domain"])
        h0 = _number(ctx, "domain", "h", d.get("h", h), positive=True)
        T = _number(ctx, "domain", "T", d.get("T", 1.0), positive=True)
        d["h"] = float(h)
        if "tau" in d:
            tau0 = _number(ctx, "domain", "tau", d["tau"], positive=True)
            d["tau"] = T / max(1, round(T / (tau0 * (h / h0) ** 2)))
        data = {**data, "domain": d}
    if "domain" not in data:
        ctx.fail("domain", None, "missing [domain] section")
    op = data.get("operator", {})
    dom = _domain(ctx, data["domain"], op)
    n = dom.n
    if n not in (1, 2):
        ctx.fail("domain", "low", "dimension must be 1 or 2")
    spec = _operator(ctx, op, dom)
    if "tau" not in data["domain"]:
        # the first operator pass gives the true drift bound; refine tau once
        bound = cfl_bound(spec, 0.9)
        if dom.tau > bound:
            T = dom.horizon_T
            dom = LatticeDomain.box(dom.spatial_low, dom.spatial_high, T, dom.h,
                                    T / math.ceil(T / bound))
            spec = _operator(ctx, op, dom)
    d = data.get("data", {})
    fields = {}
    for key, default in (("f", 0.0), ("phi", -1e6), ("psi", 1e6), ("g", 0.0)):
        fields[key] = GridField(dom, _scalar_field(ctx, "data", key, d.get(key, default), dom))
    expo = {}
    for key in ("p", "q", "beta1"):
        if key in d:
            expo[key] = _number(ctx, "data", key, d[key])
    expo.setdefault("p", 6.0)
    expo.setdefault("q", expo["p"])
    expo.setdefault("beta1", 0.5)
    name = d.get("name", Path(origin).stem if origin[:1] != "<" else "instance")
    inst = ProblemInstance(dom, spec, fields["f"], fields["phi"], fields["psi"], fields["g"],
                           expo["p"], expo["q"], expo["beta1"], str(name))
    try:
        inst.validate()
    except ValueError as exc:
        msg = str(exc)
        key = {"obstacle order violated": ("data", "psi"),
               "boundary datum outside the obstacle band": ("data", "g"),
               "exponent order violated": ("data", "q"),
               "exponent regime violated": ("data", "p")}.get(msg, ("data", None))
        ctx.fail(key[0], key[1], msg)
    cfg, method = _config(ctx, data.get("solver", {}))
    return Manifest(inst, cfg, method, data.get("probes", {}), text, None, data)


def load_manifest(path, h: float | None = None) -> Manifest:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InstanceFileError(f"{path}: cannot read instance file: {exc.strerror or exc}") from None
    return parse_manifest_text(text, str(path), path.parent, h)


def parse_instance_file(path) -> ProblemInstance:
    return load_manifest(path).instance


# export ----------------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def export_instance(instance: ProblemInstance, directory, stem: str = "instance",
                    config: SolverConfig | None = None, method: str = "obstacle") -> Path:
    """Write ``instance`` as an instance file plus one field file per sampled field."""
    directory = Path(directory)
    dom = instance.domain
    full = dom.shape

    def dump(name, values):
        arr = np.broadcast_to(np.asarray(values, dtype=float), full)
        write_field(directory / f"{stem}_{name}.pobf", GridField(dom, arr))
        return f'{{file = "{stem}_{name}.pobf"}}'

    op = instance.operator
    lines = ["[domain]",
             f"low = [{', '.join(_fmt(v) for v in dom.spatial_low)}]",
             f"high = [{', '.join(_fmt(v) for v in dom.spatial_high)}]",
             f"T = {_fmt(dom.horizon_T)}", f"h = {_fmt(dom.h)}", f"tau = {_fmt(dom.tau)}", "",
             "[operator]", f'kind = "{op.kind.value}"',
             f"lambda = {_fmt(op.ellipticity.lam)}", f"Lambda = {_fmt(op.ellipticity.Lam)}",
             f"mu = {dump('mu', op.mu)}"]

    def mat(name, A):
        A = np.broadcast_to(A, full + (dom.n, dom.n))
        if dom.n == 1:
            return f"[{dump(name + '11', A[..., 0, 0])}]"
        return (f"[{dump(name + '11', A[..., 0, 0])}, {dump(name + '12', A[..., 0, 1])}, "
                f"{dump(name + '22', A[..., 1, 1])}]")

    def vec(name, b):
        b = np.broadcast_to(b, full + (dom.n,))
        return "[" + ", ".join(dump(f"{name}{i + 1}", b[..., i]) for i in range(dom.n)) + "]"

    if op.kind is OperatorKind.LINEAR:
        lines += [f"A = {mat('A', op.A)}", f"b = {vec('b', op.b)}"]
    elif op.kind is OperatorKind.BELLMAN:
        items = [f"{{A = {mat(f'A{k}_', Ai)}, b = {vec(f'b{k}_', bi)}}}"
                 for k, (Ai, bi) in enumerate(op.branches)]
        lines.append(f"branches = [{', '.join(items)}]")
    lines += ["", "[data]", f'name = "{instance.name}"']
    for key in ("f", "phi", "psi", "g"):
        lines.append(f"{key} = {dump(key, getattr(instance, key).values)}")
    lines += [f"p = {_fmt(instance.p)}", f"q = {_fmt(instance.q)}", f"beta1 = {_fmt(instance.beta1)}"]
    config = config or SolverConfig()
    lines += ["", "[solver]", f'method = "{method}"', f"delta = {_fmt(config.delta)}",
              f"eps_mollify = {_fmt(config.eps_mollify)}", f"cfl_safety = {_fmt(config.cfl_safety)}",
              f"delta_sweep = [{', '.join(_fmt(v) for v in config.delta_sweep)}]",
              f"tol_fixed_point = {_fmt(config.tol_fixed_point)}",
              f"tol_sweep = {_fmt(config.tol_sweep)}", f"max_iters = {config.max_iters}", ""]
    path = directory / f"{stem}.toml"
    atomic_write_text(path, "\n".join(lines))
    return path

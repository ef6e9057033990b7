"""Subcommand implementations. Each returns a process exit code."""

from __future__ import annotations

import csv
import dataclasses
import datetime as _dt
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import __version__
from ..checkpoint import atomic_write_text, read_field, write_field, write_json
from ..lattice import GridField
from ..instances import BUILTINS, builtin
from ..mollification import kernel_is_resolved
from ..operators import theta_smallness_scan
from ..oracle import ManufacturedInstance, OracleError, brute_force_solve, restrict
from ..regularity import (RegularityReport, _clean, coincidence_sets, compute_exponents, contact_growth,
                          fit_holder,
                          gradient_holder_probe, oscillation_decay, rows_to_csv, weak_harnack_ratio)
from ..solvers import (SolverConfig, SolverError, default_coincidence_tol, solve_elliptic,
                       solve_obstacle, solve_penalized, solve_projection)
from .instance_file import METHODS, InstanceFileError, Manifest, load_manifest, parse_config_text

PROBES = ("holder", "harnack", "decay", "contact_growth", "gradient_holder", "theta", "exponents")
AXES = ("delta", "eps", "h")


class UsageError(ValueError):
    """Bad command-line input; exit code 1."""


# output helpers ---------------------------------------------------------------


def _color(code: str, text: str, stream) -> str:
    if os.environ.get("POBSTACLE_NO_COLOR") or not getattr(stream, "isatty", lambda: False)():
        return text
    return f"\033[{code}m{text}\033[0m"


def say(msg: str, stream=None, ok: bool = True):
    import sys
    stream = stream or sys.stdout
    tag = _color("32" if ok else "31", "ok" if ok else "fail", stream)
    print(f"[{tag}] {msg}", file=stream)


def _stamped(obj: dict) -> dict:
    out = _clean(obj)
    out["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    return out


def _write_rows(path: Path, rows: list, columns: tuple = ()):
    text = rows_to_csv(rows) if rows else (",".join(columns) + "\n" if columns else "")
    atomic_write_text(path, text)


def threads() -> int:
    raw = os.environ.get("POBSTACLE_THREADS", "1")
    try:
        k = int(raw)
    except ValueError:
        raise UsageError(f"POBSTACLE_THREADS must be a positive integer, got {raw!r}") from None
    if k < 1:
        raise UsageError(f"POBSTACLE_THREADS must be a positive integer, got {raw!r}")
    return k


# loading ------------------------------------------------------------------------


@dataclass
class Loaded:
    manifest: Manifest
    label: str
    args: object

    @property
    def instance(self):
        return self.manifest.instance

    def at_spacing(self, h: float) -> Manifest:
        """Same problem on the lattice with spacing ``h``."""
        return _load(self.args, h=h).manifest


def _builtin_manifest(name: str, h: float | None) -> Manifest:
    if name not in BUILTINS:
        raise UsageError(f"unknown builtin {name!r}; choose from {', '.join(sorted(BUILTINS))}")
    params = {}
    if h is not None:
        if name == "saturated_tiny":
            raise UsageError(f"builtin {name!r} has a fixed lattice")
        params["h"] = h
    inst, man = builtin(name, **params)
    method = "elliptic" if man is not None and man.params.get("steady") else "obstacle"
    return Manifest(inst, SolverConfig(), method, {}, f"builtin:{name}", man, {"builtin": name})


def _load(args, h: float | None = None) -> Loaded:
    spec = args.instance
    grid = getattr(args, "grid", None)

    def build(h):
        if spec.startswith("builtin:"):
            return _builtin_manifest(spec.split(":", 1)[1], h)
        return load_manifest(spec, h)

    man = build(h)
    if h is None and grid is not None:
        # --grid N: N nodes along the first spatial axis
        if grid < 3:
            raise UsageError("--grid must be at least 3")
        dom = man.instance.domain
        man = build((dom.spatial_high[0] - dom.spatial_low[0]) / (grid - 1))
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise InstanceFileError(f"{path}: cannot read config file: {exc.strerror or exc}") from None
        cfg, method, probes = parse_config_text(text, str(path), path.parent,
                                                defaults=man.config, method=man.method)
        merged = dict(man.probes)
        merged.update(probes)
        man = dataclasses.replace(man, config=cfg, method=method, probes=merged)
    return Loaded(man, spec, args)


def _solve(manifest: Manifest, config: SolverConfig | None = None, method: str | None = None):
    config = config or manifest.config
    method = method or manifest.method
    inst = manifest.instance
    if method == "obstacle":
        return solve_obstacle(inst, config)
    if method == "penalized":
        return solve_penalized(inst, config)
    if method == "projection":
        return solve_projection(inst, config)
    if method == "elliptic":
        return solve_elliptic(inst, config)
    raise UsageError(f"method must be one of {', '.join(METHODS)}")


def _meta(loaded: Loaded, args, **extra) -> dict:
    man = loaded.manifest
    meta = {
        "version": __version__,
        "instance": loaded.label,
        "instance_info": man.instance.describe(),
        "method": man.method,
        "config": man.config.to_dict(),
        "seed": int(getattr(args, "seed", 0) or 0),
    }
    meta.update(extra)
    return meta


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# solve -----------------------------------------------------------------------------


def _level_rows(sol) -> list:
    dom = sol.u.domain
    res = np.abs(sol.residual.values)
    rows = []
    for m in range(dom.nt):
        rows.append({"m": m, "t": m * dom.tau, "residual_max": float(res[..., m].max()),
                     "contact_plus": int(sol.coincidence_plus[..., m].sum()),
                     "contact_minus": int(sol.coincidence_minus[..., m].sum())})
    return rows


def cmd_solve(args) -> int:
    loaded = _load(args)
    out = _out(args)
    meta = _meta(loaded, args)
    try:
        sol = _solve(loaded.manifest)
    except SolverError as exc:
        write_json(out / "diagnostics.json", _stamped({"status": "failed", "error": str(exc),
                                                       "table": exc.table, "meta": meta}))
        say(f"solve failed: {exc}", ok=False)
        return 2
    diag = sol.diagnostics()
    write_field(out / "u.pobf", sol.u, sidecar=_stamped({"field": "u", "domain": sol.u.domain.describe(),
                                                         "meta": meta}))
    write_json(out / "diagnostics.json", _stamped({"status": "ok", "diagnostics": diag, "meta": meta}))
    _write_rows(out / "residual.csv", _level_rows(sol))
    say(f"solved {loaded.label} with {sol.method}: residual {diag['residual_max']:.3g}, "
        f"contacts +{diag['contact_plus_nodes']}/-{diag['contact_minus_nodes']}")
    return 0


# sweep -----------------------------------------------------------------------------


def _values(text: str) -> list:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--values must be comma-separated numbers, got {text!r}") from None
    if not vals or any(not math.isfinite(v) for v in vals):
        raise UsageError("--values needs at least one finite number")
    return vals


def _run_all(jobs: list):
    """Run callables in a pool; results in order up to the first SolverError."""
    results, error = [], None
    with ThreadPoolExecutor(max_workers=threads()) as pool:
        futures = [pool.submit(j) for j in jobs]
        for fut in futures:
            try:
                res = fut.result()
            except SolverError as exc:
                error = error or exc
                continue
            if error is None:
                results.append(res)
    return results, error


def _pm(sol):
    vals = list(sol.penalty_max.values())
    return max(vals) if vals else None


def cmd_sweep(args) -> int:
    if args.axis not in AXES:
        raise UsageError(f"--axis must be one of {', '.join(AXES)}")
    vals = _values(args.values)
    if args.axis in ("delta", "h") and any(v <= 0 for v in vals):
        raise UsageError(f"--values for {args.axis} must be positive")
    if args.axis == "eps" and any(v < 0 for v in vals):
        raise UsageError("--values for eps must be nonnegative")
    loaded = _load(args)
    man = loaded.manifest
    out = _out(args)
    rows, flags = [], []
    if args.axis == "delta":
        jobs = [lambda d=d: solve_penalized(man.instance, man.config, delta=d) for d in vals]
        sols, error = _run_all(jobs)
        exact = man.manufactured.exact_u.values if man.manufactured is not None else None
        for k, (v, s) in enumerate(zip(vals, sols)):
            rows.append({"value": v,
                         "sup_gap": float(np.abs(s.u.values - sols[k - 1].u.values).max()) if k else None,
                         "penalty_max": _pm(s),
                         "error": float(np.abs(s.u.values - exact).max()) if exact is not None else None,
                         "order": None})
    elif args.axis == "eps":
        dom = man.instance.domain

        def job(e):
            sol = _solve(man, dataclasses.replace(man.config, eps_mollify=e))
            return sol, e > 0 and not kernel_is_resolved(dom, e)

        sols, error = _run_all([lambda: job(0.0)] + [lambda e=e: job(e) for e in vals])
        base = sols[0][0].u.values if sols else None
        res = sols[1:]
        for k, (v, (s, under)) in enumerate(zip(vals, res)):
            rows.append({"value": v,
                         "sup_gap": float(np.abs(s.u.values - res[k - 1][0].u.values).max()) if k else None,
                         "penalty_max": _pm(s),
                         "error": float(np.abs(s.u.values - base).max()),
                         "order": None, "flag": "under-resolved" if under else None})
    else:
        vals = sorted(vals, reverse=True)
        mans = [loaded.at_spacing(h) for h in vals]
        sols, error = _run_all([lambda m=m: _solve(m, man.config, man.method) for m in mans])
        manufactured = all(m.manufactured is not None for m in mans)
        errors = []
        for m, s in zip(mans, sols):
            if manufactured:
                errors.append(float(np.abs(s.u.values - m.manufactured.exact_u.values).max()))
            elif error is None and len(sols) == len(mans) and s is not sols[-1]:
                try:
                    errors.append(float(np.abs(s.u.values - restrict(sols[-1].u, s.u.domain)).max()))
                except ValueError as exc:
                    raise UsageError(f"h sweep needs nested lattices: {exc}") from None
            else:
                errors.append(None)
        orders = []
        for k, (v, s) in enumerate(zip(vals, sols)):
            order = None
            if k and errors[k] is not None and errors[k - 1] is not None:
                e0, e1 = errors[k - 1], errors[k]
                if e0 > 0 and e1 > 0:
                    order = math.log(e0 / e1) / math.log(vals[k - 1] / v)
                elif e1 == 0 and e0 > 0:
                    order = math.inf
                orders.append(order)
            gap = None
            if k:
                try:
                    gap = float(np.abs(sols[k - 1].u.values - restrict(s.u, sols[k - 1].u.domain)).max())
                except ValueError:
                    pass
            rows.append({"value": v, "sup_gap": gap, "penalty_max": _pm(s), "error": errors[k],
                         "order": order})
        finite = [o for o in orders if o is not None]
        if any(e1 > e0 for e0, e1 in zip([e for e in errors if e is not None][:-1],
                                         [e for e in errors if e is not None][1:])):
            flags.append("non-monotone error sequence")
        rows.append({"value": "summary", "sup_gap": None, "penalty_max": None,
                     "error": max((e for e in errors if e is not None), default=None),
                     "order": min(finite) if finite else None})
    name = f"sweep_{args.axis}"
    _write_rows(out / f"{name}.csv", rows, ("value", "sup_gap", "penalty_max", "error", "order"))
    status = "failed" if error else "ok"
    write_json(out / f"{name}.json", _stamped({"status": status, "axis": args.axis, "rows": rows,
                                              "flags": flags, "error": str(error) if error else None,
                                              "meta": _meta(loaded, args)}))
    if error:
        say(f"sweep over {args.axis} stopped after {len(rows)} values: {error}", ok=False)
        return 2
    say(f"sweep over {args.axis}: {len(vals)} values written to {out / (name + '.csv')}")
    return 0


# probes ------------------------------------------------------------------------------


def _params(man: Manifest, name: str, allowed: set) -> dict:
    raw = man.probes.get(name, {})
    if not isinstance(raw, dict):
        raise UsageError(f"[probes.{name}] must be a table")
    bad = sorted(set(raw) - allowed)
    if bad:
        raise UsageError(f"unknown parameter {bad[0]!r} for probe {name}; allowed: {', '.join(sorted(allowed))}")
    return raw


def _center(dom, raw):
    if raw is None:
        mid = [0.5 * (lo + hi) for lo, hi in zip(dom.spatial_low, dom.spatial_high)]
        node = dom.locate(mid, dom.horizon_T)
    else:
        if not isinstance(raw, list) or len(raw) != dom.n + 1:
            raise UsageError(f"center must be a list [x..., t] of length {dom.n + 1}")
        node = dom.locate([float(v) for v in raw[:-1]], float(raw[-1]))
    pt = dom.node_point(node)
    return (tuple(float(v) for v in pt.x), float(pt.t))


def _default_radii(dom, center):
    x, t = center
    w = min(min(xi - lo, hi - xi) for xi, lo, hi in zip(x, dom.spatial_low, dom.spatial_high))
    rmax = 0.9 * min(w / 2, math.sqrt(t) / 2)
    if rmax < dom.h:
        raise UsageError("the domain is too small around the probe center for default radii")
    return [rmax / 4, rmax / 2, rmax]


def _radii(params, dom, center):
    raw = params.get("radii")
    if raw is None:
        return _default_radii(dom, center)
    if not isinstance(raw, list) or not raw or any(not isinstance(r, (int, float)) or r <= 0 for r in raw):
        raise UsageError("radii must be a list of positive numbers")
    return [float(r) for r in raw]


def _exponents(man: Manifest):
    inst = man.instance
    return compute_exponents(inst.domain.n, inst.p, inst.q, inst.beta1,
                             elliptic=(man.method == "elliptic"))


def _contact_nodes(sol, params, rng):
    dom = sol.u.domain
    which = params.get("obstacle")
    if which not in (None, "psi", "phi"):
        raise UsageError("obstacle must be 'psi' or 'phi'")
    if which is None:
        which = "psi" if sol.coincidence_plus.sum() >= sol.coincidence_minus.sum() else "phi"
    mask = sol.coincidence_plus if which == "psi" else sol.coincidence_minus
    if "nodes" in params:
        nodes = [tuple(int(k) for k in nd) for nd in params["nodes"]]
    else:
        cand = np.argwhere(mask)
        limit = int(params.get("max_nodes", 10))
        if len(cand) > limit:
            cand = cand[np.sort(rng.choice(len(cand), size=limit, replace=False))]
        nodes = [tuple(int(k) for k in nd) for nd in cand]
    return which, nodes


@dataclass
class _Checkpoint:
    """A stored field standing in for a solution (same attributes the probes read)."""

    u: GridField
    data: object
    coincidence_plus: np.ndarray
    coincidence_minus: np.ndarray
    delta: float | None = None
    penalty_max: dict = dataclasses.field(default_factory=dict)


def _field_or_solve(man: Manifest):
    path = man.probes.get("checkpoint")
    if path is None:
        return _solve(man)
    if not isinstance(path, str):
        raise UsageError("[probes] checkpoint must be a path string")
    fld = read_field(path)
    inst = man.instance
    if fld.domain.shape != inst.domain.shape:
        raise UsageError(f"checkpoint shape {fld.domain.shape} does not match the instance "
                         f"lattice {inst.domain.shape}")
    u = GridField(inst.domain, fld.values)
    tol = default_coincidence_tol(inst.domain, man.config)
    cplus, cminus, _, _ = coincidence_sets(u, inst.phi, inst.psi, tol)
    return _Checkpoint(u, inst, cplus, cminus)


def _probe(name: str, loaded: Loaded, args):
    man = loaded.manifest
    inst = man.instance
    dom = inst.domain
    rng = np.random.default_rng(args.seed)
    if name == "exponents":
        _params(man, name, set())
        return {"exponents": _exponents(man).to_dict()}, {}
    if name == "theta":
        p = _params(man, name, {"radii", "target_delta", "max_nodes"})
        radii = [float(r) for r in p.get("radii", [4 * dom.h])]
        interior = ~dom.spatial_boundary_mask()[..., None] & np.ones(dom.shape, bool)
        cand = np.argwhere(interior)
        limit = int(p.get("max_nodes", 20))
        if len(cand) > limit:
            cand = cand[np.sort(rng.choice(len(cand), size=limit, replace=False))]
        region = np.zeros(dom.shape, bool)
        region[tuple(cand.T)] = True
        scan = theta_smallness_scan(inst.operator, region, radii, float(p.get("target_delta", 0.1)))
        return ({"max_value": scan.max_value, "target_delta": scan.target_delta, "passed": scan.passed,
                 "upper_bound": scan.upper_bound}, {"theta": scan.rows})
    allowed = {
        "holder": {"pair_budget", "rmax", "min_distance"},
        "harnack": {"center", "radii", "eps0"},
        "decay": {"center", "radii"},
        "contact_growth": {"obstacle", "nodes", "max_nodes", "radii"},
        "gradient_holder": {"pair_budget", "rmax"},
    }[name]
    p = _params(man, name, allowed)
    exps = _exponents(man)
    if name == "gradient_holder":
        exps.require_gradient_regime()
    sol = _field_or_solve(man)
    u = sol.u
    report = RegularityReport(meta={"exponents": exps.to_dict()})
    if name == "holder":
        fit = fit_holder(u, pair_budget=int(p.get("pair_budget", 50_000_000)), seed=args.seed,
                         rmax=p.get("rmax"), min_distance=p.get("min_distance"))
        report.holder_fit = fit.to_dict()
    elif name == "gradient_holder":
        region = ~dom.spatial_boundary_mask()[..., None] & np.ones(dom.shape, bool)
        fit = gradient_holder_probe(u, region, exps, pair_budget=int(p.get("pair_budget", 50_000_000)),
                                    seed=args.seed, rmax=p.get("rmax"))
        report.gradient_holder = fit.to_dict()
    elif name in ("harnack", "decay"):
        center = _center(dom, p.get("center"))
        radii = _radii(p, dom, center)
        if name == "harnack":
            eps0 = float(p.get("eps0", 1.0))
            report.harnack_table = [{"r": r, "ratio": weak_harnack_ratio(u, sol.data.f, center, r, eps0,
                                                                         p=inst.p)} for r in radii]
        else:
            table = oscillation_decay(u, center, radii, f=sol.data.f, p=inst.p)
            report.decay_table = table.rows
            report.meta["degenerate"] = table.degenerate
        report.meta["center"] = {"x": list(center[0]), "t": center[1]}
    else:
        which, nodes = _contact_nodes(sol, p, rng)
        radii = [float(r) for r in p.get("radii", [2 * dom.h, 4 * dom.h, 8 * dom.h])]
        slack = sol.delta * sol.penalty_max.get(sol.delta, 0.0) if sol.delta else 0.0
        tol = default_coincidence_tol(dom, man.config) + slack
        obstacle = sol.data.psi if which == "psi" else sol.data.phi
        report.contact_table = [contact_growth(u, obstacle, nd, radii, exps, tol).to_dict()
                                for nd in nodes
                                if all(0 < nd[i] < dom.spatial_shape[i] - 1 for i in range(dom.n))]
        report.meta["obstacle"] = which
    return report.to_dict(), report.tables()


def cmd_probe(args) -> int:
    if args.probe not in PROBES:
        raise UsageError(f"unknown probe {args.probe!r}; available: {', '.join(PROBES)}")
    loaded = _load(args)
    out = _out(args)
    try:
        result, tables = _probe(args.probe, loaded, args)
    except SolverError as exc:
        write_json(out / f"probe_{args.probe}.json",
                   _stamped({"status": "failed", "error": str(exc), "meta": _meta(loaded, args)}))
        say(f"probe {args.probe} failed in the solver: {exc}", ok=False)
        return 2
    params = loaded.manifest.probes.get(args.probe, {})
    write_json(out / f"probe_{args.probe}.json",
               _stamped({"status": "ok", "probe": args.probe, "result": result,
                         "tables": sorted(tables), "meta": _meta(loaded, args, probe_params=params)}))
    for key, rows in sorted(tables.items()):
        _write_rows(out / f"probe_{args.probe}_{key}.csv", rows)
    say(f"probe {args.probe} written to {out}")
    return 0


# oracle ------------------------------------------------------------------------------

_AGREE = 1e-9


def cmd_oracle(args) -> int:
    from .instance_file import export_instance

    loaded = _load(args)
    man = loaded.manifest
    out = _out(args)
    meta = _meta(loaded, args)
    mi: ManufacturedInstance | None = man.manufactured
    if mi is not None:
        cert = mi.certify()
        err = None
        failure = None
        try:
            sol = _solve(man)
            err = float(np.abs(sol.u.values - mi.exact_u.values).max())
        except SolverError as exc:
            failure = str(exc)
        export_instance(mi.instance, out, "instance", man.config, man.method)
        write_field(out / "exact_u.pobf", mi.exact_u)
        ok = cert <= mi.tolerance and failure is None
        write_json(out / "oracle.json", _stamped({
            "kind": "manufactured", "certify_residual": cert, "tolerance": mi.tolerance,
            "certified": cert <= mi.tolerance, "solver_error": err, "solver_failure": failure,
            "known_contact_nodes": int(np.asarray(mi.known_contact).sum()), "notes": mi.notes,
            "params": mi.params, "meta": meta}))
        say(f"manufactured {loaded.label}: residual {cert:.3g} (tolerance {mi.tolerance:.3g}), "
            f"solver error {err if err is None else format(err, '.3g')}", ok=ok)
        return 0 if ok else 2
    try:
        brute = brute_force_solve(man.instance)
    except OracleError as exc:
        raise UsageError(str(exc)) from None
    write_field(out / "brute_u.pobf", brute)
    # the projection scheme shares the brute-force fixed point; other methods are informational
    diffs = {}
    failure = None
    for method in dict.fromkeys(("projection", man.method)):
        try:
            sol = _solve(man, method=method)
            diffs[method] = float(np.abs(sol.u.values - brute.values).max())
        except SolverError as exc:
            failure = f"{method}: {exc}"
    worst = diffs.get("projection", math.inf)
    ok = worst <= _AGREE
    write_json(out / "oracle.json", _stamped({"kind": "brute_force", "sup_difference": diffs,
                                              "agreement_tol": _AGREE, "agrees": ok,
                                              "solver_failure": failure, "meta": meta}))
    say(f"brute force on {loaded.label}: max difference {worst:.3g}", ok=ok)
    return 0 if ok else 2


# report ------------------------------------------------------------------------------


def _report_rows(path: Path, rel: str) -> list:
    rows = []

    def add(kind, metric, value):
        rows.append({"source": rel, "kind": kind, "metric": metric, "value": value})

    if path.suffix == ".csv":
        with path.open(newline="") as fh:
            table = list(csv.DictReader(fh))
        kind = path.stem
        add(kind, "rows", len(table))
        for row in table:
            if row.get("value") == "summary" and row.get("order"):
                add(kind, "min_order", float(row["order"]))
        return rows
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError):
        return rows
    if not isinstance(data, dict):
        return rows
    if path.name == "diagnostics.json":
        d = data.get("diagnostics", {})
        add("solve", "status", data.get("status"))
        for key in ("method", "residual_max", "steps", "contact_plus_nodes", "contact_minus_nodes"):
            if key in d:
                add("solve", key, d[key])
    elif path.name.startswith("probe_"):
        kind = f"probe:{data.get('probe', path.stem[6:])}"
        add(kind, "status", data.get("status"))
        res = data.get("result", {})
        for key in ("holder_fit", "gradient_holder"):
            if res.get(key):
                add(kind, "exponent", res[key].get("exponent"))
                add(kind, "r2", res[key].get("r2"))
        for row in res.get("harnack_table", []):
            add(kind, f"ratio@r={row['r']!r}", row["ratio"])
        for row in res.get("decay_table", []):
            add(kind, f"theta@r={row['r']!r}", row["theta"])
        expos = [row["exponent"] for row in res.get("contact_table", [])
                 if isinstance(row.get("exponent"), (int, float))]
        if expos:
            add(kind, "min_exponent", min(expos))
        if "max_value" in res:
            add(kind, "max_value", res["max_value"])
        if "exponents" in res:
            for key in ("alpha0", "beta0", "beta2"):
                add(kind, key, res["exponents"][key])
    elif path.name == "oracle.json":
        for key in ("kind", "certify_residual", "solver_error", "agrees", "certified"):
            if key in data:
                add("oracle", key, data[key] if not isinstance(data[key], dict) else None)
        for method, v in sorted(data.get("sup_difference", {}).items()):
            add("oracle", f"difference:{method}", v)
    elif path.name.startswith("sweep_"):
        add(f"sweep:{data.get('axis')}", "status", data.get("status"))
    return rows


def cmd_report(args) -> int:
    out = _out(args)
    sources = [Path(d) for d in (args.inputs or [args.out])]
    rows = []
    for src in sources:
        if not src.is_dir():
            raise UsageError(f"{src}: not a directory")
        for path in sorted(src.rglob("*")):
            if not path.is_file() or path.name.startswith("summary."):
                continue
            if path.suffix == ".csv" and path.name.startswith("sweep_"):
                rows += _report_rows(path, str(path.relative_to(src)))
            elif path.suffix == ".json" and (path.name in ("diagnostics.json", "oracle.json")
                                             or path.name.startswith(("probe_", "sweep_"))):
                rows += _report_rows(path, str(path.relative_to(src)))
    write_json(out / "summary.json", _stamped({"entries": rows, "sources": [str(s) for s in sources]}))
    _write_rows(out / "summary.csv", rows, ("source", "kind", "metric", "value"))
    say(f"report: {len(rows)} entries from {len(sources)} director{'y' if len(sources) == 1 else 'ies'}")
    return 0

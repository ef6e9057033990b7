"""Ground truth: brute-force discrete fixed points and manufactured instances."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize

from .lattice import GridField, LatticeDomain
from .operators import OperatorSpec, apply_operator
from .solvers import (
    ProblemInstance,
    Solution,
    SolverConfig,
    elliptic_residual,
    minmax_residual,
    solve_elliptic,
    solve_obstacle,
    solve_projection,
)

__all__ = [
    "OracleError",
    "ManufacturedInstance",
    "brute_force_solve",
    "manufactured_contact",
    "elliptic_parabola_1d",
    "parabolic_traveling_band",
    "pure_pde",
    "RateTable",
    "convergence_study",
    "restrict",
]

MAX_BRUTE_NODES = 50_000


class OracleError(RuntimeError):
    pass


def brute_force_solve(instance: ProblemInstance, tol: float = 1e-13, init: str = "clamp",
                      max_iters: int | None = None) -> GridField:
    """Fixed point of the projected explicit scheme by global space-time Jacobi sweeps.

    Each sweep recomputes every time level from the previous iterate, so the
    exact fixed point is reached after at most ``nt`` sweeps; the loop stops
    when a sweep changes nothing by more than ``tol``.
    """
    instance.validate()
    dom = instance.domain
    if dom.size > MAX_BRUTE_NODES:
        raise OracleError(f"brute force limited to {MAX_BRUTE_NODES} nodes, got {dom.size}")
    f, phi, psi, g = (a.values for a in (instance.f, instance.phi, instance.psi, instance.g))
    if init == "clamp":
        u = np.clip(g, phi, psi)
    elif init == "psi":
        u = np.array(psi, dtype=float)
    else:
        raise ValueError("init must be 'clamp' or 'psi'")
    bd = dom.spatial_boundary_mask()
    u[..., 0] = g[..., 0]
    u[bd] = g[bd]
    inner = dom.interior_slices()
    max_iters = max_iters or 4 * dom.nt + 10
    for _ in range(max_iters):
        new = u.copy()
        for m in range(dom.nt - 1):
            w = u[inner + (m,)] - dom.tau * (apply_operator(instance.operator, u[..., m], m)
                                           - f[inner + (m + 1,)])
            new[inner + (m + 1,)] = np.clip(w, phi[inner + (m + 1,)], psi[inner + (m + 1,)])
        change = float(np.abs(new - u).max())
        u = new
        if change < tol:
            return GridField(dom, u)
    raise OracleError(f"brute force did not reach a fixed point in {max_iters} sweeps")


@dataclass(eq=False)
class ManufacturedInstance:
    instance: ProblemInstance
    exact_u: GridField
    known_contact: np.ndarray
    notes: str
    tolerance: float
    params: dict = field(default_factory=dict)
    exact_fn: Callable | None = None

    def certify(self) -> float:
        """Max residual of ``exact_u`` on its own lattice (elliptic form when steady)."""
        if self.params.get("steady"):
            res = elliptic_residual(self.exact_u.values[..., 0], self.instance)
        else:
            res = minmax_residual(self.exact_u, self.instance).values
        return float(np.abs(res).max())


def _check_band(inst: ProblemInstance, u: np.ndarray):
    if np.any(u < inst.phi.values - 1e-12) or np.any(u > inst.psi.values + 1e-12):
        raise OracleError("manufactured instance inconsistent")


def _nested_tau(h: float, T: float, ratio: float = 0.4) -> float:
    nt = max(1, round(T / (ratio * h * h)))
    return T / nt


def elliptic_contact_endpoint(f: float = -16.0, phi: float = -1.0, tol: float = 1e-12) -> float:
    """Left free-boundary point ``a`` of ``-u'' = f``, ``u(0) = 0``, lower obstacle ``phi``.

    The arc tangent to ``phi`` at ``a`` is ``phi + (-f/2)(x - a)^2``; ``a`` solves
    ``arc(0) = 0`` and is located by bisection.
    """
    k = -f / 2.0
    return optimize.bisect(lambda a: phi + k * a * a, 0.0, 0.5, xtol=tol, rtol=4 * np.finfo(float).eps)


def elliptic_parabola_1d(h: float = 1 / 64, f: float = -16.0) -> ManufacturedInstance:
    """``-u'' = f`` on (0, 1), ``u = 0`` at both ends, ``phi = -1``, ``psi = 2``.

    With ``f = -16`` the free solution ``8x(x-1)`` dips to ``-2``, so a contact
    interval ``[a, 1-a]`` with ``a = 1/sqrt(8)`` forms.
    """
    if f >= -8:
        raise OracleError("forcing too weak: no contact interval forms")
    tau = 0.4 * h * h
    dom = LatticeDomain.box([0.0], [1.0], 2 * tau, h, tau)
    a = elliptic_contact_endpoint(f)
    k = -f / 2.0

    def exact(x):
        x = np.asarray(x, dtype=float)
        left = -1.0 + k * (x - a) ** 2
        right = -1.0 + k * (x - (1 - a)) ** 2
        return np.where(x < a, left, np.where(x > 1 - a, right, -1.0))

    x = dom.mesh()[0]
    u = exact(x)
    inst = ProblemInstance(dom, OperatorSpec.heat(dom), GridField.constant(dom, f),
                           GridField.constant(dom, -1.0), GridField.constant(dom, 2.0),
                           GridField.constant(dom, 0.0), p=6.0, q=6.0, beta1=1.0,
                           name="elliptic_parabola_1d")
    _check_band(inst, u)
    # boundary value at 0 and a symmetric difference quotient across the gluing point
    s = 1e-6
    glue = abs(float(exact(0.0))) + abs(float(exact(a + s) - exact(a - s)) / (2 * s))
    if glue > 1e-4:
        raise OracleError("manufactured instance inconsistent")
    contact = (x >= a - 1e-12) & (x <= 1 - a + 1e-12)
    return ManufacturedInstance(inst, GridField(dom, u), contact,
                                "lower-obstacle contact on [a, 1-a], parabola arcs glued C^1",
                                tolerance=-f * h * h, params={"a": a, "steady": True, "h": h},
                                exact_fn=exact)


def parabolic_traveling_band(h: float = 1 / 64, T: float = 0.05, speed: float = 0.5,
                             x_c: float = 0.4, a: float = 0.5, b: float = 1.0, w: float = 0.1,
                             k: float = 2.0, kappa: float = 1.0) -> ManufacturedInstance:
    """Heat equation with an upper obstacle ``psi = a - b xi^2``, ``xi = x - x_c - speed t``.

    The target ``u* = psi - k ((|xi| - w)^+)^2`` touches ``psi`` on the moving
    slab ``|xi| <= w``.  The forcing is the discrete residual of ``u*`` (backward
    time difference, operator at the previous level) plus ``kappa`` on the slab,
    so ``u*`` is an exact fixed point of the projected scheme.
    """
    tau = _nested_tau(h, T)
    dom = LatticeDomain.box([0.0], [1.0], T, h, tau)
    X, Tm = dom.mesh()
    xi = X - x_c - speed * Tm
    psi = a - b * xi * xi
    u = psi - k * np.clip(np.abs(xi) - w, 0.0, None) ** 2
    contact = np.abs(xi) <= w
    op = OperatorSpec.heat(dom)
    f = np.zeros(dom.shape)
    inner = dom.interior_slices()
    for m in range(1, dom.nt):
        f[inner + (m,)] = ((u[inner + (m,)] - u[inner + (m - 1,)]) / tau
                           + apply_operator(op, u[..., m - 1], m - 1))
    f[..., 0] = f[..., 1]
    f[0], f[-1] = f[1], f[-2]
    f = f + kappa * contact
    phi = np.full(dom.shape, -10.0)
    inst = ProblemInstance(dom, op, GridField(dom, f), GridField(dom, phi), GridField(dom, psi),
                           GridField(dom, u), p=12.0, q=12.0, beta1=0.5,
                           name="parabolic_traveling_band")
    _check_band(inst, u)
    mi = ManufacturedInstance(inst, GridField(dom, u), contact & (X > 0) & (X < 1),
                              "upper-obstacle contact on the moving slab |x - x_c - ct| <= w",
                              tolerance=1e-8, params={"h": h, "T": T, "speed": speed, "w": w})
    if mi.certify() > mi.tolerance:
        raise OracleError("manufactured instance inconsistent")
    return mi


def pure_pde(h: float = 1 / 32, T: float = 0.1) -> ManufacturedInstance:
    """Inactive obstacles at -/+1e6 and the heat solution ``exp(-pi^2 t) sin(pi x)``."""
    tau = _nested_tau(h, T, ratio=0.4)
    dom = LatticeDomain.box([0.0], [1.0], T, h, tau)

    def exact(x, t):
        return np.exp(-math.pi ** 2 * t) * np.sin(math.pi * x)

    u = GridField.from_function(dom, exact)
    inst = ProblemInstance(dom, OperatorSpec.heat(dom), GridField.constant(dom, 0.0),
                           GridField.constant(dom, -1e6), GridField.constant(dom, 1e6), u,
                           name="pure_pde")
    return ManufacturedInstance(inst, u, np.zeros(dom.shape, bool),
                                "separable heat solution, obstacles inactive", tolerance=50 * h * h,
                                params={"h": h, "T": T}, exact_fn=exact)


_KINDS = {
    "elliptic_parabola_1d": elliptic_parabola_1d,
    "parabolic_traveling_band": parabolic_traveling_band,
    "pure_pde": pure_pde,
}


def manufactured_contact(kind: str, **params) -> ManufacturedInstance:
    try:
        maker = _KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown manufactured kind {kind!r}; choose from {sorted(_KINDS)}") from None
    return maker(**params)


# convergence -------------------------------------------------------------------


def restrict(fine: GridField, coarse: LatticeDomain) -> np.ndarray:
    """Sample a fine-lattice field on the nodes of a nested coarse lattice."""
    fd = fine.domain
    sx = coarse.h / fd.h
    st = coarse.tau / fd.tau
    if abs(sx - round(sx)) > 1e-9 or abs(st - round(st)) > 1e-9:
        raise ValueError("lattices are not nested")
    off = [round((coarse.spatial_low[i] - fd.spatial_low[i]) / fd.h) for i in range(fd.n)]
    sl = tuple(slice(off[i], off[i] + round(sx) * (coarse.spatial_shape[i] - 1) + 1, round(sx))
               for i in range(fd.n))
    return fine.values[sl + (slice(0, round(st) * (coarse.nt - 1) + 1, round(st)),)]


@dataclass
class RateTable:
    rows: list
    orders: list
    monotone: bool
    flags: list

    @property
    def min_order(self) -> float:
        vals = [o for o in self.orders if o is not None]
        return min(vals) if vals else math.inf

    @property
    def fitted_order(self) -> float | None:
        """Least-squares slope of ``log error`` against ``log h`` over all levels.

        Pairwise orders swing when a free boundary sits differently relative to
        each grid; the fit averages that out.
        """
        pts = [(math.log(r["h"]), math.log(r["error"])) for r in self.rows if r["error"] > 0]
        if len(pts) < 2:
            return None
        x, y = np.array(pts).T
        return float(np.polyfit(x, y, 1)[0])


_SOLVERS = {
    "projection": solve_projection,
    "elliptic": solve_elliptic,
    "obstacle": solve_obstacle,
}


def convergence_study(maker: Callable, solver="projection", grids=(1 / 16, 1 / 32, 1 / 64),
                      config: SolverConfig | None = None) -> RateTable:
    """Sup-norm errors against ``exact_u`` (manufactured) or the finest solve (self-convergence)."""
    grids = list(grids)
    if len(grids) < 3:
        raise ValueError("need at least 3 grid levels")
    for hc, hf in zip(grids, grids[1:]):
        if abs(hc / hf - 2) > 1e-9:
            raise ValueError("grid levels must be nested by factor 2")
    solve = _SOLVERS[solver] if isinstance(solver, str) else solver
    config = config or SolverConfig()
    built = [maker(h) for h in grids]
    sols: list[Solution] = [solve(b.instance if isinstance(b, ManufacturedInstance) else b, config)
                            for b in built]
    errors = []
    for b, s in zip(built, sols):
        if isinstance(b, ManufacturedInstance):
            errors.append(float(np.abs(s.u.values - b.exact_u.values).max()))
        else:
            errors.append(float(np.abs(s.u.values - restrict(sols[-1].u, s.u.domain)).max()))
    if not all(isinstance(b, ManufacturedInstance) for b in built):
        errors = errors[:-1]
        grids_used = grids[:-1]
    else:
        grids_used = grids
    orders, flags = [None], []
    for e0, e1 in zip(errors, errors[1:]):
        if e0 == 0 and e1 == 0:
            orders.append(None)
            flags.append("exact")
        elif e1 == 0:
            orders.append(math.inf)
        elif e0 == 0:
            orders.append(-math.inf)
        else:
            orders.append(math.log2(e0 / e1))
    monotone = all(e1 <= e0 for e0, e1 in zip(errors, errors[1:]))
    if not monotone:
        flags.append("non-monotone error sequence")
    rows = [{"h": h, "error": e, "order": o} for h, e, o in zip(grids_used, errors, orders)]
    return RateTable(rows, orders[1:], monotone, flags)

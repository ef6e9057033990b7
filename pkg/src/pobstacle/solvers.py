"""Time-marching solvers for the bilateral obstacle problem.

All parabolic solvers share one explicit step

    w = u^m - tau * (F_h(u^m) - f^{m+1}),     u^{m+1} = P(w)

on spatially interior nodes, with ``P`` either the implicit penalty map
(:func:`penalty_pointwise_step`) or the clamp onto ``[phi, psi]``.  Lateral
nodes are overwritten with ``g`` at every level.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .lattice import GridField, LatticeDomain, parabolic_boundary
from .mollification import mollify_operator, parabolic_mollify, shift_obstacles
from .operators import OperatorSpec, apply_operator

__all__ = [
    "ProblemInstance",
    "SolverConfig",
    "Solution",
    "SolverError",
    "penalty_pointwise_step",
    "cfl_bound",
    "scheme_step",
    "solve_penalized",
    "solve_projection",
    "solve_obstacle",
    "solve_elliptic",
    "minmax_residual",
    "elliptic_residual",
    "default_coincidence_tol",
]

_ORDER_TOL = 1e-12


class SolverError(RuntimeError):
    """Raised when a solve cannot start or fails to converge."""

    def __init__(self, message: str, table=None):
        super().__init__(message)
        self.table = table


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    domain: LatticeDomain
    operator: OperatorSpec
    f: GridField
    phi: GridField
    psi: GridField
    g: GridField
    p: float = 6.0
    q: float = 6.0
    beta1: float = 0.5
    name: str = "instance"

    def validate(self) -> "ProblemInstance":
        n = self.domain.n
        for label, fld in (("f", self.f), ("phi", self.phi), ("psi", self.psi), ("g", self.g)):
            if fld.domain.shape != self.domain.shape:
                raise ValueError(f"{label} lives on a different lattice")
        if self.operator.domain.shape != self.domain.shape:
            raise ValueError("operator lives on a different lattice")
        if np.any(self.phi.values > self.psi.values + _ORDER_TOL):
            raise ValueError("obstacle order violated")
        bd = parabolic_boundary(self.domain)
        g = self.g.values[bd]
        if np.any(g < self.phi.values[bd] - _ORDER_TOL) or np.any(g > self.psi.values[bd] + _ORDER_TOL):
            raise ValueError("boundary datum outside the obstacle band")
        if self.q < self.p:
            raise ValueError("exponent order violated")
        if self.p <= (n + 2) / 2:
            raise ValueError("exponent regime violated")
        return self

    @property
    def time_independent(self) -> bool:
        def const(a):
            a = np.asarray(a)
            return a.shape[self.domain.n] == 1 or bool(np.all(a == a[(slice(None),) * self.domain.n + (slice(0, 1),)]))
        op = self.operator
        arrays = [self.f.values, self.phi.values, self.psi.values, self.g.values, op.mu]
        arrays += [a for a in (op.A, op.b) if a is not None]
        for Ai, bi in op.branches:
            arrays += [Ai, bi]
        return all(const(a) for a in arrays)

    def replace(self, **kw) -> "ProblemInstance":
        return dataclasses.replace(self, **kw)

    def mollified(self, eps: float) -> "ProblemInstance":
        """Instance with ``F_eps``, ``f_eps`` and the shifted obstacles; ``eps = 0`` is a no-op."""
        if eps == 0:
            return self
        if eps < 0:
            raise ValueError("eps must be nonnegative")
        phi_e, psi_e = shift_obstacles(self.phi, self.psi, eps)
        return self.replace(operator=mollify_operator(self.operator, eps),
                            f=parabolic_mollify(self.f, eps, extension="zero"),
                            phi=phi_e, psi=psi_e)

    def describe(self) -> dict:
        return {"name": self.name, "domain": self.domain.describe(),
                "operator": self.operator.describe(),
                "exponents": {"p": self.p, "q": self.q, "beta1": self.beta1}}


@dataclass(frozen=True)
class SolverConfig:
    delta: float = 1e-3
    eps_mollify: float = 0.0
    time_scheme: str = "explicit_diffusion_implicit_penalty"
    cfl_safety: float = 0.9
    delta_sweep: tuple = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6)
    tol_fixed_point: float = 1e-9
    tol_sweep: float = 1e-3
    max_iters: int = 2_000_000
    coincidence_tol: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "delta_sweep", tuple(float(d) for d in self.delta_sweep))
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.eps_mollify < 0:
            raise ValueError("eps_mollify must be nonnegative")
        if self.time_scheme != "explicit_diffusion_implicit_penalty":
            raise ValueError(f"unknown time scheme {self.time_scheme!r}")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError("cfl_safety must lie in (0, 1]")
        if any(d <= 0 for d in self.delta_sweep):
            raise ValueError("deltas must be positive")
        if any(b >= a for a, b in zip(self.delta_sweep, self.delta_sweep[1:])):
            raise ValueError("delta sweep must be strictly decreasing")
        if self.tol_fixed_point <= 0 or self.tol_sweep <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["delta_sweep"] = list(self.delta_sweep)
        return d


@dataclass(eq=False)
class Solution:
    u: GridField
    coincidence_plus: np.ndarray
    coincidence_minus: np.ndarray
    penalty_max: dict
    steps: int
    method: str
    delta: float | None
    data: ProblemInstance = field(repr=False)
    gaps: list = field(default_factory=list)
    iterations: int = 0
    history: list = field(default_factory=list)
    _residual: GridField | None = field(default=None, repr=False)

    @property
    def residual(self) -> GridField:
        """Min-max residual against the (mollified) data, computed on first use."""
        if self._residual is None:
            self._residual = minmax_residual(self.u, self.data)
        return self._residual

    @property
    def residual_max(self) -> float:
        return float(np.abs(self.residual.values).max())

    def diagnostics(self) -> dict:
        return {
            "method": self.method,
            "delta": self.delta,
            "steps": self.steps,
            "iterations": self.iterations,
            "penalty_max": [{"delta": d, "penalty_max": v} for d, v in self.penalty_max.items()],
            "sweep_gaps": list(self.gaps),
            "residual_max": self.residual_max,
            "contact_plus_nodes": int(self.coincidence_plus.sum()),
            "contact_minus_nodes": int(self.coincidence_minus.sum()),
            "u_min": float(self.u.values.min()),
            "u_max": float(self.u.values.max()),
        }


def penalty_pointwise_step(w, phi, psi, c):
    """Solve ``v + c (v - psi)^+ - c (phi - v)^+ = w`` in closed form (vectorised)."""
    w, phi, psi = (np.asarray(a, dtype=float) for a in (w, phi, psi))
    if np.any(phi > psi):
        raise ValueError("obstacle order violated")
    if not c > 0:
        raise ValueError("penalty ratio c must be positive")
    if math.isinf(c):
        out = np.clip(w, phi, psi)
    else:
        out = np.where(w > psi, (w + c * psi) / (1 + c), np.where(w < phi, (w + c * phi) / (1 + c), w))
    return out if out.ndim else float(out)


def cfl_bound(spec: OperatorSpec, safety: float = 1.0) -> float:
    """Largest stable ``tau`` for the explicit step."""
    dom = spec.domain
    n, h, Lam = dom.n, dom.h, spec.ellipticity.Lam
    denom = 2 * n * Lam + (2 * Lam if n == 2 else 0.0) + h * math.sqrt(n) * spec.drift_bound()
    return safety * h * h / denom


def default_coincidence_tol(domain: LatticeDomain, config: SolverConfig) -> float:
    if config.coincidence_tol is not None:
        return config.coincidence_tol
    return 10.0 * (config.tol_fixed_point + domain.h ** 2)


def _check_cfl(spec: OperatorSpec, config: SolverConfig):
    bound = cfl_bound(spec, config.cfl_safety)
    if spec.domain.tau > bound * (1 + 1e-12):
        raise SolverError(f"CFL violated: tau={spec.domain.tau:.6g} exceeds {bound:.6g}")


def scheme_step(spec: OperatorSpec, u_level: np.ndarray, m: int, f_next, phi_next, psi_next,
                g_next, c: float = math.inf) -> np.ndarray:
    """One marching step from level ``m`` to ``m + 1``; ``c = inf`` is the projection."""
    dom = spec.domain
    inner = dom.interior_slices()
    w = u_level[inner] - dom.tau * (apply_operator(spec, u_level, m) - f_next[inner])
    out = np.array(g_next, dtype=float, copy=True)
    out[inner] = penalty_pointwise_step(w, phi_next[inner], psi_next[inner], c)
    return out


def _march(data: ProblemInstance, c: float):
    dom = data.domain
    f, phi, psi, g = data.f.values, data.phi.values, data.psi.values, data.g.values
    u = np.empty(dom.shape)
    u[..., 0] = g[..., 0]
    for m in range(dom.nt - 1):
        nxt = scheme_step(data.operator, u[..., m], m, f[..., m + 1], phi[..., m + 1],
                          psi[..., m + 1], g[..., m + 1], c)
        if not np.all(np.isfinite(nxt)):
            raise SolverError(f"non-finite values at step {m + 1}")
        u[..., m + 1] = nxt
    return u


def _prepare(instance: ProblemInstance, config: SolverConfig) -> ProblemInstance:
    instance.validate()
    data = instance.mollified(config.eps_mollify)
    _check_cfl(data.operator, config)
    return data


def _penalty_sup(u, data: ProblemInstance, delta: float) -> float:
    over = np.clip(u - data.psi.values, 0, None) + np.clip(data.phi.values - u, 0, None)
    return float(over.max() / delta)


def _finish(u, data, config, method, delta, penalty, slack=0.0, **extra) -> Solution:
    from .regularity import coincidence_sets

    dom = data.domain
    ufield = GridField(dom, u)
    tol = default_coincidence_tol(dom, config) + slack
    cplus, cminus, _, _ = coincidence_sets(ufield, data.phi, data.psi, tol)
    return Solution(u=ufield, coincidence_plus=cplus, coincidence_minus=cminus,
                    penalty_max=penalty,
                    steps=dom.nt - 1, method=method, delta=delta, data=data, **extra)


def solve_penalized(instance: ProblemInstance, config: SolverConfig | None = None,
                    delta: float | None = None) -> Solution:
    config = config or SolverConfig()
    delta = config.delta if delta is None else float(delta)
    if delta <= 0:
        raise ValueError("delta must be positive")
    data = _prepare(instance, config)
    u = _march(data, data.domain.tau / delta)
    pm = _penalty_sup(u, data, delta)
    return _finish(u, data, config, "penalized", delta, {delta: pm}, slack=delta * pm)


def solve_projection(instance: ProblemInstance, config: SolverConfig | None = None) -> Solution:
    config = config or SolverConfig()
    data = _prepare(instance, config)
    u = _march(data, math.inf)
    return _finish(u, data, config, "projection", None, {})


def solve_obstacle(instance: ProblemInstance, config: SolverConfig | None = None) -> Solution:
    """Penalized solves over ``config.delta_sweep`` with a sweep-Cauchy certificate."""
    config = config or SolverConfig()
    if not config.delta_sweep:
        raise ValueError("delta_sweep must be nonempty")
    data = _prepare(instance, config)
    tau = data.domain.tau
    penalty, gaps, prev, u = {}, [], None, None
    for d in config.delta_sweep:
        u = _march(data, tau / d)
        penalty[d] = _penalty_sup(u, data, d)
        if prev is not None:
            gaps.append(float(np.abs(u - prev).max()))
        prev = u
    table = [{"delta": d, "penalty_max": penalty[d], "gap": (gaps[k - 1] if k else None)}
             for k, d in enumerate(config.delta_sweep)]
    # early deltas are pre-asymptotic; certify on the tail of the gap sequence
    tail = gaps[-3:]
    monotone = all(b <= a + 1e-14 for a, b in zip(tail, tail[1:]))
    if not monotone or (gaps and gaps[-1] > config.tol_sweep):
        raise SolverError("delta sweep did not converge", table)
    d = config.delta_sweep[-1]
    slack = d * penalty[d]
    lo = data.phi.values - slack - 1e-12
    hi = data.psi.values + slack + 1e-12
    if np.any(u < lo) or np.any(u > hi):
        raise SolverError("solution left the obstacle band", table)
    return _finish(u, data, config, "obstacle", d, penalty, slack=slack, gaps=gaps)


def minmax_residual(u: GridField, instance: ProblemInstance) -> GridField:
    """``min{max{D_t^- u + F_h(u) - f, u - psi}, u - phi}`` on interior nodes, ``u - g`` on the boundary.

    ``F_h`` is taken at the previous time level, matching the explicit step, so
    fixed points of the projection scheme have residual zero up to rounding.
    """
    dom = instance.domain
    vals = u.values
    res = vals - instance.g.values
    inner = dom.interior_slices()
    f, phi, psi = instance.f.values, instance.phi.values, instance.psi.values
    for m in range(1, dom.nt):
        eq = ((vals[..., m] - vals[..., m - 1])[inner] / dom.tau
              + apply_operator(instance.operator, vals[..., m - 1], m - 1) - f[..., m][inner])
        um = vals[..., m][inner]
        r = np.minimum(np.maximum(eq, um - psi[..., m][inner]), um - phi[..., m][inner])
        res[inner + (m,)] = r
    return GridField(dom, res)


def elliptic_residual(u_level: np.ndarray, instance: ProblemInstance) -> np.ndarray:
    """Steady residual ``min{max{F_h(u) - f, u - psi}, u - phi}`` on one spatial slab."""
    dom = instance.domain
    inner = dom.interior_slices()
    res = np.asarray(u_level, dtype=float) - instance.g.values[..., 0]
    c = res[inner]
    eq = apply_operator(instance.operator, u_level, 0) - instance.f.values[..., 0][inner]
    um = np.asarray(u_level)[inner]
    c[...] = np.minimum(np.maximum(eq, um - instance.psi.values[..., 0][inner]),
                        um - instance.phi.values[..., 0][inner])
    res[inner] = c
    return res


def solve_elliptic(instance: ProblemInstance, config: SolverConfig | None = None,
                   initial: np.ndarray | None = None) -> Solution:
    """Steady state by damped projected fixed-point iteration (pseudo-time marching).

    Stops when the pseudo-time velocity ``max|u_new - u| / omega`` drops below
    ``config.tol_fixed_point``.  The returned ``u`` repeats the steady slab at
    every time level of the instance lattice.
    """
    config = config or SolverConfig()
    instance.validate()
    if not instance.time_independent:
        raise ValueError("elliptic mode needs time-independent data")
    data = instance.mollified(config.eps_mollify)
    dom = data.domain
    spec = data.operator
    n, h, Lam = dom.n, dom.h, spec.ellipticity.Lam
    omega = config.cfl_safety * h * h / (2 * n * Lam + (2 * Lam if n == 2 else 0.0)
                                         + h * math.sqrt(n) * spec.drift_bound())
    inner = dom.interior_slices()
    f = data.f.values[..., 0][inner]
    phi = data.phi.values[..., 0][inner]
    psi = data.psi.values[..., 0][inner]
    u = np.array(data.g.values[..., 0], dtype=float)
    if initial is not None:
        u[inner] = np.asarray(initial, dtype=float)[inner]
    u[inner] = np.clip(u[inner], phi, psi)
    history = []
    it = 0
    velocity = math.inf
    while it < config.max_iters:
        new = np.clip(u[inner] - omega * (apply_operator(spec, u, 0) - f), phi, psi)
        velocity = float(np.abs(new - u[inner]).max()) / omega
        u[inner] = new
        it += 1
        if it % 1000 == 0:
            history.append((it, velocity))
            if not math.isfinite(velocity):
                raise SolverError(f"non-finite values at iteration {it}", history)
        if velocity < config.tol_fixed_point:
            break
    else:
        raise SolverError(f"elliptic iteration did not converge in {config.max_iters} iterations",
                          history)
    history.append((it, velocity))
    full = np.repeat(u[..., None], dom.nt, axis=-1)
    sol = _finish(full, data, config, "elliptic", None, {}, iterations=it, history=history)
    res = elliptic_residual(u, data)
    sol._residual = GridField(dom, np.repeat(res[..., None], dom.nt, axis=-1))
    sol.steps = 0
    return sol

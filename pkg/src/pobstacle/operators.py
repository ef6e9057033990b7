"""Pucci extremal operators, structured nonlinearities ``F`` and their discretization.

Sign convention: the parabolic equation is ``u_t + F(x, t, Du, D^2u) = f``, so
``F`` is *nonincreasing* in the Hessian (the heat operator is ``F = -Tr(X)``).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .lattice import GridField, LatticeDomain, SpaceTimePoint, cylinder_indices, CylinderSpec, quasi_norm

__all__ = [
    "EllipticityPair",
    "OperatorKind",
    "OperatorSpec",
    "StructureReport",
    "ThetaScan",
    "sym",
    "sym_eigvals",
    "pucci_plus",
    "pucci_minus",
    "evaluate_F",
    "apply_operator",
    "discrete_apply",
    "check_structure_condition",
    "theta_oscillation",
    "theta_smallness_scan",
]


@dataclass(frozen=True)
class EllipticityPair:
    lam: float
    Lam: float

    def __post_init__(self):
        if not 0 < self.lam <= self.Lam:
            raise ValueError("ellipticity requires 0 < lambda <= Lambda")


class OperatorKind(str, enum.Enum):
    PUCCI_PLUS = "pucci_plus"
    PUCCI_MINUS = "pucci_minus"
    LINEAR = "linear"
    BELLMAN = "bellman"


def sym(X) -> np.ndarray:
    """Symmetrize a square matrix (or a stack of them)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    return 0.5 * (X + np.swapaxes(X, -1, -2))


def sym_eigvals(X: np.ndarray) -> np.ndarray:
    """Eigenvalues of symmetric ``(..., n, n)`` stacks, closed form for ``n <= 2``."""
    n = X.shape[-1]
    if n == 1:
        return X[..., 0, :].copy()
    if n == 2:
        a, b, c = X[..., 0, 0], X[..., 1, 1], 0.5 * (X[..., 0, 1] + X[..., 1, 0])
        mid = 0.5 * (a + b)
        rad = np.hypot(0.5 * (a - b), c)
        return np.stack([mid - rad, mid + rad], axis=-1)
    return np.linalg.eigvalsh(X)


def _pucci_from_eigs(e: np.ndarray, lam: float, Lam: float, plus: bool) -> np.ndarray:
    pos = np.clip(e, 0.0, None).sum(axis=-1)
    neg = np.clip(-e, 0.0, None).sum(axis=-1)
    if plus:
        return -lam * pos + Lam * neg
    return -Lam * pos + lam * neg


def pucci_plus(X, e: EllipticityPair):
    """``max{-Tr(AX) : lambda I <= A <= Lambda I}``."""
    out = _pucci_from_eigs(sym_eigvals(sym(X)), e.lam, e.Lam, plus=True)
    return float(out) if np.ndim(out) == 0 else out


def pucci_minus(X, e: EllipticityPair):
    """``-P^+(-X)``."""
    out = _pucci_from_eigs(sym_eigvals(sym(X)), e.lam, e.Lam, plus=False)
    return float(out) if np.ndim(out) == 0 else out


def _as_matrix_field(A, n: int) -> np.ndarray:
    """Accept a matrix (field) or a scalar (field) multiple of the identity."""
    A = np.asarray(A.values if isinstance(A, GridField) else A, dtype=float)
    if A.ndim >= 2 and A.shape[-2:] == (n, n):
        return sym(A)
    return A[..., None, None] * np.eye(n)


def _coef_array(value, domain: LatticeDomain, tail: tuple, name: str) -> np.ndarray:
    arr = np.asarray(value.values if isinstance(value, GridField) else value, dtype=float)
    target = domain.shape + tail
    try:
        np.broadcast_shapes(arr.shape, target)
    except ValueError:
        raise ValueError(f"{name} with shape {arr.shape} cannot broadcast to {target}") from None
    if arr.ndim < len(target):
        arr = arr.reshape((1,) * (len(target) - arr.ndim) + arr.shape)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class OperatorSpec:
    """The nonlinearity ``F`` with its ellipticity pair and drift bound ``mu``.

    Coefficient arrays broadcast against ``domain.shape`` (plus a trailing
    ``(n, n)`` for matrices and ``(n,)`` for vectors), so constant coefficients
    can be stored with singleton axes.
    """

    kind: OperatorKind
    ellipticity: EllipticityPair
    domain: LatticeDomain
    mu: np.ndarray = field(repr=False)
    A: np.ndarray | None = field(default=None, repr=False)
    b: np.ndarray | None = field(default=None, repr=False)
    branches: tuple = field(default=(), repr=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", OperatorKind(self.kind))
        mu = _coef_array(self.mu, self.domain, (), "mu")
        if np.any(mu < 0):
            raise ValueError("drift bound mu must be nonnegative")
        object.__setattr__(self, "mu", mu)
        n = self.domain.n
        if self.kind is OperatorKind.LINEAR:
            if self.A is None:
                raise ValueError("linear operator needs a coefficient matrix A")
            object.__setattr__(self, "A", _coef_array(sym(self.A), self.domain, (n, n), "A"))
            b = np.zeros(n) if self.b is None else self.b
            object.__setattr__(self, "b", _coef_array(b, self.domain, (n,), "b"))
        elif self.kind is OperatorKind.BELLMAN:
            if not self.branches:
                raise ValueError("bellman operator needs at least one branch")
            clean = []
            for Ai, bi in self.branches:
                bi = np.zeros(n) if bi is None else bi
                clean.append((_coef_array(sym(Ai), self.domain, (n, n), "A_i"),
                              _coef_array(bi, self.domain, (n,), "b_i")))
            object.__setattr__(self, "branches", tuple(clean))

    # constructors -------------------------------------------------------

    @classmethod
    def pucci(cls, domain, plus: bool = True, lam: float = 1.0, Lam: float = 1.0, mu=0.0):
        kind = OperatorKind.PUCCI_PLUS if plus else OperatorKind.PUCCI_MINUS
        return cls(kind, EllipticityPair(lam, Lam), domain, mu)

    @classmethod
    def linear(cls, domain, A, b=None, mu=None, ellipticity: EllipticityPair | None = None):
        n = domain.n
        A = _as_matrix_field(A, n)
        if ellipticity is None:
            e = sym_eigvals(A.reshape(-1, n, n))
            ellipticity = EllipticityPair(float(e.min()), float(e.max()))
        if mu is None:
            mu = 0.0 if b is None else np.linalg.norm(np.asarray(b, dtype=float), axis=-1)
        return cls(OperatorKind.LINEAR, ellipticity, domain, mu, A=A, b=b)

    @classmethod
    def heat(cls, domain, diffusivity: float = 1.0):
        return cls.linear(domain, diffusivity * np.eye(domain.n))

    @classmethod
    def bellman(cls, domain, branches, ellipticity: EllipticityPair, mu=0.0):
        norm = tuple((_as_matrix_field(Ai, domain.n), bi) for Ai, bi in branches)
        return cls(OperatorKind.BELLMAN, ellipticity, domain, mu, branches=norm)

    # helpers -----------------------------------------------------------

    @property
    def is_extremal(self) -> bool:
        return self.kind in (OperatorKind.PUCCI_PLUS, OperatorKind.PUCCI_MINUS)

    def drift_bound(self) -> float:
        """Largest first-order coefficient: ``max mu`` or ``max |b|``."""
        vals = [float(self.mu.max())]
        for b in self._vectors():
            vals.append(float(np.linalg.norm(b, axis=-1).max()))
        return max(vals)

    def _vectors(self):
        if self.kind is OperatorKind.LINEAR:
            yield self.b
        for _, bi in self.branches:
            yield bi

    def with_coefficients(self, mu=None, A=None, b=None, branches=None) -> "OperatorSpec":
        return OperatorSpec(self.kind, self.ellipticity, self.domain,
                            self.mu if mu is None else mu,
                            self.A if A is None else A,
                            self.b if b is None else b,
                            self.branches if branches is None else branches)

    def describe(self) -> dict:
        return {
            "kind": self.kind.value,
            "lambda": self.ellipticity.lam,
            "Lambda": self.ellipticity.Lam,
            "mu_max": float(self.mu.max()),
            "drift_bound": self.drift_bound(),
            "branches": len(self.branches),
        }


def _at_level(arr: np.ndarray, m: int, domain: LatticeDomain) -> np.ndarray:
    """Spatial slab at time index ``m``, broadcast to the full spatial shape."""
    n = domain.n
    lvl = arr[(slice(None),) * n + (m if arr.shape[n] > 1 else 0,)]
    return np.broadcast_to(lvl, domain.spatial_shape + arr.shape[n + 1:])


def _at_nodes(arr: np.ndarray, nodes: np.ndarray, domain: LatticeDomain) -> np.ndarray:
    full = np.broadcast_to(arr, domain.shape + arr.shape[domain.n + 1:])
    return full[tuple(nodes.T)]


def _core(spec: OperatorSpec, mu, A, b, branches, grad, norm_up, norm_down, hess):
    """Evaluate ``F`` from precomputed derivative pieces.

    ``norm_up``/``norm_down`` are the Godunov gradient magnitudes used for the
    ``+mu|Du|`` and ``-mu|Du|`` drift terms; for exact derivatives both are ``|xi|``.
    """
    kind = spec.kind
    lam, Lam = spec.ellipticity.lam, spec.ellipticity.Lam
    if kind is OperatorKind.PUCCI_PLUS:
        return _pucci_from_eigs(sym_eigvals(hess), lam, Lam, True) + mu * norm_up
    if kind is OperatorKind.PUCCI_MINUS:
        return _pucci_from_eigs(sym_eigvals(hess), lam, Lam, False) - mu * norm_down
    if kind is OperatorKind.LINEAR:
        return -np.einsum("...ij,...ij->...", A, hess) - np.einsum("...i,...i->...", b, grad)
    vals = [-np.einsum("...ij,...ij->...", Ai, hess) - np.einsum("...i,...i->...", bi, grad)
            for Ai, bi in branches]
    return np.max(np.stack(vals), axis=0)


def evaluate_F(spec: OperatorSpec, x, t: float, xi, X) -> float:
    """Pointwise ``F(x, t, xi, X)`` at a lattice node."""
    node = np.array([spec.domain.locate(x, t)])
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    X = sym(X)
    out = _evaluate_at_nodes(spec, node, xi[None], xi[None], X[None])
    return float(out[0])


def _evaluate_at_nodes(spec, nodes, xi, zeta_unused, X):
    dom = spec.domain
    mu = _at_nodes(spec.mu, nodes, dom)
    A = _at_nodes(spec.A, nodes, dom) if spec.A is not None else None
    b = _at_nodes(spec.b, nodes, dom) if spec.b is not None else None
    branches = [(_at_nodes(Ai, nodes, dom), _at_nodes(bi, nodes, dom)) for Ai, bi in spec.branches]
    norm = np.linalg.norm(xi, axis=-1)
    return _core(spec, mu, A, b, branches, xi, norm, norm, X)


def _stencil(u: np.ndarray, h: float):
    """Central Hessian, central gradient and one-sided differences on the interior."""
    n = u.ndim
    inner = (slice(1, -1),) * n
    c = u[inner]
    hess = np.empty(c.shape + (n, n))
    grad = np.empty(c.shape + (n,))
    fwd = np.empty(c.shape + (n,))
    bwd = np.empty(c.shape + (n,))
    for i in range(n):
        plus = list(inner)
        minus = list(inner)
        plus[i] = slice(2, None)
        minus[i] = slice(None, -2)
        up, um = u[tuple(plus)], u[tuple(minus)]
        hess[..., i, i] = (up - 2.0 * c + um) / (h * h)
        grad[..., i] = (up - um) / (2.0 * h)
        fwd[..., i] = (up - c) / h
        bwd[..., i] = (c - um) / h
    if n == 2:
        pp = u[2:, 2:]
        pm = u[2:, :-2]
        mp = u[:-2, 2:]
        mm = u[:-2, :-2]
        cross = (pp - pm - mp + mm) / (4.0 * h * h)
        hess[..., 0, 1] = cross
        hess[..., 1, 0] = cross
    return grad, fwd, bwd, hess


def _godunov_norms(fwd: np.ndarray, bwd: np.ndarray):
    # norm_up is nonincreasing in neighbour values, norm_down nondecreasing
    up = np.maximum(np.clip(bwd, 0.0, None), np.clip(-fwd, 0.0, None))
    down = np.maximum(np.clip(fwd, 0.0, None), np.clip(-bwd, 0.0, None))
    return np.sqrt((up * up).sum(axis=-1)), np.sqrt((down * down).sum(axis=-1))


def apply_operator(spec: OperatorSpec, u_level: np.ndarray, m: int) -> np.ndarray:
    """Discrete ``F(x, t_m, Du, D^2u)`` on every spatially interior node of one time slab."""
    dom = spec.domain
    u_level = np.asarray(u_level, dtype=float)
    if u_level.shape != dom.spatial_shape:
        raise ValueError("time slab shape does not match the domain")
    inner = dom.interior_slices()
    grad, fwd, bwd, hess = _stencil(u_level, dom.h)
    up, down = _godunov_norms(fwd, bwd)
    mu = _at_level(spec.mu, m, dom)[inner]
    A = _at_level(spec.A, m, dom)[inner] if spec.A is not None else None
    b = _at_level(spec.b, m, dom)[inner] if spec.b is not None else None
    branches = [(_at_level(Ai, m, dom)[inner], _at_level(bi, m, dom)[inner])
                for Ai, bi in spec.branches]
    return _core(spec, mu, A, b, branches, grad, up, down, hess)


def discrete_apply(spec: OperatorSpec, u: GridField, node) -> float:
    dom = spec.domain
    node = tuple(int(k) for k in node)
    for i in range(dom.n):
        if not 0 < node[i] < dom.spatial_shape[i] - 1:
            raise ValueError("stencil out of domain")
    m = node[dom.n]
    vals = apply_operator(spec, u.values[..., m], m)
    return float(vals[tuple(k - 1 for k in node[:dom.n])])


# structure condition -----------------------------------------------------


@dataclass
class StructureReport:
    samples: int
    max_violation: float
    normalization_error: float
    tolerance: float
    offending: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.offending and self.normalization_error <= self.tolerance


def _random_sym(rng, k: int, n: int, scale: float) -> np.ndarray:
    return sym(rng.normal(scale=scale, size=(k, n, n)))


def check_structure_condition(spec: OperatorSpec, samples: int = 10_000, seed: int = 0,
                              tol: float = 1e-9, scale: float = 1.0,
                              max_reported: int = 20) -> StructureReport:
    """Sample the two-sided Pucci sandwich at random nodes and arguments."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    dom = spec.domain
    n = dom.n
    nodes = np.stack([rng.integers(0, s, size=samples) for s in dom.shape], axis=1)
    xi = rng.normal(scale=scale, size=(samples, n))
    zeta = rng.normal(scale=scale, size=(samples, n))
    X = _random_sym(rng, samples, n, scale)
    Y = _random_sym(rng, samples, n, scale)
    Fx = _evaluate_at_nodes(spec, nodes, xi, None, X)
    Fy = _evaluate_at_nodes(spec, nodes, zeta, None, Y)
    F0 = _evaluate_at_nodes(spec, nodes, np.zeros((samples, n)), None, np.zeros((samples, n, n)))
    mu = _at_nodes(spec.mu, nodes, dom)
    e = spec.ellipticity
    d = np.linalg.norm(xi - zeta, axis=-1)
    lower = pucci_minus(X - Y, e) - mu * d
    upper = pucci_plus(X - Y, e) + mu * d
    diff = Fx - Fy
    viol = np.maximum.reduce([lower - diff, diff - upper, np.zeros(samples)])
    bad = np.flatnonzero(viol > tol)
    offending = []
    for k in bad[np.argsort(-viol[bad])][:max_reported]:
        offending.append({
            "node": [int(v) for v in nodes[k]],
            "xi": xi[k].tolist(), "zeta": zeta[k].tolist(),
            "X": X[k].tolist(), "Y": Y[k].tolist(),
            "violation": float(viol[k]),
        })
    return StructureReport(samples, float(viol.max()), float(np.abs(F0).max()), tol, offending)


# coefficient oscillation -------------------------------------------------


def _nuclear(M: np.ndarray) -> np.ndarray:
    return np.abs(sym_eigvals(M)).sum(axis=-1)


def theta_is_upper_bound(spec: OperatorSpec) -> bool:
    return spec.kind is OperatorKind.BELLMAN


def _theta_to_nodes(spec: OperatorSpec, center: tuple, nodes: np.ndarray) -> np.ndarray:
    if spec.is_extremal:
        return np.zeros(len(nodes))
    dom = spec.domain
    c = np.array([center])
    mats = [spec.A] if spec.kind is OperatorKind.LINEAR else [Ai for Ai, _ in spec.branches]
    out = np.zeros(len(nodes))
    for M in mats:
        out = np.maximum(out, _nuclear(_at_nodes(M, c, dom) - _at_nodes(M, nodes, dom)))
    return out


def theta_oscillation(spec: OperatorSpec, a: SpaceTimePoint, b: SpaceTimePoint) -> float:
    """``sup_X |F(a,0,X) - F(b,0,X)| / (1 + |X|)`` with the spectral norm on ``X``.

    Linear kinds give the nuclear norm of ``A(a) - A(b)``; for Bellman kinds the
    value is the branchwise upper bound (see :func:`theta_is_upper_bound`).
    """
    dom = spec.domain
    ia = dom.locate(a.x, a.t)
    ib = dom.locate(b.x, b.t)
    return float(_theta_to_nodes(spec, ia, np.array([ib]))[0])


@dataclass
class ThetaScan:
    rows: list
    max_value: float
    target_delta: float
    upper_bound: bool

    @property
    def passed(self) -> bool:
        return self.max_value <= self.target_delta


def theta_smallness_scan(spec: OperatorSpec, region: np.ndarray, radii, target_delta: float) -> ThetaScan:
    """``(1/r) ||theta((y,s), .)||_{L^{n+2}(Q_r(y,s))}`` for every region node and radius."""
    radii = [float(r) for r in radii]
    if any(r <= 0 for r in radii):
        raise ValueError("radii must be positive")
    dom = spec.domain
    p = dom.n + 2
    rows = []
    worst = 0.0
    for node in np.argwhere(region):
        center = tuple(int(k) for k in node)
        pt = dom.node_point(center)
        for r in radii:
            cyl = cylinder_indices(dom, CylinderSpec(pt, r))
            vals = np.zeros(dom.shape)
            idx = np.argwhere(cyl)
            vals[tuple(idx.T)] = _theta_to_nodes(spec, center, idx)
            value = quasi_norm(GridField(dom, vals), cyl, p) / r
            rows.append({"node": list(center), "r": r, "value": value})
            worst = max(worst, value)
    return ThetaScan(rows, worst, float(target_delta), theta_is_upper_bound(spec))

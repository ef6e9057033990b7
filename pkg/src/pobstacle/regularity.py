"""Empirical regularity probes on discrete solutions.

Every probe is read-only: it never mutates the fields it receives.  Fitted
exponents come from log-log least squares on an *envelope* (the running max of
increments over node pairs at distance <= r), which is the discrete modulus of
continuity of the field on the probed region.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .lattice import (
    CylinderSpec,
    CylinderVariant,
    GridField,
    LatticeDomain,
    SpaceTimePoint,
    cylinder_indices,
    interior_subdomain,
    parabolic_boundary,
    quasi_norm,
)

__all__ = [
    "ExponentSet",
    "compute_exponents",
    "weak_harnack_ratio",
    "DecayTable",
    "oscillation_decay",
    "HolderFit",
    "fit_holder",
    "gradient_holder_probe",
    "coincidence_sets",
    "ContactGrowth",
    "contact_growth",
    "RegularityReport",
]


# exponents ---------------------------------------------------------------


@dataclass(frozen=True)
class ExponentSet:
    n: int
    p: float
    q: float
    beta1: float
    alpha0: float
    beta0: float
    beta2: float
    epsilon0_probe: float = 1.0
    elliptic: bool = False

    def require_gradient_regime(self) -> "ExponentSet":
        bound = self.n if self.elliptic else self.n + 2
        if self.p <= bound:
            raise ValueError(f"exponent regime violated: gradient probes need p > {bound}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def compute_exponents(n: int, p: float, q: float, beta1: float, epsilon0: float = 1.0,
                      elliptic: bool = False) -> ExponentSet:
    """``alpha0 = 2 - (n+2)/min(p, n+2)``, ``beta0 = 1 - (n+2)/p``, ``beta2 = min(beta0, beta1)``.

    With ``elliptic=True`` the steady exponents ``1 - n/p`` are used instead.
    """
    if n not in (1, 2):
        raise ValueError("dimension must be 1 or 2")
    if p <= (n + 2) / 2:
        raise ValueError("exponent regime violated")
    if q < p:
        raise ValueError("exponent order violated")
    if not 0 < beta1 <= 1:
        raise ValueError("beta1 must lie in (0, 1]")
    if epsilon0 <= 0:
        raise ValueError("epsilon0 must be positive")
    d = n if elliptic else n + 2
    alpha0 = 2.0 - d / min(p, d)
    beta0 = max(0.0, 1.0 - d / p)
    return ExponentSet(n, float(p), float(q), float(beta1), alpha0, beta0, min(beta0, beta1),
                       float(epsilon0), elliptic)


# cylinder helpers ----------------------------------------------------------


def _point(domain: LatticeDomain, center) -> SpaceTimePoint:
    if isinstance(center, SpaceTimePoint):
        return center
    if len(center) == domain.n + 1 and all(isinstance(k, (int, np.integer)) for k in center):
        return domain.node_point(center)
    x, t = center
    return SpaceTimePoint(np.atleast_1d(np.asarray(x, dtype=float)), float(t))


def _inside(domain: LatticeDomain, c: SpaceTimePoint, r: float, t_low: float) -> bool:
    eps = 1e-9 * max(1.0, r)
    x = np.asarray(c.x, dtype=float)
    lo, hi = np.asarray(domain.spatial_low), np.asarray(domain.spatial_high)
    return bool(np.all(x - r >= lo - eps) and np.all(x + r <= hi + eps) and t_low >= -eps
                and c.t <= domain.horizon_T + eps)


def _cyl(domain, c, r, variant, closed=False):
    return cylinder_indices(domain, CylinderSpec(c, r, CylinderVariant(variant)), closed=closed)


# weak Harnack ----------------------------------------------------------------


def weak_harnack_ratio(u: GridField, f: GridField, center, r: float, eps0: float = 1.0,
                       p: float | None = None) -> float:
    """Empirical ``C_0``: ``||u||_{eps0, Q_r(x0, t0-3r^2)} / (r^{(n+2)/eps0} (inf_{Q_r} u + r^alpha0 ||f||))``.

    ``p`` is the forcing integrability (default ``n + 2``); the forcing norm
    uses ``min(p, n+2)`` over ``Q_2r``.
    """
    dom = u.domain
    n = dom.n
    c = _point(dom, center)
    if r <= 0 or eps0 <= 0:
        raise ValueError("r and eps0 must be positive")
    if not _inside(dom, c, 2 * r, c.t - 4 * r * r):
        raise ValueError("cylinder exits the domain")
    p = float(n + 2) if p is None else float(p)
    pe = min(p, n + 2)
    alpha0 = 2.0 - (n + 2) / pe
    big = _cyl(dom, c, 2 * r, "past")
    if u.values[big].min() < -1e-12:
        raise ValueError("supersolution must be nonnegative on Q_2r")
    lower = _cyl(dom, c, r, "shifted_past")
    upper = _cyl(dom, c, r, "past")
    lhs = quasi_norm(u, lower, eps0)
    fnorm = quasi_norm(f, big, pe)
    denom = r ** ((n + 2) / eps0) * (float(u.values[upper].min()) + r ** alpha0 * fnorm)
    if denom == 0:
        return 0.0 if lhs == 0 else math.inf
    return lhs / denom


# oscillation decay ----------------------------------------------------------


@dataclass
class DecayTable:
    rows: list
    degenerate: bool

    @property
    def thetas(self) -> list:
        return [row["theta"] for row in self.rows]


def oscillation_decay(u: GridField, center, radii, f: GridField | None = None,
                      p: float | None = None) -> DecayTable:
    """``omega(r)`` on nested past cylinders and ``theta(r) = (omega(r) - corr) / omega(2r)``."""
    radii = sorted(float(r) for r in radii)
    if len(radii) < 3:
        raise ValueError("need at least 3 radii")
    dom = u.domain
    n = dom.n
    c = _point(dom, center)
    pe = min(float(n + 2) if p is None else float(p), n + 2)
    alpha0 = 2.0 - (n + 2) / pe
    rows, degenerate = [], False
    for r in radii:
        if not _inside(dom, c, 2 * r, c.t - 4 * r * r):
            raise ValueError("cylinder exits the domain")
        small = _cyl(dom, c, r, "past")
        big = _cyl(dom, c, 2 * r, "past")
        om = float(np.ptp(u.values[small]))
        om2 = float(np.ptp(u.values[big]))
        corr = 0.0 if f is None else 2 * r ** alpha0 * quasi_norm(f, big, pe)
        if om2 == 0:
            degenerate = True
            theta = None
        else:
            theta = (om - corr) / om2
        rows.append({"r": r, "omega": om, "omega_2r": om2, "correction": corr, "theta": theta})
    return DecayTable(rows, degenerate)


# Hoelder fits ------------------------------------------------------------------


@dataclass
class HolderFit:
    exponent: float
    constant: float
    r2: float
    raw_slope: float
    flag: str | None
    modulus: list = field(default_factory=list)
    offsets_used: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _candidate_offsets(dom: LatticeDomain, rmax: float, budget_offsets: int, rng):
    h, tau, n = dom.h, dom.tau, dom.n
    ka = min(int(math.floor(rmax / h)), max(dom.spatial_shape) - 1)
    kb = min(int(math.floor(rmax * rmax / tau)), dom.nt - 1)
    offs = set()
    for i in range(n):
        for a in range(1, ka + 1):
            o = [0] * (n + 1)
            o[i] = a
            offs.add(tuple(o))
            if n == 2:
                o2 = list(o)
                o2[1 - i] = a
                offs.add(tuple(o2))
                o2[1 - i] = -a
                offs.add(tuple(o2))
    times = np.unique(np.round(np.geomspace(1, max(kb, 1), 48)).astype(int)) if kb >= 1 else []
    for b in times:
        offs.add((0,) * n + (int(b),))
    extra = max(0, budget_offsets - len(offs))
    if extra and kb >= 1 and ka >= 1:
        a = rng.integers(-ka, ka + 1, size=(4 * extra, n))
        # log-uniform time offsets so short mixed offsets are not starved
        b = np.floor(np.exp(rng.uniform(0, math.log(kb + 1), size=4 * extra))).astype(int)
        for row, bb in zip(a, b):
            if len(offs) >= budget_offsets:
                break
            offs.add(tuple(int(v) for v in row) + (int(bb),))
    arr = np.array(sorted(offs), dtype=int).reshape(-1, n + 1)
    d2 = (arr[:, :n] ** 2).sum(axis=1) * h * h + np.abs(arr[:, n]) * tau
    keep = (d2 <= rmax * rmax * (1 + 1e-12)) & (d2 > 0)
    return arr[keep], np.sqrt(d2[keep])


def _pair_max(vals: np.ndarray, region: np.ndarray, off) -> float:
    src, dst = [], []
    for k, s in zip(off, region.shape):
        k = int(k)
        if abs(k) >= s:
            return 0.0
        src.append(slice(max(0, -k), s - max(0, k)))
        dst.append(slice(max(0, k), s - max(0, -k)))
    src, dst = tuple(src), tuple(dst)
    both = region[dst] & region[src]
    if not both.any():
        return 0.0
    diff = vals[dst] - vals[src]
    mag = np.sqrt((diff * diff).sum(axis=-1)) if diff.ndim > region.ndim else np.abs(diff)
    return float(mag[both].max())


def _envelope_fit(vals, region, dom, pair_budget, seed, rmax, min_distance, const_flag):
    n_nodes = int(region.sum())
    if n_nodes < 10:
        raise ValueError("region too small for a fit (need >= 10 nodes)")
    idx = np.argwhere(region)
    if rmax is None:
        span_x = (idx[:, :dom.n].max(axis=0) - idx[:, :dom.n].min(axis=0)).min() * dom.h
        span_t = (idx[:, dom.n].max() - idx[:, dom.n].min()) * dom.tau
        candidates = [s for s in (span_x, math.sqrt(span_t)) if s > 0]
        rmax = 0.5 * min(candidates) if candidates else 2 * dom.h
    rmin = 2 * dom.h if min_distance is None else float(min_distance)
    rng = np.random.default_rng(seed)
    budget_offsets = max(64, int(pair_budget // max(n_nodes, 1)))
    offs, dist = _candidate_offsets(dom, rmax, budget_offsets, rng)
    maxima = np.array([_pair_max(vals, region, o) for o in offs])
    order = np.argsort(dist, kind="stable")
    dist, maxima = dist[order], maxima[order]
    envelope = np.maximum.accumulate(maxima) if maxima.size else maxima
    # increments at rounding level count as a constant field
    noise = 1e-12 * max(1.0, float(np.abs(vals).max()))
    if not maxima.size or envelope[-1] <= noise:
        return HolderFit(1.0, 0.0, 1.0, 1.0, const_flag, [], int(len(offs)))
    radii = np.geomspace(rmin, max(rmax, rmin * 1.0001), 16)
    table = []
    for r in radii:
        k = int(np.searchsorted(dist, r * (1 + 1e-12), side="right"))
        if k:
            table.append((float(r), float(envelope[k - 1])))
    pts = [(r, w) for r, w in table if w > 0]
    if len(pts) < 2:
        return HolderFit(1.0, float(envelope[-1]), 0.0, 1.0, "insufficient scales",
                         [{"r": r, "omega": w} for r, w in table], int(len(offs)))
    lr = np.log([r for r, _ in pts])
    lw = np.log([w for _, w in pts])
    slope, intercept = np.polyfit(lr, lw, 1)
    pred = slope * lr + intercept
    ss_tot = float(((lw - lw.mean()) ** 2).sum())
    r2 = 1.0 - float(((lw - pred) ** 2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return HolderFit(float(min(slope, 1.0)), float(math.exp(intercept)), r2, float(slope), None,
                     [{"r": r, "omega": w} for r, w in table], int(len(offs)))


def fit_holder(u: GridField, region: np.ndarray | None = None, pair_budget: int = 50_000_000,
               seed: int = 0, rmax: float | None = None, min_distance: float | None = None) -> HolderFit:
    """Fit ``|u(a) - u(b)| <= C d(a, b)^alpha`` on ``region``.

    ``pair_budget`` bounds the number of pair evaluations; the shortest pairs
    used are at distance ``2h`` unless ``min_distance`` says otherwise.
    """
    dom = u.domain
    region = np.ones(dom.shape, bool) if region is None else np.asarray(region, bool)
    return _envelope_fit(u.values, region, dom, pair_budget, seed, rmax, min_distance,
                         "constant field")


def central_gradient(values: np.ndarray, domain: LatticeDomain) -> np.ndarray:
    """Central spatial differences on interior nodes; NaN on the spatial boundary."""
    n, h = domain.n, domain.h
    grad = np.full(values.shape + (n,), np.nan)
    inner = (slice(1, -1),) * n
    for i in range(n):
        plus = [slice(1, -1)] * n
        minus = [slice(1, -1)] * n
        plus[i] = slice(2, None)
        minus[i] = slice(None, -2)
        grad[inner + (Ellipsis, i)] = (values[tuple(plus)] - values[tuple(minus)]) / (2 * h)
    return grad


def gradient_holder_probe(u: GridField, region: np.ndarray, exponents: ExponentSet | None = None,
                          pair_budget: int = 50_000_000, seed: int = 0,
                          rmax: float | None = None) -> HolderFit:
    """Envelope fit of ``|Du(a) - Du(b)|``; ``Du`` by central differences."""
    dom = u.domain
    region = np.asarray(region, bool) & ~dom.spatial_boundary_mask()[..., None]
    grad = central_gradient(u.values, dom)
    grad = np.where(np.isnan(grad), 0.0, grad)
    fit = _envelope_fit(grad, region, dom, pair_budget, seed, rmax, None, "constant gradient")
    if exponents is not None and fit.flag is None:
        target = min(exponents.beta0, exponents.beta1)
        fit.flag = f"compare with min(beta0, beta1) = {target:.4g}; interior estimate exponent unknown"
    return fit


# coincidence sets -------------------------------------------------------------


def _omega_T(domain: LatticeDomain) -> np.ndarray:
    mask = ~parabolic_boundary(domain)
    mask[..., -1] &= ~domain.spatial_boundary_mask()
    return mask


def coincidence_sets(u: GridField, phi: GridField, psi: GridField, tol: float):
    """``(C_plus, C_minus, N, N_r)`` as boolean masks over ``Omega_T``; ``N_r`` is a function of ``r``."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    uv, lo, hi = u.values, phi.values, psi.values
    if np.any(uv < lo - tol) or np.any(uv > hi + tol):
        raise ValueError("solution outside the obstacle band")
    dom = u.domain
    inside = _omega_T(dom)
    cplus = inside & (np.abs(uv - hi) <= tol)
    cminus = inside & (np.abs(uv - lo) <= tol)
    noncoin = inside & ~cplus & ~cminus
    contact = cplus | cminus

    def n_r(r: float) -> np.ndarray:
        base = interior_subdomain(dom, r) & noncoin
        if not contact.any():
            return base
        return base & ~_parabolic_dilation(contact, dom, r)

    return cplus, cminus, noncoin, n_r


def _parabolic_dilation(mask: np.ndarray, dom: LatticeDomain, r: float) -> np.ndarray:
    """Nodes within closed parabolic distance ``r`` of some node of ``mask``."""
    n, h, tau = dom.n, dom.h, dom.tau
    ka = int(math.floor(r / h + 1e-9))
    counts = np.concatenate([np.zeros(mask.shape[:-1] + (1,), int),
                             np.cumsum(mask, axis=-1, dtype=int)], axis=-1)
    nt = mask.shape[-1]
    out = np.zeros_like(mask)
    tidx = np.arange(nt)
    rng = range(-ka, ka + 1)
    for a in np.array(np.meshgrid(*([list(rng)] * n), indexing="ij")).reshape(n, -1).T:
        rem = r * r - float((a * a).sum()) * h * h
        if rem < -1e-12 * r * r:
            continue
        kb = int(math.floor(max(rem, 0.0) / tau + 1e-9))
        lo = np.clip(tidx - kb, 0, nt)
        hi = np.clip(tidx + kb + 1, 0, nt)
        window = (counts[..., hi] - counts[..., lo]) > 0
        # shift the spatial window by a: node i is near if mask has a hit at i + a
        src, dst = [], []
        skip = False
        for k, s in zip(a, mask.shape[:-1]):
            k = int(k)
            if abs(k) >= s:
                skip = True
                break
            src.append(slice(max(0, k), s - max(0, -k)))
            dst.append(slice(max(0, -k), s - max(0, k)))
        if skip:
            continue
        out[tuple(dst)] |= window[tuple(src)]
    return out


# contact growth ----------------------------------------------------------------


@dataclass
class ContactGrowth:
    node: tuple
    exponent: float
    constant: float
    gradient_gap: float
    sups: list
    flag: str | None = None
    r2: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["node"] = [int(k) for k in self.node]
        return d


def contact_growth(u: GridField, obstacle: GridField, node, radii, exponents: ExponentSet | None = None,
                   tol: float | None = None) -> ContactGrowth:
    """Growth of ``|u - psi(x0,t0) - <Dpsi(x0,t0), x - x0>|`` over closed forward cylinders."""
    dom = u.domain
    n = dom.n
    node = tuple(int(k) for k in node)
    if tol is None:
        tol = 10 * dom.h ** 2
    if any(not 0 < node[i] < dom.spatial_shape[i] - 1 for i in range(n)):
        raise ValueError("contact node must be spatially interior")
    if abs(u.values[node] - obstacle.values[node]) > tol:
        raise ValueError("node is not a contact point")
    radii = sorted(float(r) for r in radii)
    c = dom.node_point(node)
    dpsi = central_gradient(obstacle.values[..., node[n]], dom)[node[:n]]
    du = central_gradient(u.values[..., node[n]], dom)[node[:n]]
    rmax = radii[-1]
    ka = int(math.floor(rmax / dom.h + 1e-9))
    box = tuple(slice(max(0, node[i] - ka), min(dom.spatial_shape[i], node[i] + ka + 1))
                for i in range(n))
    m_lo = max(0, int(math.floor((c.t - rmax * rmax) / dom.tau - 1e-9)))
    m_hi = min(dom.nt, int(math.ceil((c.t + rmax * rmax) / dom.tau + 1e-9)) + 1)
    window = box + (slice(m_lo, m_hi),)
    offs = np.meshgrid(*[(np.arange(sl.start, sl.stop) - node[i]) * dom.h for i, sl in enumerate(box)],
                       indexing="ij")
    dist2 = sum(o * o for o in offs)
    plane = obstacle.values[node] + sum(o * dpsi[i] for i, o in enumerate(offs))
    gap = np.abs(u.values[window] - plane[..., None])
    dt = np.abs(dom.tau * np.arange(m_lo, m_hi) - c.t)
    sups = []
    for r in radii:
        ball = dist2 <= r * r * (1 + 1e-9)
        slab = dt <= r * r * (1 + 1e-9)
        cyl = ball[..., None] & slab
        sups.append({"r": r, "sup": float(gap[cyl].max())})
    noise = 1e-13 * max(1.0, float(np.abs(u.values[window]).max()))
    pts = [(s["r"], s["sup"]) for s in sups if s["sup"] > noise]
    gradient_gap = float(np.linalg.norm(du - dpsi))
    if len(pts) < 2:
        return ContactGrowth(node, math.inf, 0.0, gradient_gap, sups, "flat")
    lr = np.log([p[0] for p in pts])
    lw = np.log([p[1] for p in pts])
    slope, intercept = np.polyfit(lr, lw, 1)
    pred = slope * lr + intercept
    ss = float(((lw - lw.mean()) ** 2).sum())
    r2 = 1 - float(((lw - pred) ** 2).sum()) / ss if ss > 0 else 1.0
    flag = None
    if exponents is not None and slope < 1 + exponents.beta2 - 0.1:
        flag = "below 1 + beta2"
    return ContactGrowth(node, float(slope), float(math.exp(intercept)), gradient_gap, sups, flag, r2)


# report --------------------------------------------------------------------------


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    return obj


@dataclass
class RegularityReport:
    """Container for probe outputs; every table is a list of flat dict rows."""

    holder_fit: dict | None = None
    harnack_table: list = field(default_factory=list)
    decay_table: list = field(default_factory=list)
    contact_table: list = field(default_factory=list)
    gradient_holder: dict | None = None
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _clean(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def tables(self) -> dict:
        out = {}
        if self.harnack_table:
            out["harnack"] = self.harnack_table
        if self.decay_table:
            out["decay"] = self.decay_table
        if self.contact_table:
            out["contact"] = [{k: v for k, v in row.items() if k != "sups"} for row in self.contact_table]
        for key, fit in (("holder_modulus", self.holder_fit), ("gradient_modulus", self.gradient_holder)):
            if fit and fit.get("modulus"):
                out[key] = fit["modulus"]
        return out


def rows_to_csv(rows: list) -> str:
    """CSV text with a header row and LF line endings."""
    if not rows:
        return ""
    cols = []
    for row in rows:
        for k in row:
            if k not in cols:
                cols.append(k)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for row in rows:
        w.writerow({k: _fmt(row.get(k)) for k in cols})
    return buf.getvalue()


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (list, tuple)):
        return " ".join(str(_fmt(x)) for x in v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v

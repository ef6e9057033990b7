"""Space-time lattices, parabolic geometry and grid fields.

A :class:`LatticeDomain` is an axis-aligned box ``Omega = prod [low_i, high_i]``
times a horizon ``(0, T]``, sampled uniformly with spacing ``h`` in space and
``tau`` in time.  Arrays living on a domain have shape ``(N_1, ..., N_n, N_t)``:
spatial axes first, time last.

Index sets are boolean masks of that same shape.  Use :func:`mask_nodes` to turn
a mask into an explicit node list.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import gamma

__all__ = [
    "LatticeDomain",
    "GridField",
    "SpaceTimePoint",
    "CylinderSpec",
    "CylinderVariant",
    "parabolic_distance",
    "cylinder_indices",
    "parabolic_boundary",
    "interior_subdomain",
    "quasi_norm",
    "oscillation",
    "exterior_measure_ratio",
    "mask_nodes",
    "unit_ball_volume",
]

# relative slack for lattice membership tests
_REL = 1e-9


def _as_vector(v) -> np.ndarray:
    return np.atleast_1d(np.asarray(v, dtype=float))


def _integer_ratio(length: float, step: float, what: str) -> int:
    k = length / step
    kr = round(k)
    if kr < 1 or abs(k - kr) > 1e-8 * max(1.0, k):
        raise ValueError(f"{what} must be a positive integer multiple of the spacing "
                         f"(got ratio {k!r})")
    return int(kr)


@dataclass(frozen=True)
class LatticeDomain:
    """Uniform lattice on ``[low, high] x [0, T]``."""

    spatial_low: tuple
    spatial_high: tuple
    horizon_T: float
    h: float
    tau: float

    def __post_init__(self):
        low = tuple(float(v) for v in _as_vector(self.spatial_low))
        high = tuple(float(v) for v in _as_vector(self.spatial_high))
        object.__setattr__(self, "spatial_low", low)
        object.__setattr__(self, "spatial_high", high)
        if len(low) != len(high) or len(low) not in (1, 2):
            raise ValueError("spatial dimension must be 1 or 2 with matching bounds")
        if self.h <= 0 or self.tau <= 0 or self.horizon_T <= 0:
            raise ValueError("h, tau and horizon_T must be positive")
        counts = []
        for lo, hi in zip(low, high):
            if not lo < hi:
                raise ValueError("spatial_low must be < spatial_high componentwise")
            cells = _integer_ratio(hi - lo, self.h, "box side")
            if cells + 1 - 2 < 3:
                raise ValueError("need at least 3 interior nodes per spatial dimension")
            counts.append(cells + 1)
        steps = _integer_ratio(self.horizon_T, self.tau, "horizon_T")
        object.__setattr__(self, "_counts", tuple(counts))
        object.__setattr__(self, "_steps", steps)

    @classmethod
    def box(cls, low, high, T: float, h: float, tau: float) -> "LatticeDomain":
        return cls(tuple(_as_vector(low)), tuple(_as_vector(high)), float(T), float(h), float(tau))

    @property
    def n(self) -> int:
        return len(self.spatial_low)

    @property
    def spatial_shape(self) -> tuple:
        return self._counts

    @property
    def nt(self) -> int:
        """Number of time levels, including ``t = 0``."""
        return self._steps + 1

    @property
    def shape(self) -> tuple:
        return self._counts + (self.nt,)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_measure(self) -> float:
        return self.h ** self.n * self.tau

    def axis(self, i: int) -> np.ndarray:
        return self.spatial_low[i] + self.h * np.arange(self._counts[i])

    @property
    def times(self) -> np.ndarray:
        return self.tau * np.arange(self.nt)

    def mesh(self) -> tuple:
        """Coordinate arrays ``(x_1, ..., x_n, t)`` broadcast to :attr:`shape`."""
        axes = [self.axis(i) for i in range(self.n)] + [self.times]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def spatial_mesh(self) -> tuple:
        axes = [self.axis(i) for i in range(self.n)]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def node_point(self, node: Sequence[int]) -> "SpaceTimePoint":
        node = tuple(int(k) for k in node)
        x = tuple(self.spatial_low[i] + self.h * node[i] for i in range(self.n))
        return SpaceTimePoint(x, self.tau * node[self.n])

    def locate(self, x, t: float) -> tuple:
        """Lattice index of ``(x, t)``; raises ``ValueError`` off the lattice."""
        x = _as_vector(x)
        if x.shape != (self.n,):
            raise ValueError(f"expected a point in R^{self.n}")
        idx = []
        for i in range(self.n):
            k = (x[i] - self.spatial_low[i]) / self.h
            kr = round(k)
            if abs(k - kr) > 1e-7 or not 0 <= kr < self._counts[i]:
                raise ValueError(f"point {tuple(x)} is not a lattice node")
            idx.append(int(kr))
        m = t / self.tau
        mr = round(m)
        if abs(m - mr) > 1e-7 or not 0 <= mr < self.nt:
            raise ValueError(f"time {t} is not a lattice time level")
        idx.append(int(mr))
        return tuple(idx)

    def spatial_boundary_mask(self) -> np.ndarray:
        """Spatial-only mask of nodes on the box boundary."""
        mask = np.zeros(self._counts, dtype=bool)
        for i in range(self.n):
            sl = [slice(None)] * self.n
            sl[i] = 0
            mask[tuple(sl)] = True
            sl[i] = -1
            mask[tuple(sl)] = True
        return mask

    def interior_slices(self) -> tuple:
        return tuple(slice(1, -1) for _ in range(self.n))

    def with_spacing(self, h: float, tau: float) -> "LatticeDomain":
        return LatticeDomain(self.spatial_low, self.spatial_high, self.horizon_T, h, tau)

    def with_horizon(self, T: float) -> "LatticeDomain":
        return LatticeDomain(self.spatial_low, self.spatial_high, T, self.h, self.tau)

    def describe(self) -> dict:
        return {
            "spatial_low": list(self.spatial_low),
            "spatial_high": list(self.spatial_high),
            "horizon_T": self.horizon_T,
            "h": self.h,
            "tau": self.tau,
            "shape": list(self.shape),
        }


@dataclass(frozen=True, eq=False)
class GridField:
    """Scalar samples on every node of a :class:`LatticeDomain`."""

    domain: LatticeDomain
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.domain.shape:
            raise ValueError(f"field shape {vals.shape} does not match domain {self.domain.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, domain: LatticeDomain, c: float) -> "GridField":
        return cls(domain, np.full(domain.shape, float(c)))

    @classmethod
    def from_function(cls, domain: LatticeDomain, fn) -> "GridField":
        """Sample ``fn(*x, t)`` on the lattice (``fn`` must broadcast)."""
        vals = np.broadcast_to(np.asarray(fn(*domain.mesh()), dtype=float), domain.shape)
        return cls(domain, vals)

    def __getitem__(self, idx):
        return self.values[idx]

    def copy_with(self, values) -> "GridField":
        return GridField(self.domain, values)

    def __add__(self, other):
        other = other.values if isinstance(other, GridField) else other
        return GridField(self.domain, self.values + other)

    def __sub__(self, other):
        other = other.values if isinstance(other, GridField) else other
        return GridField(self.domain, self.values - other)

    def __mul__(self, c):
        return GridField(self.domain, self.values * c)

    __rmul__ = __mul__

    def __neg__(self):
        return GridField(self.domain, -self.values)


@dataclass(frozen=True)
class SpaceTimePoint:
    x: tuple
    t: float

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in _as_vector(self.x)))
        object.__setattr__(self, "t", float(self.t))


class CylinderVariant(str, enum.Enum):
    PAST = "past"
    FORWARD = "forward"
    SHIFTED_PAST = "shifted_past"


@dataclass(frozen=True)
class CylinderSpec:
    """``Q_r`` (past), ``Q_r^+`` (forward) or ``Q_r(x0, t0 - 3r^2)`` (shifted_past)."""

    center: SpaceTimePoint
    r: float
    variant: CylinderVariant = CylinderVariant.PAST

    def __post_init__(self):
        object.__setattr__(self, "variant", CylinderVariant(self.variant))

    def time_window(self) -> tuple:
        """``(t_open_low, t_closed_high)`` of the half-open time interval."""
        t0, r2 = self.center.t, self.r ** 2
        if self.variant is CylinderVariant.PAST:
            return t0 - r2, t0
        if self.variant is CylinderVariant.FORWARD:
            return t0 - r2, t0 + r2
        return t0 - 4 * r2, t0 - 3 * r2


def parabolic_distance(a: SpaceTimePoint, b: SpaceTimePoint) -> float:
    dx = np.subtract(a.x, b.x)
    return math.sqrt(float(dx @ dx) + abs(a.t - b.t))


def cylinder_indices(domain: LatticeDomain, spec: CylinderSpec, closed: bool = False) -> np.ndarray:
    """Mask of lattice nodes inside a parabolic cylinder.

    The default follows ``B_r x (t_low, t_high]``: open ball, half-open time
    interval.  ``closed=True`` uses the closed ball and closed interval, which
    the contact-growth probe needs so that ``sup`` over the node set scales like
    ``r`` rather than ``r - h``.
    """
    if spec.r <= 0:
        raise ValueError("cylinder radius must be positive")
    tx, tt = _REL * domain.h, _REL * domain.tau
    c = np.asarray(spec.center.x)
    r2 = spec.r ** 2
    dist2 = sum((ax - c[i]) ** 2 for i, ax in enumerate(domain.spatial_mesh()))
    if closed:
        ball = dist2 <= r2 + tx * spec.r
    else:
        ball = dist2 < r2 - tx * spec.r
    lo, hi = spec.time_window()
    t = domain.times
    if closed:
        slab = (t >= lo - tt) & (t <= hi + tt)
    else:
        slab = (t > lo + tt) & (t <= hi + tt)
    return ball[..., None] & slab


def parabolic_boundary(domain: LatticeDomain) -> np.ndarray:
    """Bottom slab plus lateral nodes at every time level (``t = T`` included)."""
    mask = np.zeros(domain.shape, dtype=bool)
    mask[..., 0] = True
    mask |= domain.spatial_boundary_mask()[..., None]
    return mask


def _distance_to_box_boundary(domain: LatticeDomain) -> np.ndarray:
    pieces = []
    for i, ax in enumerate(domain.spatial_mesh()):
        pieces.append(np.minimum(ax - domain.spatial_low[i], domain.spatial_high[i] - ax))
    return np.minimum.reduce(pieces)


def interior_subdomain(domain: LatticeDomain, r: float) -> np.ndarray:
    """Mask of ``Omega^r x (r^2, T]``: distance to the box boundary > r and t > r^2."""
    if r < 0:
        raise ValueError("r must be nonnegative")
    space = _distance_to_box_boundary(domain) > r + _REL * domain.h
    time = domain.times > r * r + _REL * domain.tau
    return space[..., None] & time


def mask_nodes(mask: np.ndarray) -> list:
    """Explicit node list (tuples of ints) of a boolean index mask, C order."""
    return [tuple(int(k) for k in row) for row in np.argwhere(mask)]


def _region_values(field: GridField, region: np.ndarray) -> np.ndarray:
    region = np.asarray(region, dtype=bool)
    if region.shape != field.domain.shape:
        raise ValueError("region mask does not match the field's domain")
    vals = field.values[region]
    if vals.size == 0:
        raise ValueError("empty integration region")
    return vals


def quasi_norm(field: GridField, region: np.ndarray, p: float) -> float:
    """Riemann-sum ``L^p`` quasi-norm over a node region with cell measure ``h^n tau``."""
    if not p > 0:
        raise ValueError("exponent p must be positive")
    vals = np.abs(_region_values(field, region))
    if math.isinf(p):
        return float(vals.max())
    return float((np.sum(vals ** p) * field.domain.cell_measure) ** (1.0 / p))


def oscillation(field: GridField, region: np.ndarray) -> tuple:
    """``(max, min, max - min)`` over a nonempty region."""
    vals = _region_values(field, region)
    hi, lo = float(vals.max()), float(vals.min())
    return hi, lo, hi - lo


def unit_ball_volume(n: int) -> float:
    return math.pi ** (n / 2) / gamma(n / 2 + 1)


def exterior_measure_ratio(domain: LatticeDomain, x, r: float, resolution: int = 400) -> float:
    """``|B_r(x) \\ Omega| / r^n`` for a boundary point ``x``, by midpoint subcell counting."""
    if r <= 0:
        raise ValueError("radius must be positive")
    x = _as_vector(x)
    low, high = np.asarray(domain.spatial_low), np.asarray(domain.spatial_high)
    r0 = 0.5 * float(np.min(high - low))
    if r >= r0:
        raise ValueError(f"radius must be below R0 = {r0}")
    on_face = np.isclose(x, low, atol=1e-12) | np.isclose(x, high, atol=1e-12)
    inside = np.all((x >= low - 1e-12) & (x <= high + 1e-12))
    if not (inside and on_face.any()):
        raise ValueError("x must lie on the boundary of the box")
    cell = 2.0 * r / resolution
    centres = -r + cell * (np.arange(resolution) + 0.5)
    grids = np.meshgrid(*([centres] * domain.n), indexing="ij")
    in_ball = sum(g ** 2 for g in grids) < r * r
    outside = np.zeros_like(in_ball)
    for i, g in enumerate(grids):
        y = x[i] + g
        outside |= (y < low[i]) | (y > high[i])
    measure = np.count_nonzero(in_ball & outside) * cell ** domain.n
    return float(measure / r ** domain.n)

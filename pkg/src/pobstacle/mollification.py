"""Parabolic mollification and the shifted obstacles ``phi_eps``, ``psi_eps``.

The kernel is ``rho_eps(x, t) = eps^{-n-2} rho(x/eps, t/eps^2)`` with ``rho``
supported in the past unit cylinder ``B_1 x (-1, 0]``.  Because ``rho_eps(x - y,
t - s)`` only sees ``s`` in ``[t, t + eps^2)``, the convolution looks forward in
time.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import integrate, ndimage

from .lattice import GridField, LatticeDomain
from .operators import OperatorSpec

__all__ = [
    "MollifierKernel",
    "KernelUnderResolved",
    "Modulus",
    "parabolic_mollify",
    "modulus_estimate",
    "shift_obstacles",
    "mollify_operator",
]


class KernelUnderResolved(UserWarning):
    """The mollifier support holds too few lattice nodes to smooth anything."""


def _bump(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


@dataclass(frozen=True)
class MollifierKernel:
    """Separable bump ``c * bump(|y|) * bump(2s + 1)`` on ``B_1 x (-1, 0]``."""

    epsilon: float
    n: int = 1

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("eps must be positive")

    @cached_property
    def constant(self) -> float:
        # radial mass of bump(|y|) over B_1, times the time mass over (-1, 0]
        if self.n == 1:
            space = 2.0 * integrate.quad(lambda r: float(_bump(r)), 0.0, 1.0, epsabs=1e-14)[0]
        else:
            space = 2.0 * math.pi * integrate.quad(lambda r: r * float(_bump(r)), 0.0, 1.0,
                                                   epsabs=1e-14)[0]
        time = integrate.quad(lambda s: float(_bump(2 * s + 1)), -1.0, 0.0, epsabs=1e-14)[0]
        return 1.0 / (space * time)

    def profile(self, y, s):
        """Unit-scale ``rho(y, s)``; ``y`` has trailing axis of length ``n``."""
        y = np.asarray(y, dtype=float)
        r = np.sqrt(np.sum(y * y, axis=-1)) if y.ndim and y.shape[-1] == self.n else np.abs(y)
        s = np.asarray(s, dtype=float)
        t_part = np.where((s > -1.0) & (s <= 0.0), _bump(2 * s + 1), 0.0)
        return self.constant * _bump(r) * t_part

    def __call__(self, x, t):
        eps = self.epsilon
        return eps ** (-self.n - 2) * self.profile(np.asarray(x) / eps, np.asarray(t) / eps ** 2)

    def total_mass(self) -> float:
        """Integral of the rescaled kernel by adaptive quadrature (should be 1)."""
        eps, n = self.epsilon, self.n
        if n == 1:
            space = 2.0 * integrate.quad(lambda r: float(_bump(r / eps)), 0.0, eps, epsabs=1e-15)[0]
        else:
            space = 2.0 * math.pi * integrate.quad(lambda r: r * float(_bump(r / eps)), 0.0, eps,
                                                   epsabs=1e-16)[0]
        time = integrate.quad(lambda t: float(_bump(2 * t / eps ** 2 + 1)), -eps ** 2, 0.0,
                              epsabs=1e-16)[0]
        return self.constant * eps ** (-n - 2) * space * time

    def lattice_weights(self, domain: LatticeDomain):
        """Discrete weights ``(spatial, temporal, resolved)``, each summing to one.

        ``spatial`` is centred with odd side lengths; ``temporal[b]`` multiplies
        the sample ``b`` steps ahead.
        """
        eps, h, tau = self.epsilon, domain.h, domain.tau
        ka = int(math.floor(eps / h))
        offs = h * np.arange(-ka, ka + 1) / eps
        grids = np.meshgrid(*([offs] * domain.n), indexing="ij")
        ws = _bump(np.sqrt(sum(g * g for g in grids)))
        kb = int(math.floor(eps * eps / tau))
        wt = _bump(2.0 * (-tau * np.arange(kb + 1) / eps ** 2) + 1.0)
        resolved = ka >= 1 and wt.sum() > 0
        if wt.sum() == 0:
            wt = np.zeros(1)
            wt[0] = 1.0
        return ws / ws.sum(), wt / wt.sum(), resolved


def kernel_is_resolved(domain: LatticeDomain, eps: float) -> bool:
    return MollifierKernel(eps, domain.n).lattice_weights(domain)[2]


def _convolve(values: np.ndarray, domain: LatticeDomain, eps: float, mode: str) -> np.ndarray:
    ws, wt, resolved = MollifierKernel(eps, domain.n).lattice_weights(domain)
    if not resolved:
        warnings.warn(f"mollifier radius {eps} under-resolved on h={domain.h}, tau={domain.tau}",
                      KernelUnderResolved, stacklevel=3)
    n = domain.n
    out = np.asarray(values, dtype=float)
    if len(wt) > 1:
        # centred correlate1d: pad the forward-looking weights with zeros on the past side
        full = np.concatenate([np.zeros(len(wt) - 1), wt])
        out = ndimage.correlate1d(out, full, axis=n, mode=mode, cval=0.0)
    if ws.size > 1:
        out = ndimage.correlate(out, ws.reshape(ws.shape + (1,)), mode=mode, cval=0.0)
    return out


def parabolic_mollify(field: GridField, eps: float, extension: str = "zero") -> GridField:
    """Discrete ``field * rho_eps`` on the same lattice.

    ``extension="zero"`` extends the data by zero outside the space-time box,
    ``"nearest"`` by constant continuation (used for obstacles and coefficients).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    modes = {"zero": "constant", "nearest": "nearest"}
    if extension not in modes:
        raise ValueError(f"extension must be 'zero' or 'nearest', got {extension!r}")
    mode = modes[extension]
    return GridField(field.domain, _convolve(field.values, field.domain, eps, mode))


@dataclass(frozen=True)
class Modulus:
    """Tabulated nondecreasing modulus of continuity ``sigma(r)``."""

    radii: np.ndarray
    values: np.ndarray

    def __call__(self, r: float) -> float:
        k = int(np.searchsorted(self.radii, r * (1 - 1e-12), side="left"))
        if k >= len(self.radii):
            raise ValueError(f"radius {r} beyond the tabulated range {self.radii[-1]}")
        return float(self.values[k])

    def table(self) -> list:
        return [{"r": float(r), "sigma": float(s)} for r, s in zip(self.radii, self.values)]


def _offsets(domain: LatticeDomain, rmax: float, space: bool = True, time: bool = True):
    """Lattice offsets ``(a, b)`` with ``b >= 0`` and parabolic length ``< rmax``."""
    h, tau, n = domain.h, domain.tau, domain.n
    ka = int(math.ceil(rmax / h)) if space else 0
    kb = int(math.ceil(rmax * rmax / tau)) if time else 0
    ka = min(ka, max(domain.spatial_shape) - 1)
    kb = min(kb, domain.nt - 1)
    rng = np.arange(-ka, ka + 1)
    grids = np.meshgrid(*([rng] * n), np.arange(kb + 1), indexing="ij")
    offs = np.stack([g.ravel() for g in grids], axis=1)
    d2 = (offs[:, :n] ** 2).sum(axis=1) * h * h + offs[:, n] * tau
    keep = (d2 < rmax * rmax * (1 - 1e-12)) & (d2 > 0)
    offs, d2 = offs[keep], d2[keep]
    order = np.argsort(d2, kind="stable")
    return offs[order], np.sqrt(d2[order])


def _increment_max(vals: np.ndarray, off: np.ndarray, region: np.ndarray | None = None) -> float:
    src, dst = [], []
    for k, s in zip(off, vals.shape):
        k = int(k)
        if abs(k) >= s:
            return 0.0
        src.append(slice(max(0, -k), s - max(0, k)))
        dst.append(slice(max(0, k), s - max(0, -k)))
    diff = np.abs(vals[tuple(dst)] - vals[tuple(src)])
    if region is not None:
        diff = diff[region[tuple(dst)] & region[tuple(src)]]
    return float(diff.max()) if diff.size else 0.0


def offset_moduli(vals_list, domain: LatticeDomain, rmax: float, region=None):
    """Per-offset sup of increments, sorted by offset length: ``(lengths, maxima)``."""
    vals_list = [np.asarray(v, dtype=float) for v in vals_list]
    time_const = all(np.all(v == v[..., :1]) for v in vals_list)
    space_const = all(np.all(v == v[(slice(0, 1),) * domain.n]) for v in vals_list)
    offs, dist = _offsets(domain, rmax, space=not space_const, time=not time_const)
    maxima = np.array([max(_increment_max(v, o, region) for v in vals_list) for o in offs])
    return dist, maxima


def modulus_estimate(fields, radii) -> Modulus:
    """``sigma_0(r)``: max increment of the given fields over node pairs at distance ``< r``."""
    if isinstance(fields, GridField):
        fields = [fields]
    radii = np.asarray(sorted(float(r) for r in radii))
    if radii.size == 0 or radii[0] <= 0:
        raise ValueError("radii must be positive")
    dom = fields[0].domain
    dist, maxima = offset_moduli([f.values for f in fields], dom, float(radii[-1]))
    running = np.maximum.accumulate(maxima) if maxima.size else maxima
    values = []
    for r in radii:
        k = int(np.searchsorted(dist, r * (1 - 1e-12), side="left"))
        values.append(float(running[k - 1]) if k > 0 else 0.0)
    return Modulus(radii, np.asarray(values))


def shift_obstacles(phi: GridField, psi: GridField, eps: float, sigma0: Modulus | None = None):
    """``phi * eta_eps - sigma_0(sqrt(2) eps)`` and ``psi * eta_eps + sigma_0(sqrt(2) eps)``."""
    if np.any(phi.values > psi.values):
        raise ValueError("obstacle order violated")
    if eps <= 0:
        raise ValueError("eps must be positive")
    r = math.sqrt(2.0) * eps
    if sigma0 is None:
        sigma0 = modulus_estimate([phi, psi], [r])
    s = sigma0(r)
    phi_s = parabolic_mollify(phi, eps, extension="nearest").values - s
    psi_s = parabolic_mollify(psi, eps, extension="nearest").values + s
    return GridField(phi.domain, phi_s), GridField(psi.domain, psi_s)


def _mollify_array(arr: np.ndarray, domain: LatticeDomain, eps: float, mode: str) -> np.ndarray:
    tail = arr.shape[domain.n + 1:]
    full = np.broadcast_to(arr, domain.shape + tail)
    out = np.empty(full.shape)
    for idx in np.ndindex(*tail):
        sel = (Ellipsis,) + idx
        out[sel] = _convolve(full[sel], domain, eps, mode)
    return out


def mollify_operator(spec: OperatorSpec, eps: float) -> OperatorSpec:
    """``F_eps``: ``mu`` mollified with zero extension, ``A``/``b`` with constant continuation."""
    dom = spec.domain
    mu = _mollify_array(spec.mu, dom, eps, "constant")
    A = _mollify_array(spec.A, dom, eps, "nearest") if spec.A is not None else None
    b = _mollify_array(spec.b, dom, eps, "nearest") if spec.b is not None else None
    branches = tuple((_mollify_array(Ai, dom, eps, "nearest"), _mollify_array(bi, dom, eps, "nearest"))
                     for Ai, bi in spec.branches) or None
    return spec.with_coefficients(mu=mu, A=A, b=b, branches=branches)

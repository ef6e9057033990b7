"""Named test-corpus instances, shared by the tests and the CLI."""

from __future__ import annotations

import numpy as np

from .lattice import GridField, LatticeDomain
from .operators import EllipticityPair, OperatorSpec
from .oracle import ManufacturedInstance, manufactured_contact
from .solvers import ProblemInstance

__all__ = [
    "trivial_band",
    "saturated_1d",
    "saturated_tiny",
    "bilateral_two_region",
    "holder_obstacle",
    "harnack_sample",
    "BUILTINS",
    "builtin",
]


def _const(dom, c):
    return GridField.constant(dom, c)


def trivial_band(h: float = 0.1, T: float = 0.1, n: int = 1, kind: str = "pucci_plus") -> ProblemInstance:
    """``f = g = 0`` inside the band ``[-1, 1]``: the solution is identically zero."""
    # below the explicit stability bound for Lambda = 2 in dimension n
    tau = 0.2 * h * h if n == 1 else 0.05 * h * h
    dom = LatticeDomain.box([0.0] * n, [1.0] * n, T, h, tau)
    if kind == "heat":
        op = OperatorSpec.heat(dom)
    else:
        op = OperatorSpec.pucci(dom, plus=(kind == "pucci_plus"), lam=1.0, Lam=2.0)
    return ProblemInstance(dom, op, _const(dom, 0.0), _const(dom, -1.0), _const(dom, 1.0),
                           _const(dom, 0.0), name="trivial_band")


def saturated_1d(h: float = 0.02, T: float = 1.0, length: float = 2.0, f: float = 10.0,
                 psi: float = 0.05) -> ProblemInstance:
    """Heat with strong forcing ``f`` pushing ``u`` into the flat upper obstacle ``psi``."""
    tau = T / round(T / (0.4 * h * h))
    dom = LatticeDomain.box([0.0], [length], T, h, tau)
    return ProblemInstance(dom, OperatorSpec.heat(dom), _const(dom, f), _const(dom, -1.0),
                           _const(dom, psi), _const(dom, 0.0), name="saturated_1d")


def saturated_tiny() -> ProblemInstance:
    """11 x 11 version of :func:`saturated_1d` for the brute-force oracle."""
    dom = LatticeDomain.box([0.0], [1.0], 0.04, 0.1, 0.004)
    return ProblemInstance(dom, OperatorSpec.heat(dom), _const(dom, 10.0), _const(dom, -1.0),
                           _const(dom, 0.05), _const(dom, 0.0), name="saturated_tiny")


def bilateral_two_region(h: float = 0.05, tau: float = 0.001, T: float = 0.02) -> ProblemInstance:
    """``f = 20 sin(2 pi x)`` drives ``u`` into ``psi`` on the left and ``phi`` on the right."""
    dom = LatticeDomain.box([0.0], [1.0], T, h, tau)
    f = GridField.from_function(dom, lambda x, t: 20.0 * np.sin(2 * np.pi * x))
    return ProblemInstance(dom, OperatorSpec.heat(dom), f, _const(dom, -0.05), _const(dom, 0.05),
                           _const(dom, 0.0), name="bilateral_two_region")


def holder_obstacle(h: float = 1 / 100, T: float = 0.25, alpha: float = 0.5,
                    band: float = 0.01) -> ProblemInstance:
    """Obstacles ``psi = 0.3 + 0.5|x - 1/2|^alpha`` and ``phi = psi - band`` squeezing ``u``.

    A single obstacle never passes a cusp on to the solution, since ``u`` rounds
    it off. A thin band forces ``u`` to follow the ``C^alpha`` profile at every
    scale above ``band^(1/alpha)``.
    """
    tau = T / round(T / (0.4 * h * h))
    dom = LatticeDomain.box([0.0], [1.0], T, h, tau)
    psi = GridField.from_function(dom, lambda x, t: 0.3 + 0.5 * np.abs(x - 0.5) ** alpha + 0 * t)
    phi = psi - _const(dom, band)
    g = psi - _const(dom, band / 2)
    f = GridField.from_function(dom, lambda x, t: 5.0 * np.sin(4 * np.pi * x) + 0 * t)
    return ProblemInstance(dom, OperatorSpec.heat(dom), f, phi, psi, g, p=6.0, q=6.0, beta1=alpha,
                           name="holder_obstacle")


def harnack_sample(k: int, h: float = 0.04, seed: int = 0, T: float = 0.7) -> ProblemInstance:
    """Random nonnegative supersolution instance number ``k`` on ``[-1, 1] x (0, T]``.

    Lower obstacle 0 keeps ``u >= 0``; the operator kind cycles through heat,
    both Pucci operators and a two-branch Bellman operator.
    """
    rng = np.random.default_rng([seed, k])
    tau = T / round(T / (0.2 * h * h))
    dom = LatticeDomain.box([-1.0], [1.0], T, h, tau)
    kinds = ("heat", "pucci_plus", "pucci_minus", "bellman")
    kind = kinds[k % 4]
    lam, Lam = 1.0, float(rng.uniform(1.0, 2.0))
    if kind == "heat":
        op = OperatorSpec.heat(dom, diffusivity=float(rng.uniform(0.5, 1.5)))
    elif kind == "bellman":
        op = OperatorSpec.bellman(dom, [(1.0, np.array([0.3])), (Lam, np.array([-0.3]))],
                                  EllipticityPair(1.0, Lam), mu=0.3)
    else:
        op = OperatorSpec.pucci(dom, plus=(kind == "pucci_plus"), lam=lam, Lam=Lam, mu=0.2)
    c = rng.uniform(0.5, 1.5, size=3)
    a = rng.uniform(-0.3, 0.3, size=2)

    def gfun(x, t):
        return c[0] + 0.3 * c[1] * np.cos(np.pi * x / 2) + 0.2 * c[2] * x * x + 0 * t

    def ffun(x, t):
        return a[0] * np.sin(np.pi * x) + a[1] * np.cos(3 * t)

    return ProblemInstance(dom, op, GridField.from_function(dom, ffun), _const(dom, 0.0),
                           _const(dom, 10.0), GridField.from_function(dom, gfun),
                           name=f"harnack_sample_{k}")


def _manufactured(kind):
    def make(**kw) -> ManufacturedInstance:
        return manufactured_contact(kind, **kw)
    return make


BUILTINS = {
    "trivial_band": trivial_band,
    "saturated_1d": saturated_1d,
    "saturated_tiny": saturated_tiny,
    "bilateral_two_region": bilateral_two_region,
    "holder_obstacle": holder_obstacle,
    "elliptic_parabola_1d": _manufactured("elliptic_parabola_1d"),
    "parabolic_traveling_band": _manufactured("parabolic_traveling_band"),
    "pure_pde": _manufactured("pure_pde"),
}


def builtin(name: str, **params):
    """``(ProblemInstance, ManufacturedInstance | None)`` for a builtin name."""
    try:
        maker = BUILTINS[name]
    except KeyError:
        raise ValueError(f"unknown builtin {name!r}; choose from {sorted(BUILTINS)}") from None
    out = maker(**params)
    if isinstance(out, ManufacturedInstance):
        return out.instance, out
    return out, None

import warnings

import numpy as np
import pytest

from pobstacle.lattice import GridField, LatticeDomain, quasi_norm
from pobstacle.mollification import (KernelUnderResolved, MollifierKernel, kernel_is_resolved,
                                     modulus_estimate, mollify_operator, parabolic_mollify,
                                     shift_obstacles)
from pobstacle.operators import OperatorSpec


@pytest.fixture
def dom():
    return LatticeDomain.box([0.0], [1.0], 0.2, 0.02, 0.0005)


@pytest.mark.parametrize("n", [1, 2])
def test_kernel_mass_and_support(n):
    k = MollifierKernel(0.1, n)
    assert k.total_mass() == pytest.approx(1.0, abs=1e-10)
    y = np.zeros(n)
    assert k(y, -0.005) > 0
    assert k(y, 0.001) == 0.0  # support is the past slab s in (-eps^2, 0]
    assert k(y + 0.2, -0.005) == 0.0
    with pytest.raises(ValueError):
        MollifierKernel(0.0)


def test_lattice_weights_normalized(dom):
    ws, wt, ok = MollifierKernel(0.1, 1).lattice_weights(dom)
    assert ok
    assert ws.sum() == pytest.approx(1.0) and wt.sum() == pytest.approx(1.0)
    assert ws.shape == (11,)
    np.testing.assert_allclose(ws, ws[::-1])
    assert kernel_is_resolved(dom, 0.1)
    assert not kernel_is_resolved(dom, 0.01)


def test_mollify_constant_nearest(dom):
    f = GridField.constant(dom, 3.0)
    np.testing.assert_allclose(parabolic_mollify(f, 0.1, "nearest").values, 3.0)
    zero = parabolic_mollify(f, 0.1, "zero").values
    # zero extension loses mass near the boundary only
    assert zero[25, 0] == pytest.approx(3.0)
    assert zero[0, 0] < 3.0
    with pytest.raises(ValueError):
        parabolic_mollify(f, 0.1, "reflect")


def test_mollify_converges(dom):
    f = GridField.from_function(dom, lambda x, t: np.sin(3 * x) * np.cos(t))
    errs = [np.abs(parabolic_mollify(f, e, "nearest").values - f.values)[10:-10, :-50].max()
            for e in (0.2, 0.1, 0.05)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 5e-3


def test_under_resolved_warns(dom):
    f = GridField.constant(dom, 1.0)
    with pytest.warns(KernelUnderResolved):
        out = parabolic_mollify(f, 0.005)
    np.testing.assert_allclose(out.values, 1.0)


def test_norm_contraction(dom, rng):
    full = np.ones(dom.shape, bool)
    for _ in range(5):
        f = GridField(dom, rng.normal(size=dom.shape))
        for eps in (0.05, 0.1):
            fe = parabolic_mollify(f, eps)
            for p in (1.0, 2.0, 6.0):
                assert quasi_norm(fe, full, p) <= quasi_norm(f, full, p) * (1 + 1e-12)


def test_modulus_estimate(dom):
    f = GridField.from_function(dom, lambda x, t: 2 * x + 0 * t)
    sigma = modulus_estimate(f, [0.05, 0.1])
    # largest spatial offset strictly below r is k*h with k*h < r
    assert sigma(0.05) == pytest.approx(2 * 0.04)
    assert sigma(0.1) == pytest.approx(2 * 0.08)
    with pytest.raises(ValueError):
        sigma(0.2)
    assert modulus_estimate(GridField.constant(dom, 1.0), [0.1])(0.1) == 0.0
    with pytest.raises(ValueError):
        modulus_estimate(f, [])


def test_shift_obstacles_order(dom, rng):
    x, t = dom.mesh()
    phi = GridField(dom, np.abs(np.sin(7 * x)) * 0.1 - 0.2 + 0.05 * t)
    psi = GridField(dom, phi.values + 0.001 * np.abs(rng.normal(size=dom.shape)))
    pe, qe = shift_obstacles(phi, psi, 0.05)
    assert np.all(pe.values <= qe.values)
    with pytest.raises(ValueError, match="obstacle order"):
        shift_obstacles(psi, phi - 1.0, 0.05)


def test_mollify_operator(dom):
    x, _ = dom.mesh()
    spec = OperatorSpec.linear(dom, 1.0 + 0.5 * np.sin(x), b=np.array([0.5]))
    out = mollify_operator(spec, 0.1)
    assert out.kind is spec.kind
    assert out.A.shape == dom.shape + (1, 1)
    np.testing.assert_allclose(out.b, 0.5)
    lo, hi = spec.A.min(), spec.A.max()
    assert lo - 1e-12 <= out.A.min() and out.A.max() <= hi + 1e-12
    pucci = OperatorSpec.pucci(dom, mu=1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        m = mollify_operator(pucci, 0.1).mu
    assert m.max() <= 1.0 + 1e-12

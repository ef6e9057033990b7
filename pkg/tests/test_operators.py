import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pobstacle.lattice import GridField, LatticeDomain, SpaceTimePoint
from pobstacle.operators import (EllipticityPair, OperatorKind, OperatorSpec, apply_operator,
                                 check_structure_condition, discrete_apply, evaluate_F,
                                 pucci_minus, pucci_plus, sym_eigvals, theta_oscillation,
                                 theta_smallness_scan)


def test_pucci_closed_form():
    e = EllipticityPair(1.0, 3.0)
    X = np.diag([1.0, -1.0])
    assert pucci_plus(X, e) == pytest.approx(-1.0 + 3.0)
    assert pucci_minus(X, e) == pytest.approx(-3.0 + 1.0)
    with pytest.raises(ValueError):
        EllipticityPair(2.0, 1.0)


sym2 = st.tuples(*[st.floats(-10, 10, allow_nan=False)] * 3).map(
    lambda a: np.array([[a[0], a[1]], [a[1], a[2]]]))


@settings(max_examples=200, deadline=None)
@given(sym2, sym2)
def test_pucci_properties(X, Y):
    e = EllipticityPair(0.5, 2.0)
    # P- <= P+, P-(X) = -P+(-X), subadditivity of P+
    assert pucci_minus(X, e) <= pucci_plus(X, e) + 1e-12
    assert pucci_minus(X, e) == pytest.approx(-pucci_plus(-X, e), abs=1e-9)
    assert pucci_plus(X + Y, e) <= pucci_plus(X, e) + pucci_plus(Y, e) + 1e-9


def test_eigvals_sorted(rng):
    A = rng.normal(size=(50, 2, 2))
    A = A + A.transpose(0, 2, 1)
    e = sym_eigvals(A)
    np.testing.assert_allclose(np.sort(e, axis=-1), np.sort(np.linalg.eigvalsh(A), axis=-1))


def test_discrete_pucci_on_quadratic(dom1):
    spec = OperatorSpec.pucci(dom1, plus=False, lam=1.0, Lam=2.0)
    u = GridField.from_function(dom1, lambda x, t: x * x + 0 * t)
    # D2u = 2 > 0, so P-(2) = -Lam * 2
    assert discrete_apply(spec, u, (5, 3)) == pytest.approx(-4.0)
    level = apply_operator(spec, u.values[..., 3], 3)
    np.testing.assert_allclose(level, -4.0)


def test_heat_matches_laplacian(dom2):
    spec = OperatorSpec.heat(dom2)
    u = GridField.from_function(dom2, lambda x, y, t: np.sin(x) * np.cos(y) + t)
    lvl = apply_operator(spec, u.values[..., 2], 2)
    X, Y = dom2.spatial_mesh()
    exact = 2 * np.sin(X) * np.cos(Y)
    np.testing.assert_allclose(lvl, exact[1:-1, 1:-1], atol=5e-3)


def test_mixed_derivative_2d(dom2):
    A = np.array([[1.0, 0.5], [0.5, 1.0]])
    spec = OperatorSpec.linear(dom2, A)
    u = GridField.from_function(dom2, lambda x, y, t: x * y + 0 * t)
    # F = -Tr(A D2u) = -2 * 0.5 * 1
    np.testing.assert_allclose(apply_operator(spec, u.values[..., 0], 0), -1.0)


def test_drift_upwinding(dom1):
    spec = OperatorSpec.pucci(dom1, plus=True, lam=1.0, Lam=1.0, mu=2.0)
    slope = GridField.from_function(dom1, lambda x, t: 3 * x + 0 * t)
    # pure gradient: F = mu |Du| for P+ with drift bound
    np.testing.assert_allclose(apply_operator(spec, slope.values[..., 0], 0), 6.0)


def test_evaluate_F_pointwise(dom1):
    spec = OperatorSpec.bellman(dom1, [(1.0, np.array([1.0])), (2.0, np.array([-1.0]))],
                                EllipticityPair(1.0, 2.0), mu=1.0)
    val = evaluate_F(spec, (0.5,), 0.0, np.array([1.0]), np.array([[1.0]]))
    # branches give -Tr(A X) - b xi
    assert val == pytest.approx(max(-1.0 - 1.0, -2.0 + 1.0))


def test_spec_validation(dom1):
    with pytest.raises(ValueError, match="nonnegative"):
        OperatorSpec.pucci(dom1, mu=-1.0)
    with pytest.raises(ValueError):
        OperatorSpec(OperatorKind.LINEAR, EllipticityPair(1, 1), dom1, 0.0)
    with pytest.raises(ValueError, match="branch"):
        OperatorSpec.bellman(dom1, [], EllipticityPair(1, 1))


@pytest.mark.parametrize("kind", ["pucci_plus", "pucci_minus", "linear", "bellman"])
def test_structure_condition_passes(dom2, kind):
    X, Y, _ = dom2.mesh()
    if kind.startswith("pucci"):
        spec = OperatorSpec.pucci(dom2, plus=kind == "pucci_plus", lam=0.5, Lam=2.0, mu=1.0)
    elif kind == "linear":
        a = 1.0 + 0.5 * np.sin(X)
        A = np.zeros(dom2.shape + (2, 2))
        A[..., 0, 0] = a
        A[..., 1, 1] = 1.5
        spec = OperatorSpec.linear(dom2, A, b=np.array([0.3, -0.4]), ellipticity=EllipticityPair(1.0, 1.5))
    else:
        spec = OperatorSpec.bellman(dom2, [(np.eye(2), np.array([0.5, 0])), (2 * np.eye(2), None)],
                                    EllipticityPair(1.0, 2.0), mu=0.5)
    rep = check_structure_condition(spec, samples=2000, seed=3)
    assert rep.passed, rep.offending[:1]


def test_structure_condition_detects_wrong_ellipticity(dom1):
    broken = OperatorSpec(OperatorKind.LINEAR, EllipticityPair(1.0, 2.0), dom1, 0.0, A=3 * np.eye(1))
    rep = check_structure_condition(broken, samples=500)
    assert not rep.passed
    assert rep.offending and rep.max_violation > 0


def test_theta_oscillation(dom1):
    x, _ = dom1.mesh()
    spec = OperatorSpec.linear(dom1, 1.0 + x)
    a = SpaceTimePoint((0.2,), 0.0)
    b = SpaceTimePoint((0.5,), 0.0)
    assert theta_oscillation(spec, a, b) == pytest.approx(0.3)
    const = OperatorSpec.pucci(dom1, lam=1, Lam=2)
    assert theta_oscillation(const, a, b) == 0.0
    region = np.zeros(dom1.shape, bool)
    region[5, 5] = True
    scan = theta_smallness_scan(spec, region, [0.2], target_delta=1.0)
    assert scan.rows and scan.max_value > 0
    assert scan.passed
    assert not theta_smallness_scan(spec, region, [0.2], target_delta=1e-6).passed

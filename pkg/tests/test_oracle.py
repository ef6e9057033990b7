import numpy as np
import pytest

from pobstacle.instances import BUILTINS, builtin, saturated_tiny, trivial_band
from pobstacle.lattice import GridField, LatticeDomain
from pobstacle.oracle import (OracleError, brute_force_solve, convergence_study,
                              elliptic_contact_endpoint, manufactured_contact, restrict)
from pobstacle.solvers import solve_elliptic, solve_projection


def test_brute_force_matches_projection_tiny():
    inst = saturated_tiny()
    brute = brute_force_solve(inst)
    other = brute_force_solve(inst, init="psi")
    np.testing.assert_allclose(brute.values, other.values, atol=1e-13)
    proj = solve_projection(inst).u.values
    assert np.abs(proj - brute.values).max() < 1e-12


def test_brute_force_limits():
    big = trivial_band(h=0.002, T=0.01)
    with pytest.raises(OracleError, match="limited"):
        brute_force_solve(big)
    with pytest.raises(ValueError, match="init"):
        brute_force_solve(saturated_tiny(), init="zero")


def test_restrict_nested():
    fine = LatticeDomain.box([0.0], [1.0], 0.1, 0.05, 0.004)
    coarse = LatticeDomain.box([0.0], [1.0], 0.1, 0.1, 0.02)
    f = GridField.from_function(fine, lambda x, t: x + 10 * t)
    r = restrict(f, coarse)
    np.testing.assert_allclose(r, GridField.from_function(coarse, lambda x, t: x + 10 * t).values)
    with pytest.raises(ValueError, match="nested"):
        restrict(f, LatticeDomain.box([0.0], [1.0], 0.1, 0.1, 0.01))


def test_elliptic_manufactured_is_certified():
    mi = manufactured_contact("elliptic_parabola_1d", h=1 / 32)
    assert mi.certify() <= mi.tolerance
    assert mi.known_contact.any()
    x0 = elliptic_contact_endpoint()
    assert 0 < x0 < 0.5


def test_traveling_band_is_exact_fixed_point():
    mi = manufactured_contact("parabolic_traveling_band", h=1 / 32)
    assert mi.certify() <= mi.tolerance
    sol = solve_projection(mi.instance)
    assert np.abs(sol.u.values - mi.exact_u.values).max() < 1e-10


def test_manufactured_unknown_kind():
    with pytest.raises(ValueError):
        manufactured_contact("nope")


def test_convergence_study_pure_pde():
    table = convergence_study(lambda h: manufactured_contact("pure_pde", h=h),
                              grids=(1 / 8, 1 / 16, 1 / 32))
    assert table.monotone
    assert table.min_order > 1.7
    assert table.fitted_order == pytest.approx(2.0, abs=0.2)
    with pytest.raises(ValueError, match="factor 2"):
        convergence_study(lambda h: None, grids=(1 / 8, 1 / 12, 1 / 16))


def test_self_convergence_without_exact():
    def maker(h):
        from pobstacle.instances import bilateral_two_region
        return bilateral_two_region(h=h, tau=0.4 * h * h, T=0.4 * 0.05 ** 2 * 8)

    table = convergence_study(maker, grids=(0.05, 0.025, 0.0125))
    assert len(table.rows) == 2


def test_builtins_registry():
    assert {"trivial_band", "elliptic_parabola_1d", "pure_pde"} <= set(BUILTINS)
    inst, man = builtin("elliptic_parabola_1d", h=1 / 16)
    assert man is not None and man.params.get("steady")
    sol = solve_elliptic(inst)
    assert np.abs(sol.u.values - man.exact_u.values).max() < 0.05
    inst, man = builtin("trivial_band")
    assert man is None
    with pytest.raises(ValueError, match="unknown builtin"):
        builtin("nope")

import math

import numpy as np
import pytest

from pobstacle.instances import bilateral_two_region, saturated_tiny, trivial_band
from pobstacle.lattice import GridField, LatticeDomain
from pobstacle.operators import OperatorSpec
from pobstacle.solvers import (ProblemInstance, SolverConfig, SolverError, cfl_bound,
                               minmax_residual, penalty_pointwise_step, solve_elliptic,
                               solve_obstacle, solve_penalized, solve_projection)


def _heat_instance(dom, f=0.0, phi=-1.0, psi=1.0, g=0.0, **kw):
    c = GridField.constant
    return ProblemInstance(dom, OperatorSpec.heat(dom), c(dom, f), c(dom, phi), c(dom, psi), c(dom, g), **kw)


def test_penalty_step_closed_form():
    c = 4.0
    # inside the band: identity
    assert penalty_pointwise_step(0.2, 0.0, 1.0, c) == 0.2
    # above psi: v + c(v - psi) = w
    v = penalty_pointwise_step(2.0, 0.0, 1.0, c)
    assert v + c * (v - 1.0) == pytest.approx(2.0)
    v = penalty_pointwise_step(-1.0, 0.0, 1.0, c)
    assert v - c * (0.0 - v) == pytest.approx(-1.0)
    assert penalty_pointwise_step(2.0, 0.0, 1.0, math.inf) == 1.0
    with pytest.raises(ValueError, match="obstacle order"):
        penalty_pointwise_step(0.0, 1.0, 0.0, c)
    w = np.linspace(-2, 2, 9)
    out = penalty_pointwise_step(w, np.zeros(9), np.ones(9), 1e12)
    np.testing.assert_allclose(out, np.clip(w, 0, 1), atol=1e-11)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(delta=0)
    with pytest.raises(ValueError, match="decreasing"):
        SolverConfig(delta_sweep=(1e-3, 1e-2))
    with pytest.raises(ValueError, match="time scheme"):
        SolverConfig(time_scheme="crank")
    with pytest.raises(ValueError):
        SolverConfig(cfl_safety=1.5)
    d = SolverConfig().to_dict()
    assert d["delta_sweep"] == list(SolverConfig().delta_sweep)


@pytest.mark.parametrize("kw, msg", [
    (dict(phi=1.0, psi=0.0, g=0.5), "obstacle order violated"),
    (dict(g=2.0), "boundary datum outside the obstacle band"),
    (dict(p=6.0, q=4.0), "exponent order violated"),
    (dict(p=1.4, q=2.0), "exponent regime violated"),
])
def test_instance_validation(dom1, kw, msg):
    with pytest.raises(ValueError, match=msg):
        _heat_instance(dom1, **kw).validate()


def test_cfl_enforced():
    dom = LatticeDomain.box([0.0], [1.0], 0.1, 0.1, 0.01)
    assert cfl_bound(OperatorSpec.heat(dom), 1.0) == pytest.approx(0.005)
    with pytest.raises(SolverError, match="CFL"):
        solve_projection(_heat_instance(dom))


@pytest.mark.parametrize("solver", [solve_projection, solve_obstacle, solve_penalized])
def test_trivial_band_zero(solver):
    sol = solver(trivial_band())
    assert np.all(sol.u.values == 0)
    assert sol.residual_max == 0


def test_trivial_band_2d():
    sol = solve_projection(trivial_band(h=0.25, T=0.0125, n=2, kind="pucci_minus"))
    assert np.all(sol.u.values == 0)


def test_projection_residual_and_band():
    inst = bilateral_two_region()
    sol = solve_projection(inst)
    assert sol.residual_max < 1e-10
    assert np.all(sol.u.values <= inst.psi.values) and np.all(sol.u.values >= inst.phi.values)
    assert sol.coincidence_plus.any() and sol.coincidence_minus.any()
    # contacts sit on the forcing's sign
    x = inst.domain.axis(0)
    plus_x = x[np.nonzero(sol.coincidence_plus.any(axis=1))[0]]
    minus_x = x[np.nonzero(sol.coincidence_minus.any(axis=1))[0]]
    assert plus_x.max() < 0.5 < minus_x.min()


def test_penalized_slack_and_limit():
    inst = saturated_tiny()
    proj = solve_projection(inst).u.values
    prev = None
    for d in (1e-2, 1e-4, 1e-6):
        sol = solve_penalized(inst, delta=d)
        pm = sol.penalty_max[d]
        assert np.all(sol.u.values <= inst.psi.values + d * pm + 1e-14)
        gap = np.abs(sol.u.values - proj).max()
        assert gap <= 10 * d * pm + 1e-14
        if prev is not None:
            assert gap < prev
        prev = gap
    with pytest.raises(ValueError):
        solve_penalized(inst, delta=-1.0)


def test_obstacle_sweep_certificate_failure():
    inst = saturated_tiny()
    cfg = SolverConfig(delta_sweep=(1.0, 0.5), tol_sweep=1e-8)
    with pytest.raises(SolverError) as info:
        solve_obstacle(inst, cfg)
    table = info.value.table
    assert [row["delta"] for row in table] == [1.0, 0.5]
    assert table[0]["gap"] is None


def test_obstacle_diagnostics():
    sol = solve_obstacle(saturated_tiny())
    diag = sol.diagnostics()
    assert diag["method"] == "obstacle"
    assert len(diag["penalty_max"]) == len(SolverConfig().delta_sweep)
    assert len(diag["sweep_gaps"]) == len(SolverConfig().delta_sweep) - 1
    assert diag["contact_plus_nodes"] > 0


def test_residual_detects_perturbation():
    inst = bilateral_two_region()
    sol = solve_projection(inst)
    vals = np.array(sol.u.values)
    vals[5, 10] += 1e-3
    res = minmax_residual(GridField(inst.domain, vals), inst)
    assert np.abs(res.values).max() > 1e-4


def test_elliptic_steady_state():
    dom = LatticeDomain.box([0.0], [1.0], 0.01, 1 / 32, 0.01)
    inst = _heat_instance(dom, f=8.0, phi=-1.0, psi=0.5, g=0.0)
    sol = solve_elliptic(inst, SolverConfig(tol_fixed_point=1e-10))
    u = sol.u.values[:, 0]
    x = dom.axis(0)
    # unconstrained solution 4x(1-x) peaks at 1 > psi, so a contact set forms
    assert sol.coincidence_plus[:, -1].any()
    assert np.all(u <= 0.5 + 1e-12)
    assert sol.residual_max < 1e-8
    assert np.all(sol.u.values == sol.u.values[:, :1])
    with pytest.raises(SolverError, match="did not converge"):
        solve_elliptic(inst, SolverConfig(max_iters=5))


def test_elliptic_rejects_time_dependent(dom1):
    inst = bilateral_two_region()
    x, t = inst.domain.mesh()
    moving = inst.replace(f=GridField(inst.domain, t))
    with pytest.raises(ValueError, match="time-independent"):
        solve_elliptic(moving)


def test_mollified_solve_stays_in_shifted_band():
    inst = bilateral_two_region(h=0.02, tau=0.00016)
    cfg = SolverConfig(eps_mollify=0.05)
    sol = solve_projection(inst, cfg)
    data = sol.data
    assert data is not inst
    assert np.all(sol.u.values[1:-1, 1:] <= data.psi.values[1:-1, 1:] + 1e-15)
    assert np.all(sol.u.values[1:-1, 1:] >= data.phi.values[1:-1, 1:] - 1e-15)

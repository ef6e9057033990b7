"""Acceptance criteria, one test each; every test prints a PASS/FAIL line."""

import json
import math
import shutil

import numpy as np
import pytest

from pobstacle.cli import main
from pobstacle.instances import (BUILTINS, bilateral_two_region, builtin, harnack_sample,
                                 holder_obstacle, saturated_1d, saturated_tiny, trivial_band)
from pobstacle.lattice import GridField, LatticeDomain, quasi_norm
from pobstacle.mollification import parabolic_mollify, shift_obstacles
from pobstacle.operators import (EllipticityPair, OperatorSpec, check_structure_condition,
                                 pucci_minus, pucci_plus)
from pobstacle.oracle import (brute_force_solve, convergence_study, elliptic_parabola_1d,
                              parabolic_traveling_band, pure_pde)
from pobstacle.regularity import (coincidence_sets, compute_exponents, contact_growth, fit_holder,
                                  weak_harnack_ratio)
from pobstacle.solvers import (SolverConfig, solve_elliptic, solve_obstacle, solve_penalized,
                               solve_projection)


@pytest.fixture
def verdict(capsys):
    def emit(k, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {k}: {detail}")
        assert ok, detail
    return emit


def _rot(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


def test_01_pucci_oracle(verdict):
    rng = np.random.default_rng(1)
    pairs = [EllipticityPair(lam, lam + float(rng.uniform(0.1, 3.0)))
             for lam in rng.uniform(0.2, 2.0, size=5)]
    X = rng.normal(size=(200, 2, 2))
    X = 0.5 * (X + np.swapaxes(X, -1, -2))
    # S_{lam,Lam} = {R diag(a1, a2) R^T}: 50 levels per eigenvalue, rotations on a fine grid
    angles = np.linspace(0.0, np.pi, 2500, endpoint=False)
    R = _rot(angles)
    D = np.einsum("aji,njk,aki->nai", R, X, R)  # diagonal of R^T X R
    grid_err = exact_err = 0.0
    for e in pairs:
        levels = np.linspace(e.lam, e.Lam, 50)
        # -Tr(AX) = -(a1 d1 + a2 d2) is separable in (a1, a2) for a fixed rotation
        vals = -D[..., None] * levels
        sup = vals.max(-1).sum(-1).max(-1)
        inf = vals.min(-1).sum(-1).min(-1)
        grid_err = max(grid_err, np.abs(sup - pucci_plus(X, e)).max(), np.abs(inf - pucci_minus(X, e)).max())
        # analytic optimizer: eigenvectors of X, Lam on negative and lam on positive eigenvalues
        w, V = np.linalg.eigh(X)
        a_plus = np.where(w < 0, e.Lam, e.lam)
        a_minus = np.where(w < 0, e.lam, e.Lam)
        A_plus = np.einsum("nij,nj,nkj->nik", V, a_plus, V)
        A_minus = np.einsum("nij,nj,nkj->nik", V, a_minus, V)
        exact_err = max(exact_err,
                        np.abs(-np.einsum("nij,nji->n", A_plus, X) - pucci_plus(X, e)).max(),
                        np.abs(-np.einsum("nij,nji->n", A_minus, X) - pucci_minus(X, e)).max())
    verdict(1, grid_err <= 1e-3 and exact_err <= 1e-9,
            f"grid error {grid_err:.2e} (<= 1e-3), analytic error {exact_err:.2e} (<= 1e-9)")


def test_02_structure_condition(verdict):
    dom = LatticeDomain.box([0.0, 0.0], [1.0, 1.0], 0.1, 0.1, 0.001)
    x, y, _ = dom.mesh()
    A = np.zeros(dom.shape + (2, 2))
    A[..., 0, 0] = 1.5 + 0.4 * np.sin(3 * x)
    A[..., 1, 1] = 1.5 + 0.4 * np.cos(2 * y)
    A[..., 0, 1] = A[..., 1, 0] = 0.1 * x * y
    b = np.stack([np.sin(y), 0.5 * x], -1)
    e = EllipticityPair(1.0, 2.0)
    specs = {
        "pucci_plus": OperatorSpec.pucci(dom, True, 1.0, 2.0, mu=0.5 + x),
        "pucci_minus": OperatorSpec.pucci(dom, False, 1.0, 2.0, mu=0.3),
        "linear": OperatorSpec.linear(dom, A, b, ellipticity=e),
        "bellman": OperatorSpec.bellman(dom, [(np.eye(2), np.array([0.5, 0.0])),
                                              (np.diag([1.0, 2.0]), np.array([0.0, -1.0]))], e, mu=1.0),
    }
    counts = {k: len(check_structure_condition(s, samples=10_000, seed=3).offending) for k, s in specs.items()}
    broken = OperatorSpec(OperatorSpec.heat(dom).kind, e, dom, 0.0, A=3.0 * np.eye(2))
    detected = not check_structure_condition(broken, samples=10_000, seed=3).passed
    verdict(2, all(v == 0 for v in counts.values()) and detected,
            f"violations {counts}, broken spec detected: {detected}")


def _corpus():
    for name in BUILTINS:
        inst, _ = builtin(name)
        yield inst
    yield trivial_band(n=2)
    inst = bilateral_two_region()
    yield inst.replace(name="bilateral_mollified")


def test_03_band_invariant(verdict):
    worst_proj = 0.0
    worst_pen = 0.0
    names = []
    for inst in _corpus():
        cfg = SolverConfig(eps_mollify=0.1 if inst.name == "bilateral_mollified" else 0.0)
        s = solve_projection(inst, cfg)
        lo, hi = s.data.phi.values, s.data.psi.values
        worst_proj = max(worst_proj, float(np.maximum(lo - s.u.values, s.u.values - hi).max()))
        delta = 1e-3
        p = solve_penalized(inst, cfg, delta=delta)
        pm = p.penalty_max[delta]
        excess = float(np.maximum(p.data.phi.values - p.u.values, p.u.values - p.data.psi.values).max())
        worst_pen = max(worst_pen, excess / (5 * delta * pm) if excess > 0 else 0.0)
        names.append(inst.name)
    ok = worst_proj <= 1e-12 and worst_pen <= 1.0
    verdict(3, ok, f"{len(names)} instances; projection excess {worst_proj:.1e}, "
                   f"penalized excess / (5 delta pm) {worst_pen:.3f}")


def test_04_penalty_uniform_bound(verdict):
    inst = saturated_1d()
    pms = [solve_penalized(inst, delta=d).penalty_max[d] for d in (1e-1, 1e-2, 1e-3, 1e-4)]
    spread = (max(pms) - min(pms)) / max(pms)
    verdict(4, spread <= 0.2, f"penalty_max {[round(v, 4) for v in pms]}, spread {spread:.1%} (<= 20%)")


def test_05_delta_limit(verdict):
    inst = saturated_1d()
    ref = solve_projection(inst).u.values
    gaps, ratios = [], []
    for d in (1e-1, 1e-2, 1e-3, 1e-4):
        s = solve_penalized(inst, delta=d)
        gap = float(np.abs(s.u.values - ref).max())
        gaps.append(gap)
        ratios.append(gap / (10 * d * s.penalty_max[d]))
    monotone = all(b < a for a, b in zip(gaps, gaps[1:]))
    verdict(5, max(ratios) <= 1.0 and monotone,
            f"gaps {[f'{g:.1e}' for g in gaps]}, max gap / (10 delta pm) {max(ratios):.3f}, monotone {monotone}")


def test_06_brute_force(verdict):
    cfg = SolverConfig(delta_sweep=tuple(10.0 ** -k for k in range(1, 13)))
    diffs = {}
    for inst in (trivial_band(), saturated_tiny(), bilateral_two_region()):
        s = solve_obstacle(inst, cfg)
        diffs[inst.name] = float(np.abs(s.u.values - brute_force_solve(inst).values).max())
    verdict(6, max(diffs.values()) <= 1e-8, f"sup differences {diffs} (<= 1e-8)")


def test_07_convergence(verdict):
    pde = convergence_study(lambda h: pure_pde(h=h), grids=(1 / 16, 1 / 32, 1 / 64))
    # the free-boundary point moves relative to the grid, so pairwise orders are noisy;
    # the observed order is the least-squares slope over five nested levels
    ell = convergence_study(lambda h: elliptic_parabola_1d(h=h), solver="elliptic",
                            grids=(1 / 16, 1 / 32, 1 / 64, 1 / 128, 1 / 256))
    ok = pde.min_order >= 1.8 and ell.fitted_order >= 0.9
    verdict(7, ok, f"pure_pde order {pde.min_order:.3f} (>= 1.8), elliptic fitted order "
                   f"{ell.fitted_order:.3f} (>= 0.9), pairwise {[round(o, 2) for o in ell.orders]}")


def _contact_check(build, solve, obstacle_key, side, hs, margin=0.1):
    """Worst growth exponent at coarse contact nodes, and gradient gaps over ``hs``."""
    runs = [(m, solve(m.instance)) for m in (build(h) for h in hs)]
    m, s = runs[0]
    inst = m.instance
    ex = compute_exponents(inst.domain.n, inst.p, inst.q, inst.beta1, elliptic=bool(m.params.get("steady")))
    dom = s.u.domain
    h = dom.h
    cp, cm, _, _ = coincidence_sets(s.u, inst.phi, inst.psi, 1e-9)
    mask = cp if side == "plus" else cm
    X = dom.mesh()[0]
    mask = mask & (X >= dom.spatial_low[0] + margin) & (X <= dom.spatial_low[0] + np.ptp(dom.axis(0)) - margin)
    nodes = np.argwhere(mask)
    worst = math.inf
    gap_rows = []
    for nd in nodes:
        cg = contact_growth(s.u, getattr(inst, obstacle_key), nd, [4 * h, 8 * h, 16 * h, 32 * h], ex, tol=1e-9)
        worst = min(worst, cg.exponent)
        x, t = dom.axis(0)[nd[0]], dom.times[nd[1]]
        row = [cg.gradient_gap]
        for mf, sf in runs[1:]:
            df = sf.u.domain
            # tau scales with h^2, so coarse time levels need not be fine ones: take the nearest
            j = df.locate([x], df.times[0])[0]
            k = int(np.argmin(np.abs(df.times - t)))
            row.append(contact_growth(sf.u, getattr(mf.instance, obstacle_key), (j, k),
                                      [4 * df.h], ex, tol=1e-9).gradient_gap)
        gap_rows.append(row)
    decreasing = all(b < a or b <= 1e-12 for row in gap_rows for a, b in zip(row, row[1:]))
    nonzero = sum(row[0] > 1e-12 for row in gap_rows)
    return len(nodes), worst, 1 + ex.beta2 - 0.1, decreasing, nonzero


def test_08_contact_growth(verdict):
    hs = (1 / 64, 1 / 128, 1 / 256)
    n1, w1, t1, d1, z1 = _contact_check(lambda h: elliptic_parabola_1d(h=h), solve_elliptic, "phi", "minus", hs)
    n2, w2, t2, d2, z2 = _contact_check(lambda h: parabolic_traveling_band(h=h), solve_projection, "psi", "plus", hs)
    ok = n1 > 0 and n2 > 0 and w1 >= t1 and w2 >= t2 and d1 and d2
    verdict(8, ok, f"elliptic: {n1} nodes, min exponent {w1:.3f} (>= {t1:.3f}), gaps decrease {d1} ({z1} nonzero); "
                   f"band: {n2} nodes, min exponent {w2:.3f} (>= {t2:.3f}), gaps decrease {d2} ({z2} nonzero)")


def test_09_holder_fit(verdict):
    inst = holder_obstacle()
    ex = compute_exponents(1, inst.p, inst.q, inst.beta1)
    fit = fit_holder(solve_projection(inst).u)
    target = min(ex.alpha0, 0.5) - 0.1
    verdict(9, fit.exponent >= target and fit.r2 >= 0.9,
            f"exponent {fit.exponent:.3f} (>= {target:.2f}), R^2 {fit.r2:.3f} (>= 0.9)")


def test_10_weak_harnack(verdict):
    center = ((0.0,), 0.7)
    radii = (0.1, 0.2, 0.4)
    coarse, growth, scale_err = [], 0.0, 0.0
    for k in range(20):
        per_h = []
        for h in (0.04, 0.02):
            inst = harnack_sample(k, h=h)
            u = solve_projection(inst).u
            per_h.append([weak_harnack_ratio(u, inst.f, center, r) for r in radii])
            if h == 0.04:
                for r, base in zip(radii, per_h[0]):
                    scaled = weak_harnack_ratio(u * 10.0, inst.f * 10.0, center, r)
                    scale_err = max(scale_err, abs(scaled - base) / base)
        coarse += per_h[0]
        growth = max(growth, max(b / a for a, b in zip(*per_h)))
    spread = max(coarse) / min(coarse)
    verdict(10, spread <= 10 and growth <= 1.25 and scale_err <= 1e-12,
            f"max/min {spread:.3f} (<= 10), refinement growth {growth:.3f} (<= 1.25), "
            f"scaling error {scale_err:.1e} (<= 1e-12)")


def test_11_mollification(verdict):
    rng = np.random.default_rng(11)
    dom = LatticeDomain.box([0.0], [1.0], 0.2, 0.02, 0.0005)
    full = np.ones(dom.shape, bool)
    worst = 0.0
    order_ok = True
    for _ in range(100):
        f = GridField(dom, rng.normal(size=dom.shape) * rng.uniform(0.1, 5.0))
        mu = GridField(dom, np.abs(rng.normal(size=dom.shape)))
        p, q = rng.uniform(1.0, 8.0), rng.uniform(1.0, 8.0)
        phi = GridField(dom, rng.normal(size=dom.shape))
        psi = phi + GridField(dom, np.abs(rng.normal(size=dom.shape)) * rng.uniform(0.0, 0.01))
        for eps in (0.05, 0.1, 0.2):
            fe, me = parabolic_mollify(f, eps), parabolic_mollify(mu, eps)
            worst = max(worst, quasi_norm(fe, full, p) / quasi_norm(f, full, p),
                        quasi_norm(me, full, q) / quasi_norm(mu, full, q))
            lo, hi = shift_obstacles(phi, psi, eps)
            order_ok &= bool(np.all(lo.values <= hi.values))
    verdict(11, worst <= 1 + 1e-12 and order_ok,
            f"max norm ratio {worst:.6f} (<= 1), shifted obstacles ordered {order_ok}")


def _strip(obj):
    if isinstance(obj, dict):
        return {k: _strip(v) for k, v in obj.items() if k != "timestamp"}
    if isinstance(obj, list):
        return [_strip(v) for v in obj]
    return obj


def _snapshot(root):
    snap = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            key = str(p.relative_to(root))
            snap[key] = _strip(json.loads(p.read_text())) if p.suffix == ".json" else p.read_bytes()
    return snap


def test_12_determinism(verdict, tmp_path):
    runs = [
        ["solve", "--instance", "builtin:bilateral_two_region"],
        ["sweep", "--instance", "builtin:saturated_tiny", "--axis", "delta", "--values", "0.1,0.01,0.001"],
        ["probe", "--instance", "builtin:bilateral_two_region", "--probe", "holder"],
        ["probe", "--instance", "builtin:elliptic_parabola_1d", "--probe", "contact_growth"],
    ]
    out = tmp_path / "out"
    snaps = []
    for _ in range(2):
        # identical command lines each time, starting from an empty output directory
        shutil.rmtree(out, ignore_errors=True)
        for args in runs:
            assert main(args + ["--seed", "5", "--out", str(out)]) == 0
        assert main(["report", str(out), "--out", str(out / "report")]) == 0
        snaps.append(_snapshot(out))
    a, b = snaps
    differing = sorted(k for k in set(a) | set(b) if a.get(k) != b.get(k))
    verdict(12, not differing and len(a) > 5,
            f"{len(a)} files compared, differing: {differing or 'none'}")

"""The eleven acceptance criteria, each at its stated tolerance and runtime."""

import time

import numpy as np
import pytest

import conftest
from bailout.levy_model import LevyModel
from bailout.regime_switching import ValueFunction, apply_T, apply_Theta, solve, value_bounds
from bailout.scale_functions import ScaleFunctionSet, laplace_residual
from bailout.simulator import PathConfig, paired_difference, simulate_regime, simulate_single_regime
from bailout.single_regime import barrier_score, npv, npv_derivative, optimal_threshold

from conftest import SQRT2, brownian_problem, cl_problem, symmetric_regime, two_state_regime


def record(number, title, passed, detail, elapsed, limit):
    ok = bool(passed) and elapsed < limit
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail} ({elapsed:.2f} s, limit {limit:g} s)"
    conftest.ACCEPTANCE[number] = line
    print(line)
    assert passed, line
    assert elapsed < limit, line


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


LAPLACE_SETS = [
    LevyModel.brownian(1.0, SQRT2),
    LevyModel.brownian(-0.2, 0.5),
    LevyModel.brownian(3.0, 2.0),
    LevyModel.cramer_lundberg(2.0, 1.0, 1.0),
    LevyModel.cramer_lundberg(1.2, 3.0, 4.0),
    LevyModel.cramer_lundberg(5.0, 0.5, 0.3),
]


def test_criterion_01_laplace_oracle():
    with Timer() as t:
        worst = 0.0
        for model in LAPLACE_SETS:
            delta = 0.4 * model.drift_c if model.bounded_variation else 0.5
            sfs = ScaleFunctionSet(model, delta, 0.6)
            worst = max(worst, laplace_residual(sfs, sfs.phi_Y + 1.0, "X"))
    record(1, "scale-function Laplace oracle", worst < 1e-6, f"max residual {worst:.2e} < 1e-6", t.elapsed, 1.0)


def test_criterion_02_fluctuation_identities():
    rng = np.random.default_rng(42)
    with Timer() as t:
        worst = 0.0
        for model in (LevyModel.brownian(1.0, SQRT2), LevyModel.cramer_lundberg(2.0, 1.0, 1.0)):
            sfs = ScaleFunctionSet(model, 0.5, 0.6)
            x = rng.uniform(0.0, 10.0, 50)
            d = sfs.delta
            r1 = d * sfs.refracted_convolution(x, 0.0, "W") - (sfs.Wbar(x, "Y") - sfs.Wbar(x, "X"))
            r2 = d * sfs.refracted_convolution(x, 0.0, "Wprime") - ((1 - d * sfs.W0("X")) * sfs.W(x, "Y") - sfs.W(x, "X"))
            worst = max(worst, np.max(np.abs(r1)), np.max(np.abs(r2)))
    record(2, "convolution identities at 50 random x", worst < 1e-8, f"max abs error {worst:.2e} < 1e-8", t.elapsed, 1.0)


def test_criterion_03_smooth_fit():
    with Timer() as t:
        prob = brownian_problem()
        sol = optimal_threshold(prob)
        fit = max(abs(float(npv_derivative(prob, sol.b_star, sol.b_star, side=s)) - 1.0) for s in ("left", "right"))
        g = abs(barrier_score(prob, sol.b_star).g)
    ok = sol.b_star > 0 and fit < 1e-7 and g < 1e-9
    record(3, "smooth fit, unbounded variation", ok,
           f"b* = {sol.b_star:.10f}, |v'(b*) - 1| = {fit:.1e}, |g(b*)| = {g:.1e}", t.elapsed, 1.0)


def test_criterion_04_slope_bounds():
    with Timer() as t:
        details, ok = [], True
        for make in (brownian_problem, cl_problem):
            prob = make(beta=3.0)
            sol = optimal_threshold(prob)
            b = sol.b_star
            grid = np.linspace(0.0, max(2 * b, b + 3.0), 801)
            inner = grid[(grid > 0) & (grid != b)]
            d = npv_derivative(prob, b, inner)
            below, above = d[inner < b], d[inner > b]
            ok &= bool(np.all(below >= 1 - 1e-9) and np.all(below <= prob.beta))
            ok &= bool(np.all(above >= -1e-9) and np.all(above <= 1 + 1e-9))
            details.append(f"{prob.model.family.value}: below in [{below.min():.6f}, {below.max():.6f}], above in [{above.min():.6f}, {above.max():.6f}]")
    record(4, "slope bounds on 801 points", ok, "; ".join(details), t.elapsed, 1.0)


def test_criterion_05_zero_threshold_boundary():
    # Cramer-Lundberg (c=2, lambda=1, mu=1), delta=0.5, q=0.1, r=0.5: g(0) = 0.3 beta - 0.75,
    # so beta = 2.4 satisfies the zero-threshold condition and 2.64 does not
    with Timer() as t:
        beta0 = 2.4
        sol0 = optimal_threshold(cl_problem(beta=beta0))
        sol1 = optimal_threshold(cl_problem(beta=1.1 * beta0))
        betas = np.linspace(beta0, 1.1 * beta0, 25)
        g0 = np.array([barrier_score(cl_problem(beta=b), 0.0).g for b in betas])
        positive = g0 > 0
        changes = int(np.count_nonzero(np.diff(positive)))
        steps = np.abs(np.diff(g0))
        continuous = steps.max() <= 1.5 * steps.mean()
    table = ", ".join(f"{b:.2f}:{g:+.3f}" for b, g in zip(betas[::4], g0[::4]))
    ok = sol0.b_star == 0.0 and sol1.b_star > 0 and changes == 1 and continuous and g0[0] < 0 < g0[-1]
    record(5, "zero-threshold boundary", ok,
           f"b*(beta={beta0}) = {sol0.b_star}, b*(beta={1.1 * beta0:.2f}) = {sol1.b_star:.6f}, one sign change of g(0) [{table}]",
           t.elapsed, 1.0)


def test_criterion_06_monte_carlo_agreement():
    rng = np.random.default_rng(6)
    cfg = PathConfig(n_paths=200_000, seed=20260)
    lines, ok = [], True
    with Timer() as t:
        for make in (brownian_problem, cl_problem):
            prob = make()
            target = 0.01 * prob.delta / prob.alpha
            for k in range(5):
                b, x = rng.uniform(0.0, 2.0), rng.uniform(0.0, 3.0)
                est = simulate_single_regime(prob, b, x, PathConfig(n_paths=cfg.n_paths, seed=cfg.seed + k))
                ref = float(npv(prob, b, x))
                z = abs(est.mean - ref) / est.stderr
                ok &= z < 3.0 and est.stderr < target
                lines.append(f"{z:.2f}")
    record(6, "analytic vs Monte Carlo, 2e5 paths, 5 pairs per family", ok,
           f"|diff|/stderr = [{', '.join(lines)}] all < 3, stderr < 1% of delta/alpha", t.elapsed, 60.0)


def _class_member(rng, grid, n_states):
    vals, tails = [], []
    for _ in range(n_states):
        slopes = np.sort(rng.uniform(0.0, 1.0, grid.size - 1))[::-1]
        vals.append(rng.uniform(-3, 3) + np.concatenate([[0.0], np.cumsum(slopes * np.diff(grid))]))
        tails.append(rng.uniform(0.0, slopes[-1]))
    return ValueFunction(grid, np.array(vals), np.array(tails))


def test_criterion_07_contraction():
    reg = two_state_regime()
    rho = reg.contraction_factor()
    rng = np.random.default_rng(7)
    grid = np.linspace(0.0, 12.0, 801)
    with Timer() as t:
        ratios = []
        for _ in range(20):
            f, g = _class_member(rng, grid, 2), _class_member(rng, grid, 2)
            num = np.max(np.abs(apply_Theta(reg, f)[0].values - apply_Theta(reg, g)[0].values))
            ratios.append(num / np.max(np.abs(f.values - g.values)))
    worst = max(ratios)
    record(7, "contraction of Theta on 20 random class pairs", worst <= rho + 1e-8,
           f"max ratio {worst:.6f} <= rho + 1e-8 = {rho + 1e-8:.6f}", t.elapsed, 30.0)


@pytest.fixture(scope="module")
def solved():
    reg = two_state_regime()
    start = time.perf_counter()
    sol = solve(reg, tol=1e-6)
    return reg, sol, time.perf_counter() - start


def test_criterion_08_fixed_point(solved):
    reg, sol, solve_time = solved
    V, b = sol.V, sol.b_star
    cfg = PathConfig(n_paths=100_000, seed=808)
    points = [(0.0, 0), (1.0, 1), (2.5, 0)]
    with Timer() as t:
        residual = float(np.max(np.abs(apply_T(reg, b, V).values - V.values)))
        zs = []
        for x, i in points:
            est = simulate_regime(reg, b.b, x, i, cfg)
            zs.append(abs(est.mean - float(V(x, i))) / est.stderr)
    ok = residual < 1e-6 and max(zs) < 3.0
    record(8, "fixed point and simulated value", ok,
           f"b* = {np.round(b.b, 6).tolist()}, ||T_b* V - V|| = {residual:.1e}, |V - MC|/stderr = {[round(z, 2) for z in zs]}",
           t.elapsed + solve_time, 120.0)


def test_criterion_09_bounds_and_lipschitz(solved):
    reg, sol, _ = solved
    with Timer() as t:
        lo, hi = value_bounds(reg)
        V = sol.V.values
        dV = np.diff(V, axis=1)
        dx = np.diff(sol.V.grid)
        inside = bool(np.all(V > lo) and np.all(V < hi))
        lipschitz = bool(np.all(dV >= 0) and np.all(dV <= reg.beta * dx + 1e-8))
    record(9, "value bounds and Lipschitz bound", inside and lipschitz,
           f"{lo:.4f} < V in [{V.min():.4f}, {V.max():.4f}] < {hi:.4f}, max (dV - beta dx) = {np.max(dV - reg.beta * dx):.2e}",
           t.elapsed, 1.0)


def test_criterion_10_suboptimal_thresholds(solved):
    reg, sol, _ = solved
    b_star = sol.b_star.b
    rng = np.random.default_rng(10)
    cfg = PathConfig(n_paths=50_000, seed=1010)
    zs, ok = [], True
    with Timer() as t:
        for k in range(10):
            b = np.clip(b_star + rng.normal(0.0, 0.3, b_star.size), 0.0, None)
            # common random numbers: the joint stderr is that of the per-path differences
            d = paired_difference(reg, b, b_star, 1.0, k % 2, cfg)
            zs.append(d.mean / d.stderr)
            ok &= d.mean <= 3.0 * d.stderr
    record(10, "perturbed thresholds do not beat b*", ok,
           f"(NPV(b') - NPV(b*))/joint stderr = [{', '.join(f'{z:.1f}' for z in zs)}] all <= 3", t.elapsed, 120.0)


def test_criterion_11_symmetry():
    with Timer() as t:
        sol = solve(symmetric_regime(), tol=1e-6)
        gap = float(np.max(np.abs(sol.V.values[0] - sol.V.values[1])))
    ok = sol.b_star[0] == sol.b_star[1] and gap < 1e-8
    record(11, "identical states give identical solutions", ok,
           f"b* = {sol.b_star.b.tolist()}, ||V(., 1) - V(., 2)|| = {gap:.1e}", t.elapsed, 30.0)

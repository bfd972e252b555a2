"""Value iteration for the regime-switching problem.

One application of ``T_b`` (or ``Theta``) solves, state by state, the
exponential-horizon problem whose horizon is the first regime switch and whose
terminal payoff is the current iterate lifted through the switch jump.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ClassDViolation, DomainError, NumericalError
from .levy_model import AuxiliaryProblem, RegimeModel
from .payoff import PayoffFunction
from .simulator import PathConfig, reflection_cost
from .single_regime import _Barrier, optimal_threshold

PROJECTION_TOL = 1e-10
CLASS_TOL = 1e-5
# largest phi_Y * x for which the closed-form value keeps ~1e-10 absolute accuracy
STABLE_EXPONENT = 13.0


@dataclass(frozen=True, eq=False)
class ValueFunction:
    """Per-state piecewise-linear functions on a shared grid with linear tails."""

    grid: np.ndarray
    values: np.ndarray  # (n_states, n_grid)
    tail_slopes: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        tails = np.asarray(self.tail_slopes, dtype=float).reshape(-1)
        if values.shape[1] != grid.size or tails.size != values.shape[0]:
            raise DomainError("values must be (n_states, n_grid) with one tail slope per state")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "tail_slopes", tails)

    @classmethod
    def constant(cls, grid, n_states, value):
        grid = np.asarray(grid, dtype=float)
        return cls(grid, np.full((n_states, grid.size), float(value)), np.zeros(n_states))

    @property
    def n_states(self):
        return self.values.shape[0]

    def state(self, i) -> PayoffFunction:
        return PayoffFunction(self.grid, self.values[i], self.tail_slopes[i])

    def __call__(self, x, i):
        return self.state(i)(x)

    def distance(self, other: "ValueFunction"):
        """Sup-norm distance over states and grid nodes."""
        return float(np.max(np.abs(self.values - other.values)))

    def regrid(self, grid):
        vals = np.array([self.state(i)(grid) for i in range(self.n_states)])
        return ValueFunction(grid, vals, self.tail_slopes)


@dataclass(frozen=True)
class ThresholdVector:
    b: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if np.any(b < 0) or not np.all(np.isfinite(b)):
            raise DomainError("thresholds must be finite and non-negative")
        object.__setattr__(self, "b", b)

    def __getitem__(self, i):
        return float(self.b[i])

    def __len__(self):
        return self.b.size


def lift_payoff(regime: RegimeModel, f: ValueFunction, i: int) -> PayoffFunction:
    """Expected value of ``f`` right after leaving state ``i``, on ``f``'s grid.

    A jump that would make the surplus negative is paid back at unit cost
    ``beta`` before continuing from 0 in the new state.
    """
    x = f.grid
    qi = regime.switch_rate(i)
    if qi == 0:
        return PayoffFunction(x.copy(), np.zeros_like(x), 0.0)
    beta = regime.beta
    total = np.zeros_like(x)
    tail = 0.0
    for j in range(regime.n_states):
        if j == i or regime.Q[i, j] == 0:
            continue
        p = regime.Q[i, j] / qi
        fj = f.state(j)
        law = regime.jump(i, j)
        if law.kind == "zero" or (law.kind == "point" and law.size == 0):
            part = fj.values.copy()
        elif law.kind == "point":
            m = law.size
            part = np.where(x >= m, fj(x - m), beta * (x - m) + fj.values[0])
        else:
            eta = law.rate
            h = np.diff(x)
            e = np.exp(-eta * h)
            slopes = np.diff(fj.values) / h
            inc = fj.values[1:] * (-np.expm1(-eta * h)) - slopes * (1.0 - e * (1.0 + eta * h)) / eta
            G = np.zeros_like(x)
            for k in range(h.size):
                G[k + 1] = e[k] * G[k] + inc[k]
            part = G + np.exp(-eta * x) * (fj.values[0] - beta / eta)
        total += p * part
        tail += p * f.tail_slopes[j]
    return PayoffFunction(x.copy(), total, tail)


def _state_problem(regime, i, w) -> AuxiliaryProblem:
    return regime.auxiliary(i, w)


def _evaluate(prob: AuxiliaryProblem, b: float, grid):
    bar = _Barrier(prob, b)
    vals = bar.value(grid)
    x_end = grid[-1]
    tail = float(bar.derivative(np.array([x_end]), np.array([x_end >= b]))[0])
    return vals, tail


def apply_T(regime: RegimeModel, b: ThresholdVector, f: ValueFunction) -> ValueFunction:
    """One epoch under the fixed threshold vector ``b``."""
    vals, tails = [], []
    for i in range(regime.n_states):
        prob = _state_problem(regime, i, lift_payoff(regime, f, i))
        v, t = _evaluate(prob, b[i], f.grid)
        vals.append(v)
        tails.append(t)
    return ValueFunction(f.grid, np.array(vals), np.array(tails))


def _admissible(regime, f, i, diagnostics):
    w = lift_payoff(regime, f, i)
    viol = w.class_violation(regime.beta)
    diagnostics.setdefault("class_violation", []).append(viol)
    if viol > CLASS_TOL:
        raise ClassDViolation(regime.states[i], viol, {"state": i})
    if viol > PROJECTION_TOL:
        w = w.project(regime.beta)
    return w


def apply_Theta(regime: RegimeModel, f: ValueFunction, diagnostics=None):
    """One epoch with each state's threshold re-optimised; returns ``(Theta f, b^f)``."""
    if diagnostics is None:
        diagnostics = {}
    vals, tails, bs = [], [], []
    for i in range(regime.n_states):
        w = _admissible(regime, f, i, diagnostics)
        prob = _state_problem(regime, i, w)
        sol = optimal_threshold(prob)
        v, t = _evaluate(prob, sol.b_star, f.grid)
        vals.append(v)
        tails.append(t)
        bs.append(sol.b_star)
    return ValueFunction(f.grid, np.array(vals), np.array(tails)), ThresholdVector(np.array(bs))


@dataclass
class RegimeSolution:
    V: ValueFunction
    b_star: ThresholdVector
    trace: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.V, self.b_star, self.trace))


def initial_thresholds(regime: RegimeModel):
    """Per-state optimal thresholds with a zero payoff; used to size the grid."""
    out = []
    for i in range(regime.n_states):
        prob = _state_problem(regime, i, PayoffFunction.zero())
        out.append(optimal_threshold(prob).b_star)
    return np.array(out)


def default_grid(regime: RegimeModel, n_points=801, x_max=None):
    """Uniform grid on ``[0, x_max]``.

    By default ``x_max`` reaches far enough past the largest single-state
    threshold for the value slope to have decayed, but stops where the closed
    forms, which cancel like ``exp(phi_Y x)``, start to lose digits.
    """
    if x_max is None:
        guess = float(np.max(initial_thresholds(regime)))
        decay, growth = [], []
        for i in range(regime.n_states):
            sfs = _state_problem(regime, i, PayoffFunction.zero()).scales
            decay.append(-float(sfs.exp_sum("Y").rates.min()))
            growth.append(sfs.phi_Y)
        wanted = max(6.0 * guess, guess + 20.0 / min(decay))
        x_max = max(min(wanted, STABLE_EXPONENT / max(growth)), 2.0 * guess, 1.0)
    return np.linspace(0.0, x_max, n_points)


def solve(regime: RegimeModel, tol=1e-6, max_iter=500, grid=None, n_points=801, x_max=None, v0=0.0, auto_expand=True):
    """Iterate ``Theta`` from the constant ``v0`` until the contraction bound certifies ``tol``."""
    regime.validate().require()
    if grid is None:
        grid = default_grid(regime, n_points, x_max)
    grid = np.asarray(grid, dtype=float)
    rho = regime.contraction_factor()
    stop = tol * (1.0 - rho) / rho if rho > 0 else math.inf
    v = ValueFunction.constant(grid, regime.n_states, v0)
    trace = []
    diag = {"contraction_factor": rho, "stop_threshold": stop, "expansions": 0, "absorbing_states": [
        regime.states[i] for i in range(regime.n_states) if regime.switch_rate(i) == 0]}
    for n in range(1, max_iter + 1):
        step_diag = {}
        new, b = apply_Theta(regime, v, step_diag)
        if auto_expand and np.max(b.b) > grid[-1] / 2:
            grid = np.linspace(0.0, 2.0 * grid[-1], grid.size)
            diag["expansions"] += 1
            v = v.regrid(grid)
            continue
        err = new.distance(v)
        trace.append((n, err))
        diag["max_class_violation"] = max(diag.get("max_class_violation", 0.0), max(step_diag.get("class_violation", [0.0])))
        # the iterates themselves must stay concave for the next lift to stay in the class
        own = [new.state(i).class_violation(regime.beta) for i in range(regime.n_states)]
        diag["max_iterate_violation"] = max(diag.get("max_iterate_violation", 0.0), max(own))
        if max(own) > CLASS_TOL:
            k = int(np.argmax(own))
            raise ClassDViolation(regime.states[k], own[k], {"state": k, "iteration": n})
        v = new
        if err < stop:
            diag["iterations"] = n
            diag["error_bound"] = rho / (1.0 - rho) * err if rho < 1 else math.inf
            return RegimeSolution(v, b, trace, diag)
    raise NumericalError("value iteration did not converge", {"trace": trace})


def envelope(regime: RegimeModel, lower: float, upper: float, grid, n_iter=None, tol=1e-6):
    """Iterate ``Theta`` from the constants ``lower`` and ``upper`` side by side.

    Returns the final pair and, per iteration, the largest violation of
    ``v_lower <= v_upper`` (non-positive when the ordering holds).
    """
    rho = regime.contraction_factor()
    lo = ValueFunction.constant(grid, regime.n_states, lower)
    hi = ValueFunction.constant(grid, regime.n_states, upper)
    stop = tol * (1.0 - rho) / rho if rho > 0 else math.inf
    order = []
    for n in range(1, (n_iter or 1000) + 1):
        new_lo, _ = apply_Theta(regime, lo)
        new_hi, _ = apply_Theta(regime, hi)
        order.append(float(np.max(new_lo.values - new_hi.values)))
        done = max(new_lo.distance(lo), new_hi.distance(hi)) < stop
        lo, hi = new_lo, new_hi
        if n_iter is None and done:
            break
    return lo, hi, order


def value_bounds(regime: RegimeModel, cfg: PathConfig = None, margin=4.0):
    """``(V_minus, V_plus)``: a Monte-Carlo lower bound and ``delta_+ / r_-``.

    The lower bound charges ``beta`` per unit injected to keep ``X - delta_+ t``
    above 0, discounted at ``r_-`` and maximised over the starting state, plus
    ``margin`` standard errors. Injections after the horizon cost at most
    ``exp(-r_- H)`` times the worst cost from 0, so the truncated estimate is
    scaled by ``1 / (1 - exp(-r_- H))``.
    """
    r_minus = float(regime.discount.min())
    if cfg is None:
        # no kill time here, so paths run to the horizon: coarser steps keep this cheap,
        # and the bridge-minimum reflection stays exact in distribution at any step
        cfg = PathConfig(n_paths=5_000, horizon=10.0 / r_minus, dt=0.1)
    v_plus = float(regime.delta.max() / r_minus)
    costs = [reflection_cost(regime, i, cfg) for i in range(regime.n_states)]
    worst = max(c.mean + margin * c.stderr for c in costs) / -math.expm1(-r_minus * cfg.horizon)
    return -regime.beta * worst, v_plus

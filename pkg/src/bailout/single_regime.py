"""Exponential-horizon bail-out problem: NPV of refraction-reflection strategies and the optimal threshold.

Every integral against the payoff slope is a finite sum of closed-form
segment integrals (see :meth:`PayoffFunction.slope_exp_integral`), and every
scale-function block is an exponential sum, so nothing here uses quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import DomainError, NumericalError, UnsupportedModel
from .levy_model import AuxiliaryProblem


class _Barrier:
    """Quantities that depend on the problem and the threshold only."""

    def __init__(self, prob: AuxiliaryProblem, b: float):
        if b < 0 or not math.isfinite(b):
            raise DomainError("threshold must be finite and non-negative")
        sfs = prob.scales
        if not sfs.closed_form:
            raise UnsupportedModel("the single-regime solver needs a closed-form scale function family")
        self.prob, self.sfs, self.b = prob, sfs, float(b)
        sx, sy = sfs.exp_sum("X"), sfs.exp_sum("Y")
        self.A, self.rho = sx.coeffs, sx.rates
        self.B, self.s = sy.coeffs, sy.rates
        self.phi = sfs.phi_Y
        w = prob.payoff
        self.decay = np.exp(self.rho * b) / (self.phi - self.rho)
        self.I = float(self.A @ self.decay)
        self.Ip = float((self.A * self.rho) @ self.decay)
        self.Pk = np.array([float(w.slope_exp_integral(-rk, 0.0, b)) for rk in self.rho])
        self.lower = float((self.A * self.decay) @ self.Pk)
        self.lower_p = float((self.A * self.rho * self.decay) @ self.Pk)
        self.upper = float(w.slope_exp_integral(-self.phi, b, np.inf)) * math.exp(self.phi * b)
        self.Zb = float(sfs.Z(b))
        self.Wb = float(sfs.W(b))
        a, beta, r, d = prob.alpha, prob.beta, prob.r, prob.delta
        self.R0 = (beta * self.Zb - 1.0 + beta * a * self.I) / (a * self.phi * self.I)
        self.coef = r * self.lower / (a * self.I) + r * self.upper / (self.phi * d * a * self.I)
        self.g = (
            beta * self.Zb
            - 1.0
            - a * self.R0 * self.Wb
            + r * (self.lower / self.I * self.Wb - float((self.A * np.exp(self.rho * b)) @ self.Pk))
            + r * self.upper / (self.phi * d * self.I) * self.Wb
        )
        self.h = self.Ip / (self.phi * self.I)

    # shared pieces --------------------------------------------------------
    def _slope_sums(self, x):
        """Payoff-weighted sums that appear in both the value and its derivative."""
        w, b = self.prob.payoff, self.b
        m = np.clip(np.minimum(x, b), 0.0, None)
        lowP = np.array([w.slope_exp_integral(-rk, 0.0, m) for rk in self.rho])  # (k, n)
        lowP0 = w.slope_exp_integral(0.0, 0.0, m)
        hi = np.where(x > b, x, b)
        upP = np.array([w.slope_exp_integral(-sm, b, hi) for sm in self.s])  # (m, n)
        upP0 = w.slope_exp_integral(0.0, b, hi)
        convk = np.array([self.sfs.conv_exp(x, b, rk) for rk in self.rho])  # (k, n)
        return lowP, lowP0, upP, upP0, convk

    def value(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        xp = np.maximum(x, 0.0)
        p, sfs, b = self.prob, self.sfs, self.b
        a, beta, r, d = p.alpha, p.beta, p.r, p.delta
        K = sfs.Z(xp) + a * d * sfs.refracted_convolution(xp, b, "W")
        lowP, lowP0, upP, upP0, convk = self._slope_sums(xp)
        ex = np.exp(np.multiply.outer(self.rho, xp))
        term_lower = ((self.A / self.rho)[:, None] * (ex * lowP - lowP0)).sum(0)
        term_conv = d * ((self.A * self.Pk)[:, None] * convk).sum(0)
        ey = np.exp(np.multiply.outer(self.s, xp))
        term_upper = ((self.B / self.s)[:, None] * (ey * upP - upP0)).sum(0)
        v = (
            -d * sfs.Wbar(xp - b, "Y")
            + beta * (sfs.Zbar(xp) + p.model.mean() / a)
            + beta * d * sfs.refracted_convolution(xp, b, "Z")
            - self.R0 * K
            + r * float(p.payoff(0.0)) / a
            + self.coef * K
            - r * term_lower
            - r * term_conv
            - r * term_upper
        )
        return v + beta * np.minimum(x, 0.0)

    def derivative(self, x, above):
        """``v_b'`` at ``x >= 0``; ``above`` picks the side of ``b`` (matters only at ``x = b``)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        p, sfs, b = self.prob, self.sfs, self.b
        a, beta, r, d = p.alpha, p.beta, p.r, p.delta
        Kp = sfs.W(x) + d * sfs.refracted_convolution(x, b, "Wprime")
        lowP, _, upP, _, convk = self._slope_sums(x)
        ex = np.exp(np.multiply.outer(self.rho, x))
        ey = np.exp(np.multiply.outer(self.s, x))
        jump = np.where(above, sfs.W(np.maximum(x - b, 0.0), "Y"), 0.0)
        return (
            beta * sfs.Z(x)
            + beta * d * a * sfs.refracted_convolution(x, b, "W")
            - a * self.R0 * Kp
            + a * self.coef * Kp
            - r * (self.A[:, None] * ex * lowP).sum(0)
            - r * d * ((self.A * self.rho * self.Pk)[:, None] * convk).sum(0)
            - r * (self.B[:, None] * ey * upP).sum(0)
            + d * jump * self.g
        )

    def resolvent_parts(self, x):
        """Discounted ruin transform and payoff-slope resolvent of the refracted process started at ``x``.

        Returns ``(E_x[e^{-alpha kappa}], E_x[int_0^kappa e^{-alpha t} w'_+(Gamma_t) dt])``
        where ``kappa`` is the first passage below 0.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        p, sfs, b = self.prob, self.sfs, self.b
        a, d = p.alpha, p.delta
        Kp = sfs.W(x) + d * sfs.refracted_convolution(x, b, "Wprime")
        dc = sfs.Z(x) + a * d * sfs.refracted_convolution(x, b, "W") - (a * self.I / self.Ip) * Kp
        lowP, _, upP, _, convk = self._slope_sums(x)
        ex = np.exp(np.multiply.outer(self.rho, x))
        ey = np.exp(np.multiply.outer(self.s, x))
        res = (
            Kp * (self.lower_p / self.Ip + self.upper / (d * self.Ip))
            - (self.A[:, None] * ex * lowP).sum(0)
            - d * ((self.A * self.rho * self.Pk)[:, None] * convk).sum(0)
            - (self.B[:, None] * ey * upP).sum(0)
        )
        return dc, res


def _shape_like(x, arr):
    return arr.reshape(np.shape(x)) if np.ndim(x) else float(arr[0])


def npv(prob: AuxiliaryProblem, b: float, x):
    """Expected NPV ``v_b(x)`` of the strategy refracting at ``b`` and reflecting at 0."""
    return _shape_like(x, _Barrier(prob, b).value(x))


def npv_derivative(prob: AuxiliaryProblem, b: float, x, side=None):
    """``v_b'(x)`` for ``x > 0``.

    At ``x = b`` the derivative may jump; pass ``side='left'`` or ``'right'``
    to get a one-sided limit there. ``x = 0`` is accepted with ``side='right'``.
    """
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    if side not in (None, "left", "right"):
        raise DomainError("side must be None, 'left' or 'right'")
    if side is None and np.any(xa == b):
        raise DomainError("v_b' is not defined at x = b; request a one-sided limit")
    if np.any(xa < 0) or (side != "right" and np.any(xa == 0)):
        raise DomainError("v_b' is evaluated on x > 0 (or x = 0 with side='right')")
    above = (xa > b) | ((xa == b) & (side == "right"))
    return _shape_like(x, _Barrier(prob, b).derivative(xa, above))


@dataclass(frozen=True)
class BarrierScore:
    g: float
    h: float
    g_simplified: float
    ratio_resolvent: float

    def __iter__(self):
        return iter((self.g, self.h))


def barrier_score(prob: AuxiliaryProblem, b: float) -> BarrierScore:
    """Smooth-fit score ``g(b)`` and its positive normaliser ``h(b)``.

    Also returns two cross-checks: ``g`` rewritten through the payoff resolvent,
    and ``g/h`` computed from the ruin transform and resolvent at ``b``.
    """
    bar = _Barrier(prob, b)
    dc, res = bar.resolvent_parts(b)
    p = prob
    g_simpl = (p.beta * bar.Zb - 1.0) * bar.h + p.r * bar.h * float(res[0]) - p.beta * p.alpha * bar.Wb / bar.phi
    ratio = p.beta * float(dc[0]) - 1.0 + p.r * float(res[0])
    return BarrierScore(bar.g, bar.h, g_simpl, ratio)


@dataclass(frozen=True, eq=False)
class SingleRegimeSolution:
    prob: AuxiliaryProblem
    b_star: float
    g_at_b: float
    trace: list = field(default_factory=list)

    def _bar(self):
        return _Barrier(self.prob, self.b_star)

    def value(self, x):
        return npv(self.prob, self.b_star, x)

    def derivative(self, x, side=None):
        return npv_derivative(self.prob, self.b_star, x, side)

    @property
    def diagnostics(self):
        return {"b_star": self.b_star, "g_residual": self.g_at_b, "iterations": len(self.trace)}


def optimal_threshold(prob: AuxiliaryProblem, xtol=1e-12, growth_cap=40.0) -> SingleRegimeSolution:
    """Smallest ``b >= 0`` with ``g(b) < 0`` (or 0 when ``g(0) <= 0``).

    The upper bracket is doubled until ``g`` turns negative; ``growth_cap``
    bounds ``Phi * b`` there because the closed forms cancel like ``exp(Phi b)``.
    """
    prob.validate().require()
    g = lambda b: _Barrier(prob, b).g
    trace = [(0.0, g(0.0))]
    if trace[0][1] <= 0.0:
        return SingleRegimeSolution(prob, 0.0, trace[0][1], trace)
    Phi = prob.scales.phi_X
    lo, hi = 0.0, 1.0 / max(Phi, 1e-3)
    while True:
        gh = g(hi)
        trace.append((hi, gh))
        if gh < 0.0:
            break
        if Phi * hi > growth_cap:
            raise NumericalError("g stayed positive while growing the bracket", {"g_trace": trace})
        lo, hi = hi, 2.0 * hi
    b_star = optimize.brentq(g, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=200)
    return SingleRegimeSolution(prob, float(b_star), g(b_star), trace)


def default_grid(sol: SingleRegimeSolution, n=801, x_max=None):
    if x_max is None:
        x_max = max(2.0 * sol.b_star, sol.b_star + 3.0)
    return np.linspace(0.0, x_max, n)


def optimal_derivative(prob: AuxiliaryProblem, sol: SingleRegimeSolution, x):
    """``v'_{b*}(x)`` through the ruin transform and payoff resolvent of the refracted process."""
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(xa < 0):
        raise DomainError("x must be non-negative")
    dc, res = _Barrier(prob, sol.b_star).resolvent_parts(xa)
    return _shape_like(x, prob.beta * dc + prob.r * res)


def verify_optimality(prob: AuxiliaryProblem, sol: SingleRegimeSolution, grid=None, tol=1e-9):
    """Smooth fit, slope bounds, concavity and boundedness of ``v_{b*}`` on a grid."""
    if grid is None:
        grid = default_grid(sol)
    grid = np.asarray(grid, dtype=float)
    b, beta = sol.b_star, prob.beta
    bar = sol._bar()
    inner = grid[(grid > 0) & (grid != b)]
    d = bar.derivative(inner, inner > b)
    below, above = d[inner < b], d[inner > b]
    report = {"b_star": b, "g_residual": sol.g_at_b}
    if b > 0:
        sides = bar.derivative(np.array([b, b]), np.array([False, True]))
        report["smooth_fit_residual"] = float(np.max(np.abs(sides - 1.0)))
    report["min_slope_minus_1_below"] = float(np.min(below - 1.0)) if below.size else None
    report["max_slope_minus_beta_below"] = float(np.max(below - beta)) if below.size else None
    report["min_slope_above"] = float(np.min(above)) if above.size else None
    report["max_slope_minus_1_above"] = float(np.max(above - 1.0)) if above.size else None
    # the derivative at both sides of b is included so jumps count against concavity
    full = bar.derivative(np.concatenate([[0.0], inner]), np.concatenate([[b == 0], inner > b]))
    report["max_slope_increase"] = float(max(np.max(np.diff(full)), 0.0)) if full.size > 1 else 0.0
    vp0 = float(bar.derivative(np.array([0.0]), np.array([b == 0]))[0])
    report["slope_at_zero"] = vp0
    if b > 0 and not prob.model.bounded_variation:
        report["slope_at_zero_equals_beta"] = abs(vp0 - beta)
    vals = bar.value(grid)
    report["min_value_minus_value_at_zero"] = float(np.min(vals - vals[0]))
    checks = {
        "smooth_fit": b == 0 or report["smooth_fit_residual"] < 1e-7,
        "slope_bounds_below": below.size == 0 or (report["min_slope_minus_1_below"] >= -tol and report["max_slope_minus_beta_below"] <= tol),
        "slope_bounds_above": above.size == 0 or (report["min_slope_above"] >= -tol and report["max_slope_minus_1_above"] <= tol),
        "concave": report["max_slope_increase"] <= 1e-8,
        "slope_at_zero_le_beta": vp0 <= beta + tol,
        "slope_at_zero_equals_beta": report.get("slope_at_zero_equals_beta", 0.0) < 1e-7,
        "bounded_below": report["min_value_minus_value_at_zero"] >= -tol,
    }
    # the slope-form HJB conditions are equivalent to the two slope-bound checks
    checks["hjb_slope_form"] = checks["slope_bounds_below"] and checks["slope_bounds_above"]
    report["checks"] = checks
    report["ok"] = all(checks.values())
    return report

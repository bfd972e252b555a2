"""Scale functions of a spectrally negative Levy process and of its refracted version.

For the closed-form families ``1/(psi - q)`` is rational, so ``W`` is a finite
exponential sum and every integral the solver needs has a closed form. Other
models go through numerical Laplace inversion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import DomainError, NumericalError, UnsupportedModel
from .levy_model import Family, LevyModel, real_roots, right_inverse
from .payoff import phi1, phi2

_GL_X, _GL_W = np.polynomial.legendre.leggauss(64)


@dataclass(frozen=True)
class ExpSum:
    """``sum_k coeffs[k] * exp(rates[k] * x)`` on ``x >= 0``."""

    coeffs: np.ndarray
    rates: np.ndarray

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.exp(np.multiply.outer(x, self.rates)) @ self.coeffs

    def derivative(self):
        return ExpSum(self.coeffs * self.rates, self.rates)


def exp_sum_for(model: LevyModel, q) -> ExpSum:
    """Partial-fraction expansion of ``1/(psi(theta) - q)``."""
    num, den = model.rational_form(q)
    roots = real_roots(model, q)
    dnum = np.polyder(num)
    coeffs = np.array([np.polyval(den, r) / np.polyval(dnum, r) for r in roots])
    return ExpSum(coeffs, roots)


def _which(which):
    if which not in ("X", "Y"):
        raise DomainError("which must be 'X' or 'Y'")
    return which


class ScaleFunctionSet:
    """Closed-form scale functions at a fixed discount ``q``.

    ``which='X'`` selects the functions of the original process and
    ``which='Y'`` those of the process with drift lowered by ``delta``.
    Evaluations at ``x = 0`` return right limits.
    """

    closed_form = True

    def __init__(self, model: LevyModel, delta: float, q: float, sums=None):
        if q <= 0:
            raise DomainError("scale functions are built for q > 0")
        self.model = model
        self.delta = float(delta)
        self.q = float(q)
        if sums is None:
            sums = {"X": exp_sum_for(model, q), "Y": exp_sum_for(model.shifted(delta), q)}
        self._sums = sums
        self.phi_X = float(right_inverse(model, delta, q, "X"))
        self.phi_Y = float(right_inverse(model, delta, q, "Y")) if delta > 0 else self.phi_X

    def exp_sum(self, which="X") -> ExpSum:
        return self._sums[_which(which)]

    def with_coeffs(self, which, coeffs):
        """Copy with the coefficients of one family replaced (used to test the self check)."""
        sums = dict(self._sums)
        sums[which] = ExpSum(np.asarray(coeffs, dtype=float), sums[which].rates)
        return ScaleFunctionSet(self.model, self.delta, self.q, sums)

    # point values ------------------------------------------------------
    def W0(self, which="X"):
        """``W(0+)``: ``1/c`` for bounded variation, otherwise 0."""
        if not self.model.bounded_variation:
            return 0.0
        return float(self.exp_sum(which).coeffs.sum())

    def W_prime0(self, which="X"):
        """``W'(0+)``."""
        s = self.exp_sum(which)
        return float((s.coeffs * s.rates).sum())

    def W(self, x, which="X"):
        x = np.asarray(x, dtype=float)
        # the sum is exact up to rounding, which must not push W below 0
        inner = np.maximum(self.exp_sum(which)(np.maximum(x, 0.0)), 0.0)
        return np.where(x > 0, inner, np.where(x == 0, self.W0(which), 0.0))

    def W_prime(self, x, which="X"):
        x = np.asarray(x, dtype=float)
        if np.any(x <= 0):
            raise DomainError("W' is evaluated on x > 0 only; use W_prime0 for the right limit")
        return self.exp_sum(which).derivative()(x)

    def Wbar(self, x, which="X"):
        x = np.asarray(x, dtype=float)
        s = self.exp_sum(which)
        xp = np.maximum(x, 0.0)
        z = np.multiply.outer(xp, s.rates)
        return (xp[..., None] * phi1(z)) @ s.coeffs

    def Z(self, x, which="X"):
        return 1.0 + self.q * self.Wbar(x, which)

    def Zbar(self, x, which="X"):
        x = np.asarray(x, dtype=float)
        s = self.exp_sum(which)
        xp = np.maximum(x, 0.0)
        z = np.multiply.outer(xp, s.rates)
        inner = (xp[..., None] ** 2 * phi2(z)) @ s.coeffs
        return np.where(x > 0, xp + self.q * inner, x)

    # integrals ----------------------------------------------------------
    def exp_tail_integral(self, b, mode="W"):
        """``int_0^inf exp(-phi_Y y) W(y + b) dy`` (or with ``W'`` when ``mode='Wprime'``)."""
        s = self.exp_sum("X")
        gap = self.phi_Y - s.rates
        if np.any(gap <= 0):
            raise DomainError("phi_Y must exceed every growth rate of W; is delta > 0?")
        c = s.coeffs if mode == "W" else s.coeffs * s.rates
        b = np.asarray(b, dtype=float)
        return np.exp(np.multiply.outer(b, s.rates)) @ (c / gap)

    def conv_exp(self, x, b, kappa):
        """``int_b^x WY(x - y) exp(kappa y) dy``; zero for ``x <= b``."""
        x = np.asarray(x, dtype=float)
        s = self.exp_sum("Y")
        L = np.maximum(x - b, 0.0)
        terms = np.exp(kappa * x)[..., None] * L[..., None] * phi1(np.multiply.outer(L, s.rates - kappa))
        return terms @ s.coeffs

    def refracted_convolution(self, x, b, mode="W"):
        """``int_b^x WY(x - y) F(y) dy`` with ``F`` one of ``W``, ``W'``, ``Z`` of the original process."""
        s = self.exp_sum("X")
        x = np.asarray(x, dtype=float)
        if mode == "W":
            weights = s.coeffs
        elif mode == "Wprime":
            weights = s.coeffs * s.rates
        elif mode == "Z":
            weights = self.q * s.coeffs / s.rates
        else:
            raise DomainError(f"unknown convolution mode {mode!r}")
        out = sum(w * self.conv_exp(x, b, k) for w, k in zip(weights, s.rates))
        if mode == "Z":
            z0 = 1.0 - weights.sum()
            out = out + z0 * self.Wbar(x - b, "Y")
        return out

    # diagnostics ----------------------------------------------------------
    def self_check(self, grid=None, thetas=None):
        return self_check(self, grid, thetas)


class NumericScaleFunctionSet:
    """Scale functions by Euler-summation Laplace inversion (experimental).

    The transform is shifted by ``Phi(q)`` so the inverted function stays
    bounded. Convolutions and tail integrals use 64-point Gauss-Legendre
    panels.
    """

    closed_form = False

    def __init__(self, model: LevyModel, delta: float, q: float, terms: int = 14):
        if q <= 0:
            raise DomainError("scale functions are built for q > 0")
        if model.sigma == 0 and not model.bounded_variation:
            raise UnsupportedModel("pure-jump models of unbounded variation are not supported")
        self.model = model
        self.delta = float(delta)
        self.q = float(q)
        self.terms = int(terms)
        self._models = {"X": model, "Y": model.shifted(delta)}
        self.phi_X = float(right_inverse(model, delta, q, "X"))
        self.phi_Y = float(right_inverse(model, delta, q, "Y")) if delta > 0 else self.phi_X
        self._shift = {"X": self.phi_X, "Y": self.phi_Y}
        self._w0 = {k: (0.0 if m.sigma > 0 else 1.0 / m.drift_c) for k, m in self._models.items()}

    def _invert(self, transform, x, which):
        """Invert ``transform(theta + shift)`` at ``x > 0`` and undo the exponential tilt."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        shift = self._shift[which]
        M = self.terms
        k = np.arange(2 * M + 1)
        nodes = M * math.log(10.0) / 3.0 + 1j * math.pi * k
        eta = np.ones(2 * M + 1)
        eta[0] = 0.5
        eta[2 * M] = 2.0 ** (-M)
        for j in range(1, M):
            eta[2 * M - j] = eta[2 * M - j + 1] + 2.0 ** (-M) * math.comb(M, j)
        xi = (-1.0) ** k * 10.0 ** (M / 3.0) * eta
        out = np.empty_like(x)
        for n, t in enumerate(x):
            vals = transform(nodes / t + shift)
            out[n] = math.exp(shift * t) * float(np.sum(xi * vals.real)) / t
        if not np.all(np.isfinite(out)):
            raise NumericalError("Laplace inversion produced non-finite values", {"x": x.tolist(), "terms": M})
        return out

    def _psi_minus_q(self, which):
        m = self._models[which]
        return lambda th: m.psi(th) - self.q

    def W0(self, which="X"):
        return self._w0[_which(which)]

    def W_prime0(self, which="X"):
        m = self._models[_which(which)]
        if m.sigma > 0:
            return 2.0 / m.sigma**2
        return (self.q + _jump_mass(m)) / m.drift_c**2

    def _eval(self, fn, x, at_zero, which):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1)
        out = np.zeros_like(flat)
        pos = flat > 0
        if np.any(pos):
            out[pos] = fn(flat[pos])
        out[flat == 0] = at_zero
        return out.reshape(x.shape)

    def W(self, x, which="X"):
        pm = self._psi_minus_q(_which(which))
        return self._eval(lambda t: self._invert(lambda th: 1.0 / pm(th), t, which), x, self.W0(which), which)

    def W_prime(self, x, which="X"):
        x = np.asarray(x, dtype=float)
        if np.any(x <= 0):
            raise DomainError("W' is evaluated on x > 0 only; use W_prime0 for the right limit")
        pm = self._psi_minus_q(_which(which))
        w0 = self.W0(which)
        return self._eval(lambda t: self._invert(lambda th: th / pm(th) - w0, t, which), x, 0.0, which)

    def Wbar(self, x, which="X"):
        pm = self._psi_minus_q(_which(which))
        return self._eval(lambda t: self._invert(lambda th: 1.0 / (th * pm(th)), t, which), x, 0.0, which)

    def Z(self, x, which="X"):
        return 1.0 + self.q * self.Wbar(x, which)

    def Zbar(self, x, which="X"):
        x = np.asarray(x, dtype=float)
        pm = self._psi_minus_q(_which(which))
        inner = self._eval(lambda t: self._invert(lambda th: 1.0 / (th * th * pm(th)), t, which), x, 0.0, which)
        return np.where(x > 0, x + self.q * inner, x)

    def _gl(self, fn, a, b, panels=4):
        edges = np.linspace(a, b, panels + 1)
        total = 0.0
        for lo, hi in zip(edges[:-1], edges[1:]):
            mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
            total += half * float(np.dot(_GL_W, fn(mid + half * _GL_X)))
        return total

    def exp_tail_integral(self, b, mode="W"):
        gap = self.phi_Y - self.phi_X
        if gap <= 0:
            raise DomainError("phi_Y must exceed Phi; is delta > 0?")
        ymax = 30.0 / gap
        f = self.W if mode == "W" else self.W_prime
        out = [self._gl(lambda y: np.exp(-self.phi_Y * y) * f(y + bb), 0.0, ymax, panels=8) for bb in np.atleast_1d(b)]
        return np.asarray(out).reshape(np.shape(b))

    def refracted_convolution(self, x, b, mode="W"):
        f = {"W": self.W, "Wprime": self.W_prime, "Z": self.Z}[mode]

        def one(xx):
            if xx <= b:
                return 0.0
            return self._gl(lambda y: self.W(xx - y, "Y") * f(y), b, xx)

        out = [one(xx) for xx in np.atleast_1d(np.asarray(x, dtype=float))]
        return np.asarray(out).reshape(np.shape(x))

    def self_check(self, grid=None, thetas=None):
        return self_check(self, grid, thetas)


def _jump_mass(m: LevyModel):
    if m.family is Family.CRAMER_LUNDBERG:
        return m.jump_rate
    val, _ = integrate.quad(lambda z: float(m.levy_density(np.array([z]))[0]), -np.inf, 0.0, limit=200)
    return val


def build_scale_functions(model: LevyModel, delta: float, q: float):
    if model.family is Family.NUMERIC:
        return NumericScaleFunctionSet(model, delta, q)
    return ScaleFunctionSet(model, delta, q)


def laplace_residual(sfs, theta, which="X", tail_tol=1e-12):
    """``|int_0^T e^{-theta x} W(x) dx - 1/(psi(theta) - q)|`` by adaptive quadrature.

    ``T`` is chosen so the neglected tail is below ``tail_tol``.
    """
    model = sfs.model if which == "X" else sfs.model.shifted(sfs.delta)
    growth = sfs.phi_X if which == "X" else sfs.phi_Y
    gap = theta - growth
    if gap <= 0:
        raise DomainError("theta must exceed the right inverse")
    bound = max(abs(sfs.W0(which)), 1.0) * 10.0
    T = max(1.0, math.log(bound / (tail_tol * gap)) / gap)
    val, _ = integrate.quad(lambda x: math.exp(-theta * x) * float(sfs.W(x, which)), 0.0, T, limit=400, epsabs=1e-13, epsrel=1e-12)
    target = 1.0 / (float(model.psi(theta)) - sfs.q)
    return abs(val - target)


def self_check(sfs, grid=None, thetas=None):
    """Laplace residuals, the two refraction convolution identities and boundary values."""
    if grid is None:
        grid = np.linspace(0.1, 5.0, 12)
    grid = np.asarray(grid, dtype=float)
    if thetas is None:
        thetas = [sfs.phi_Y + 1.0, sfs.phi_Y + 2.0]
    d = sfs.delta
    lap = max(laplace_residual(sfs, t, w) for t in thetas for w in ("X", "Y"))
    conv_w = d * sfs.refracted_convolution(grid, 0.0, "W")
    id1 = np.max(np.abs(conv_w - (sfs.Wbar(grid, "Y") - sfs.Wbar(grid, "X"))))
    conv_wp = d * sfs.refracted_convolution(grid, 0.0, "Wprime")
    id2 = np.max(np.abs(conv_wp - ((1.0 - d * sfs.W0("X")) * sfs.W(grid, "Y") - sfs.W(grid, "X"))))
    m = sfs.model
    expect_w0 = 0.0 if not m.bounded_variation else 1.0 / m.drift_c
    boundary = max(
        abs(sfs.W0("X") - expect_w0),
        abs(float(sfs.W(-1.0, "X"))),
        abs(float(sfs.Z(-0.5, "X")) - 1.0),
        abs(float(sfs.Zbar(-0.5, "X")) + 0.5),
    )
    residuals = {"laplace": float(lap), "identity_wbar": float(id1), "identity_wprime": float(id2), "boundary": float(boundary)}
    return {"residuals": residuals, "max_residual": max(residuals.values())}

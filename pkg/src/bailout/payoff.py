"""Concave piecewise-linear payoffs with a linear tail.

The auxiliary problem only ever touches the payoff through its right
derivative integrated against exponentials, so everything here reduces to
sums of closed-form segment integrals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def phi1(z):
    """``(exp(z) - 1) / z`` with the removable singularity filled in."""
    z = np.asarray(z, dtype=float)
    out = np.ones_like(z)
    nz = np.abs(z) > 1e-300
    out[nz] = np.expm1(z[nz]) / z[nz]
    return out


def phi2(z):
    """``(exp(z) - 1 - z) / z**2``, accurate near zero."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = np.abs(z) < 1e-3
    zs = z[small]
    out[small] = 0.5 + zs / 6.0 + zs * zs / 24.0 + zs**3 / 120.0
    zb = z[~small]
    out[~small] = (np.expm1(zb) - zb) / (zb * zb)
    return out


def segment_exp_integral(kappa, a, t):
    """``int_a^t exp(kappa * z) dz`` for ``t >= a`` (arrays broadcast)."""
    a = np.asarray(a, dtype=float)
    length = np.asarray(t, dtype=float) - a
    return np.exp(kappa * a) * length * phi1(kappa * length)


@dataclass(frozen=True, eq=False)
class PayoffFunction:
    """Payoff ``w`` on ``[0, inf)``: linear between ``knots``, slope ``tail_slope`` past the last knot."""

    knots: np.ndarray
    values: np.ndarray
    tail_slope: float = 0.0

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if knots.ndim != 1 or knots.shape != values.shape or knots.size < 1:
            raise ValueError("knots and values must be 1-d arrays of equal, non-zero length")
        if knots[0] != 0.0:
            raise ValueError("first knot must be 0")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "tail_slope", float(self.tail_slope))

    @classmethod
    def zero(cls):
        return cls(np.array([0.0]), np.array([0.0]), 0.0)

    @classmethod
    def constant(cls, value):
        return cls(np.array([0.0]), np.array([float(value)]), 0.0)

    @classmethod
    def from_callable(cls, fn, knots, tail_slope):
        knots = np.asarray(knots, dtype=float)
        return cls(knots, np.array([fn(x) for x in knots], dtype=float), tail_slope)

    @property
    def x_max(self):
        return float(self.knots[-1])

    @property
    def slopes(self):
        """Right derivative on each segment, tail included as the last entry."""
        inner = np.diff(self.values) / np.diff(self.knots)
        return np.append(inner, self.tail_slope)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.interp(x, self.knots, self.values)
        s = self.slopes
        beyond = x > self.knots[-1]
        out = np.where(beyond, self.values[-1] + self.tail_slope * (x - self.knots[-1]), out)
        before = x < 0.0
        return np.where(before, self.values[0] + s[0] * x, out)

    def right_derivative(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.clip(np.searchsorted(self.knots, x, side="right") - 1, 0, self.knots.size - 1)
        return self.slopes[idx]

    def concavity_violation(self):
        """Largest increase between consecutive slopes (0 for a concave payoff)."""
        s = self.slopes
        if s.size < 2:
            return 0.0
        return float(max(np.max(np.diff(s)), 0.0))

    def class_violation(self, beta):
        """Worst violation of: concave, ``0 <= w'_+ <= beta``, tail slope in ``[0, 1]``."""
        s = self.slopes
        return float(
            max(
                self.concavity_violation(),
                s[0] - beta,
                -np.min(s),
                self.tail_slope - 1.0,
                0.0,
            )
        )

    def project(self, beta):
        """Least concave majorant on the knots with slopes clipped into ``[0, beta]``."""
        x, y = self.knots, self.values
        hull = [0]
        for k in range(1, x.size):
            while len(hull) >= 2:
                i, j = hull[-2], hull[-1]
                # drop j when it lies on or below the chord i -> k
                if (y[j] - y[i]) * (x[k] - x[i]) <= (y[k] - y[i]) * (x[j] - x[i]):
                    hull.pop()
                else:
                    break
            hull.append(k)
        hx, hy = x[hull], y[hull]
        slopes = np.clip(np.diff(hy) / np.diff(hx), 0.0, beta) if hx.size > 1 else np.array([])
        tail = min(max(self.tail_slope, 0.0), 1.0)
        if slopes.size:
            tail = min(tail, slopes[-1])
        seg = np.clip(np.searchsorted(hx, x, side="right") - 1, 0, max(hx.size - 2, 0))
        if slopes.size:
            values = hy[0] + np.concatenate([[0.0], np.cumsum(slopes * np.diff(hx))])
            new = values[seg] + slopes[seg] * (x - hx[seg])
        else:
            new = np.full_like(x, hy[0])
        return PayoffFunction(x.copy(), new, tail)

    def slope_exp_integral(self, kappa, lo, hi):
        """``int_lo^hi w'_+(z) exp(kappa z) dz``.

        ``lo`` is a scalar, ``hi`` may be an array or ``inf`` (the latter needs
        ``kappa < 0`` unless the tail slope vanishes). Returns 0 where ``hi <= lo``.
        """
        kappa = float(kappa)
        hi_arr = np.asarray(hi, dtype=float)
        cum = self._cumulative(kappa)
        upper = self._antiderivative(kappa, hi_arr, cum)
        lower = self._antiderivative(kappa, np.asarray(float(lo)), cum)
        return np.where(hi_arr > lo, upper - lower, 0.0)

    def _cumulative(self, kappa):
        s = self.slopes
        seg = s[:-1] * segment_exp_integral(kappa, self.knots[:-1], self.knots[1:])
        return np.concatenate([[0.0], np.cumsum(seg)])

    def _antiderivative(self, kappa, t, cum):
        # int_0^t w'_+(z) exp(kappa z) dz
        shape = np.shape(t)
        t = np.atleast_1d(np.maximum(t, 0.0))
        finite = np.isfinite(t)
        out = np.empty_like(t, dtype=float)
        tf = t[finite]
        idx = np.clip(np.searchsorted(self.knots, tf, side="right") - 1, 0, self.knots.size - 1)
        s = self.slopes
        out[finite] = cum[idx] + s[idx] * segment_exp_integral(kappa, self.knots[idx], tf)
        if not np.all(finite):
            if self.tail_slope == 0.0:
                tail = 0.0
            elif kappa < 0.0:
                tail = self.tail_slope * np.exp(kappa * self.knots[-1]) / (-kappa)
            else:
                raise ValueError("integral to infinity diverges for kappa >= 0 with a non-zero tail slope")
            out[~finite] = cum[-1] + tail
        return out.reshape(shape)

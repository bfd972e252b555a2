"""Spectrally negative Levy models, their Laplace exponents and right inverses."""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy import integrate, optimize

from .errors import AssumptionViolation, DomainError, NumericalError, UnsupportedModel
from .payoff import PayoffFunction

MIN_DELTA = 1e-8

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)
# nodes mapped to [0, 1]
_U = 0.5 * (_GL_NODES + 1.0)
_UW = 0.5 * _GL_WEIGHTS


class Family(str, enum.Enum):
    BROWNIAN = "BrownianDrift"
    CRAMER_LUNDBERG = "CramerLundbergExp"
    NUMERIC = "GeneralNumeric"


@dataclass(frozen=True)
class LevyModel:
    """A spectrally negative Levy process.

    ``gamma`` is the drift in the Levy-Khintchine triplet, i.e. small jumps on
    ``(-1, 0)`` are compensated. For the compound Poisson family the premium
    rate ``c`` is usually the natural input; use :meth:`cramer_lundberg`.
    """

    family: Family
    gamma: float
    sigma: float = 0.0
    jump_rate: float = 0.0
    jump_mean_param: float = 1.0
    levy_density: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if self.sigma < 0:
            raise DomainError("sigma must be non-negative")
        if self.jump_rate < 0:
            raise DomainError("jump_rate must be non-negative")
        if self.family is Family.BROWNIAN:
            if self.sigma <= 0:
                raise DomainError("BrownianDrift needs sigma > 0")
            if self.jump_rate != 0:
                raise DomainError("BrownianDrift has no jumps")
        elif self.family is Family.CRAMER_LUNDBERG:
            if self.jump_mean_param <= 0:
                raise DomainError("claim-size rate mu must be positive")
        elif self.levy_density is None:
            raise DomainError("GeneralNumeric needs a levy_density")

    # constructors -------------------------------------------------------
    @classmethod
    def brownian(cls, gamma, sigma):
        return cls(Family.BROWNIAN, float(gamma), float(sigma))

    @classmethod
    def cramer_lundberg(cls, c, lam, mu, sigma=0.0):
        """Premium rate ``c``, claim intensity ``lam``, Exp(``mu``) claims."""
        gamma = c - lam * _small_jump_mass(mu)
        return cls(Family.CRAMER_LUNDBERG, float(gamma), float(sigma), float(lam), float(mu))

    @classmethod
    def numeric(cls, gamma, sigma, levy_density):
        return cls(Family.NUMERIC, float(gamma), float(sigma), levy_density=levy_density)

    # derived quantities -------------------------------------------------
    @property
    def bounded_variation(self):
        if self.sigma > 0:
            return False
        if self.family is Family.NUMERIC:
            return math.isfinite(self._small_jump_abs_mean)
        return True

    @cached_property
    def _small_jump_abs_mean(self):
        # int_{(-1,0)} |z| Pi(dz), inf if it diverges
        with warnings.catch_warnings():
            warnings.simplefilter("error", integrate.IntegrationWarning)
            try:
                val, err = integrate.quad(lambda z: -z * float(self.levy_density(np.array([z]))[0]), -1.0, 0.0, limit=200)
            except integrate.IntegrationWarning:
                return math.inf
        if not math.isfinite(val) or err > 1e-6 * max(1.0, abs(val)):
            return math.inf
        return val

    @property
    def drift_c(self):
        """Effective drift ``gamma - int_{(-1,0)} z Pi(dz)`` (bounded variation only)."""
        if not self.bounded_variation:
            raise DomainError("effective drift is only defined for bounded variation")
        if self.family is Family.CRAMER_LUNDBERG:
            return self.gamma + self.jump_rate * _small_jump_mass(self.jump_mean_param)
        if self.family is Family.BROWNIAN:
            return self.gamma
        return self.gamma + self._small_jump_abs_mean

    def mean(self):
        """``psi'(0+) = E[X_1]``; ``-inf`` if the big jumps have no mean."""
        if self.family is Family.BROWNIAN:
            return self.gamma
        if self.family is Family.CRAMER_LUNDBERG:
            mu = self.jump_mean_param
            return self.gamma + self.jump_rate * _small_jump_mass(mu) - self.jump_rate / mu
        val, err = integrate.quad(lambda z: z * float(self.levy_density(np.array([z]))[0]), -np.inf, -1.0, limit=200)
        if not math.isfinite(val) or err > 1e-6 * max(1.0, abs(val)):
            return -math.inf
        return self.gamma + val

    def shifted(self, delta):
        """The same process with drift lowered by ``delta`` (the refracted exponent)."""
        return replace(self, gamma=self.gamma - delta)

    # Laplace exponent ---------------------------------------------------
    def psi(self, theta):
        """Laplace exponent; accepts real ``theta >= 0`` or complex with ``Re >= 0``."""
        th = np.asarray(theta)
        if not np.iscomplexobj(th) and np.any(th < 0):
            raise DomainError("Laplace exponent is only defined for theta >= 0")
        base = self.gamma * th + 0.5 * self.sigma**2 * th * th
        if self.family is Family.BROWNIAN:
            return base
        if self.family is Family.CRAMER_LUNDBERG:
            lam, mu = self.jump_rate, self.jump_mean_param
            return base + lam * th * _small_jump_mass(mu) - lam * th / (mu + th)
        return base + self._jump_part(th)

    def _jump_part(self, th):
        shape = np.shape(th)
        th = np.atleast_1d(th)[..., None]
        dens = self.levy_density
        # small jumps: z = -u^2 on u in [0, 1]
        z = -(_U**2)
        small = (np.expm1(th * z) - th * z) * dens(z) * 2.0 * _U
        # big jumps: z = -1/t on t in (0, 1]
        zb = -1.0 / _U
        big = np.expm1(th * zb) * dens(zb) / _U**2
        out = (small * _UW).sum(-1) + (big * _UW).sum(-1)
        return out.reshape(shape)

    def psi_prime(self, theta):
        th = np.asarray(theta, dtype=float)
        if self.family is Family.BROWNIAN:
            return self.gamma + self.sigma**2 * th
        if self.family is Family.CRAMER_LUNDBERG:
            lam, mu = self.jump_rate, self.jump_mean_param
            return self.gamma + self.sigma**2 * th + lam * _small_jump_mass(mu) - lam * mu / (mu + th) ** 2
        h = 1e-6 * np.maximum(1.0, th)
        return (self.psi(th + h) - self.psi(np.maximum(th - h, 0.0))) / (th + h - np.maximum(th - h, 0.0))

    def rational_form(self, q):
        """Numerator and denominator coefficients with ``psi - q = N / D``.

        Only for the closed-form families; coefficients are highest degree first.
        """
        if self.family is Family.BROWNIAN:
            return np.array([0.5 * self.sigma**2, self.gamma, -q]), np.array([1.0])
        if self.family is Family.CRAMER_LUNDBERG:
            c = self.gamma + self.jump_rate * _small_jump_mass(self.jump_mean_param)
            lam, mu, s2 = self.jump_rate, self.jump_mean_param, 0.5 * self.sigma**2
            num = np.array([s2, s2 * mu + c, c * mu - lam - q, -q * mu])
            if s2 == 0.0:
                num = num[1:]
            return num, np.array([1.0, mu])
        raise UnsupportedModel("rational form exists only for the closed-form families")


def _small_jump_mass(mu):
    # int_0^1 y mu e^{-mu y} dy
    return (-math.expm1(-mu) - mu * math.exp(-mu)) / mu


# --------------------------------------------------------------------------
def laplace_exponent(model: LevyModel, theta):
    return model.psi(theta)


def laplace_exponent_refracted(model: LevyModel, delta, theta):
    if delta < 0:
        raise DomainError("delta must be non-negative")
    if delta > 0 and model.bounded_variation and model.drift_c <= delta:
        raise AssumptionViolation("drift_exceeds_delta", f"c = {model.drift_c:g} must exceed delta = {delta:g}")
    return model.psi(theta) - delta * np.asarray(theta)


def right_inverse(model: LevyModel, delta, q, which="X"):
    """Largest root of ``psi_X = q`` (``which='X'``) or ``psi_Y = q`` (``'Y'``)."""
    if q <= 0:
        raise DomainError("right inverse is computed for q > 0 only")
    if which not in ("X", "Y"):
        raise DomainError("which must be 'X' or 'Y'")
    m = model if which == "X" else model.shifted(delta)
    if which == "Y" and delta > 0 and m.bounded_variation and m.drift_c <= 0:
        raise AssumptionViolation("drift_exceeds_delta", "refracted drift must stay positive")
    if m.family is not Family.NUMERIC:
        return float(real_roots(m, q)[0])
    return _bracket_root(m, q)


def real_roots(model: LevyModel, q):
    """Real roots of ``psi(theta) = q`` (largest first) for the closed-form families.

    The quadratic is solved in a cancellation-free way and each root is
    polished by Newton on ``psi - q`` itself.
    """
    num, _ = model.rational_form(q)
    if num.size == 3:
        a, b, c0 = num
        disc = b * b - 4 * a * c0
        if disc < 0:
            raise NumericalError("complex roots of psi = q", {"disc": disc})
        sq = math.sqrt(disc)
        r1 = (-b + sq) / (2 * a) if b <= 0 else (2 * c0) / (-b - sq)
        r2 = c0 / (a * r1)
        roots = sorted([r1, r2], reverse=True)
    else:
        roots = sorted(np.roots(num).real.tolist(), reverse=True)
    polished = []
    for r in roots:
        for _ in range(3):
            f = np.polyval(num, r)
            d = np.polyval(np.polyder(num), r)
            if d == 0:
                break
            step = f / d
            r -= step
            if abs(step) <= 1e-16 * max(1.0, abs(r)):
                break
        polished.append(r)
    return np.array(polished)


def _bracket_root(m: LevyModel, q):
    f = lambda t: float(m.psi(t)) - q
    lo = 0.0
    hi = 1.0
    trace = []
    for _ in range(200):
        val = f(hi)
        trace.append((hi, val))
        if val > 0:
            break
        lo = hi
        hi *= 2.0
    else:
        raise NumericalError("could not bracket the right inverse", {"trace": trace[-10:]})
    root = optimize.brentq(f, lo, hi, xtol=1e-14, rtol=1e-15, maxiter=500)
    return float(root)


# --------------------------------------------------------------------------
@dataclass(frozen=True)
class JumpLaw:
    """Law of the surplus jump at a regime switch: zero, ``-m`` a.s., or ``-Exp(rate)``."""

    kind: str = "zero"
    size: float = 0.0  # point-mass magnitude m
    rate: float = 1.0  # exponential rate eta

    def __post_init__(self):
        if self.kind not in ("zero", "point", "exponential"):
            raise DomainError(f"unknown jump law {self.kind!r}")
        if self.kind == "point" and self.size < 0:
            raise DomainError("point-mass magnitude must be non-negative")
        if self.kind == "exponential" and not self.rate > 0:
            raise DomainError("exponential jump rate must be positive")

    @property
    def mean_magnitude(self):
        """``E[-J]``."""
        if self.kind == "point":
            return self.size
        if self.kind == "exponential":
            return 1.0 / self.rate
        return 0.0


@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)

    def add(self, name, passed, reason=""):
        self.checks.append({"name": name, "passed": bool(passed), "reason": reason})

    @property
    def ok(self):
        return all(c["passed"] for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c["passed"]]

    def require(self):
        bad = self.failures()
        if bad:
            raise AssumptionViolation(bad[0]["name"], bad[0]["reason"])

    def as_dict(self):
        return {"ok": self.ok, "checks": list(self.checks)}


def _model_checks(report, model, delta, label=""):
    mean = model.mean()
    report.add(f"finite_mean{label}", math.isfinite(mean), "" if math.isfinite(mean) else "E[X_1] = -inf")
    if model.bounded_variation:
        c = model.drift_c
        report.add(f"not_monotone{label}", c > 0, "" if c > 0 else f"effective drift c = {c:g} must be positive")
        ok = c > delta
        report.add(f"drift_exceeds_delta{label}", ok, "" if ok else f"c = {c:g} must exceed delta = {delta:g}")


@dataclass(frozen=True)
class RegimeModel:
    """Markov-modulated model: one Levy process, dividend cap and discount rate per state."""

    Q: np.ndarray
    levy: tuple
    delta: np.ndarray
    discount: np.ndarray
    beta: float
    jumps: dict = field(default_factory=dict)
    states: tuple = ()

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "levy", tuple(self.levy))
        object.__setattr__(self, "delta", np.asarray(self.delta, dtype=float).reshape(-1))
        object.__setattr__(self, "discount", np.asarray(self.discount, dtype=float).reshape(-1))
        if not self.states:
            object.__setattr__(self, "states", tuple(str(i + 1) for i in range(Q.shape[0])))
        n = Q.shape[0]
        if not (Q.shape == (n, n) and len(self.levy) == n and self.delta.size == n and self.discount.size == n):
            raise DomainError("Q, levy, delta and discount must describe the same number of states")
        if len(self.states) != n:
            raise DomainError("one label per state expected")

    @property
    def n_states(self):
        return self.Q.shape[0]

    def switch_rate(self, i):
        """``q_i``."""
        return float(self.Q[i].sum() - self.Q[i, i])

    def jump(self, i, j) -> JumpLaw:
        return self.jumps.get((i, j), JumpLaw())

    def contraction_factor(self):
        """``max_i q_i / (q_i + r(i))``."""
        return max(self.switch_rate(i) / (self.switch_rate(i) + self.discount[i]) for i in range(self.n_states))

    def validate(self) -> ValidationReport:
        rep = ValidationReport()
        rep.add("beta_gt_1", self.beta > 1, "" if self.beta > 1 else "beta must exceed 1")
        Q = self.Q
        off = Q - np.diag(np.diag(Q))
        gen_ok = bool(np.all(off >= 0) and np.allclose(Q.sum(axis=1), 0.0, atol=1e-12))
        rep.add("generator", gen_ok, "" if gen_ok else "off-diagonal rates must be >= 0 and rows must sum to 0")
        r_ok = bool(np.all(self.discount > 0))
        rep.add("discount_positive", r_ok, "" if r_ok else "every r(i) must be positive")
        d_ok = bool(np.all(self.delta >= MIN_DELTA))
        rep.add("delta_positive", d_ok, "" if d_ok else f"every delta(i) must be at least {MIN_DELTA:g}")
        jm = max([self.jump(i, j).mean_magnitude for i in range(self.n_states) for j in range(self.n_states) if i != j] or [0.0])
        rep.add("finite_jump_mean", math.isfinite(jm), "" if math.isfinite(jm) else "E[-J_ij] must be finite")
        for i, m in enumerate(self.levy):
            _model_checks(rep, m, self.delta[i], f"[{self.states[i]}]")
        return rep

    def auxiliary(self, i, payoff: PayoffFunction) -> "AuxiliaryProblem":
        """State ``i``'s one-epoch problem: discount ``r(i)``, kill rate ``q_i``."""
        return AuxiliaryProblem(self.levy[i], float(self.delta[i]), self.beta, float(self.discount[i]), self.switch_rate(i), payoff)


@dataclass(frozen=True, eq=False)
class AuxiliaryProblem:
    """Exponential-horizon problem: discount ``q``, kill rate ``r``, terminal payoff ``payoff``."""

    model: LevyModel
    delta: float
    beta: float
    q: float
    r: float
    payoff: PayoffFunction = field(default_factory=PayoffFunction.zero)

    @property
    def alpha(self):
        return self.q + self.r

    def validate(self, check_payoff=True) -> ValidationReport:
        """Standing assumptions; ``check_payoff=False`` skips the concavity/slope class of the payoff."""
        rep = ValidationReport()
        rep.add("beta_gt_1", self.beta > 1, "" if self.beta > 1 else "beta must exceed 1")
        rep.add("discount_positive", self.q > 0, "" if self.q > 0 else "q must be positive")
        rep.add("kill_rate_nonnegative", self.r >= 0, "" if self.r >= 0 else "r must be non-negative")
        d_ok = self.delta >= MIN_DELTA
        rep.add("delta_positive", d_ok, "" if d_ok else f"delta must be at least {MIN_DELTA:g}")
        _model_checks(rep, self.model, self.delta)
        if not check_payoff:
            return rep
        viol = self.payoff.class_violation(self.beta)
        rep.add("payoff_class", viol <= 1e-9, "" if viol <= 1e-9 else f"payoff leaves the admissible class by {viol:.3e}")
        return rep

    @cached_property
    def scales(self):
        from .scale_functions import build_scale_functions

        self.validate(check_payoff=False).require()
        return build_scale_functions(self.model, self.delta, self.alpha)


def validate(regime: RegimeModel) -> ValidationReport:
    return regime.validate()


def validate_auxiliary(prob: AuxiliaryProblem, check_payoff=True) -> ValidationReport:
    return prob.validate(check_payoff)

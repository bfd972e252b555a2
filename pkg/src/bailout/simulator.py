"""Monte-Carlo estimates of strategy NPVs, independent of the scale-function analytics.

Compound Poisson paths between events are deterministic and are integrated
exactly. Paths with a Gaussian part take adaptive steps; reflection at 0 uses
the exact running minimum of the Brownian bridge within each step. Kill times
and regime switches are sampled exactly.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numba
import numpy as np

from .errors import SimulationFault, UnsupportedModel
from .levy_model import AuxiliaryProblem, Family, LevyModel, RegimeModel
from .payoff import PayoffFunction

_JUMP_CODES = {"zero": 0, "point": 1, "exponential": 2}


@dataclass(frozen=True)
class PathConfig:
    dt: float = 0.02
    horizon: float = 200.0
    n_paths: int = 10_000
    seed: int = 12345
    antithetic: bool = False
    dt_min: float = 1e-3
    refine: float = 2.0  # step shrinks to (|U - b| / (refine * sigma))**2 near the threshold


@dataclass(frozen=True)
class NPVEstimate:
    mean: float
    stderr: float
    n_paths: int
    dividends: float
    injections: float
    payoff: float
    truncation_bound: float = 0.0

    def as_dict(self):
        return asdict(self)


# ---------------------------------------------------------------- kernel ---
@numba.njit(cache=True)
def _splitmix(x):
    x = (x + np.uint64(0x9E3779B97F4A7C15)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = x
    z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True)
def _unif(anti):
    u = np.random.random()
    if anti:
        u = 1.0 - u
    # keep logs finite
    if u <= 0.0:
        u = 1e-300
    return u


@numba.njit(cache=True)
def _normal(anti):
    z = np.random.standard_normal()
    return -z if anti else z


@numba.njit(cache=True)
def _expo(rate, anti):
    if rate <= 0.0:
        return np.inf
    return -math.log(_unif(anti)) / rate


@numba.njit(cache=True)
def _payoff(x, knots, values, tail):
    n = knots.shape[0]
    if x >= knots[n - 1]:
        return values[n - 1] + tail * (x - knots[n - 1])
    if x <= 0.0:
        if n == 1:
            return values[0]
        return values[0] + (values[1] - values[0]) / (knots[1] - knots[0]) * x
    k = np.searchsorted(knots, x, side="right") - 1
    return values[k] + (values[k + 1] - values[k]) * (x - knots[k]) / (knots[k + 1] - knots[k])


@numba.njit(cache=True)
def _pv(rate, s):
    # int_0^s exp(-rate t) dt
    if rate * s < 1e-8:
        return s * (1.0 - 0.5 * rate * s)
    return -math.expm1(-rate * s) / rate


@numba.njit(cache=True)
def _drift_segment(U, D, tau, drift, delta, b, r):
    """Exact evolution of the pure-drift part over ``tau``; returns U, D, dividends, injections."""
    div = 0.0
    inj = 0.0
    rem = tau
    while rem > 0.0:
        if U < b:
            # below the threshold the drift is positive under the standing assumptions
            hit = (b - U) / drift if drift > 0.0 else np.inf
            s = rem if rem < hit else hit
            U = b if s == hit else U + drift * s
        else:
            up = drift - delta
            if up >= 0.0:
                s = rem
                U = U + up * s
            else:
                hit = (U - max(b, 0.0)) / (-up)
                if hit <= 0.0 and b > 0.0:
                    # sticky at b: everything above the threshold drift is paid out
                    div += drift * D * _pv(r, rem)
                    D *= math.exp(-r * rem)
                    break
                s = rem if rem < hit else hit
                U = U + up * s
                if s == hit:
                    U = max(b, 0.0)
                    if b <= 0.0:
                        # stuck at 0: inject at the rate the drift pulls down
                        pv = _pv(r, s)
                        div += delta * D * pv
                        D *= math.exp(-r * s)
                        rem -= s
                        s = rem
                        pv = _pv(r, s)
                        inj += -up * D * pv
                        div += delta * D * pv
                        D *= math.exp(-r * s)
                        rem = 0.0
                        break
            div += delta * D * _pv(r, s)
        D *= math.exp(-r * s)
        rem -= s
    return U, D, div, inj


@numba.njit(cache=True)
def _diffusion_segment(U, D, tau, drift, sigma, delta, b, r, dt, dt_min, refine, anti):
    div = 0.0
    inj = 0.0
    rem = tau
    while rem > 0.0:
        dist = abs(U - b) / (refine * sigma)
        h = dist * dist
        if h > dt:
            h = dt
        if h < dt_min:
            h = dt_min
        if h > rem:
            h = rem
        above = U > b
        d = drift - delta if above else drift
        sq = sigma * math.sqrt(h)
        e = U + d * h + sq * _normal(anti)
        # exact minimum of the Brownian bridge from U to e over the step
        v = _unif(anti)
        disc = (e - U) * (e - U) - 2.0 * sq * sq * math.log(v)
        mn = 0.5 * (U + e - math.sqrt(disc))
        if mn < 0.0:
            inj += -mn * D * math.exp(-0.5 * r * h)
            e = e - mn
        if above:
            div += delta * D * _pv(r, h)
        D *= math.exp(-r * h)
        U = e
        rem -= h
    return U, D, div, inj


@numba.njit(cache=True)
def _apply_switch_jump(U, kind, param, anti):
    if kind == 1:
        return U - param
    if kind == 2:
        return U - _expo(param, anti)
    return U


@numba.njit(cache=True)
def _run_paths(
    n_paths, seed, antithetic, x0, i0, horizon, dt, dt_min, refine,
    drift, sigma, lam, mu, delta, b, disc, kill, switch_rate, switch_cum,
    jkind, jparam, knots, values, tail,
):
    div_out = np.zeros(n_paths)
    inj_out = np.zeros(n_paths)
    pay_out = np.zeros(n_paths)
    status = np.zeros(n_paths, dtype=np.int64)
    root = np.uint64(seed)
    for p in range(n_paths):
        if antithetic:
            idx = p // 2
            anti = p % 2 == 1
        else:
            idx = p
            anti = False
        s = _splitmix(root ^ _splitmix(np.uint64(idx)))
        np.random.seed(np.int64(s & np.uint64(0xFFFFFFFF)))
        U = x0
        i = i0
        t = 0.0
        D = 1.0
        div = 0.0
        inj = 0.0
        pay = 0.0
        if U < 0.0:
            inj += -U
            U = 0.0
        t_jump = _expo(lam[i], anti)
        t_switch = _expo(switch_rate[i], anti)
        t_kill = _expo(kill[i], anti)
        while t < horizon:
            t_next = min(t_jump, t_switch, t_kill, horizon)
            tau = t_next - t
            if sigma[i] > 0.0:
                U, D, dd, ii = _diffusion_segment(U, D, tau, drift[i], sigma[i], delta[i], b[i], disc[i], dt, dt_min, refine, anti)
            else:
                U, D, dd, ii = _drift_segment(U, D, tau, drift[i], delta[i], b[i], disc[i])
            div += dd
            inj += ii
            t = t_next
            if t >= horizon:
                break
            if t_kill <= t:
                pay = D * _payoff(U, knots, values, tail)
                break
            if t_jump <= t:
                U -= _expo(mu[i], anti)
                if U < 0.0:
                    inj += -U * D
                    U = 0.0
                t_jump = t + _expo(lam[i], anti)
            if t_switch <= t:
                u = _unif(anti)
                j = 0
                while j < switch_cum.shape[1] - 1 and u > switch_cum[i, j]:
                    j += 1
                U = _apply_switch_jump(U, jkind[i, j], jparam[i, j], anti)
                if U < 0.0:
                    inj += -U * D
                    U = 0.0
                i = j
                t_jump = t + _expo(lam[i], anti)
                t_switch = t + _expo(switch_rate[i], anti)
                t_kill = t + _expo(kill[i], anti)
        div_out[p] = div
        inj_out[p] = inj
        pay_out[p] = pay
        if not (math.isfinite(div) and math.isfinite(inj) and math.isfinite(pay)):
            status[p] = 1
    return div_out, inj_out, pay_out, status


@numba.njit(cache=True)
def _bm_step(U, D, h, z, v, drift, sigma, delta, b, r):
    above = U > b
    d = drift - delta if above else drift
    sq = sigma * math.sqrt(h)
    e = U + d * h + sq * z
    mn = 0.5 * (U + e - math.sqrt((e - U) * (e - U) - 2.0 * sq * sq * math.log(v)))
    inj = 0.0
    if mn < 0.0:
        inj = -mn * D * math.exp(-0.5 * r * h)
        e = e - mn
    div = delta * D * _pv(r, h) if above else 0.0
    return e, D * math.exp(-r * h), div, inj


@numba.njit(cache=True)
def _coupled_paths(n_paths, seed, x0, dt, horizon, drift, sigma, delta, b, q, kill, beta, knots, values, tail):
    """Fixed-step Brownian paths at ``dt`` and ``dt/2`` driven by the same increments."""
    coarse = np.zeros(n_paths)
    fine = np.zeros(n_paths)
    root = np.uint64(seed)
    for p in range(n_paths):
        s = _splitmix(root ^ _splitmix(np.uint64(p)))
        np.random.seed(np.int64(s & np.uint64(0xFFFFFFFF)))
        zeta = min(_expo(kill, False), horizon)
        Uc = max(x0, 0.0)
        Uf = Uc
        Dc = 1.0
        Df = 1.0
        tc = -beta * max(-x0, 0.0)
        tf = tc
        t = 0.0
        while t < zeta:
            H = min(dt, zeta - t)
            z1 = np.random.standard_normal()
            z2 = np.random.standard_normal()
            Uf, Df2, d1, i1 = _bm_step(Uf, Df, 0.5 * H, z1, _unif(False), drift, sigma, delta, b, q)
            Uf, Df3, d2, i2 = _bm_step(Uf, Df2, 0.5 * H, z2, _unif(False), drift, sigma, delta, b, q)
            Df = Df3
            tf += d1 + d2 - beta * (i1 + i2)
            Uc, Dc, d0, i0 = _bm_step(Uc, Dc, H, (z1 + z2) / math.sqrt(2.0), _unif(False), drift, sigma, delta, b, q)
            tc += d0 - beta * i0
            t += H
        if zeta < horizon:
            tc += Dc * _payoff(Uc, knots, values, tail)
            tf += Df * _payoff(Uf, knots, values, tail)
        coarse[p] = tc
        fine[p] = tf
    return coarse, fine


# --------------------------------------------------------------- wrappers ---
def _state_arrays(model: LevyModel):
    if model.family is Family.NUMERIC:
        raise UnsupportedModel("the simulator covers the Brownian and Cramer-Lundberg families only")
    if model.family is Family.CRAMER_LUNDBERG:
        lin = model.gamma + model.jump_rate * (-math.expm1(-model.jump_mean_param) - model.jump_mean_param * math.exp(-model.jump_mean_param)) / model.jump_mean_param
        return lin, model.sigma, model.jump_rate, model.jump_mean_param
    return model.gamma, model.sigma, 0.0, 1.0


def _estimate(div, inj, pay, status, beta, antithetic, truncation):
    bad = np.flatnonzero(status)
    if bad.size:
        raise SimulationFault(int(bad[0]), {"n_bad": int(bad.size)})
    total = div - beta * inj + pay
    n = total.size
    if antithetic and n % 2 == 0:
        pairs = 0.5 * (total[0::2] + total[1::2])
        stderr = float(pairs.std(ddof=1) / math.sqrt(pairs.size))
    else:
        stderr = float(total.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return NPVEstimate(float(total.mean()), stderr, int(n), float(div.mean()), float(inj.mean()), float(pay.mean()), truncation)


def _run(cfg: PathConfig, x, i, models, delta, b, disc, kill, Q, jumps, payoff: PayoffFunction):
    n = len(models)
    arr = np.array([_state_arrays(m) for m in models], dtype=float).reshape(n, 4)
    rates = np.array([Q[k].sum() - Q[k, k] for k in range(n)], dtype=float)
    probs = np.zeros((n, n))
    for k in range(n):
        if rates[k] > 0:
            row = Q[k].copy()
            row[k] = 0.0
            probs[k] = row / rates[k]
    cum = np.cumsum(probs, axis=1)
    jkind = np.zeros((n, n), dtype=np.int64)
    jparam = np.zeros((n, n))
    for (k, j), law in jumps.items():
        jkind[k, j] = _JUMP_CODES[law.kind]
        jparam[k, j] = law.size if law.kind == "point" else law.rate
    return _run_paths(
        int(cfg.n_paths), np.uint64(cfg.seed), bool(cfg.antithetic), float(x), int(i), float(cfg.horizon),
        float(cfg.dt), float(cfg.dt_min), float(cfg.refine),
        arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2].copy(), arr[:, 3].copy(),
        np.asarray(delta, dtype=float), np.asarray(b, dtype=float), np.asarray(disc, dtype=float),
        np.asarray(kill, dtype=float), rates, cum, jkind, jparam,
        payoff.knots, payoff.values, float(payoff.tail_slope),
    )


def simulate_single_regime(prob: AuxiliaryProblem, b: float, x: float, cfg: PathConfig) -> NPVEstimate:
    """Estimate of ``v_b(x)``: discount ``q``, killed at rate ``r`` with terminal payoff."""
    prob.validate(check_payoff=False).require()
    out = _run(cfg, x, 0, [prob.model], [prob.delta], [b], [prob.q], [prob.r], np.zeros((1, 1)), {}, prob.payoff)
    trunc = math.exp(-(prob.q + prob.r) * cfg.horizon) * (prob.delta / prob.q)
    return _estimate(*out, prob.beta, cfg.antithetic, trunc)


def simulate_regime(regime: RegimeModel, b, x: float, i: int, cfg: PathConfig) -> NPVEstimate:
    """Estimate of ``V_{pi^b}(x, i)`` for the regime-modulated threshold strategy ``b``."""
    regime.validate().require()
    n = regime.n_states
    out = _run(cfg, x, i, list(regime.levy), regime.delta, np.asarray(b, dtype=float), regime.discount,
               np.zeros(n), regime.Q, regime.jumps, PayoffFunction.zero())
    trunc = math.exp(-float(regime.discount.min()) * cfg.horizon) * float(regime.delta.max() / regime.discount.min())
    return _estimate(*out, regime.beta, cfg.antithetic, trunc)


def paired_difference(regime: RegimeModel, b_a, b_b, x: float, i: int, cfg: PathConfig) -> NPVEstimate:
    """Estimate of ``V_{pi^a}(x, i) - V_{pi^b}(x, i)`` on common random numbers.

    Both strategies reuse the same per-path streams, so the standard error is
    that of the per-path differences.
    """
    regime.validate().require()
    n = regime.n_states
    totals = []
    for b in (b_a, b_b):
        div, inj, pay, status = _run(cfg, x, i, list(regime.levy), regime.delta, np.asarray(b, dtype=float), regime.discount,
                                     np.zeros(n), regime.Q, regime.jumps, PayoffFunction.zero())
        bad = np.flatnonzero(status)
        if bad.size:
            raise SimulationFault(int(bad[0]), {"n_bad": int(bad.size)})
        totals.append((div - regime.beta * inj, div, inj))
    d = totals[0][0] - totals[1][0]
    if cfg.antithetic and d.size % 2 == 0:
        d_err = 0.5 * (d[0::2] + d[1::2])
    else:
        d_err = d
    stderr = float(d_err.std(ddof=1) / math.sqrt(d_err.size))
    return NPVEstimate(float(d.mean()), stderr, int(d.size), float((totals[0][1] - totals[1][1]).mean()),
                       float((totals[0][2] - totals[1][2]).mean()), 0.0)


def reflection_cost(regime: RegimeModel, i: int, cfg: PathConfig) -> NPVEstimate:
    """Discounted injections keeping ``X - delta_+ t`` above 0 from ``(0, i)``, discounted at ``r_-``.

    The modulating chain and its switch jumps are kept. ``mean`` is the expected
    discounted injection total, not an NPV.
    """
    n = regime.n_states
    d_plus = float(regime.delta.max())
    r_minus = float(regime.discount.min())
    out = _run(cfg, 0.0, i, list(regime.levy), np.full(n, d_plus), np.full(n, -1.0), np.full(n, r_minus),
               np.zeros(n), regime.Q, regime.jumps, PayoffFunction.zero())
    _, inj, _, status = out
    bad = np.flatnonzero(status)
    if bad.size:
        raise SimulationFault(int(bad[0]), {"n_bad": int(bad.size)})
    stderr = float(inj.std(ddof=1) / math.sqrt(inj.size))
    return NPVEstimate(float(inj.mean()), stderr, int(inj.size), 0.0, float(inj.mean()), 0.0, math.exp(-r_minus * cfg.horizon))


def step_refinement(prob: AuxiliaryProblem, b: float, x: float, cfg: PathConfig):
    """Coupled fixed-step estimates at ``cfg.dt`` and ``cfg.dt / 2`` for a Brownian model.

    Returns ``(coarse, fine, difference)`` as :class:`NPVEstimate` objects; the
    difference is the paired estimate of the change caused by halving the step.
    """
    if prob.model.family is not Family.BROWNIAN:
        raise UnsupportedModel("step refinement is only meaningful with a Gaussian part")
    w = prob.payoff
    c, f = _coupled_paths(int(cfg.n_paths), np.uint64(cfg.seed), float(x), float(cfg.dt), float(cfg.horizon),
                          prob.model.gamma, prob.model.sigma, prob.delta, float(b), prob.q, prob.r, prob.beta,
                          w.knots, w.values, float(w.tail_slope))
    n = c.size

    def est(arr):
        return NPVEstimate(float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(n)), n, math.nan, math.nan, math.nan)

    return est(c), est(f), est(f - c)

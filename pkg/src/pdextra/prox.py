"""Pointwise proximal maps and Moreau-Yosida integrands.

Three data terms are covered, each through the conjugate ``f*`` of its
pointwise integrand plus the Moreau-Yosida shift ``gamma/2 |w|^2``:

``l1``
    ``f(t) = |t| / alpha``, so ``f*`` is the indicator of ``[-1/alpha, 1/alpha]``.
``linf``
    ``f(t)`` is the indicator of ``[-delta, delta]``, ``f*(w) = delta |w|``.
``state``
    ``f(t) = |t - yd|^2 / (2 alpha)`` restricted to ``t <= c``.

All maps broadcast over numpy arrays, so the same call handles a scalar or a
nodal field.  :func:`prox_oracle` minimises the defining objective directly
(golden-section search in extended precision) and is meant for testing the
closed forms, not for use inside iterations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath
import numpy as np

FAMILIES = ("l1", "linf", "state")


@dataclass(frozen=True)
class ScalarProxSpec:
    family: str
    alpha: float = 1.0
    gamma: float = 0.0
    delta: float = 1.0
    c: float = 0.0
    yd: float | np.ndarray = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be non-negative, got {self.gamma}")
        if self.family == "linf" and not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")

    def prox_fstar(self, v, sigma):
        """prox of ``sigma * f*_gamma`` at ``v``."""
        if self.family == "l1":
            return prox_fstar_l1(v, sigma, self.alpha, self.gamma)
        if self.family == "linf":
            return prox_fstar_linf(v, sigma, self.delta, self.gamma)
        return prox_fstar_state(v, sigma, self.alpha, self.gamma, self.c, self.yd)

    def fgamma(self, t):
        return fgamma_value(self, t)

    def fstar(self, w):
        return fstar_value(self, w)


def prox_g(u, tau):
    """prox of ``tau * |.|^2 / 2``."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    return np.asarray(u, dtype=float) / (1.0 + tau)


def prox_fstar_l1(v, sigma, alpha, gamma=0.0):
    bound = 1.0 / alpha
    return np.clip(np.asarray(v, dtype=float) / (1.0 + sigma * gamma), -bound, bound)


def prox_fstar_linf(v, sigma, delta, gamma=0.0):
    v = np.asarray(v, dtype=float)
    return np.maximum(np.abs(v) - delta * sigma, 0.0) * np.sign(v) / (1.0 + sigma * gamma)


def state_threshold(sigma, alpha, gamma, c, yd):
    """Input value above which the state prox takes its constrained branch."""
    return (1.0 + sigma * gamma) / alpha * (c - np.asarray(yd, dtype=float)) + sigma * c


def prox_fstar_state(v, sigma, alpha, gamma, c, yd):
    v = np.asarray(v, dtype=float)
    yd = np.asarray(yd, dtype=float)
    active = v > state_threshold(sigma, alpha, gamma, c, yd)
    upper = (v - sigma * c) / (1.0 + sigma * gamma)
    lower = (v - sigma * yd) / (1.0 + sigma * (alpha + gamma))
    return np.where(active, upper, lower)


def huber(t, alpha, gamma):
    """Moreau-Yosida envelope of ``|t| / alpha``."""
    a = np.abs(np.asarray(t, dtype=float))
    if gamma == 0:
        return a / alpha
    return np.where(a <= gamma / alpha, a * a / (2.0 * gamma), a / alpha - gamma / (2.0 * alpha**2))


def fgamma_value(spec: ScalarProxSpec, t):
    """Pointwise integrand of ``F_gamma``; ``inf`` marks infeasible ``gamma = 0`` points."""
    t = np.asarray(t, dtype=float)
    g, a = spec.gamma, spec.alpha
    if spec.family == "l1":
        return huber(t, a, g)
    if spec.family == "linf":
        excess = np.maximum(np.abs(t) - spec.delta, 0.0)
        if g == 0:
            return np.where(excess > 0, np.inf, 0.0)
        return excess**2 / (2.0 * g)
    yd = np.asarray(spec.yd, dtype=float)
    c = spec.c
    if g == 0:
        return np.where(t <= c, (t - yd) ** 2 / (2.0 * a), np.inf)
    # the bound is active when the inner minimiser (g yd + a t) / (a + g) exceeds c,
    # i.e. t > (1 + g/a) c - (g/a) yd
    active = a * t > (a + g) * c - g * yd
    upper = (c - yd) ** 2 / (2.0 * a) + (t - c) ** 2 / (2.0 * g)
    lower = (t - yd) ** 2 / (2.0 * (a + g))
    return np.where(active, upper, lower)


def fstar_value(spec: ScalarProxSpec, w):
    """Scalar conjugate integrand ``f*(w) + gamma/2 w^2``.

    Works on plain floats and on mpmath numbers; the oracle relies on that.
    """
    g, a = spec.gamma, spec.alpha
    if spec.family == "l1":
        if abs(w) > 1 / a:
            return math.inf
        base = 0
    elif spec.family == "linf":
        base = spec.delta * abs(w)
    else:
        c, yd = spec.c, spec.yd
        if a * w > c - yd:
            base = c * w - (c - yd) ** 2 / (2 * a)
        else:
            base = a * w * w / 2 + w * yd
    return base + g * w * w / 2


def fstar_subgradient(spec: ScalarProxSpec, w):
    """The subdifferential of ``f*_gamma`` at ``w`` as an interval ``(lo, hi)``."""
    g, a = spec.gamma, spec.alpha
    if spec.family == "l1":
        b = 1.0 / a
        lo = -math.inf if w <= -b else 0.0
        hi = math.inf if w >= b else 0.0
        if abs(w) > b:
            raise ValueError("w outside the domain of f*")
    elif spec.family == "linf":
        if w > 0:
            lo = hi = spec.delta
        elif w < 0:
            lo = hi = -spec.delta
        else:
            lo, hi = -spec.delta, spec.delta
    else:
        c, yd = spec.c, spec.yd
        lo = hi = c if a * w > c - yd else a * w + yd
    return lo + g * w, hi + g * w


def golden_section(fun, lo, hi, tol=1e-12):
    """Minimise a unimodal ``fun`` on ``[lo, hi]`` until the bracket is below ``tol``."""
    invphi = (mpmath.sqrt(5) - 1) / 2
    a, b = mpmath.mpf(lo), mpmath.mpf(hi)
    x1 = b - invphi * (b - a)
    x2 = a + invphi * (b - a)
    f1, f2 = fun(x1), fun(x2)
    while b - a > tol:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - invphi * (b - a)
            f1 = fun(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (b - a)
            f2 = fun(x2)
    return (a + b) / 2


def prox_oracle(spec: ScalarProxSpec | None, v: float, sigma: float, *, dps: int = 40) -> float:
    """Brute-force ``argmin_w |w - v|^2 / 2 + sigma * f*_gamma(w)``.

    ``spec=None`` selects ``|w|^2 / 2`` instead, i.e. the map :func:`prox_g`.
    """
    with mpmath.workdps(dps):
        v_ = mpmath.mpf(v)
        s_ = mpmath.mpf(sigma)
        if spec is None:
            def objective(w):
                return (w - v_) ** 2 / 2 + s_ * w * w / 2
            g0 = 0.0
        else:
            mp_spec = ScalarProxSpec.__new__(ScalarProxSpec)
            for name in ("family", "alpha", "gamma", "delta", "c", "yd"):
                val = getattr(spec, name)
                object.__setattr__(mp_spec, name, val if name == "family" else mpmath.mpf(float(val)))

            def objective(w):
                return (w - v_) ** 2 / 2 + s_ * fstar_value(mp_spec, w)

            g0 = abs(spec.c) + abs(float(spec.yd)) if spec.family == "state" else 0.0
        # nonexpansiveness gives |w| <= |v| + sigma |g0| for g0 in the subdifferential at 0
        radius = 2 * (1 + abs(v_) + s_ * g0)
        lo, hi = -radius, radius
        if spec is not None and spec.family == "l1":
            lo = max(lo, -1 / mp_spec.alpha)
            hi = min(hi, 1 / mp_spec.alpha)
        return float(golden_section(objective, lo, hi))

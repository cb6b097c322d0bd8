"""Accelerated nonlinear primal-dual extragradient iteration.

The solver targets ``min_u F_gamma(K(u)) + G(u)`` and only talks to the
problem through a small duck-typed surface:

``linearize(u)``
    returns an object carrying the state at ``u`` (reused by the next two)
``K_apply(u, lin=None)``, ``Kstar_adjoint_apply(u, p, lin=None)``
    the operator and its adjoint derivative
``prox_G(u, tau)``, ``prox_Fstar_gamma(r, sigma)``
``functional_value(u, lin=None)``, ``feasibility_metric(u, lin=None)``
``primal_norm(u)``

One iteration, with the step sizes updated *before* the dual step::

    u+   = prox_{tau_i G}(u - tau_i K'(u)^* p)
    omega, tau_{i+1}, sigma_{i+1} = schedule update
    ubar = u+ + omega (u+ - u)
    p+   = prox_{sigma_{i+1} F*_gamma}(p + sigma_{i+1} K(ubar))
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .fem1d import SolverError

MODES = ("none", "accel-G", "accel-Fstar")

# float slack for checks that hold with equality in exact arithmetic
PRODUCT_RTOL = 1e-12
LEMMA_RTOL = 1e-12

DIVERGENCE_FACTOR = 1e6


class ScheduleInvariantError(AssertionError):
    pass


class IterationError(RuntimeError):
    """A step failed; ``iteration`` is the 1-based index of the failing step."""

    def __init__(self, message, iteration):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


class DivergenceError(IterationError):
    pass


@dataclass(frozen=True)
class StepSchedule:
    """Step lengths and the acceleration rule.

    ``i`` counts completed updates; acceleration is switched off once
    ``i >= n_accel`` (``None`` means never).
    """

    tau: float
    sigma: float
    mu: float = 0.0
    mode: str = "accel-G"
    omega: float = 1.0
    n_accel: int | None = None
    i: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not (self.tau > 0 and self.sigma > 0):
            raise ValueError("step lengths must be positive")
        if not self.mu >= 0:
            raise ValueError("mu must be non-negative")
        if not 0 < self.omega <= 1:
            raise ValueError("omega must lie in (0, 1]")

    @property
    def accelerating(self) -> bool:
        frozen = self.n_accel is not None and self.i >= self.n_accel
        return self.mode != "none" and self.mu > 0 and not frozen


def schedule_update(s: StepSchedule) -> StepSchedule:
    if not s.accelerating:
        return replace(s, omega=1.0, i=s.i + 1)
    if s.mode == "accel-G":
        omega = 1.0 / math.sqrt(1.0 + 2.0 * s.mu * s.tau)
        return replace(s, omega=omega, tau=s.tau * omega, sigma=s.sigma / omega, i=s.i + 1)
    omega = 1.0 / math.sqrt(1.0 + 2.0 * s.mu * s.sigma)
    return replace(s, omega=omega, tau=s.tau / omega, sigma=s.sigma * omega, i=s.i + 1)


def check_schedule_step(old: StepSchedule, new: StepSchedule, product0: float):
    """Raise :class:`ScheduleInvariantError` if an update broke an invariant."""
    if not 0 < new.omega <= 1:
        raise ScheduleInvariantError(f"omega={new.omega} outside (0, 1]")
    drift = abs(new.tau * new.sigma - product0) / product0
    if drift > PRODUCT_RTOL:
        raise ScheduleInvariantError(f"tau*sigma drifted by {drift:.3e}")
    if not old.accelerating:
        if new.tau != old.tau or new.sigma != old.sigma or new.omega != 1.0:
            raise ScheduleInvariantError("steps changed without acceleration")
        return
    if old.mode == "accel-G":
        if new.tau > old.tau or new.sigma < old.sigma:
            raise ScheduleInvariantError("accel-G must shrink tau and grow sigma")
        slack = old.mu + 1.0 / old.tau - 1.0 / new.tau
        scale = old.mu + 1.0 / old.tau
    else:
        if new.sigma > old.sigma or new.tau < old.tau:
            raise ScheduleInvariantError("accel-Fstar must shrink sigma and grow tau")
        slack = old.mu + 1.0 / old.sigma - 1.0 / new.sigma
        scale = old.mu + 1.0 / old.sigma
    if slack < -LEMMA_RTOL * scale:
        raise ScheduleInvariantError(f"step-length inequality violated: {slack:.3e}")


@dataclass
class IterateState:
    u: np.ndarray
    p: np.ndarray
    u_prev: np.ndarray
    lin: object = field(repr=False)
    i: int = 0


@dataclass(frozen=True)
class IterateRecord:
    i: int
    J_gamma: float
    tau: float
    sigma: float
    omega: float
    primal_change: float
    feasibility: float
    wall_time_ms: float


@dataclass
class RunResult:
    records: list
    u: np.ndarray
    p: np.ndarray
    schedule: StepSchedule
    J0: float


def initial_state(problem, u0, p0) -> IterateState:
    u0 = np.array(u0, dtype=float)
    p0 = np.array(p0, dtype=float)
    try:
        lin = problem.linearize(u0)
    except SolverError as exc:
        raise IterationError(f"initial forward solve failed: {exc}", 0) from exc
    return IterateState(u=u0, p=p0, u_prev=u0.copy(), lin=lin, i=0)


def pdegm_step(state: IterateState, schedule: StepSchedule, problem, *, product0=None):
    """One iteration; returns ``(new_state, new_schedule, record)``."""
    t0 = time.perf_counter()
    k = state.i + 1
    u, p = state.u, state.p
    try:
        z = problem.Kstar_adjoint_apply(u, p, state.lin)
        u_new = problem.prox_G(u - schedule.tau * z, schedule.tau)
        new_schedule = schedule_update(schedule)
        check_schedule_step(schedule, new_schedule, product0 or schedule.tau * schedule.sigma)
        u_bar = u_new + new_schedule.omega * (u_new - u)
        r = p + new_schedule.sigma * problem.K_apply(u_bar)
        p_new = problem.prox_Fstar_gamma(r, new_schedule.sigma)
        lin = problem.linearize(u_new)
        J = problem.functional_value(u_new, lin)
        feas = problem.feasibility_metric(u_new, lin)
    except SolverError as exc:
        raise IterationError(f"PDE solve failed, coefficient left the admissible set ({exc})", k) from exc
    if not (np.all(np.isfinite(u_new)) and np.all(np.isfinite(p_new)) and math.isfinite(J)):
        raise DivergenceError("non-finite iterate or functional value", k)
    change = problem.primal_norm(u_new - u)
    record = IterateRecord(
        i=k,
        J_gamma=float(J),
        tau=new_schedule.tau,
        sigma=new_schedule.sigma,
        omega=new_schedule.omega,
        primal_change=float(change),
        feasibility=float(feas),
        wall_time_ms=(time.perf_counter() - t0) * 1e3,
    )
    new_state = IterateState(u=u_new, p=p_new, u_prev=u, lin=lin, i=k)
    return new_state, new_schedule, record


def run(problem, schedule: StepSchedule, u0, p0, n_iter: int, *, n_accel=None, on_step=None) -> RunResult:
    """Run ``n_iter`` iterations from ``(u0, p0)``.

    Acceleration stops after ``n_accel`` iterations (default ``n_iter``).
    ``on_step(state, record)`` is called after every iteration.
    """
    if n_iter < 1:
        raise ValueError("need at least one iteration")
    schedule = replace(schedule, n_accel=n_iter if n_accel is None else n_accel, i=0, omega=1.0)
    state = initial_state(problem, u0, p0)
    J0 = float(problem.functional_value(state.u, state.lin))
    limit = DIVERGENCE_FACTOR * J0 if J0 > 0 else math.inf
    product0 = schedule.tau * schedule.sigma
    records = []
    for _ in range(n_iter):
        state, schedule, rec = pdegm_step(state, schedule, problem, product0=product0)
        if rec.J_gamma > limit:
            raise DivergenceError(f"J_gamma={rec.J_gamma:.3e} exceeds {DIVERGENCE_FACTOR:g} * J(u0)", rec.i)
        records.append(rec)
        if on_step is not None:
            on_step(state, rec)
    return RunResult(records=records, u=state.u, p=state.p, schedule=schedule, J0=J0)

"""Model problems: L1 fitting, L-infinity fitting, state constraints.

All three share ``G(u) = |u|^2 / 2`` and the forward map ``S`` of
:mod:`pdextra.fem1d` with ``f = 1``; they differ in the data term:

========  ==========================  ===========================================
family    ``K(u)``                    ``F``
========  ==========================  ===========================================
l1        ``S(u) - y_delta``          ``|y|_{L1} / alpha``
linf      ``S(u) - y_delta``          indicator of ``|y| <= delta`` pointwise
state     ``S(u)``                    ``|y - yd|^2 / (2 alpha)`` plus ``y <= c``
========  ==========================  ===========================================

Dual variables are nodal and every prox acts node by node; functional
values use lumped quadrature.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from . import fem1d
from .fem1d import Mesh1D
from .prox import ScalarProxSpec, fgamma_value, prox_g

RNG_METHOD = "PCG64(SeedSequence(seed, spawn_key=(replicate,))); normals by inverse CDF (scipy.special.ndtri) of 53-bit open-interval uniforms"

DEFAULTS = {
    "l1": {"alpha": 1e-2, "gamma": 1e-12, "noise_r": 0.3, "noise_delta": 0.1},
    "linf": {"gamma": 1e-12, "nbins": 11},
    "state": {"alpha": 1e-12, "gamma": 1e-12, "c": 0.68},
}

DEGENERACY_TOL = 1e-8


@dataclass(frozen=True)
class NoiseConfig:
    kind: str = "none"
    r: float = 0.0
    delta: float = 0.0
    n_b: int = 11
    seed: int = 0
    replicate: int = 0

    def __post_init__(self):
        if self.kind not in ("impulsive", "quantize", "none"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if not 0 <= self.r <= 1:
            raise ValueError(f"corruption probability r must lie in [0, 1], got {self.r}")
        if self.delta < 0:
            raise ValueError(f"noise level must be non-negative, got {self.delta}")
        if self.n_b < 2:
            raise ValueError(f"need at least 2 bins, got {self.n_b}")


def make_rng(seed: int, replicate: int = 0) -> np.random.Generator:
    """Independent, reproducible stream for one replicate of an experiment."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(replicate,))))


def standard_normals(rng: np.random.Generator, size: int) -> np.ndarray:
    k = rng.integers(0, 2**53, size=size, dtype=np.int64)
    return ndtri((k + 0.5) / 2.0**53)


def make_truth(mesh: Mesh1D):
    """Exact coefficient ``2 - |x|`` at element midpoints and its state."""
    u_dag = 2.0 - np.abs(mesh.midpoints)
    return u_dag, fem1d.forward_solve(mesh, u_dag, 1.0)


def add_impulsive_noise(mesh: Mesh1D, y_dag, cfg: NoiseConfig, rng=None):
    """Corrupt each node with probability ``cfg.r`` by ``|y_dag| * N(0, cfg.delta^2)``.

    Returns ``(y_delta, corrupted_mask)``.
    """
    if rng is None:
        rng = make_rng(cfg.seed, cfg.replicate)
    y_dag = mesh.check_nodes(y_dag)
    m = mesh.n + 1
    hit = rng.random(m) < cfg.r
    xi = cfg.delta * standard_normals(rng, m)
    scale = fem1d.norm(mesh, y_dag, "nodal")
    return np.where(hit, y_dag + scale * xi, y_dag), hit


def quantize_with_step(y, y_s):
    s = np.asarray(y, dtype=float) / y_s
    # nearest integer, halves away from zero
    return y_s * np.sign(s) * np.floor(np.abs(s) + 0.5)


def quantize(y_dag, n_b: int):
    """Round to multiples of ``(max - min) / n_b``; returns ``(y_delta, y_s)``."""
    if n_b < 2:
        raise ValueError("need at least 2 bins")
    y_dag = np.asarray(y_dag, dtype=float)
    y_s = (y_dag.max() - y_dag.min()) / n_b
    if not y_s > 0:
        raise ValueError("cannot quantize a constant field")
    return quantize_with_step(y_dag, y_s), y_s


@dataclass(frozen=True)
class Linearization:
    u: np.ndarray
    y: np.ndarray
    factor: fem1d.Factorization = field(repr=False)


@dataclass
class ProblemSpec:
    family: str
    mesh: Mesh1D
    params: ScalarProxSpec
    data: np.ndarray
    u_dag: np.ndarray
    y_dag: np.ndarray
    f: float = 1.0
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = self.mesh.check_nodes(self.data, "data")
        if self.family != self.params.family:
            raise ValueError("family does not match prox parameters")

    # forward model

    def linearize(self, u) -> Linearization:
        u = self.mesh.check_elements(u, "u")
        factor = fem1d.factorize(fem1d.assemble_operator(self.mesh, u))
        return Linearization(u, fem1d.forward_solve(self.mesh, u, self.f, factor=factor), factor)

    def _lin(self, u, lin):
        if lin is None or (lin.u is not u and not np.array_equal(lin.u, u)):
            return self.linearize(u)
        return lin

    def K_from_state(self, y):
        return y if self.family == "state" else y - self.data

    def K_apply(self, u, lin=None):
        return self.K_from_state(self._lin(u, lin).y)

    def Kstar_adjoint_apply(self, u, p, lin=None):
        lin = self._lin(u, lin)
        return fem1d.adjoint_apply(self.mesh, u, lin.y, p, factor=lin.factor)

    def K_derivative_apply(self, u, du, lin=None):
        lin = self._lin(u, lin)
        return fem1d.derivative_apply(self.mesh, u, lin.y, du, factor=lin.factor)

    # proximal maps and functional

    def prox_G(self, u, tau):
        return prox_g(u, tau)

    def prox_Fstar_gamma(self, r, sigma):
        return self.params.prox_fstar(r, sigma)

    def F_gamma_integrand(self, t):
        return fgamma_value(self.params, t)

    def primal_norm(self, u):
        return fem1d.norm(self.mesh, u, "element")

    def functional_value(self, u, lin=None, weights=None):
        """Lumped ``F_gamma(K(u)) + |u|^2 / 2``."""
        w = self.mesh.lumped_weights if weights is None else weights
        K = self.K_apply(u, lin)
        F = float(np.sum(w * self.F_gamma_integrand(K)))
        return F + 0.5 * self.mesh.h * float(np.sum(np.square(u)))

    def feasibility_metric(self, u, lin=None):
        if self.family == "l1":
            return 0.0
        y = self._lin(u, lin).y
        if self.family == "linf":
            return float(np.max(np.maximum(np.abs(y - self.data) - self.params.delta, 0.0)))
        return float(np.max(np.maximum(y - self.params.c, 0.0)))

    def is_even(self, u, tol=1e-10):
        return float(np.max(np.abs(u - u[::-1]))) <= tol


def make_problem(
    family: str,
    mesh: Mesh1D,
    *,
    alpha: float | None = None,
    gamma: float | None = None,
    delta: float | None = None,
    c: float | None = None,
    nbins: int | None = None,
    noise: NoiseConfig | None = None,
) -> ProblemSpec:
    """Build one of the model problems with synthetic data.

    Unset parameters take the experiment defaults in :data:`DEFAULTS`.  For
    ``l1``, ``noise`` controls the impulsive corruption (``kind="none"`` gives
    exact data).  For ``linf`` the fitting tolerance ``delta`` defaults to
    half the quantization step, the largest error rounding can introduce.
    """
    if family not in DEFAULTS:
        raise ValueError(f"unknown problem family {family!r}")
    d = DEFAULTS[family]
    gamma = d["gamma"] if gamma is None else gamma
    u_dag, y_dag = make_truth(mesh)
    info = {}
    if family == "l1":
        alpha = d["alpha"] if alpha is None else alpha
        if noise is None:
            noise = NoiseConfig("impulsive", r=d["noise_r"], delta=d["noise_delta"])
        if noise.kind == "impulsive":
            data, hit = add_impulsive_noise(mesh, y_dag, noise)
            info["corrupted_nodes"] = int(hit.sum())
        elif noise.kind == "none":
            data = y_dag.copy()
        else:
            raise ValueError("l1 fitting expects impulsive noise or none")
        params = ScalarProxSpec("l1", alpha=alpha, gamma=gamma)
    elif family == "linf":
        n_b = nbins if nbins is not None else (noise.n_b if noise is not None and noise.kind == "quantize" else d["nbins"])
        if noise is not None and noise.kind == "none":
            data, y_s = y_dag.copy(), (y_dag.max() - y_dag.min()) / n_b
        else:
            data, y_s = quantize(y_dag, n_b)
        delta = 0.5 * y_s if delta is None else delta
        info.update(y_s=y_s, nbins=n_b)
        params = ScalarProxSpec("linf", alpha=1.0 if alpha is None else alpha, gamma=gamma, delta=delta)
    else:
        alpha = d["alpha"] if alpha is None else alpha
        c = d["c"] if c is None else c
        data = y_dag.copy()
        params = ScalarProxSpec("state", alpha=alpha, gamma=gamma, c=c, yd=data)
    return ProblemSpec(family=family, mesh=mesh, params=params, data=data, u_dag=u_dag, y_dag=y_dag, info=info)


def functional_value(problem: ProblemSpec, u) -> float:
    return problem.functional_value(u)


def feasibility_metric(problem: ProblemSpec, u) -> float:
    return problem.feasibility_metric(u)


def lipschitz_estimate(problem: ProblemSpec, u0):
    """``max(1, |S'(u0) u0| / |u0|)`` and the initial steps ``(L, sigma0, tau0)``."""
    u0 = problem.mesh.check_elements(u0, "u0")
    nu = problem.primal_norm(u0)
    if nu == 0:
        raise ValueError("u0 must be nonzero")
    w = problem.K_derivative_apply(u0, u0)
    L = max(1.0, fem1d.norm(problem.mesh, w, "nodal") / nu)
    return L, 1.0 / L, 0.99 / L


def strict_complementarity_diag(problem: ProblemSpec, u, p, tol=DEGENERACY_TOL):
    """Branch multiplier ``t_v`` in {0, alpha} per node and the lumped measure
    of nodes where ``alpha p`` is within ``tol`` of ``c - yd``.

    ``u`` is accepted for symmetry with the other diagnostics; the
    classification only depends on the dual.
    """
    if problem.family != "state":
        raise ValueError("strict complementarity applies to the state-constrained problem only")
    prm = problem.params
    p = problem.mesh.check_nodes(p, "p")
    gap = prm.alpha * p - (prm.c - problem.data)
    t_v = np.where(gap > 0, 0.0, prm.alpha)
    degenerate = np.abs(gap) <= tol
    return t_v, float(np.sum(problem.mesh.lumped_weights[degenerate]))

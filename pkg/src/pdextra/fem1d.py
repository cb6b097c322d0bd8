"""Piecewise-linear finite elements on (-1, 1) for the potential problem

    -y'' + u y = f,   y'(-1) = y'(1) = 0,

with the coefficient ``u`` piecewise constant (one value per element) and
the state ``y`` piecewise linear (one value per node).

Fields are plain 1-D float arrays: element fields have length ``n``, nodal
fields ``n + 1``.  Consistent mass matrices are used inside the linear
solves; lumped (row-sum) weights are used for functional values and for the
nodal inner product, which is also the pairing under which
:func:`adjoint_apply` is the exact adjoint of :func:`derivative_apply`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg.lapack import dpttrf, dpttrs

__all__ = [
    "Mesh1D",
    "TridiagonalOperator",
    "Factorization",
    "SolverError",
    "build_mesh",
    "assemble_operator",
    "factorize",
    "solve_linear",
    "mass_apply",
    "load_vector",
    "forward_solve",
    "derivative_apply",
    "adjoint_apply",
    "inner",
    "norm",
]

# relative threshold below which an elimination pivot counts as non-positive
PIVOT_RTOL = 1e-12


class SolverError(ArithmeticError):
    """Raised when a tridiagonal elimination meets a non-positive pivot."""

    def __init__(self, message, pivot_index=None):
        super().__init__(message)
        self.pivot_index = pivot_index


@dataclass(frozen=True)
class Mesh1D:
    """Uniform partition of (-1, 1) into ``n`` elements."""

    n: int
    h: float = field(init=False)
    nodes: np.ndarray = field(init=False, repr=False)
    lumped_weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"mesh needs an integer n >= 2 elements, got {self.n!r}")
        n = int(self.n)
        h = 2.0 / n
        # symmetric construction so that x_j + x_{n-j} == 0 holds exactly
        j = np.arange(n + 1)
        nodes = (2 * j - n) / n
        w = np.full(n + 1, h)
        w[0] = w[-1] = 0.5 * h
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "lumped_weights", w)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.nodes[:-1] + self.nodes[1:])

    @property
    def n_nodes(self) -> int:
        return self.n + 1

    def check_elements(self, a, name="element field"):
        a = np.asarray(a, dtype=float)
        if a.shape != (self.n,):
            raise ValueError(f"{name} must have length n={self.n}, got shape {a.shape}")
        return a

    def check_nodes(self, a, name="nodal field"):
        a = np.asarray(a, dtype=float)
        if a.shape != (self.n + 1,):
            raise ValueError(f"{name} must have length n+1={self.n + 1}, got shape {a.shape}")
        return a


def build_mesh(n: int) -> Mesh1D:
    return Mesh1D(n)


@dataclass(frozen=True)
class TridiagonalOperator:
    """Symmetric tridiagonal matrix stored by bands (``sub`` == ``sup``).

    ``rowsum`` optionally carries the exact row sums from assembly.  When
    present, :meth:`matvec` works in difference form,
    ``(A x)_j = s_j x_j + sum_k a_jk (x_k - x_j)``, which avoids the
    cancellation between stiffness entries of size 1/h on smooth vectors.
    """

    sub: np.ndarray
    diag: np.ndarray
    sup: np.ndarray
    rowsum: np.ndarray | None = None

    def __post_init__(self):
        if self.sub.shape != self.sup.shape or self.sub.shape[0] != self.diag.shape[0] - 1:
            raise ValueError("band lengths inconsistent")

    @property
    def order(self) -> int:
        return self.diag.shape[0]

    def matvec(self, x):
        x = np.asarray(x, dtype=float)
        if self.rowsum is None:
            out = self.diag * x
            out[:-1] += self.sup * x[1:]
            out[1:] += self.sub * x[:-1]
            return out
        dx = np.diff(x)
        out = self.rowsum * x
        out[:-1] += self.sup * dx
        out[1:] -= self.sub * dx
        return out

    def to_dense(self):
        return np.diag(self.diag) + np.diag(self.sup, 1) + np.diag(self.sub, -1)


def assemble_operator(mesh: Mesh1D, u) -> TridiagonalOperator:
    """Stiffness plus consistent ``u``-weighted mass, natural boundary conditions."""
    u = mesh.check_elements(u, "coefficient u")
    h = mesh.h
    diag = np.zeros(mesh.n + 1)
    # each element contributes 1/h + u_e h/3 to both of its diagonal entries
    d_e = 1.0 / h + u * (h / 3.0)
    diag[:-1] += d_e
    diag[1:] += d_e
    off = -1.0 / h + u * (h / 6.0)
    rowsum = np.zeros(mesh.n + 1)
    rowsum[:-1] += u * (0.5 * h)
    rowsum[1:] += u * (0.5 * h)
    return TridiagonalOperator(sub=off.copy(), diag=diag, sup=off, rowsum=rowsum)


@dataclass(frozen=True)
class Factorization:
    """L D L^T factors of a symmetric positive definite tridiagonal matrix.

    :meth:`solve` does one step of iterative refinement against the
    original operator; the condition number grows like 1/h^2, so the plain
    substitution loses about six digits at n = 1000.
    """

    operator: TridiagonalOperator
    d: np.ndarray
    e: np.ndarray
    refine: int = 1

    def _substitute(self, rhs):
        x, info = dpttrs(self.d, self.e, rhs)
        if info != 0:
            raise ValueError(f"dpttrs: illegal argument {-info}")
        return x

    def solve(self, rhs):
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape != (self.d.shape[0],):
            raise ValueError(f"rhs must have length {self.d.shape[0]}, got shape {rhs.shape}")
        x = self._substitute(rhs)
        for _ in range(self.refine):
            x = x + self._substitute(rhs - self.operator.matvec(x))
        return x


def factorize(A: TridiagonalOperator) -> Factorization:
    """Forward elimination of ``A``; raises :class:`SolverError` on a bad pivot."""
    if not (np.all(np.isfinite(A.diag)) and np.all(np.isfinite(A.sub))):
        raise SolverError("operator has non-finite entries")
    if np.any(A.sub != A.sup):
        raise ValueError("operator is not symmetric")
    d, e, info = dpttrf(A.diag, A.sub)
    scale = np.max(np.abs(A.diag))
    if info != 0:
        k = int(info) - 1
        raise SolverError(f"non-positive pivot at row {k}", pivot_index=k)
    k = int(np.argmin(d))
    if d[k] <= PIVOT_RTOL * scale:
        raise SolverError(f"non-positive pivot {d[k]:.3e} at row {k}", pivot_index=k)
    return Factorization(A, d, e)


def solve_linear(A: TridiagonalOperator, rhs) -> np.ndarray:
    return factorize(A).solve(rhs)


def mass_apply(mesh: Mesh1D, v) -> np.ndarray:
    """Consistent mass matrix times a nodal vector."""
    v = mesh.check_nodes(v)
    h = mesh.h
    out = np.empty_like(v)
    out[:] = 4.0 * v
    out[0] = 2.0 * v[0]
    out[-1] = 2.0 * v[-1]
    out[:-1] += v[1:]
    out[1:] += v[:-1]
    return out * (h / 6.0)


def load_vector(mesh: Mesh1D, f) -> np.ndarray:
    """Exact integrals of ``f`` against the hat functions.

    ``f`` is either a scalar (constant right-hand side) or a nodal field
    interpreted as piecewise linear.
    """
    if np.ndim(f) == 0:
        return float(f) * mesh.lumped_weights
    return mass_apply(mesh, f)


def forward_solve(mesh: Mesh1D, u, f=1.0, *, factor: Factorization | None = None) -> np.ndarray:
    """State y = S(u)."""
    if factor is None:
        factor = factorize(assemble_operator(mesh, u))
    return factor.solve(load_vector(mesh, f))


def _weighted_element_load(mesh: Mesh1D, y, du):
    # b_j = int y du phi_j with y linear and du constant on each element
    c = du * (mesh.h / 6.0)
    b = np.zeros(mesh.n + 1)
    b[:-1] += c * (2.0 * y[:-1] + y[1:])
    b[1:] += c * (y[:-1] + 2.0 * y[1:])
    return b


def derivative_apply(mesh: Mesh1D, u, y, du, *, factor: Factorization | None = None) -> np.ndarray:
    """Directional derivative w = S'(u) du, given the state ``y = S(u)``."""
    y = mesh.check_nodes(y, "state y")
    du = mesh.check_elements(du, "direction du")
    if factor is None:
        factor = factorize(assemble_operator(mesh, u))
    return factor.solve(-_weighted_element_load(mesh, y, du))


def adjoint_apply(mesh: Mesh1D, u, y, p, *, factor: Factorization | None = None) -> np.ndarray:
    """Adjoint derivative S'(u)^* p as an element field.

    Solves ``A(u) z = -W p`` with ``W`` the lumped weights and returns the
    element means of the quadratic ``y z``.  With this choice
    ``inner(mesh, S'(u)du, p, "nodal") == inner(mesh, du, S'(u)^*p, "element")``
    holds up to rounding.
    """
    y = mesh.check_nodes(y, "state y")
    p = mesh.check_nodes(p, "dual p")
    if factor is None:
        factor = factorize(assemble_operator(mesh, u))
    z = factor.solve(-mesh.lumped_weights * p)
    yl, yr, zl, zr = y[:-1], y[1:], z[:-1], z[1:]
    return (2.0 * yl * zl + yl * zr + yr * zl + 2.0 * yr * zr) / 6.0


def inner(mesh: Mesh1D, a, b, kind: str = "nodal") -> float:
    """Discrete L2 inner product: lumped nodal (``"nodal"``) or elementwise."""
    if kind == "nodal":
        a = mesh.check_nodes(a)
        b = mesh.check_nodes(b)
        return float(np.sum(mesh.lumped_weights * a * b))
    if kind == "element":
        a = mesh.check_elements(a)
        b = mesh.check_elements(b)
        return float(mesh.h * np.sum(a * b))
    raise ValueError(f"unknown inner product kind {kind!r}")


def norm(mesh: Mesh1D, a, kind: str = "nodal") -> float:
    return float(np.sqrt(inner(mesh, a, a, kind)))

"""Monotone spatial operators on uniform Dirichlet grids.

Sign convention: the evolution equation reads ``d/dt(k * (u - u0)) + A(t, u) = f``
so ``A`` is the (weakly) monotone operator, e.g. ``A(u) = -Lap_h Psi(u)``.

Operators provided:

* porous medium ``-(-L)^a [h(t) Psi(u)] - g(t) u`` with ``Psi(s) = s|s|^(r-1)``, r >= 1;
* fast diffusion, the same with ``0 < r < 1`` and a regularised ``Psi``;
* p-Laplace ``-div(h(t)|grad u|_eps^(p-2) grad u) - c u`` (1D face gradients,
  2D piecewise linear triangles);
* pointwise nonlinearities and linear relaxation for scalar or stacked ODEs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.fft import dst, idst
from scipy.optimize import minimize

from .errors import BadExponent, DimensionMismatch, ParamOutOfRange

__all__ = [
    "SpatialGrid",
    "EigenBasis",
    "OperatorModel",
    "HConditionReport",
    "porous_medium_operator",
    "fast_diffusion_operator",
    "p_laplace_operator",
    "pointwise_operator",
    "relaxation_operator",
    "zero_operator",
    "dirichlet_laplacian",
    "h_inner",
    "validate_H_conditions",
]


# --------------------------------------------------------------------------
# grids and spectral basis


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform grid of ``n`` interior points per axis on ``(0, length)^dim``."""

    dim: int
    n: int
    length: float = 1.0

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ParamOutOfRange("dim", self.dim, "1 or 2")
        if int(self.n) != self.n or self.n < 2:
            raise ParamOutOfRange("n", self.n, "integer n >= 2")
        if not self.length > 0:
            raise ParamOutOfRange("length", self.length, "length > 0")

    @property
    def h(self):
        return self.length / (self.n + 1)

    @property
    def size(self):
        return self.n**self.dim

    @property
    def cell_volume(self):
        return self.h**self.dim

    def coordinates(self):
        x = self.h * np.arange(1, self.n + 1)
        if self.dim == 1:
            return x
        X, Y = np.meshgrid(x, x, indexing="ij")
        return X.ravel(), Y.ravel()

    def sample(self, fn):
        """Evaluate ``fn`` at the interior nodes (flattened, row-major)."""
        if self.dim == 1:
            return np.asarray(fn(self.coordinates()), dtype=float)
        X, Y = self.coordinates()
        return np.asarray(fn(X, Y), dtype=float)


def dirichlet_laplacian(grid):
    """Sparse finite-difference Laplacian ``L_h`` (negative definite)."""
    n, h = grid.n, grid.h
    L1 = sp.diags([np.ones(n - 1), -2.0 * np.ones(n), np.ones(n - 1)], [-1, 0, 1]) / h**2
    if grid.dim == 1:
        return L1.tocsr()
    eye = sp.identity(n)
    return (sp.kron(L1, eye) + sp.kron(eye, L1)).tocsr()


class EigenBasis:
    """Sine eigenbasis of the Dirichlet Laplacian, orthonormal in ``L2(h^dim)``.

    Parameters
    ----------
    grid : SpatialGrid
    alpha_frac : float
        Power applied to the eigenvalues, in ``(0, 1]``.
    discrete : bool
        Use the eigenvalues ``(4/h^2) sin^2(i pi h / (2L))`` of ``-L_h`` (default),
        so that ``alpha_frac = 1`` reproduces the finite-difference operator
        exactly. Otherwise use the continuum values ``(i pi / L)^2``.
    """

    def __init__(self, grid, alpha_frac=1.0, discrete=True):
        if not (0.0 < alpha_frac <= 1.0):
            raise ParamOutOfRange("alpha_frac", alpha_frac, "0 < alpha_frac <= 1")
        self.grid = grid
        self.alpha_frac = float(alpha_frac)
        self.discrete = bool(discrete)
        i = np.arange(1, grid.n + 1)
        if discrete:
            lam1 = 4.0 / grid.h**2 * np.sin(i * np.pi * grid.h / (2.0 * grid.length)) ** 2
        else:
            lam1 = (i * np.pi / grid.length) ** 2
        self.base_eigenvalues_1d = lam1
        lam = lam1 if grid.dim == 1 else (lam1[:, None] + lam1[None, :]).ravel()
        self.base_eigenvalues = lam
        self.eigenvalues = lam**self.alpha_frac
        self._scale = grid.h * np.sqrt(2.0 / grid.length) / 2.0

    def _shape(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.grid.size:
            raise DimensionMismatch(f"vector of length {x.shape[-1]} on a grid with {self.grid.size} nodes")
        if self.grid.dim == 2:
            return x.reshape(x.shape[:-1] + (self.grid.n, self.grid.n))
        return x

    def forward(self, x):
        """Coefficients ``x_hat_i = sum_j h^dim x_j e_i(x_j)``."""
        X = self._shape(x)
        if self.grid.dim == 1:
            return self._scale * dst(X, type=1, axis=-1)
        c = self._scale**2 * dst(dst(X, type=1, axis=-1), type=1, axis=-2)
        return c.reshape(c.shape[:-2] + (-1,))

    def inverse(self, c):
        """Nodal values from coefficients (inverse of :meth:`forward`)."""
        c = np.asarray(c, dtype=float)
        if self.grid.dim == 1:
            return idst(c, type=1, axis=-1) / self._scale
        C = c.reshape(c.shape[:-1] + (self.grid.n, self.grid.n))
        x = idst(idst(C, type=1, axis=-1), type=1, axis=-2) / self._scale**2
        return x.reshape(x.shape[:-2] + (-1,))

    def eigenvector(self, index):
        """Nodal values of the eigenvector with linear (flattened) index."""
        c = np.zeros(self.grid.size)
        c[index] = 1.0
        return self.inverse(c)

    def apply_power(self, x, power=1.0):
        """``(-L)^(alpha_frac * power) x`` spectrally."""
        return self.inverse(self.eigenvalues**power * self.forward(x))

    def matrix(self, power=1.0):
        """Dense matrix of ``(-L)^(alpha_frac * power)``."""
        return self.apply_power(np.eye(self.grid.size), power).T


def h_inner(basis, x, y):
    """Inner product ``sum_i lam_i^(-alpha_frac) x_hat_i y_hat_i``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise DimensionMismatch(f"shapes {x.shape} and {y.shape} differ")
    return float(np.sum(basis.forward(x) * basis.forward(y) / basis.eigenvalues))


# --------------------------------------------------------------------------
# operator model


def _as_time_fn(value):
    if callable(value):
        return value
    c = float(value)
    return lambda t: c


def _sup_on(fn, horizon=10.0, samples=201):
    return float(max(fn(t) for t in np.linspace(0.0, horizon, samples)))


def _inf_on(fn, horizon=10.0, samples=201):
    return float(min(fn(t) for t in np.linspace(0.0, horizon, samples)))


@dataclass(frozen=True)
class OperatorModel:
    """A discrete operator ``A(t, u)`` with its Jacobian and declared constants.

    ``constants`` holds ``alpha`` (growth exponent), ``delta`` (coercivity),
    ``C1`` (monotonicity defect) and ``C2`` (lower-order constant).
    ``pairing`` is ``"l2"`` (cell-volume weighted nodal) or ``"h_minus_one"``
    (spectral, :func:`h_inner`). ``pointwise`` marks operators acting node by
    node, which can be stacked over many independent states.
    """

    name: str
    apply_fn: Callable = field(repr=False)
    jacobian_fn: Callable = field(repr=False)
    constants: dict
    size: int
    pairing: str = "l2"
    weight: float = 1.0
    basis: Optional[EigenBasis] = field(default=None, repr=False)
    v_norm_fn: Optional[Callable] = field(default=None, repr=False)
    dual_norm_fn: Optional[Callable] = field(default=None, repr=False)
    pointwise: bool = False
    params: dict = field(default_factory=dict)
    norm_fn: Optional[Callable] = field(default=None, repr=False)

    def apply(self, t, u):
        return self.apply_fn(t, np.asarray(u, dtype=float))

    def jacobian(self, t, u):
        return self.jacobian_fn(t, np.asarray(u, dtype=float))

    @property
    def C1(self):
        return float(self.constants.get("C1", 0.0))

    def inner(self, x, y):
        """The H inner product used for monotonicity tests and residuals."""
        if self.pairing == "h_minus_one":
            return h_inner(self.basis, x, y)
        return float(self.weight * np.dot(np.ravel(x), np.ravel(y)))

    def norm_H(self, x):
        if self.norm_fn is not None:
            return float(self.norm_fn(np.asarray(x, dtype=float)))
        return float(np.sqrt(max(self.inner(x, x), 0.0)))

    def norm_V(self, x):
        if self.v_norm_fn is None:
            return self.norm_H(x)
        return float(self.v_norm_fn(np.asarray(x, dtype=float)))

    def dual_norm(self, a):
        """Norm of ``w -> <a, w>`` (with the operator's pairing) on ``V``."""
        if self.dual_norm_fn is None:
            return self.norm_H(a)
        return float(self.dual_norm_fn(np.asarray(a, dtype=float)))

    def shifted(self, c):
        """``A + c I``, with the monotonicity defect reduced by ``c``."""
        const = dict(self.constants)
        const["C1"] = max(self.C1 - c, 0.0)
        eye = sp.identity(self.size, format="csr")

        def apply(t, u):
            return self.apply_fn(t, u) + c * u

        def jac(t, u):
            return _as_sparse(self.jacobian_fn(t, u)) + c * eye

        return OperatorModel(
            f"{self.name}+{c:g}I", apply, jac, const, self.size, self.pairing, self.weight, self.basis,
            self.v_norm_fn, self.dual_norm_fn, self.pointwise, dict(self.params), self.norm_fn,
        )


def _as_sparse(J):
    return J if sp.issparse(J) else sp.csr_matrix(np.atleast_2d(J))


def _lq_norm(weight, q):
    return lambda x: (weight * np.sum(np.abs(x) ** q)) ** (1.0 / q)


# --------------------------------------------------------------------------
# porous medium and fast diffusion


def _diffusion_model(name, grid, psi, dpsi, h_t, g_t, alpha_frac, pairing, discrete, exponent, params, C1=None):
    basis = EigenBasis(grid, alpha_frac, discrete)
    h_fn, g_fn = _as_time_fn(h_t), _as_time_fn(g_t)
    if alpha_frac == 1.0 and discrete:
        Lmat = -dirichlet_laplacian(grid)
        spatial = lambda x: Lmat @ x  # noqa: E731
        spatial_matrix = Lmat
    else:
        spatial = basis.apply_power
        spatial_matrix = sp.csr_matrix(basis.matrix())

    def apply(t, u):
        return h_fn(t) * spatial(psi(u)) - g_fn(t) * u

    def jac(t, u):
        return (h_fn(t) * spatial_matrix @ sp.diags(dpsi(u)) - g_fn(t) * sp.identity(grid.size)).tocsr()

    if C1 is None:
        C1 = max(_sup_on(g_fn), 0.0)
    const = {"alpha": exponent + 1.0, "delta": _inf_on(h_fn), "C1": C1, "C2": C1}
    q = exponent + 1.0
    vol = grid.cell_volume
    v_norm = _lq_norm(vol, q)

    def dual(a):
        # <a, w>_H = <(-L)^(-a) a, w>_{L2}; the dual of L^q is L^{q'}
        rep = basis.apply_power(a, -1.0) if pairing == "h_minus_one" else a
        qd = q / (q - 1.0)
        return (vol * np.sum(np.abs(rep) ** qd)) ** (1.0 / qd)

    return OperatorModel(name, apply, jac, const, grid.size, pairing, vol, basis, v_norm, dual, False, params)


def porous_medium_operator(grid, r=2.0, h_t=1.0, g_t=0.0, alpha_frac=1.0, pairing="h_minus_one", discrete=True, C1=None):
    """``A(t, u) = h(t) (-L)^alpha_frac Psi(u) - g(t) u`` with ``Psi(s) = s|s|^(r-1)``.

    ``h_t`` and ``g_t`` are numbers or callables of time. The declared
    monotonicity defect is ``C1 = max(sup g, 0)`` (sampled on ``[0, 10]``
    for callables) unless given.

    Raises
    ------
    BadExponent
        If ``r < 1``; use :func:`fast_diffusion_operator`.
    """
    r = float(r)
    if r < 1.0:
        raise BadExponent(f"r={r} < 1 is fast diffusion; use fast_diffusion_operator")

    def psi(u):
        return u * np.abs(u) ** (r - 1.0)

    def dpsi(u):
        return r * np.abs(u) ** (r - 1.0)

    params = {"r": r, "alpha_frac": alpha_frac}
    return _diffusion_model("porous_medium", grid, psi, dpsi, h_t, g_t, alpha_frac, pairing, discrete, r, params, C1)


def fast_diffusion_operator(grid, r=0.5, h_t=1.0, eps_reg=1e-8, scale=1.0, g_t=0.0, alpha_frac=1.0, pairing="h_minus_one", discrete=True, clamp=1e-12, C1=None):
    """Fast diffusion with ``Psi(s) = scale * s (s^2 + eps^2)^((r-1)/2)``, ``0 < r < 1``.

    For ``eps_reg = 0`` the derivative ``Psi'(0)`` is clamped at
    ``|s| = clamp``.
    """
    r = float(r)
    if not (0.0 < r < 1.0):
        raise ParamOutOfRange("r", r, "0 < r < 1")
    if eps_reg < 0:
        raise ParamOutOfRange("eps_reg", eps_reg, "eps_reg >= 0")
    e2 = float(eps_reg) ** 2

    def psi(u):
        if e2 == 0.0:
            return scale * np.sign(u) * np.abs(u) ** r
        return scale * u * (u * u + e2) ** ((r - 1.0) / 2.0)

    def dpsi(u):
        s2 = u * u
        if e2 == 0.0:
            return scale * r * np.maximum(np.abs(u), clamp) ** (r - 1.0)
        return scale * (s2 + e2) ** ((r - 3.0) / 2.0) * (e2 + r * s2)

    params = {"r": r, "eps_reg": eps_reg, "scale": scale, "alpha_frac": alpha_frac}
    model = _diffusion_model("fast_diffusion", grid, psi, dpsi, h_t, g_t, alpha_frac, pairing, discrete, r, params, C1)
    object.__setattr__(model, "psi_fn", psi)
    return model


# --------------------------------------------------------------------------
# p-Laplace


def _gradient_operators(grid):
    """Sparse gradient maps and element weights.

    1D: face differences (one "element" per face, weight h).
    2D: two right triangles per square cell, weight h^2/2, gradient rows
    ``(Gx, Gy)`` acting on interior nodes.
    """
    n, h = grid.n, grid.h
    if grid.dim == 1:
        D = sp.diags([-np.ones(n), np.ones(n)], [-1, 0], shape=(n + 1, n)) / h
        return [D.tocsr()], np.full(n + 1, h)
    m = n + 2  # nodes including boundary
    interior = -np.ones((m, m), dtype=int)
    interior[1:-1, 1:-1] = np.arange(n * n).reshape(n, n)
    rows_x, cols_x, vals_x = [], [], []
    rows_y, cols_y, vals_y = [], [], []
    tri = 0
    for i in range(m - 1):
        for j in range(m - 1):
            p00, p10, p01, p11 = (i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)
            # lower triangle (p00, p10, p01): grad = ((u10-u00)/h, (u01-u00)/h)
            # upper triangle (p11, p01, p10): grad = ((u11-u01)/h, (u11-u10)/h)
            for gx, gy in (
                (((p10, 1.0), (p00, -1.0)), ((p01, 1.0), (p00, -1.0))),
                (((p11, 1.0), (p01, -1.0)), ((p11, 1.0), (p10, -1.0))),
            ):
                for (node, s) in gx:
                    idx = interior[node]
                    if idx >= 0:
                        rows_x.append(tri), cols_x.append(idx), vals_x.append(s / h)
                for (node, s) in gy:
                    idx = interior[node]
                    if idx >= 0:
                        rows_y.append(tri), cols_y.append(idx), vals_y.append(s / h)
                tri += 1
    Gx = sp.csr_matrix((vals_x, (rows_x, cols_x)), shape=(tri, n * n))
    Gy = sp.csr_matrix((vals_y, (rows_y, cols_y)), shape=(tri, n * n))
    return [Gx, Gy], np.full(tri, 0.5 * h * h)


def p_laplace_operator(grid, p=2.0, h_t=1.0, reaction=0.0, reaction_deriv=None, eps_reg=1e-8, C1=None):
    """``A(t, u) = -div(h(t) |grad u|_eps^(p-2) grad u) - f(t, u)``.

    The divergence form is the gradient of the discrete energy
    ``sum_e w_e |grad_e u|_eps^p / p`` divided by the cell volume, so that the
    nodal pairing ``<A(x) - A(y), x - y>`` is a sum of nonnegative element
    terms.

    ``reaction`` is either a number ``c`` (``f(t, s) = c s``) or a callable
    ``f(t, s)``; in the latter case ``reaction_deriv(t, s)`` and ``C1`` (a
    one-sided Lipschitz bound of ``f``) should be supplied.
    """
    p = float(p)
    if p < 2.0:
        raise ParamOutOfRange("p", p, "p >= 2")
    if eps_reg < 0:
        raise ParamOutOfRange("eps_reg", eps_reg, "eps_reg >= 0")
    grads, we = _gradient_operators(grid)
    vol = grid.cell_volume
    e2 = float(eps_reg) ** 2
    h_fn = _as_time_fn(h_t)
    if callable(reaction):
        f_fn = reaction
        df_fn = reaction_deriv if reaction_deriv is not None else (lambda t, s: np.zeros_like(s))
        c1 = float(C1 if C1 is not None else 0.0)
    else:
        c = float(reaction)
        f_fn = lambda t, s: c * s  # noqa: E731
        df_fn = lambda t, s: np.full_like(s, c)  # noqa: E731
        c1 = max(c, 0.0) if C1 is None else float(C1)

    def flux_parts(u):
        g = [G @ u for G in grads]
        mag2 = sum(gi * gi for gi in g) + e2
        return g, mag2

    def apply(t, u):
        g, mag2 = flux_parts(u)
        coef = h_fn(t) * mag2 ** ((p - 2.0) / 2.0) * we
        out = sum(G.T @ (coef * gi) for G, gi in zip(grads, g)) / vol
        return out - f_fn(t, u)

    def jac(t, u):
        g, mag2 = flux_parts(u)
        ht = h_fn(t)
        base = ht * mag2 ** ((p - 2.0) / 2.0) * we
        if p != 2.0:
            # the product with grad_a grad_b vanishes where the gradient does
            safe = np.where(mag2 > 0, mag2, 1.0)
            extra = np.where(mag2 > 0, ht * (p - 2.0) * safe ** ((p - 4.0) / 2.0), 0.0) * we
        else:
            extra = np.zeros_like(mag2)
        J = None
        for a, (Ga, ga) in enumerate(zip(grads, g)):
            for b, (Gb, gb) in enumerate(zip(grads, g)):
                d = extra * ga * gb + (base if a == b else 0.0)
                term = Ga.T @ sp.diags(d) @ Gb
                J = term if J is None else J + term
        return (J / vol - sp.diags(df_fn(t, u))).tocsr()

    def v_norm(x):
        g = [G @ x for G in grads]
        mag = np.sqrt(sum(gi * gi for gi in g))
        return float(np.sum(we * mag**p) ** (1.0 / p))

    def dual(a):
        # sup_w <a, w> / |w|_V: minimise |w|_V^p / p - <a, w>; at the optimum
        # the supremum equals |w*|_V^(p-1)
        if not np.any(a):
            return 0.0

        def energy(w):
            g = [G @ w for G in grads]
            mag2 = sum(gi * gi for gi in g)
            val = np.sum(we * mag2 ** (p / 2.0)) / p - vol * np.dot(a, w)
            coef = we * mag2 ** ((p - 2.0) / 2.0)
            grad = sum(G.T @ (coef * gi) for G, gi in zip(grads, g)) - vol * a
            return val, grad

        res = minimize(energy, np.zeros_like(a), jac=True, method="L-BFGS-B", options={"maxiter": 2000, "gtol": 1e-12, "ftol": 1e-15})
        return float(v_norm(res.x) ** (p - 1.0))

    const = {"alpha": p, "delta": _inf_on(h_fn), "C1": c1, "C2": c1}
    params = {"p": p, "eps_reg": eps_reg}
    return OperatorModel("p_laplace", apply, jac, const, grid.size, "l2", vol, None, v_norm, dual, False, params)


# --------------------------------------------------------------------------
# pointwise models


def pointwise_operator(func, deriv, size=1, C1=0.0, alpha=2.0, delta=1.0, C2=None, name="pointwise", params=None):
    """Node-wise operator ``A(t, u)_i = func(t, u_i)`` with Euclidean pairing.

    The model can be evaluated on vectors of any length, which lets the
    solver stack many independent states into one system.
    """

    def apply(t, u):
        return np.asarray(func(t, u), dtype=float)

    def jac(t, u):
        return sp.diags(np.asarray(deriv(t, u), dtype=float) * np.ones_like(u)).tocsr()

    const = {"alpha": float(alpha), "delta": float(delta), "C1": float(C1), "C2": float(C1 if C2 is None else C2)}
    return OperatorModel(name, apply, jac, const, int(size), "l2", 1.0, None, None, None, True, dict(params or {}))


def relaxation_operator(rate=1.0, size=1):
    """Linear relaxation ``A(u) = rate * u``."""
    rate = float(rate)
    return pointwise_operator(
        lambda t, u: rate * u,
        lambda t, u: np.full_like(u, rate),
        size,
        C1=max(-rate, 0.0),
        delta=max(rate, 0.0),
        C2=max(-rate, 0.0),
        name="relaxation",
        params={"rate": rate},
    )


def zero_operator(size=1):
    return pointwise_operator(lambda t, u: np.zeros_like(u), lambda t, u: np.zeros_like(u), size, delta=0.0, name="zero")


# --------------------------------------------------------------------------
# validation of the structural conditions


@dataclass
class HConditionReport:
    operator: str
    records: dict

    @property
    def all_pass(self):
        return all(r["pass"] for r in self.records.values())

    def to_dict(self):
        return {"operator": self.operator, "records": self.records, "all_pass": self.all_pass}


def _random_state(rng, size, scale):
    return scale * rng.standard_normal(size)


def validate_H_conditions(op, samples=100, t=0.0, tol=1e-10, seed=0, scale=1.0):
    """Sampled hemicontinuity, weak monotonicity, coercivity and growth checks.

    Returns a report with, per condition, ``pass`` and the measured constant:

    * ``H1``: modulus of ``s -> <A(v1 + s v2), v>`` shrinks under refinement;
    * ``H2``: ``<A x - A y, x - y> >= -C1 |x - y|_H^2`` with the declared C1;
      reports the empirical defect;
    * ``H3``: ``delta_emp = min (<A v, v> + C2 |v|_H^2) / |v|_V^alpha > 0``;
    * ``H4``: ``|A v|_{V*} / (1 + |v|_V^(alpha-1))`` bounded over the samples
      (empirical constant reported).
    """
    if samples < 1:
        raise ParamOutOfRange("samples", samples, "samples >= 1")
    rng = np.random.default_rng(seed)
    n = op.size
    C1 = op.C1
    C2 = float(op.constants.get("C2", C1))
    alpha = float(op.constants.get("alpha", 2.0))
    records = {}

    # H1: refine the s-grid and check the largest jump decreases
    worst_ratio = 0.0
    for _ in range(min(samples, 20)):
        v1, v2, v = (_random_state(rng, n, scale) for _ in range(3))
        jumps = []
        for level in (4, 8):
            s = np.linspace(0.0, 1.0, 2**level + 1)
            vals = np.array([op.inner(op.apply(t, v1 + si * v2), v) for si in s])
            jumps.append(np.max(np.abs(np.diff(vals))))
        ratio = jumps[1] / jumps[0] if jumps[0] > tol else 0.0
        worst_ratio = max(worst_ratio, ratio)
    records["H1"] = {"pass": bool(worst_ratio <= 0.5), "jump_ratio": float(worst_ratio)}

    # H2: weak monotonicity
    worst = np.inf
    for _ in range(samples):
        x, y = _random_state(rng, n, scale), _random_state(rng, n, scale)
        d = x - y
        nd = op.inner(d, d)
        if nd <= 0:
            continue
        m = op.inner(op.apply(t, x) - op.apply(t, y), d) / nd
        worst = min(worst, m)
    c1_emp = max(0.0, -worst)
    records["H2"] = {"pass": bool(worst >= -C1 - tol * max(1.0, abs(worst))), "C1_declared": C1, "C1_empirical": float(c1_emp), "min_ratio": float(worst)}

    # H3: coercivity
    delta_emp = np.inf
    for _ in range(samples):
        v = _random_state(rng, n, scale * rng.uniform(0.1, 10.0))
        nv = op.norm_V(v)
        if nv <= 0:
            continue
        delta_emp = min(delta_emp, (op.inner(op.apply(t, v), v) + C2 * op.inner(v, v)) / nv**alpha)
    records["H3"] = {"pass": bool(delta_emp > tol), "delta_empirical": float(delta_emp), "C2": C2}

    # H4: growth
    growth = 0.0
    for _ in range(min(samples, 30)):
        v = _random_state(rng, n, scale * rng.uniform(0.1, 10.0))
        nv = op.norm_V(v)
        growth = max(growth, op.dual_norm(op.apply(t, v)) / (1.0 + nv ** (alpha - 1.0)))
    records["H4"] = {"pass": bool(np.isfinite(growth)), "C_growth_empirical": float(growth)}
    return HConditionReport(op.name, records)

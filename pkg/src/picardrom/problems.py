"""Built-in finite-difference demo problems.

Two coupled demos exercise the accelerated driver: a reaction-diffusion pair
on the unit square (linear couplings, homogeneous Dirichlet walls) and a
quasi-linear thermal-flow surrogate on a 2 x 6 vertical channel, where a
scalar vertical-velocity diffusion equation with a temperature-dependent
viscosity and Boussinesq forcing is coupled to an upwinded heat
advection-diffusion equation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import coupling, numerics
from .driver import CoupledProblem, FixedConstants
from .errors import (
    ConfigError,
    MissingDerivativeBounds,
    NonPositiveDiffusion,
    ViscosityOutOfRange,
)

GRAVITY = 9.81


@dataclass(frozen=True)
class Grid2D:
    """Uniform interior-node grid on a rectangle (nodes exclude the boundary)."""

    nx: int
    ny: int
    width: float = 1.0
    height: float = 1.0

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise ConfigError("grid needs at least 3 interior points per direction")
        if self.width <= 0 or self.height <= 0:
            raise ConfigError("domain extents must be positive")

    @property
    def hx(self) -> float:
        return self.width / (self.nx + 1)

    @property
    def hy(self) -> float:
        return self.height / (self.ny + 1)

    @property
    def n(self) -> int:
        return self.nx * self.ny

    def xcoords(self) -> np.ndarray:
        return self.hx * np.arange(1, self.nx + 1)

    def ycoords(self) -> np.ndarray:
        return self.hy * np.arange(1, self.ny + 1)

    def meshgrid(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinates as (nx*ny,) flattened arrays, x fastest."""
        xs, ys = np.meshgrid(self.xcoords(), self.ycoords(), indexing="xy")
        return xs.ravel(), ys.ravel()

    def index(self, i: int, j: int) -> int:
        """Flat index of interior node (i, j), both 1-based, x fastest."""
        return (j - 1) * self.nx + (i - 1)


def _harmonic(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return 2.0 * a * b / (a + b)


def diffusion_operator(grid: Grid2D, d: np.ndarray, bc: dict):
    """Assemble -div(d grad u) on interior nodes with per-side conditions.

    ``bc`` maps side names "south"/"north"/"west"/"east" to either
    ("dirichlet", values) where values is a scalar or an array along the side,
    or ("neumann", flux) with the prescribed conormal flux d*du/dn (scalar).
    Returns (A, F_bc) with boundary contributions already moved to F_bc.
    """
    d = np.broadcast_to(np.asarray(d, dtype=float), (grid.n,))
    if np.min(d) <= 0.0:
        raise NonPositiveDiffusion("diffusion field must be strictly positive")
    nx, ny = grid.nx, grid.ny
    hx2, hy2 = grid.hx**2, grid.hy**2
    a = np.zeros((grid.n, grid.n))
    f = np.zeros(grid.n)

    def side_values(side: str, count: int):
        kind, val = bc[side]
        vals = np.broadcast_to(np.asarray(val, dtype=float), (count,))
        return kind, vals

    for j in range(1, ny + 1):
        for i in range(1, nx + 1):
            n = grid.index(i, j)
            dn = d[n]
            # west
            if i > 1:
                m = grid.index(i - 1, j)
                w = _harmonic(dn, d[m]) / hx2
                a[n, n] += w
                a[n, m] -= w
            else:
                kind, vals = side_values("west", ny)
                if kind == "dirichlet":
                    w = dn / hx2
                    a[n, n] += w
                    f[n] += w * vals[j - 1]
                else:  # neumann: conormal flux d*du/dn prescribed
                    f[n] += float(vals[j - 1]) / grid.hx
            # east
            if i < nx:
                m = grid.index(i + 1, j)
                w = _harmonic(dn, d[m]) / hx2
                a[n, n] += w
                a[n, m] -= w
            else:
                kind, vals = side_values("east", ny)
                if kind == "dirichlet":
                    w = dn / hx2
                    a[n, n] += w
                    f[n] += w * vals[j - 1]
                else:
                    f[n] += float(vals[j - 1]) / grid.hx
            # south
            if j > 1:
                m = grid.index(i, j - 1)
                w = _harmonic(dn, d[m]) / hy2
                a[n, n] += w
                a[n, m] -= w
            else:
                kind, vals = side_values("south", nx)
                if kind == "dirichlet":
                    w = dn / hy2
                    a[n, n] += w
                    f[n] += w * vals[i - 1]
                else:
                    f[n] += float(vals[i - 1]) / grid.hy
            # north
            if j < ny:
                m = grid.index(i, j + 1)
                w = _harmonic(dn, d[m]) / hy2
                a[n, n] += w
                a[n, m] -= w
            else:
                kind, vals = side_values("north", nx)
                if kind == "dirichlet":
                    w = dn / hy2
                    a[n, n] += w
                    f[n] += w * vals[i - 1]
                else:
                    f[n] += float(vals[i - 1]) / grid.hy
    return a, f


def upwind_advection(grid: Grid2D, u: np.ndarray, inflow_value: float = 0.0):
    """First-order upwind discretization of ``u * dtheta/dy``.

    Vertical velocity only. Returns (A_adv, F_adv); the Dirichlet inlet value
    at the south boundary contributes to F_adv for upward flow, and the
    outlet uses a zero-gradient ghost for downward flow.
    """
    u = np.broadcast_to(np.asarray(u, dtype=float), (grid.n,))
    nx, ny = grid.nx, grid.ny
    hy = grid.hy
    a = np.zeros((grid.n, grid.n))
    f = np.zeros(grid.n)
    for j in range(1, ny + 1):
        for i in range(1, nx + 1):
            n = grid.index(i, j)
            un = u[n]
            if un > 0.0:
                a[n, n] += un / hy
                if j > 1:
                    a[n, grid.index(i, j - 1)] -= un / hy
                else:
                    f[n] += un / hy * inflow_value
            elif un < 0.0:
                if j < ny:
                    a[n, n] -= un / hy
                    a[n, grid.index(i, j + 1)] += un / hy
                # at the outlet the zero-gradient ghost cancels the term
    return a, f


@dataclass
class ReactionDiffusionPair:
    """Two diffusion equations coupled through their reactive right-hand sides.

    The alternate scheme lags both arguments for the first equation and uses
    the fresh first solution for the second:
    f1 is evaluated at (y1^k, y2^k), f2 at (y1^{k+1}, y2^k).
    """

    grid: Grid2D
    d1: np.ndarray
    d2: np.ndarray
    f1: Callable[[np.ndarray, np.ndarray], np.ndarray]
    f2: Callable[[np.ndarray, np.ndarray], np.ndarray]
    # sup-norm bounds on |df_i / dy_j|: ((b11, b12), (b21, b22)), optional
    df_bounds: tuple[tuple[float, float], tuple[float, float]] | None = None

    def __post_init__(self):
        self.d1 = np.broadcast_to(np.asarray(self.d1, dtype=float), (self.grid.n,))
        self.d2 = np.broadcast_to(np.asarray(self.d2, dtype=float), (self.grid.n,))
        if np.min(self.d1) <= 0.0 or np.min(self.d2) <= 0.0:
            raise NonPositiveDiffusion("diffusion fields must be strictly positive")


def assemble_rd_system(pair: ReactionDiffusionPair, which: int,
                       y1: np.ndarray, y2: np.ndarray):
    """Matrix and right-hand side of one equation of the pair."""
    if which not in (1, 2):
        raise ConfigError("which must be 1 or 2")
    bc = {s: ("dirichlet", 0.0) for s in ("south", "north", "west", "east")}
    d = pair.d1 if which == 1 else pair.d2
    a, f_bc = diffusion_operator(pair.grid, d, bc)
    source = pair.f1(y1, y2) if which == 1 else pair.f2(y1, y2)
    return a, np.broadcast_to(np.asarray(source, dtype=float), (pair.grid.n,)) + f_bc


def rectangle_poincare_constant(width: float, height: float) -> float:
    """Poincare constant of a W x H rectangle (from the first Dirichlet eigenvalue)."""
    return 1.0 / (math.pi * math.sqrt(1.0 / width**2 + 1.0 / height**2))


def kappa_analytic(pair: ReactionDiffusionPair) -> float:
    """Analytic contraction estimate for the pair's Picard iteration."""
    if pair.df_bounds is None:
        raise MissingDerivativeBounds("kappa_analytic needs df_bounds")
    c_p = rectangle_poincare_constant(pair.grid.width, pair.grid.height)
    total = sum(pair.df_bounds[0]) + sum(pair.df_bounds[1])
    d_min = min(float(np.min(pair.d1)), float(np.min(pair.d2)))
    return c_p**2 * total / d_min


@dataclass
class LinearRdParams:
    """Parameters of the default linearly-coupled reaction-diffusion demo."""

    n: int = 32
    diffusion: float = 0.02
    s12: float = 0.15   # df1/dy2
    s21: float = 0.15   # df2/dy1
    q1: float = 1.0
    q2: float = 0.5


def linear_rd_pair(params: LinearRdParams | None = None) -> ReactionDiffusionPair:
    """Default demo pair: f1 = s12*y2 + q1, f2 = s21*y1 + q2."""
    p = params or LinearRdParams()
    grid = Grid2D(nx=p.n, ny=p.n, width=1.0, height=1.0)
    pair = ReactionDiffusionPair(
        grid=grid,
        d1=p.diffusion,
        d2=p.diffusion,
        f1=lambda y1, y2: p.s12 * y2 + p.q1,
        f2=lambda y1, y2: p.s21 * y1 + p.q2,
        df_bounds=((0.0, p.s12), (p.s21, 0.0)),
    )
    pair.params = p
    return pair


@dataclass
class ThermalFlowSurrogate:
    """Scalar vertical-velocity / temperature coupling on a heated channel.

    The velocity equation keeps the exponential viscosity law and the
    Boussinesq forcing of the mixed formulation it replaces; the temperature
    equation advects with the computed velocity. Flow enters at the bottom
    with a parabolic profile and leaves at the top.
    """

    grid: Grid2D = field(default_factory=lambda: Grid2D(16, 48, width=2.0, height=6.0))
    beta: float = 0.1
    visc_a: float = 0.005
    visc_b: float = 20.0
    visc_c: float = -9.0
    k_t: float = 0.04
    theta_wall: float = 0.12
    theta_in: float = 0.0
    theta_margin: float = 0.5

    def viscosity(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if np.any(theta <= self.visc_c + self.theta_margin):
            raise ViscosityOutOfRange(
                f"temperature reached the viscosity singularity near {self.visc_c}"
            )
        return self.visc_a * np.exp(self.visc_b / (theta - self.visc_c))

    def inlet_profile(self) -> np.ndarray:
        x = self.grid.xcoords()
        return 1.8 * x * (2.0 - x)


def assemble_flow(surrogate: ThermalFlowSurrogate, theta: np.ndarray):
    """Vertical-velocity equation: -div(nu(theta) grad u) = beta*g*theta."""
    nu = surrogate.viscosity(theta)
    bc = {
        "south": ("dirichlet", surrogate.inlet_profile()),
        "north": ("neumann", 0.0),
        "west": ("dirichlet", 0.0),
        "east": ("dirichlet", 0.0),
    }
    a, f_bc = diffusion_operator(surrogate.grid, nu, bc)
    forcing = surrogate.beta * GRAVITY * np.asarray(theta, dtype=float)
    return a, forcing + f_bc


def assemble_heat(surrogate: ThermalFlowSurrogate, u: np.ndarray):
    """Temperature equation: -k_T lap(theta) + u dtheta/dy = 0, heated walls."""
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ValueError("velocity field must be finite")
    bc = {
        "south": ("dirichlet", surrogate.theta_in),
        "north": ("neumann", 0.0),
        "west": ("neumann", surrogate.theta_wall),
        "east": ("neumann", surrogate.theta_wall),
    }
    a_diff, f_bc = diffusion_operator(surrogate.grid, surrogate.k_t, bc)
    a_adv, f_adv = upwind_advection(surrogate.grid, u, inflow_value=surrogate.theta_in)
    return a_diff + a_adv, f_bc + f_adv


@dataclass
class ScalarToy:
    """One-dimensional affine map ``G(x) = rate * x + source`` via a 1x1 system."""

    rate: float = 0.5
    source: float = 0.0
    x0: float = 1.0


def _split(x: np.ndarray, dims: tuple[int, ...]) -> list[np.ndarray]:
    out, off = [], 0
    for d in dims:
        out.append(x[off:off + d])
        off += d
    return out


def make_coupled_problem(spec, exact_constants: bool = False) -> CoupledProblem:
    """Wire a demo specification into a CoupledProblem (Picard combiner).

    ``exact_constants`` (linear reaction-diffusion pair only) computes the
    exact operator-norm constants so the error bounds are rigorous.
    """
    if isinstance(spec, ReactionDiffusionPair):
        return _make_rd_problem(spec, exact_constants)
    if isinstance(spec, ThermalFlowSurrogate):
        if exact_constants:
            raise ConfigError("exact constants unavailable for the quasi-linear surrogate")
        return _make_thermal_problem(spec)
    if isinstance(spec, ScalarToy):
        if exact_constants:
            return _make_scalar_problem(spec, exact=True)
        return _make_scalar_problem(spec, exact=False)
    raise ConfigError(f"unsupported problem spec {type(spec).__name__}")


def _make_rd_problem(pair: ReactionDiffusionPair, exact_constants: bool) -> CoupledProblem:
    n = pair.grid.n
    dims = (n, n)

    def assemble_1(x, ys):
        y1k, y2k = _split(x, dims)
        return assemble_rd_system(pair, 1, y1k, y2k)

    def assemble_2(x, ys):
        _, y2k = _split(x, dims)
        return assemble_rd_system(pair, 2, ys[0], y2k)

    def combiner(x, ys):
        return np.concatenate(ys)

    graph = coupling.make_graph(2, l_consts=[0.0, 1.0, 1.0])
    problem = CoupledProblem(
        p=2, block_dims=dims, assemblers=(assemble_1, assemble_2),
        combiner=combiner, graph=graph, x0=np.zeros(2 * n),
        name="reaction-diffusion",
    )
    if exact_constants:
        _attach_rd_exact_constants(pair, problem)
    return problem


def spd_inverse_norm(a: np.ndarray, iters: int = 300, seed: int = 0) -> float:
    """||A^{-1}||_2 for symmetric positive definite A, by inverse power iteration."""
    factors = numerics.lu_factorize(a)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(a.shape[0])
    v /= numerics.norm2(v)
    est = 0.0
    for _ in range(iters):
        w = numerics.lu_apply(factors, v)
        est = numerics.norm2(w)
        v = w / est
    return est * (1.0 + 1e-9)


def operator_norm(matvec, rmatvec, n: int, iters: int = 300, seed: int = 0) -> float:
    """Largest singular value of a linear map given by mat-vec callables."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= numerics.norm2(v)
    est = 0.0
    for _ in range(iters):
        w = rmatvec(matvec(v))
        est = math.sqrt(numerics.norm2(w))
        v = w / (est * est)
    return est * (1.0 + 1e-9)


def _attach_rd_exact_constants(pair: ReactionDiffusionPair,
                               problem: CoupledProblem) -> None:
    """Exact K constants and inverse norms for the linear demo pair.

    Only valid when the pair's couplings are linear (f1 = s12*y2 + q1,
    f2 = s21*y1 + q2, as built by :func:`linear_rd_pair`); the Lipschitz bound
    is the contraction bound of the exact graph, an upper bound on the true
    constant of G.
    """
    params = getattr(pair, "params", None)
    if params is None:
        raise ConfigError("exact constants require the linear_rd_pair demo")
    n = pair.grid.n
    zero = np.zeros(n)
    a1, _ = assemble_rd_system(pair, 1, zero, zero)
    a2, _ = assemble_rd_system(pair, 2, zero, zero)
    m1 = spd_inverse_norm(a1)
    m2 = spd_inverse_norm(a2)
    k10 = params.s12 * m1
    k21 = params.s21 * m2
    graph = coupling.make_graph(
        2, k_entries={(1, 0): k10, (2, 1): k21}, l_consts=[0.0, 1.0, 1.0])
    problem.graph = graph
    problem.fixed_constants = FixedConstants(
        inv_norms=(m1, m2), lipschitz=coupling.contraction_bound(graph))


def _make_thermal_problem(surrogate: ThermalFlowSurrogate) -> CoupledProblem:
    n = surrogate.grid.n
    dims = (n, n)

    def assemble_1(x, ys):
        _, theta = _split(x, dims)
        return assemble_flow(surrogate, theta)

    def assemble_2(x, ys):
        return assemble_heat(surrogate, ys[0])

    def combiner(x, ys):
        return np.concatenate(ys)

    graph = coupling.make_graph(2, l_consts=[0.0, 1.0, 1.0])
    return CoupledProblem(
        p=2, block_dims=dims, assemblers=(assemble_1, assemble_2),
        combiner=combiner, graph=graph, x0=np.zeros(2 * n),
        name="thermal-flow",
    )


def _make_scalar_problem(toy: ScalarToy, exact: bool) -> CoupledProblem:
    def assemble_1(x, ys):
        return np.array([[1.0]]), np.array([toy.rate * x[0] + toy.source])

    def combiner(x, ys):
        return ys[0].copy()

    rate = abs(toy.rate)
    graph = coupling.make_graph(1, k_entries={(1, 0): rate}, l_consts=[0.0, 1.0])
    problem = CoupledProblem(
        p=1, block_dims=(1,), assemblers=(assemble_1,), combiner=combiner,
        graph=graph, x0=np.array([toy.x0]), name="scalar-toy",
    )
    if exact:
        problem.fixed_constants = FixedConstants(inv_norms=(1.0,), lipschitz=rate)
    return problem

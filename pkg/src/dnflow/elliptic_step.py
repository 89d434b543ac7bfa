"""One implicit time step solved as a convex minimization problem.

The step equation

    beta(u)/tau - div alpha(x, grad u) = g

is the stationarity condition of

    E(u) = (1/tau) sum_i j(u_i) h^d + sum_faces a(x_f, (Gu)_f) h^d
           - sum_i g_i u_i h^d,

which is convex because j and a are.  The solver is damped Newton on the
gradient of E with an Armijo line search; trial points outside the open
domain of beta are rejected by the line search (halving the step), which is
all the barrier a graph like tan needs because its primitive blows up there
anyway.  The Armijo comparison carries a rounding allowance scaled by the
term magnitudes: near the minimizer the true energy decrease of a full
Newton step falls below the cancellation noise of E, and without the
allowance the search settles for damped steps and the residual stalls.
When the Newton system misbehaves the iteration falls back to a gradient
step with a Barzilai-Borwein length.

The face gradient is the normal difference with ghost zeros.  In 2d with
p != 2 the tangential component is reconstructed by averaging the four
neighboring normal differences, and each face's potential then carries
weight 1/2 so the flux energy stays consistent with the volume integral.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .graphs import FluxLaw, GraphDomainError, MonotoneGraph
from .grid import Grid, GridField, GridError

__all__ = [
    "StepProblem",
    "StepSolution",
    "StepSolveError",
    "OracleError",
    "step_energy",
    "step_residual",
    "solve_step",
    "oracle_scalar_solve",
    "elliptic_operator",
    "potential_integral",
    "DEFAULT_STEP_TOL",
]

DEFAULT_STEP_TOL = 1e-9
MAX_NEWTON_ITERATIONS = 200
ARMIJO_SLOPE = 1e-4
ENERGY_ROUNDING = 64.0 * np.finfo(float).eps
CONTINUATION_LEVELS = (1e-2, 1e-4, 1e-6)


class StepSolveError(RuntimeError):
    """Raised when the step solver cannot reach tolerance; carries the best iterate."""

    def __init__(self, message: str, best: "StepSolution" = None):
        super().__init__(message)
        self.best = best


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class StepProblem:
    """Data of one implicit step: graph, flux law, step size, right side, start."""

    graph: MonotoneGraph
    flux: FluxLaw
    tau: float
    g: GridField
    initial_guess: GridField

    def __post_init__(self):
        if not self.tau > 0.0:
            raise GridError("step size must be positive")
        if not np.all(np.isfinite(self.g.values)):
            raise GridError("right-hand side must be finite")
        if self.g.grid != self.initial_guess.grid:
            raise GridError("right-hand side and guess live on different grids")
        if not self.graph.contains(self.initial_guess.values):
            raise GraphDomainError("initial guess leaves the open domain of the graph")


@dataclass(frozen=True)
class StepSolution:
    u_next: GridField
    residual_norm: float
    iterations: int
    energy_value: float
    converged: bool
    residual_history: tuple = field(default=(), repr=False)


# -- face operators ----------------------------------------------------------
#
# _face_operator builds, once per (grid, reconstruction) pair, the sparse
# matrix G taking cell values to the per-face gradient components, plus the
# face-center coordinates for spatially varying laws.  Component layout is
# c = 1 (normal only) or c = dim (interleaved per face).


def _difference_matrix(grid: Grid, axis: int) -> sp.coo_matrix:
    h = grid.spacing[axis]
    if grid.dim == 1:
        n = grid.cells[0]
        rows = np.concatenate([np.arange(n), np.arange(1, n + 1)])
        cols = np.concatenate([np.arange(n), np.arange(n)])
        data = np.concatenate([np.full(n, 1.0 / h), np.full(n, -1.0 / h)])
        return sp.coo_matrix((data, (rows, cols)), shape=(n + 1, n))
    nx, ny = grid.cells
    if axis == 0:
        n = nx * ny
        rows = np.concatenate([np.arange(n), ny + np.arange(n)])
        cols = np.concatenate([np.arange(n), np.arange(n)])
        data = np.concatenate([np.full(n, 1.0 / h), np.full(n, -1.0 / h)])
        return sp.coo_matrix((data, (rows, cols)), shape=((nx + 1) * ny, n))
    i, fj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    rows = np.concatenate([(i * (ny + 1) + fj).ravel(),
                           (i * (ny + 1) + fj + 1).ravel()])
    cols = np.concatenate([(i * ny + fj).ravel(), (i * ny + fj).ravel()])
    data = np.concatenate([np.full(nx * ny, 1.0 / h), np.full(nx * ny, -1.0 / h)])
    return sp.coo_matrix((data, (rows, cols)), shape=(nx * (ny + 1), nx * ny))


def _average_y_to_x(grid: Grid) -> sp.coo_matrix:
    """Quarter-weight average of the four y-faces flanking each x-face."""
    nx, ny = grid.cells
    fi, j = np.meshgrid(np.arange(nx + 1), np.arange(ny), indexing="ij")
    rows, cols = [], []
    for dc in (-1, 0):
        for dj in (0, 1):
            keep = (fi + dc >= 0) & (fi + dc <= nx - 1)
            rows.append((fi * ny + j)[keep])
            cols.append(((fi + dc) * (ny + 1) + j + dj)[keep])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    return sp.coo_matrix((np.full(rows.size, 0.25), (rows, cols)),
                         shape=((nx + 1) * ny, nx * (ny + 1)))


def _average_x_to_y(grid: Grid) -> sp.coo_matrix:
    nx, ny = grid.cells
    i, fj = np.meshgrid(np.arange(nx), np.arange(ny + 1), indexing="ij")
    rows, cols = [], []
    for di in (0, 1):
        for dr in (-1, 0):
            keep = (fj + dr >= 0) & (fj + dr <= ny - 1)
            rows.append((i * (ny + 1) + fj)[keep])
            cols.append(((i + di) * ny + fj + dr)[keep])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    return sp.coo_matrix((np.full(rows.size, 0.25), (rows, cols)),
                         shape=(nx * (ny + 1), (nx + 1) * ny))


def _face_points(grid: Grid) -> np.ndarray:
    blocks = []
    for a in range(grid.dim):
        mesh = grid.face_mesh(a)
        blocks.append(np.stack([m.ravel() for m in mesh], axis=-1))
    return np.concatenate(blocks, axis=0)


def _shift_rows(mat: sp.spmatrix, scale: int, offset: int) -> tuple:
    coo = mat.tocoo()
    return coo.row * scale + offset, coo.col, coo.data


@lru_cache(maxsize=64)
def _face_operator(grid: Grid, full: bool) -> tuple:
    n = grid.n_cells
    d_ops = [_difference_matrix(grid, a) for a in range(grid.dim)]
    n_faces = sum(op.shape[0] for op in d_ops)
    if not full:
        pieces = []
        base = 0
        for op in d_ops:
            pieces.append(_shift_rows(op, 1, base))
            base += op.shape[0]
        comps = 1
    else:
        if grid.dim != 2:
            raise GridError("full gradient reconstruction is a 2d construction")
        dx, dy = d_ops
        tx = (_average_y_to_x(grid) @ dy).tocoo()
        ty = (_average_x_to_y(grid) @ dx).tocoo()
        nxf = dx.shape[0]
        pieces = [
            _shift_rows(dx, 2, 0),
            _shift_rows(tx, 2, 1),
            _shift_rows(ty, 2, 2 * nxf),
            _shift_rows(dy, 2, 2 * nxf + 1),
        ]
        comps = 2
    rows = np.concatenate([p[0] for p in pieces])
    cols = np.concatenate([p[1] for p in pieces])
    data = np.concatenate([p[2] for p in pieces])
    G = sp.coo_matrix((data, (rows, cols)), shape=(comps * n_faces, n)).tocsr()
    weight = 1.0 / grid.dim if full else 1.0
    return G, _face_points(grid), n_faces, comps, weight


def _uses_full(law: FluxLaw, grid: Grid) -> bool:
    return grid.dim == 2 and law.needs_full_gradient


def _face_gradients(law: FluxLaw, u: GridField):
    G, X, n_faces, comps, weight = _face_operator(u.grid, _uses_full(law, u.grid))
    Z = (G @ u.values.ravel()).reshape(n_faces, comps)
    return G, X, Z, weight


def potential_integral(law: FluxLaw, u: GridField) -> float:
    """Discrete flux energy sum_faces a(x_f, grad u) h^d (weighted in 2d full mode)."""
    _, X, Z, weight = _face_gradients(law, u)
    return float(weight * np.sum(law.potential(Z, X)) * u.grid.cell_volume)


def elliptic_operator(law: FluxLaw, u: GridField) -> GridField:
    """The scheme's discrete form of -div alpha(x, grad u)."""
    G, X, Z, weight = _face_gradients(law, u)
    return GridField(u.grid, (weight * (G.T @ law.flux(Z, X).ravel())
                              ).reshape(u.grid.cells))


def step_energy(prob: StepProblem, u: GridField) -> float:
    """The convex step functional; finite for u in the closed graph domain."""
    vals = u.values
    if not prob.graph.contains(vals, closed=True):
        raise GraphDomainError("field leaves the closed domain of the graph")
    vol = u.grid.cell_volume
    j_term = float(np.sum(prob.graph.primitive(vals))) / prob.tau
    g_term = float(np.sum(prob.g.values * vals))
    return (j_term + _flux_energy_sum(prob.flux, u) - g_term) * vol


def _flux_energy_sum(law: FluxLaw, u: GridField) -> float:
    _, X, Z, weight = _face_gradients(law, u)
    return float(weight * np.sum(law.potential(Z, X)))


def step_residual(prob: StepProblem, u: GridField) -> GridField:
    """Nodewise beta(u)/tau - div alpha(grad u) - g; the gradient of E is h^d times this."""
    op = elliptic_operator(prob.flux, u)
    return GridField(u.grid, prob.graph.value(u.values) / prob.tau
                     + op.values - prob.g.values)


# -- Newton iteration --------------------------------------------------------


def _energy_or_inf(graph, law, tau, g_flat, u_flat, grid, G, X, n_faces, comps, weight):
    """Energy of a trial iterate plus the magnitude its rounding scales with.

    The three energy terms cancel heavily near the minimizer, so comparisons
    are only meaningful down to a few ulps of the term magnitudes, not of the
    total.  Returns (energy, scale); out-of-domain trials give (inf, inf).
    """
    if not graph.contains(u_flat):
        return np.inf, np.inf
    vol = grid.cell_volume
    with np.errstate(over="ignore", invalid="ignore"):
        j_vals = graph.primitive(u_flat)
        Z = (G @ u_flat).reshape(n_faces, comps)
        pot = law.potential(Z, X)
        gu = g_flat * u_flat
        total = (np.sum(j_vals) / tau + weight * np.sum(pot) - np.sum(gu)) * vol
        scale = (np.sum(np.abs(j_vals)) / tau + weight * np.sum(np.abs(pot))
                 + np.sum(np.abs(gu))) * vol
    if not np.isfinite(total):
        return np.inf, np.inf
    return float(total), float(scale)


def _newton_solve(graph, law, tau, g_flat, start, grid, tol, max_iterations):
    G, X, n_faces, comps, weight = _face_operator(grid, _uses_full(law, grid))
    vol = grid.cell_volume
    n = start.size

    def residual(u):
        Z = (G @ u).reshape(n_faces, comps)
        return (graph.value(u) / tau
                + weight * (G.T @ law.flux(Z, X).ravel())
                - g_flat)

    def energy(u):
        return _energy_or_inf(graph, law, tau, g_flat, u, grid,
                              G, X, n_faces, comps, weight)

    u = start.copy()
    r = residual(u)
    history = [float(np.sqrt(np.sum(r * r) * vol))]
    prev_u = prev_r = None
    iterations = 0

    def residual_accept(trial):
        # terminal phase: energy differences drown in rounding before the
        # residual does, so fall back to plain residual decrease
        if not graph.contains(trial):
            return None, None
        r_trial = residual(trial)
        r_norm = float(np.sqrt(np.sum(r_trial * r_trial) * vol))
        if np.isfinite(r_norm) and r_norm <= 0.9 * history[-1]:
            return trial, r_trial
        return None, None

    while history[-1] > tol and iterations < max_iterations:
        iterations += 1
        direction = _newton_direction(graph, law, tau, u, r, G, X,
                                      n_faces, comps, weight)
        if direction is None:
            direction, slope = _bb_direction(u, r, prev_u, prev_r, vol)
        else:
            slope = float(np.dot(r, direction)) * vol
            if not np.isfinite(slope) or slope >= 0.0:
                direction, slope = _bb_direction(u, r, prev_u, prev_r, vol)
        accepted, u_new = _armijo(energy, u, direction, slope)
        r_new = None
        if not accepted:
            u_new, r_new = residual_accept(u + direction)
            accepted = u_new is not None
        if not accepted:
            direction, slope = _bb_direction(u, r, prev_u, prev_r, vol)
            accepted, u_new = _armijo(energy, u, direction, slope)
            if not accepted:
                break
        prev_u, prev_r = u, r
        u = u_new
        r = residual(u) if r_new is None else r_new
        history.append(float(np.sqrt(np.sum(r * r) * vol)))

    return u, history, iterations


def _newton_direction(graph, law, tau, u, r, G, X, n_faces, comps, weight):
    beta_slope = graph.derivative_clipped(u) / tau
    jac = law.flux_jacobian((G @ u).reshape(n_faces, comps), X)
    if comps == 1:
        B = sp.diags(jac.reshape(n_faces))
    else:
        B = sp.bsr_matrix((jac, np.arange(n_faces), np.arange(n_faces + 1)),
                          shape=(comps * n_faces, comps * n_faces))
    H = sp.diags(beta_slope) + weight * (G.T @ B @ G)
    try:
        d = spla.spsolve(H.tocsc(), -r)
    except Exception:
        return None
    return d if np.all(np.isfinite(d)) else None


def _bb_direction(u, r, prev_u, prev_r, vol):
    length = 1.0
    if prev_u is not None:
        s = u - prev_u
        y = r - prev_r
        sy = float(np.dot(s, y))
        if sy > 0.0:
            length = float(np.dot(s, s)) / sy
            length = min(max(length, 1e-12), 1e12)
    direction = -length * r
    return direction, float(np.dot(r, direction)) * vol


def _armijo(energy, u, direction, slope):
    e0, scale0 = energy(u)
    t = 1.0
    while t > 1e-14:
        trial = u + t * direction
        e1, scale1 = energy(trial)
        allowance = ENERGY_ROUNDING * min(scale0, scale1)
        if e1 <= e0 + ARMIJO_SLOPE * t * slope + allowance:
            return True, trial
        t *= 0.5
    return False, u


def _continuation_levels(law: FluxLaw) -> tuple:
    p_min = min(p for _, p in law.terms)
    if p_min >= 2.0:
        return (law.epsilon,)
    levels = [e for e in CONTINUATION_LEVELS if e > law.epsilon]
    return tuple(levels) + (law.epsilon,)


def _quadratic_preseed(prob: StepProblem, u: np.ndarray, grid: Grid,
                       max_iterations: int) -> np.ndarray:
    """Seed singular-flux solves with the p=2 solution.

    A flat initial guess has zero gradient on every face, exactly where the
    regularized p < 2 curvature is largest, and Newton then creeps.  One
    quadratic-flux solve lands on a field with realistic face gradients and
    costs a couple of linear systems.
    """
    from .graphs import p_laplacian

    spare = p_laplacian(2.0, coefficient=prob.flux.coefficient)
    seed, _, _ = _newton_solve(prob.graph, spare, prob.tau,
                               prob.g.values.ravel(), u, grid, 1e-6,
                               min(max_iterations, 50))
    return seed if np.all(np.isfinite(seed)) else u


def solve_step(prob: StepProblem, tol: float = DEFAULT_STEP_TOL,
               max_iterations: int = MAX_NEWTON_ITERATIONS) -> StepSolution:
    """Minimize the step energy; returns a certificate-carrying solution.

    The residual certificate is the L2 norm of the nodewise stationarity
    defect.  Singular flux laws (some exponent below 2) are warmed up by a
    short sweep of decreasing regularization levels before the target law
    is solved.
    """
    if not tol > 0.0:
        raise ValueError("tolerance must be positive")
    grid = prob.g.grid
    g_flat = prob.g.values.ravel()
    u = prob.initial_guess.values.ravel().copy()

    total_iterations = 0
    history: list = []
    levels = _continuation_levels(prob.flux)
    if len(levels) > 1:
        u = _quadratic_preseed(prob, u, grid, max_iterations)
    for level in levels:
        law = prob.flux.with_epsilon(level)
        level_tol = tol if level == prob.flux.epsilon else max(tol, 1e-7)
        u, level_history, level_iters = _newton_solve(
            prob.graph, law, prob.tau, g_flat, u, grid, level_tol,
            max_iterations)
        total_iterations += level_iters
        history.extend(level_history)

    u_field = GridField(grid, u.reshape(grid.cells))
    res_norm = float(np.sqrt(np.sum(step_residual(prob, u_field).values ** 2)
                             * grid.cell_volume))
    converged = res_norm <= tol
    solution = StepSolution(u_field, res_norm, total_iterations,
                            step_energy(prob, u_field), converged,
                            tuple(history))
    if not converged:
        raise StepSolveError(
            f"step residual {res_norm:.3e} above tolerance {tol:.3e} "
            f"after {total_iterations} iterations", solution)
    return solution


# -- independent scalar oracle ------------------------------------------------


def oracle_scalar_solve(prob: StepProblem) -> float:
    """Bisection solve of the one-cell stationarity equation.

    Deliberately avoids the sparse machinery: the two faces per axis are
    written out by hand, so this is an independent check on solve_step.
    """
    grid = prob.g.grid
    if grid.n_cells != 1:
        raise OracleError("the scalar oracle needs a one-cell grid")
    graph, law, tau = prob.graph, prob.flux, prob.tau
    g_value = float(prob.g.values.ravel()[0])
    d = grid.dim
    center = np.array([0.5 * e for e in grid.extents])

    faces = []
    for a in range(d):
        h = grid.spacing[a]
        for side, sign in ((0.0, 1.0), (grid.extents[a], -1.0)):
            x = center.copy()
            x[a] = side
            faces.append((a, h, x, sign))

    def phi(s: float) -> float:
        total = float(graph.value(s)) / tau - g_value
        for a, h, x, sign in faces:
            z = np.zeros(d)
            z[a] = sign * s / h
            total += float(law.flux(z, x)[a]) * sign / (h * d if d > 1 and
                                                        law.needs_full_gradient
                                                        else h)
        return total

    return _bisect_increasing(phi, graph.domain_lo, graph.domain_hi)


def _bisect_increasing(phi, lo_bound, hi_bound, tol=1e-13):
    lo = hi = 0.0
    if phi(0.0) > 0.0:
        span = 1.0
        for _ in range(2000):
            candidate = (lo - span if not np.isfinite(lo_bound)
                         else 0.5 * (lo + lo_bound))
            if phi(candidate) <= 0.0:
                lo = candidate
                break
            lo = candidate
            span *= 2.0
        else:
            raise OracleError("no sign change toward the lower domain end")
        hi = 0.0
    else:
        span = 1.0
        for _ in range(2000):
            candidate = (hi + span if not np.isfinite(hi_bound)
                         else 0.5 * (hi + hi_bound))
            if phi(candidate) >= 0.0:
                hi = candidate
                break
            hi = candidate
            span *= 2.0
        else:
            raise OracleError("no sign change toward the upper domain end")
        lo = 0.0

    for _ in range(300):
        if hi - lo <= tol * max(1.0, abs(lo), abs(hi)):
            break
        mid = 0.5 * (lo + hi)
        if phi(mid) <= 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)

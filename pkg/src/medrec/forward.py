"""Second-order forward solver used to synthesize boundary measurements.

Solves the five-point staggered discretization of

    -div(sigma grad u) + mu u = g_vol + (boundary flux h spread onto the
                                boundary cell layer)

by Jacobi-preconditioned conjugate gradients.  The solver exists only to
manufacture Cauchy pairs (h, f); the reconstruction itself never calls
it.  Data generation runs on a grid refined by an integer `oversample`
and restricts back, so inversion never sees its own discretization.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .grid import (BoundaryData, ScalarField, StaggeredGrid, average_to_faces,
                   boundary_trace, neumann_to_source, prolong_boundary,
                   prolong_cells, restrict_cells, _require_same_grid)


class IncompatibleProblemError(ValueError):
    """Pure-Neumann problem whose data violates the compatibility condition."""


class ForwardSolverError(RuntimeError):
    """CG failed to reach the requested residual within the iteration cap."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass
class ForwardProblem:
    """Coefficients and data for one forward solve."""

    sigma: ScalarField
    mu: ScalarField
    neumann: BoundaryData
    volumetric_source: ScalarField | None = None

    def __post_init__(self):
        _require_same_grid(self.sigma, self.mu)
        _require_same_grid(self.sigma, self.neumann)
        if self.volumetric_source is not None:
            _require_same_grid(self.sigma, self.volumetric_source)
        if self.sigma.values.min() <= 0:
            raise ValueError("diffusion coefficient must be strictly positive")
        if self.mu.values.min() < 0:
            raise ValueError("absorption coefficient must be nonnegative")

    @property
    def grid(self) -> StaggeredGrid:
        return self.sigma.grid


@dataclass
class MeasurementSet:
    """One excitation's Cauchy pair: applied flux h, observed trace f."""

    h: BoundaryData
    f: BoundaryData

    def __post_init__(self):
        _require_same_grid(self.h, self.f)

    @property
    def grid(self) -> StaggeredGrid:
        return self.h.grid


def _apply_operator(u: np.ndarray, sx: np.ndarray, sy: np.ndarray,
                    mu: np.ndarray, h: float) -> np.ndarray:
    """-div(sigma_face * grad u) + mu * u on raw arrays (zero-flux faces)."""
    n = u.shape[0]
    fx = np.zeros((n + 1, n))
    fy = np.zeros((n, n + 1))
    fx[1:n, :] = sx * (u[1:, :] - u[:-1, :]) / h
    fy[:, 1:n] = sy * (u[:, 1:] - u[:, :-1]) / h
    div = (fx[1:, :] - fx[:-1, :]) / h + (fy[:, 1:] - fy[:, :-1]) / h
    return -div + mu * u


def solve_forward(problem: ForwardProblem, tol: float = 1e-10,
                  max_iter: int | None = None) -> ScalarField:
    """Solve the staggered discretization to a relative residual <= tol.

    Raises IncompatibleProblemError for a pure-Neumann problem (mu == 0)
    whose total source does not vanish, and ForwardSolverError (carrying
    the last residual) if CG exhausts its iteration cap.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    grid = problem.grid
    n, h = grid.n, grid.h
    if max_iter is None:
        max_iter = 20 * n * n

    rhs_field = neumann_to_source(problem.neumann)
    if problem.volumetric_source is not None:
        rhs_field = rhs_field + problem.volumetric_source
    b = rhs_field.values

    mu = problem.mu.values
    faces = average_to_faces(problem.sigma)
    sx = faces.x_values[1:n, :]
    sy = faces.y_values[:, 1:n]

    pure_neumann = mu.max() == 0.0
    if pure_neumann:
        total = float(b.sum()) * h * h
        scale = h * np.abs(problem.neumann.values).sum() \
            + h * h * np.abs(b).sum() + 1.0
        if abs(total) > 1e-10 * scale:
            raise IncompatibleProblemError(
                f"mu == 0 with nonzero net source ({total:.3e}); "
                "the pure-Neumann problem has no solution")
        # Gauge-fix the consistent singular system: keep everything mean-free.
        b = b - b.mean()

    # Jacobi preconditioner: diagonal of the operator.
    diag = mu.copy()
    diag[:-1, :] += sx / h ** 2
    diag[1:, :] += sx / h ** 2
    diag[:, :-1] += sy / h ** 2
    diag[:, 1:] += sy / h ** 2
    diag = np.maximum(diag, 1e-300)

    u = np.zeros_like(b)
    r = b.copy()
    b_norm = float(np.sqrt(np.vdot(b, b)))
    if b_norm == 0.0:
        return ScalarField(grid, u)
    z = r / diag
    p = z.copy()
    rz = float(np.vdot(r, z))
    res = 1.0
    for _ in range(max_iter):
        ap = _apply_operator(p, sx, sy, mu, h)
        alpha = rz / float(np.vdot(p, ap))
        u += alpha * p
        r -= alpha * ap
        res = float(np.sqrt(np.vdot(r, r))) / b_norm
        if res <= tol:
            break
        z = r / diag
        rz_new = float(np.vdot(r, z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    else:
        raise ForwardSolverError(
            f"CG stalled at relative residual {res:.3e} after {max_iter} iterations",
            residual=res)

    if pure_neumann:
        u -= u.mean()
    return ScalarField(grid, u)


EXCITATION_AMPLITUDE = 200.0
EXCITATION_OFFSET = 0.25


def default_excitations(grid: StaggeredGrid, count: int = 1,
                        amplitude: float = EXCITATION_AMPLITUDE) -> list[BoundaryData]:
    """Boundary flux patterns used when none are supplied.

    #1 superposes a uniform influx (weight 0.25, which keeps the interior
    field positive so absorption stays observable) on a left-to-right
    push-pull; #2 is the same pattern rotated a quarter turn.  The
    amplitude sets the data term's weight against the regularization in
    the least-squares stage.
    """
    if count < 1 or count > 2:
        raise ValueError("between 1 and 2 default excitations are defined")
    c = EXCITATION_OFFSET
    out = [BoundaryData.from_sides(grid, c * amplitude, (c - 1.0) * amplitude,
                                   c * amplitude, (c + 1.0) * amplitude)]
    if count == 2:
        out.append(BoundaryData.from_sides(grid, (c + 1.0) * amplitude,
                                           c * amplitude, (c - 1.0) * amplitude,
                                           c * amplitude))
    return out


def _max_workers(n_tasks: int) -> int:
    raw = os.environ.get("MEDREC_THREADS", "1")
    try:
        cap = max(1, int(raw))
    except ValueError:
        cap = 1
    return min(cap, n_tasks)


def generate_measurements(true_sigma: ScalarField, true_mu: ScalarField,
                          excitations: list[BoundaryData], oversample: int = 2,
                          tol: float = 1e-10) -> list[MeasurementSet]:
    """Synthesize (h, f) pairs for each excitation.

    Each forward solve runs on a grid refined by `oversample`; the fine
    solution is block-averaged back before taking the trace, so the
    measured f carries genuine discretization mismatch relative to the
    inversion grid.  With oversample == 1 the trace of the direct solve
    is returned unchanged.
    """
    if oversample < 1:
        raise ValueError("oversample must be >= 1")
    _require_same_grid(true_sigma, true_mu)

    sigma_f = prolong_cells(true_sigma, oversample)
    mu_f = prolong_cells(true_mu, oversample)

    def solve_one(h_coarse: BoundaryData) -> MeasurementSet:
        _require_same_grid(true_sigma, h_coarse)
        h_fine = prolong_boundary(h_coarse, oversample)
        u_fine = solve_forward(ForwardProblem(sigma_f, mu_f, h_fine), tol=tol)
        u_coarse = restrict_cells(u_fine, oversample)
        return MeasurementSet(h=h_coarse.copy(), f=boundary_trace(u_coarse))

    workers = _max_workers(len(excitations))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(solve_one, excitations))
    return [solve_one(h) for h in excitations]

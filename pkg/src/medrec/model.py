"""First-order residual operator, least-squares functional, and adjoints.

The reconstruction works on the first-order system

    -div p + mu u = g        (cell equation)
    p - sigma_face grad u = 0  (face equation, flux constrained to p.nu = 0)

so that sigma and mu each enter exactly one linear equation.  This module
evaluates the residuals, the total functional J (equation residuals +
data misfit + both regularizers), the symmetric normal operator of the
state block, and the misfit gradients of the coefficient block.  Every
adjoint here is the exact discrete transpose of its forward map, which
is what makes the finite-difference gradient checks tight.
"""

import math
from dataclasses import dataclass

from .forward import MeasurementSet
from .grid import (BoundaryData, FluxField, ScalarField, average_to_faces,
                   average_to_faces_adjoint, boundary_inner, boundary_trace,
                   cell_inner, divergence_to_cells, face_inner,
                   gradient_to_faces, neumann_to_source, _require_same_grid)
from .regularization import RegConfig, eval_phi


@dataclass
class StatePair:
    """State block v = (u, p); p must satisfy the zero normal trace."""

    u: ScalarField
    p: FluxField

    def __post_init__(self):
        _require_same_grid(self.u, self.p)
        if not self.p.is_admissible():
            raise ValueError("flux has nonzero boundary-normal entries")

    @classmethod
    def zeros(cls, grid) -> "StatePair":
        return cls(ScalarField.zeros(grid), FluxField.zeros(grid))

    def __add__(self, other):
        return StatePair(self.u + other.u, self.p + other.p)

    def __sub__(self, other):
        return StatePair(self.u - other.u, self.p - other.p)

    def __mul__(self, s):
        return StatePair(self.u * float(s), self.p * float(s))

    __rmul__ = __mul__


@dataclass
class CoefficientPair:
    """Coefficient block q = (sigma, mu)."""

    sigma: ScalarField
    mu: ScalarField

    def __post_init__(self):
        _require_same_grid(self.sigma, self.mu)

    @classmethod
    def constant(cls, grid, sigma: float, mu: float) -> "CoefficientPair":
        return cls(ScalarField.constant(grid, sigma), ScalarField.constant(grid, mu))


@dataclass
class Residuals:
    """Residual triple; r_data is filled only when a trace target is given."""

    r_div: ScalarField
    r_flux: FluxField
    r_data: BoundaryData | None = None


def state_inner(a: StatePair, b: StatePair) -> float:
    return cell_inner(a.u, b.u) + face_inner(a.p, b.p)


def state_norm(a: StatePair) -> float:
    return math.sqrt(max(state_inner(a, a), 0.0))


def apply_L(v: StatePair, q: CoefficientPair, g: ScalarField) -> Residuals:
    """Equation residuals (r_div, r_flux) of the first-order system."""
    _require_same_grid(v.u, q.sigma)
    _require_same_grid(v.u, g)
    r_div = ScalarField(
        v.u.grid,
        -divergence_to_cells(v.p).values + q.mu.values * v.u.values - g.values)
    s_face = average_to_faces(q.sigma)
    grad_u = gradient_to_faces(v.u)
    r_flux = FluxField(v.u.grid,
                       v.p.x_values - s_face.x_values * grad_u.x_values,
                       v.p.y_values - s_face.y_values * grad_u.y_values)
    return Residuals(r_div=r_div, r_flux=r_flux)


def full_residuals(v: StatePair, q: CoefficientPair, g: ScalarField,
                   f: BoundaryData) -> Residuals:
    res = apply_L(v, q, g)
    res.r_data = boundary_trace(v.u) - f
    return res


def _as_list(x, cls):
    if isinstance(x, cls):
        return [x]
    return list(x)


def eval_J(states, coeffs: CoefficientPair, sources, measurements,
           reg_sigma: RegConfig, reg_mu: RegConfig) -> float:
    """Total least-squares functional over one or several excitations.

    Sums, per excitation, the squared cell norm of the divergence
    residual, the squared face norm of the flux residual and the squared
    boundary norm of the trace misfit, then adds both regularizers.
    Returns +inf as soon as a coefficient leaves its box.
    """
    state_list = _as_list(states, StatePair)
    source_list = _as_list(sources, ScalarField)
    meas_list = _as_list(measurements, MeasurementSet)
    if not meas_list:
        raise ValueError("at least one measurement set is required")
    if not len(state_list) == len(source_list) == len(meas_list):
        raise ValueError("states, sources and measurements must align")

    total = 0.0
    for v, g, m in zip(state_list, source_list, meas_list):
        res = apply_L(v, coeffs, g)
        r_data = boundary_trace(v.u) - m.f
        total += cell_inner(res.r_div, res.r_div)
        total += face_inner(res.r_flux, res.r_flux)
        total += boundary_inner(r_data, r_data)
    total += eval_phi(coeffs.sigma, reg_sigma)
    total += eval_phi(coeffs.mu, reg_mu)
    return float(total)


# ---------------------------------------------------------------------------
# State block: normal operator A = L_q^* L_q + C^* C and its right-hand side
# ---------------------------------------------------------------------------

def state_normal_apply(q: CoefficientPair, v: StatePair) -> StatePair:
    """Apply the symmetric positive definite state-block normal operator."""
    grid = v.u.grid
    mu = q.mu.values
    s_face = average_to_faces(q.sigma)
    grad_u = gradient_to_faces(v.u)

    r1 = -divergence_to_cells(v.p).values + mu * v.u.values
    r2x = v.p.x_values - s_face.x_values * grad_u.x_values
    r2y = v.p.y_values - s_face.y_values * grad_u.y_values
    # r2 is admissible: both p and grad u vanish on boundary-normal faces.
    s_r2 = FluxField(grid, s_face.x_values * r2x, s_face.y_values * r2y)

    a_u = mu * r1 + divergence_to_cells(s_r2).values \
        + neumann_to_source(boundary_trace(v.u)).values
    r1_field = ScalarField(grid, r1)
    g_r1 = gradient_to_faces(r1_field)
    a_p = FluxField(grid, g_r1.x_values + r2x, g_r1.y_values + r2y)
    return StatePair(ScalarField(grid, a_u), a_p)


def state_normal_rhs(q: CoefficientPair, g: ScalarField, f: BoundaryData) -> StatePair:
    """Right-hand side L_q^*(g, 0) + C^* f of the state normal equations."""
    grid = g.grid
    b_u = q.mu.values * g.values + neumann_to_source(f).values
    b_p = gradient_to_faces(g)
    return StatePair(ScalarField(grid, b_u), b_p)


def state_normal_residual(q: CoefficientPair, v: StatePair, g: ScalarField,
                          f: BoundaryData) -> float:
    """Relative residual ||A v - b|| / ||b|| in the state-space norm."""
    av = state_normal_apply(q, v)
    b = state_normal_rhs(q, g, f)
    b_norm = state_norm(b)
    if b_norm == 0.0:
        return state_norm(av)
    return state_norm(av - b) / b_norm


# ---------------------------------------------------------------------------
# Coefficient block: gradients of the smooth misfit terms
# ---------------------------------------------------------------------------

def coefficient_misfit_gradients(v: StatePair, q: CoefficientPair,
                                 g: ScalarField) -> tuple[ScalarField, ScalarField]:
    """Gradients of the equation misfits with respect to sigma and mu.

    The two decouple: sigma only enters the flux residual, mu only the
    divergence residual.  Both gradients are exact for the discrete
    functional (the face-to-cell adjoint is the true transpose of the
    averaging map).
    """
    res = apply_L(v, q, g)
    grad_u = gradient_to_faces(v.u)
    weighted = FluxField(v.u.grid,
                         grad_u.x_values * res.r_flux.x_values,
                         grad_u.y_values * res.r_flux.y_values)
    grad_sigma = ScalarField(v.u.grid, -2.0 * average_to_faces_adjoint(weighted).values)
    grad_mu = ScalarField(v.u.grid, 2.0 * v.u.values * res.r_div.values)
    return grad_sigma, grad_mu


def misfit_value(v: StatePair, q: CoefficientPair, g: ScalarField) -> float:
    """Equation misfit ||r_div||^2 + ||r_flux||^2 for one excitation."""
    res = apply_L(v, q, g)
    return cell_inner(res.r_div, res.r_div) + face_inner(res.r_flux, res.r_flux)


def sources_from_measurements(measurements) -> list[ScalarField]:
    """Neumann-to-source images of each measurement's applied flux."""
    return [neumann_to_source(m.h) for m in _as_list(measurements, MeasurementSet)]

"""Benchmark media, noise injection, quality metrics, field files.

The five benchmark media place square (or square-ring) inclusions of
magnitude 20 in a unit background; which ones carry absorption contrast
and how many excitations they use is part of the definition, as are the
per-noise-column regularization weights the reconstruction stage uses.
Backgrounds of 1.0 and the box [0.5, 30] are conventions of this
package, not part of the benchmark definitions.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .grid import BoundaryData, ScalarField, StaggeredGrid
from .model import CoefficientPair

BACKGROUND_SIGMA = 1.0
BACKGROUND_MU = 1.0
BOX_LO = 0.5
BOX_HI = 30.0
DEFAULT_THETA = 0.55
DEFAULT_C_PHI = 20.0

_EDGE_TOL = 1e-12


@dataclass(frozen=True)
class SquareInclusion:
    center: tuple[float, float]
    width: float
    value: float

    def contains(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        half = 0.5 * self.width + _EDGE_TOL
        return (np.abs(x - self.center[0]) <= half) \
            & (np.abs(y - self.center[1]) <= half)


@dataclass(frozen=True)
class RingInclusion:
    """Square annulus between the inner and outer half-widths."""

    center: tuple[float, float]
    outer_width: float
    inner_width: float
    value: float

    def contains(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        d = np.maximum(np.abs(x - self.center[0]), np.abs(y - self.center[1]))
        return (d <= 0.5 * self.outer_width + _EDGE_TOL) \
            & (d > 0.5 * self.inner_width + _EDGE_TOL)


@dataclass(frozen=True)
class ExampleSpec:
    """One benchmark medium plus its reconstruction parameters."""

    name: str
    sigma_inclusions: tuple = ()
    mu_inclusions: tuple = ()
    sigma_background: float = BACKGROUND_SIGMA
    mu_background: float = BACKGROUND_MU
    excitation_count: int = 1
    noise_level: float = 0.0
    params_exact: tuple = (1e-2, 2e-2, 5e-4, 5e-4)   # (a_sigma, b_sigma, a_mu, b_mu)
    params_noisy: tuple = (1e-2, 2e-2, 5e-4, 1e-3)

    @property
    def reconstruct_mu(self) -> bool:
        """Whether the absorption coefficient is unknown in this benchmark."""
        return len(self.mu_inclusions) > 0

    def rasterize(self, grid: StaggeredGrid) -> CoefficientPair:
        """Truth fields at a given resolution; a cell belongs to a shape
        iff its center does."""
        x, y = grid.cell_centers()
        sigma = np.full((grid.n, grid.n), self.sigma_background)
        mu = np.full((grid.n, grid.n), self.mu_background)
        for shape in self.sigma_inclusions:
            sigma[shape.contains(x, y)] = shape.value
        for shape in self.mu_inclusions:
            mu[shape.contains(x, y)] = shape.value
        return CoefficientPair(ScalarField(grid, sigma), ScalarField(grid, mu))

    def regularization_params(self, noisy: bool) -> tuple:
        return self.params_noisy if noisy else self.params_exact


_EXAMPLES = {
    "ex1": ExampleSpec(
        name="ex1",
        sigma_inclusions=(SquareInclusion((0.25, 0.65), 0.05, 20.0),),
        mu_inclusions=(SquareInclusion((0.35, 0.30), 0.05, 20.0),),
        excitation_count=1,
        noise_level=0.10,
        params_exact=(1.0e-2, 2.0e-2, 5.0e-4, 5.0e-4),
        params_noisy=(1.0e-2, 2.0e-2, 5.0e-4, 1.0e-3)),
    "ex2_1": ExampleSpec(
        name="ex2_1",
        sigma_inclusions=(SquareInclusion((0.15, 0.50), 0.05, 20.0),
                          SquareInclusion((0.50, 0.85), 0.05, 20.0)),
        excitation_count=1,
        noise_level=0.20,
        params_exact=(1.0e-3, 5.0e-3, 0.0, 0.0),
        params_noisy=(1.0e-3, 1.0e-2, 0.0, 0.0)),
    "ex2_2": ExampleSpec(
        name="ex2_2",
        sigma_inclusions=(SquareInclusion((0.45, 0.425), 0.1, 20.0),
                          SquareInclusion((0.55, 0.575), 0.1, 20.0)),
        excitation_count=1,
        noise_level=0.02,
        params_exact=(1.0e-6, 1.0e-3, 0.0, 0.0),
        params_noisy=(1.0e-6, 2.0e-3, 0.0, 0.0)),
    "ex3": ExampleSpec(
        name="ex3",
        sigma_inclusions=(SquareInclusion((0.50, 0.25), 0.1, 20.0),
                          SquareInclusion((0.50, 0.75), 0.1, 20.0)),
        mu_inclusions=(SquareInclusion((0.25, 0.50), 0.1, 20.0),
                       SquareInclusion((0.75, 0.50), 0.1, 20.0)),
        excitation_count=1,
        noise_level=0.20,
        params_exact=(1.0e-3, 1.0e-2, 1.0e-2, 5.0e-3),
        params_noisy=(1.0e-3, 2.0e-2, 1.0e-2, 5.0e-3)),
    "ex4": ExampleSpec(
        name="ex4",
        sigma_inclusions=(RingInclusion((0.5, 0.6), 0.2, 0.15, 20.0),),
        excitation_count=2,
        noise_level=0.20,
        params_exact=(1.0e-5, 5.0e-4, 0.0, 0.0),
        params_noisy=(1.0e-5, 1.0e-3, 0.0, 0.0)),
}


def make_example(name: str) -> ExampleSpec:
    try:
        return _EXAMPLES[name]
    except KeyError:
        known = ", ".join(sorted(_EXAMPLES))
        raise ValueError(f"unknown example {name!r} (known: {known})") from None


def example_names() -> list[str]:
    return sorted(_EXAMPLES)


# ---------------------------------------------------------------------------
# Noise model
# ---------------------------------------------------------------------------

def add_noise(f: BoundaryData, epsilon: float, seed: int) -> BoundaryData:
    """Pointwise Gaussian noise scaled by epsilon times the trace maximum.

    Each entry gains epsilon * eta * max|f| with independent standard
    normal eta from the seeded generator; epsilon == 0 returns the input
    values unchanged.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    if epsilon == 0.0:
        return f.copy()
    rng = np.random.default_rng(seed)
    eta = rng.standard_normal(f.values.shape)
    scale = float(np.abs(f.values).max())
    return BoundaryData(f.grid, f.values + epsilon * eta * scale)


# ---------------------------------------------------------------------------
# Quality metrics
# ---------------------------------------------------------------------------

@dataclass
class CoefficientMetrics:
    relative_l2_error: float
    support_jaccard: float
    center_of_mass_errors: list[float] = field(default_factory=list)


@dataclass
class Metrics:
    sigma: CoefficientMetrics
    mu: CoefficientMetrics


def _support_threshold(truth: np.ndarray) -> tuple[float, float]:
    bg = float(np.median(truth))
    contrast = float(truth.max()) - bg
    return bg, bg + 0.5 * contrast


def _centers_of_mass(values: np.ndarray, support: np.ndarray, bg: float,
                     grid: StaggeredGrid) -> list[tuple[float, float]]:
    labels, count = ndimage.label(support)
    x, y = grid.cell_centers()
    centers = []
    for lab in range(1, count + 1):
        comp = labels == lab
        weights = np.clip(values[comp] - bg, 0.0, None)
        total = weights.sum()
        if total <= 0:
            weights = np.ones(comp.sum())
            total = weights.sum()
        centers.append((float((x[comp] * weights).sum() / total),
                        float((y[comp] * weights).sum() / total)))
    return centers


def _metrics_for(rec: ScalarField, tru: ScalarField) -> CoefficientMetrics:
    grid = tru.grid
    diff = rec.values - tru.values
    tru_norm = math.sqrt(float(np.vdot(tru.values, tru.values)))
    rel = math.sqrt(float(np.vdot(diff, diff))) / tru_norm if tru_norm else math.inf

    bg, thr = _support_threshold(tru.values)
    sup_true = tru.values > thr
    sup_rec = rec.values > thr
    union = (sup_true | sup_rec).sum()
    jaccard = float((sup_true & sup_rec).sum() / union) if union else 1.0

    true_centers = _centers_of_mass(tru.values, sup_true, bg, grid)
    rec_centers = _centers_of_mass(rec.values, sup_rec, bg, grid)
    errors = []
    for tc in true_centers:
        if not rec_centers:
            errors.append(math.inf)
            continue
        errors.append(min(math.hypot(tc[0] - rc[0], tc[1] - rc[1])
                          for rc in rec_centers))
    return CoefficientMetrics(rel, jaccard, errors)


def compute_metrics(reconstructed: CoefficientPair, truth: CoefficientPair) -> Metrics:
    """Relative errors, support overlap, and per-inclusion center offsets.

    Supports are cells above background plus half the contrast (both
    thresholds taken from the truth); each true inclusion is matched to
    the nearest connected component of the reconstructed support.
    """
    if reconstructed.sigma.grid.n != truth.sigma.grid.n:
        raise ValueError("reconstruction and truth grids differ")
    return Metrics(sigma=_metrics_for(reconstructed.sigma, truth.sigma),
                   mu=_metrics_for(reconstructed.mu, truth.mu))


def background_deviation(rec: ScalarField, tru: ScalarField,
                         dilate_cells: int = 6) -> float:
    """Largest relative deviation from the background away from inclusions.

    The true supports are dilated by a few cells before carving out the
    background region, so edge smearing does not count against it.
    """
    bg, thr = _support_threshold(tru.values)
    support = tru.values > thr
    if support.any() and dilate_cells > 0:
        size = 2 * dilate_cells + 1
        support = ndimage.binary_dilation(support, np.ones((size, size), bool))
    outside = ~support
    if not outside.any():
        return 0.0
    return float(np.abs(rec.values[outside] - bg).max() / abs(bg))


# ---------------------------------------------------------------------------
# Field files and rendering
# ---------------------------------------------------------------------------

_MAGIC = "medrec-field"
_VERSION = "1"


class FieldFormatError(ValueError):
    """Malformed field file; message carries the offending line."""


def serialize_field(obj, path) -> None:
    """Write a scalar or boundary field as versioned plain text.

    Values are written with repr so the round trip is bit-exact and
    independent of locale.
    """
    if isinstance(obj, ScalarField):
        kind, n = "scalar", obj.grid.n
        rows = [" ".join(repr(float(v)) for v in row) for row in obj.values]
    elif isinstance(obj, BoundaryData):
        kind, n = "boundary", obj.grid.n
        rows = [" ".join(repr(float(v)) for v in obj.values)]
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{_MAGIC} {_VERSION}\n")
        fh.write(f"kind {kind}\n")
        fh.write(f"n {n}\n")
        for row in rows:
            fh.write(row + "\n")


def deserialize_field(path):
    """Read a field file back into a ScalarField or BoundaryData."""
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()

    def fail(lineno, msg):
        raise FieldFormatError(f"{path}: line {lineno}: {msg}")

    if not lines or lines[0].split() != [_MAGIC, _VERSION]:
        fail(1, f"expected header '{_MAGIC} {_VERSION}'")
    header = {}
    for lineno in (2, 3):
        if lineno - 1 >= len(lines):
            fail(lineno, "truncated header")
        parts = lines[lineno - 1].split()
        if len(parts) != 2:
            fail(lineno, "expected 'key value'")
        header[parts[0]] = parts[1]
    kind = header.get("kind")
    if kind not in ("scalar", "boundary"):
        fail(2, f"unknown kind {kind!r}")
    try:
        n = int(header.get("n", ""))
    except ValueError:
        fail(3, f"bad grid size {header.get('n')!r}")

    values = []
    for offset, line in enumerate(lines[3:], start=4):
        for token in line.split():
            try:
                values.append(float(token))
            except ValueError:
                fail(offset, f"bad value {token!r}")
    expected = n * n if kind == "scalar" else 4 * n
    if len(values) != expected:
        fail(len(lines), f"expected {expected} values, found {len(values)}")
    grid = StaggeredGrid(n)
    if kind == "scalar":
        return ScalarField(grid, np.array(values).reshape(n, n))
    return BoundaryData(grid, np.array(values))


def render_pgm(fld: ScalarField, path) -> None:
    """Render a scalar field as a 16-bit binary PGM (P5) image.

    [min, max] maps linearly onto [0, 65535]; a constant field renders
    as a uniform image.  Row zero of the image is the top of the domain.
    """
    vals = fld.values
    lo, hi = float(vals.min()), float(vals.max())
    if hi > lo:
        scaled = (vals - lo) / (hi - lo) * 65535.0
    else:
        scaled = np.zeros_like(vals)
    pixels = np.round(scaled).astype(">u2")
    image = pixels.T[::-1, :]     # rows top-to-bottom, columns left-to-right
    with open(path, "wb") as fh:
        fh.write(f"P5\n{image.shape[1]} {image.shape[0]}\n65535\n".encode("ascii"))
        fh.write(image.tobytes())

"""Batch command line: generate -> dsm -> reconstruct -> evaluate -> render.

Every subcommand reads and writes plain files inside one output
directory, takes its parameters from an optional flat key=value config
file (with a `version` key), and lets explicit flags override config
keys.  Exit codes: 0 success, 2 configuration error, 3 numerical
failure.
"""

import argparse
import math
import sys
from dataclasses import dataclass, fields as dc_fields
from pathlib import Path

import numpy as np

from . import dsm
from .experiments import (BACKGROUND_MU, BACKGROUND_SIGMA, BOX_HI, BOX_LO,
                          DEFAULT_C_PHI, DEFAULT_THETA, ExampleSpec,
                          FieldFormatError, RingInclusion, SquareInclusion,
                          add_noise, background_deviation, compute_metrics,
                          deserialize_field, example_names, make_example,
                          render_pgm, serialize_field)
from .forward import (ForwardSolverError, IncompatibleProblemError,
                      MeasurementSet, default_excitations, generate_measurements)
from .grid import BoundaryData, GridError, ScalarField, StaggeredGrid
from .model import CoefficientPair
from .optimizer import AdiConfig, SubproblemFailure, adi_reconstruct
from .regularization import RegConfig

CONFIG_VERSION = "1"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Resolved parameters of one pipeline run."""

    example: str = "ex1"
    geometry: str = ""            # path to a custom geometry file, if any
    grid: int = 50
    noise: float = 0.0
    seed: int = 0
    theta: float = DEFAULT_THETA
    cphi: float = DEFAULT_C_PHI
    alpha_sigma: float = math.nan  # nan: take the example's table value
    beta_sigma: float = math.nan
    alpha_mu: float = math.nan
    beta_mu: float = math.nan
    oversample: int = 2
    max_outer: int = 50
    out: str = "."

    def validate(self):
        if self.grid < 4:
            raise ConfigError("grid must be at least 4")
        if self.noise < 0:
            raise ConfigError("noise must be nonnegative")
        if not 0.0 < self.theta < 1.0:
            raise ConfigError("theta must lie in (0, 1)")
        if self.cphi <= 0:
            raise ConfigError("cphi must be positive")
        if self.oversample < 1:
            raise ConfigError("oversample must be >= 1")
        if self.max_outer < 1:
            raise ConfigError("max-outer must be >= 1")


def _parse_kv_file(path: Path) -> dict:
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    out = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}: line {lineno}: expected key=value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    if out.get("version") != CONFIG_VERSION:
        raise ConfigError(f"{path}: missing or unsupported version key")
    return out


_FIELD_TYPES = {f.name: f.type for f in dc_fields(RunConfig)}


def _coerce(name: str, raw: str):
    kind = _FIELD_TYPES[name]
    try:
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {name}") from None


def resolve_config(args) -> RunConfig:
    """defaults < config file < explicit command-line flags."""
    cfg = RunConfig()
    if getattr(args, "config", None):
        file_values = _parse_kv_file(Path(args.config))
        for key, raw in file_values.items():
            if key == "version":
                continue
            name = key.replace("-", "_")
            if name not in _FIELD_TYPES:
                raise ConfigError(f"unknown config key {key!r}")
            setattr(cfg, name, _coerce(name, raw))
    for name in _FIELD_TYPES:
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    cfg.validate()
    return cfg


def write_config_echo(cfg: RunConfig, path: Path) -> None:
    lines = [f"version={CONFIG_VERSION}"]
    for f in dc_fields(RunConfig):
        lines.append(f"{f.name}={getattr(cfg, f.name)}")
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Custom geometry files
# ---------------------------------------------------------------------------

def parse_geometry_file(path: Path) -> ExampleSpec:
    """Build an ExampleSpec from a flat key=value geometry description.

    Recognized keys: version, name, sigma_bg, mu_bg, excitations, noise,
    alpha_sigma/beta_sigma/alpha_mu/beta_mu (both noise columns share
    them), and repeatable shapes
        sigma_square_<k>=cx,cy,width,value
        mu_square_<k>=cx,cy,width,value
        sigma_ring_<k>=cx,cy,outer,inner,value
        mu_ring_<k>=cx,cy,outer,inner,value
    """
    kv = _parse_kv_file(path)

    def floats(key, count):
        parts = kv[key].split(",")
        if len(parts) != count:
            raise ConfigError(f"{path}: {key} needs {count} comma-separated values")
        try:
            return [float(p) for p in parts]
        except ValueError:
            raise ConfigError(f"{path}: bad number in {key}") from None

    sigma_shapes, mu_shapes = [], []
    for key in sorted(kv):
        if key.startswith(("sigma_square_", "mu_square_")):
            cx, cy, width, value = floats(key, 4)
            shape = SquareInclusion((cx, cy), width, value)
            (sigma_shapes if key.startswith("sigma") else mu_shapes).append(shape)
        elif key.startswith(("sigma_ring_", "mu_ring_")):
            cx, cy, outer, inner, value = floats(key, 5)
            shape = RingInclusion((cx, cy), outer, inner, value)
            (sigma_shapes if key.startswith("sigma") else mu_shapes).append(shape)
    params = (float(kv.get("alpha_sigma", 1e-2)), float(kv.get("beta_sigma", 2e-2)),
              float(kv.get("alpha_mu", 5e-4)), float(kv.get("beta_mu", 5e-4)))
    return ExampleSpec(
        name=kv.get("name", path.stem),
        sigma_inclusions=tuple(sigma_shapes),
        mu_inclusions=tuple(mu_shapes),
        sigma_background=float(kv.get("sigma_bg", BACKGROUND_SIGMA)),
        mu_background=float(kv.get("mu_bg", BACKGROUND_MU)),
        excitation_count=int(kv.get("excitations", 1)),
        noise_level=float(kv.get("noise", 0.0)),
        params_exact=params, params_noisy=params)


def _example_for(cfg: RunConfig) -> ExampleSpec:
    if cfg.geometry:
        return parse_geometry_file(Path(cfg.geometry))
    try:
        return make_example(cfg.example)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _reg_params(cfg: RunConfig, spec: ExampleSpec) -> tuple[float, float, float, float]:
    table = spec.regularization_params(noisy=cfg.noise > 0)
    out = []
    for flag, fallback in zip((cfg.alpha_sigma, cfg.beta_sigma,
                               cfg.alpha_mu, cfg.beta_mu), table):
        out.append(fallback if math.isnan(flag) else flag)
    return tuple(out)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    return out


def cmd_generate(cfg: RunConfig) -> None:
    spec = _example_for(cfg)
    grid = StaggeredGrid(cfg.grid)
    truth = spec.rasterize(grid)
    excitations = default_excitations(grid, spec.excitation_count)
    sets = generate_measurements(truth.sigma, truth.mu, excitations,
                                 oversample=cfg.oversample)
    out = _outdir(cfg)
    serialize_field(truth.sigma, out / "truth_sigma.field")
    serialize_field(truth.mu, out / "truth_mu.field")
    for i, m in enumerate(sets):
        f_obs = add_noise(m.f, cfg.noise, cfg.seed + i)
        serialize_field(m.h, out / f"meas_{i:03d}_h.field")
        serialize_field(f_obs, out / f"meas_{i:03d}_f.field")
    write_config_echo(cfg, out / "run.cfg")
    print(f"generate: wrote {len(sets)} measurement set(s) to {out}")


def _load_measurements(out: Path) -> list[MeasurementSet]:
    sets = []
    for i in range(10000):
        h_path = out / f"meas_{i:03d}_h.field"
        f_path = out / f"meas_{i:03d}_f.field"
        if not h_path.exists():
            break
        if not f_path.exists():
            raise ConfigError(f"missing trace file {f_path}")
        h = deserialize_field(h_path)
        f = deserialize_field(f_path)
        if not isinstance(h, BoundaryData) or not isinstance(f, BoundaryData):
            raise ConfigError(f"measurement files in {out} are not boundary data")
        sets.append(MeasurementSet(h=h, f=f))
    if not sets:
        raise ConfigError(f"no measurement files found in {out}")
    return sets


def cmd_dsm(cfg: RunConfig) -> None:
    spec = _example_for(cfg)
    out = _outdir(cfg)
    sets = _load_measurements(out)
    grid = sets[0].grid
    reference = dsm.homogeneous_reference(spec.sigma_background,
                                          spec.mu_background,
                                          [m.h for m in sets],
                                          oversample=cfg.oversample)
    delta = dsm.scattered_data(sets, reference)
    index = dsm.compute_index(delta, grid)
    mask_sigma = dsm.threshold_subdomain(index.phi_sigma, cfg.theta)
    mask_mu = dsm.threshold_subdomain(index.phi_mu, cfg.theta)
    init_sigma = dsm.build_initial_guess(index.phi_sigma, mask_sigma,
                                         cfg.cphi, spec.sigma_background)
    init_mu = dsm.build_initial_guess(index.phi_mu, mask_mu,
                                      cfg.cphi, spec.mu_background)
    clip = lambda f: ScalarField(grid, np.clip(f.values, BOX_LO, BOX_HI))
    serialize_field(index.phi_sigma, out / "phi_sigma.field")
    serialize_field(index.phi_mu, out / "phi_mu.field")
    serialize_field(ScalarField(grid, mask_sigma.mask.astype(float)),
                    out / "mask_sigma.field")
    serialize_field(ScalarField(grid, mask_mu.mask.astype(float)),
                    out / "mask_mu.field")
    serialize_field(clip(init_sigma), out / "init_sigma.field")
    serialize_field(clip(init_mu), out / "init_mu.field")
    print(f"dsm: wrote index fields, masks and initial guesses to {out}")


def cmd_reconstruct(cfg: RunConfig) -> None:
    spec = _example_for(cfg)
    out = _outdir(cfg)
    sets = _load_measurements(out)
    grid = sets[0].grid
    a_s, b_s, a_m, b_m = _reg_params(cfg, spec)

    init_sigma_path = out / "init_sigma.field"
    if init_sigma_path.exists():
        init_sigma = deserialize_field(init_sigma_path)
        init_mu = deserialize_field(out / "init_mu.field")
    else:
        init_sigma = ScalarField.constant(grid, spec.sigma_background)
        init_mu = ScalarField.constant(grid, spec.mu_background)
    initial = CoefficientPair(
        ScalarField(grid, np.clip(init_sigma.values, BOX_LO, BOX_HI)),
        ScalarField(grid, np.clip(init_mu.values, BOX_LO, BOX_HI)))

    adi_cfg = AdiConfig(
        reg_sigma=RegConfig(a_s, b_s, BOX_LO, BOX_HI),
        reg_mu=RegConfig(a_m, b_m, BOX_LO, BOX_HI),
        max_outer=cfg.max_outer,
        update_mu=spec.reconstruct_mu)
    report = adi_reconstruct(sets, initial, adi_cfg)

    serialize_field(report.coefficients.sigma, out / "recon_sigma.field")
    serialize_field(report.coefficients.mu, out / "recon_mu.field")
    res_sigma, res_mu = report.final_coeff_residuals
    lines = [
        f"version={CONFIG_VERSION}",
        f"stop_reason={report.stop_reason}",
        f"iterations={report.iterations}",
        f"final_state_residual={float(report.final_state_residual)!r}",
        f"final_coeff_residual_sigma={float(res_sigma)!r}",
        f"final_coeff_residual_mu={float(res_mu)!r}",
        "j_history=" + ",".join(repr(float(v)) for v in report.j_history),
    ]
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    print(f"reconstruct: {report.iterations} iterations, "
          f"J {report.j_history[0]:.6g} -> {report.j_history[-1]:.6g}, "
          f"stop reason {report.stop_reason}")


def cmd_evaluate(cfg: RunConfig) -> None:
    out = _outdir(cfg)
    paths = {}
    for role in ("truth_sigma", "truth_mu", "recon_sigma", "recon_mu"):
        p = out / f"{role}.field"
        if not p.exists():
            raise ConfigError(f"missing field file {p}")
        paths[role] = deserialize_field(p)
    truth = CoefficientPair(paths["truth_sigma"], paths["truth_mu"])
    recon = CoefficientPair(paths["recon_sigma"], paths["recon_mu"])
    metrics = compute_metrics(recon, truth)
    lines = [f"version={CONFIG_VERSION}"]
    for label, met, rec_f, tru_f in (
            ("sigma", metrics.sigma, recon.sigma, truth.sigma),
            ("mu", metrics.mu, recon.mu, truth.mu)):
        lines.append(f"{label}_relative_l2_error={met.relative_l2_error!r}")
        lines.append(f"{label}_support_jaccard={met.support_jaccard!r}")
        coms = ",".join(repr(e) for e in met.center_of_mass_errors)
        lines.append(f"{label}_center_of_mass_errors={coms}")
        lines.append(f"{label}_background_deviation="
                     f"{background_deviation(rec_f, tru_f)!r}")
    (out / "metrics.txt").write_text("\n".join(lines) + "\n")
    print("evaluate: wrote metrics.txt")


def cmd_render(cfg: RunConfig) -> None:
    out = _outdir(cfg)
    field_paths = sorted(out.glob("*.field"))
    if not field_paths:
        raise ConfigError(f"no field files found in {out}")
    count = 0
    for path in field_paths:
        obj = deserialize_field(path)
        target = path.with_suffix(".pgm")
        if isinstance(obj, ScalarField):
            render_pgm(obj, target)
        else:  # boundary data: single-row image
            vals = obj.values
            lo, hi = float(vals.min()), float(vals.max())
            scaled = (vals - lo) / (hi - lo) * 65535.0 if hi > lo \
                else np.zeros_like(vals)
            with open(target, "wb") as fh:
                fh.write(f"P5\n{vals.size} 1\n65535\n".encode("ascii"))
                fh.write(np.round(scaled).astype(">u2").tobytes())
        count += 1
    print(f"render: wrote {count} PGM image(s) to {out}")


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file (flags override)")
    parser.add_argument("--example", choices=example_names(),
                        help="benchmark medium name")
    parser.add_argument("--geometry", help="custom geometry file")
    parser.add_argument("--grid", type=int, help="cells per side (default 50)")
    parser.add_argument("--noise", type=float, help="relative noise level")
    parser.add_argument("--seed", type=int, help="noise seed")
    parser.add_argument("--theta", type=float, help="index cutoff in (0,1)")
    parser.add_argument("--cphi", type=float, help="initial-guess magnitude")
    parser.add_argument("--alpha-sigma", dest="alpha_sigma", type=float)
    parser.add_argument("--beta-sigma", dest="beta_sigma", type=float)
    parser.add_argument("--alpha-mu", dest="alpha_mu", type=float)
    parser.add_argument("--beta-mu", dest="beta_mu", type=float)
    parser.add_argument("--oversample", type=int, help="data-synthesis refinement")
    parser.add_argument("--max-outer", dest="max_outer", type=int,
                        help="alternating iterations (default 50)")
    parser.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="medrec",
        description="Two-stage coefficient reconstruction for diffuse "
                    "optical tomography on the unit square.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("generate", "synthesize measurement and truth files"),
            ("dsm", "index fields, masks and initial guesses"),
            ("reconstruct", "run the alternating least-squares solver"),
            ("evaluate", "compare reconstruction against the truth"),
            ("render", "emit one PGM per field file")):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
    return parser


_COMMANDS = {
    "generate": cmd_generate,
    "dsm": cmd_dsm,
    "reconstruct": cmd_reconstruct,
    "evaluate": cmd_evaluate,
    "render": cmd_render,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        _COMMANDS[args.command](cfg)
    except (ConfigError, FieldFormatError, GridError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SubproblemFailure, ForwardSolverError,
            IncompatibleProblemError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())

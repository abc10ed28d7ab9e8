import numpy as np
import pytest

from medrec.cli import main, parse_geometry_file
from medrec.experiments import deserialize_field


def run_cli(*args):
    return main(list(args))


def read_kv(path):
    out = {}
    for line in path.read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k] = v
    return out


@pytest.fixture(scope="module")
def generated_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("ex1run")
    code = run_cli("generate", "--example", "ex1", "--grid", "20",
                   "--seed", "0", "--out", str(out))
    assert code == 0
    return out


def test_generate_outputs(generated_dir):
    names = {p.name for p in generated_dir.iterdir()}
    assert {"truth_sigma.field", "truth_mu.field",
            "meas_000_h.field", "meas_000_f.field", "run.cfg"} <= names
    truth = deserialize_field(generated_dir / "truth_sigma.field")
    assert truth.values.max() == 20.0


def test_generate_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run_cli("generate", "--example", "ex1", "--grid", "16",
                       "--noise", "0.05", "--seed", "3", "--out", str(out)) == 0
    for name in ("meas_000_f.field", "truth_mu.field"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_generate_two_excitations(tmp_path):
    out = tmp_path / "ex4"
    assert run_cli("generate", "--example", "ex4", "--grid", "16",
                   "--out", str(out)) == 0
    assert (out / "meas_001_f.field").exists()
    assert not (out / "meas_002_f.field").exists()


def test_dsm_outputs_and_theta_validation(generated_dir):
    assert run_cli("dsm", "--example", "ex1", "--grid", "20",
                   "--out", str(generated_dir)) == 0
    for name in ("phi_sigma.field", "phi_mu.field", "mask_sigma.field",
                 "init_sigma.field", "init_mu.field"):
        assert (generated_dir / name).exists()
    init = deserialize_field(generated_dir / "init_sigma.field")
    assert init.values.min() >= 0.5 and init.values.max() <= 30.0
    assert run_cli("dsm", "--example", "ex1", "--theta", "1.5",
                   "--out", str(generated_dir)) == 2


def test_reconstruct_and_report(generated_dir):
    assert run_cli("reconstruct", "--example", "ex1", "--grid", "20",
                   "--max-outer", "4", "--out", str(generated_dir)) == 0
    report = read_kv(generated_dir / "report.txt")
    assert report["stop_reason"] == "max_iterations"
    assert report["iterations"] == "4"
    j = [float(x) for x in report["j_history"].split(",")]
    assert len(j) == 5
    assert all(b <= a + 1e-10 * (1 + j[0]) for a, b in zip(j, j[1:]))
    assert (generated_dir / "recon_sigma.field").exists()


def test_reconstruct_missing_measurements(tmp_path):
    out = tmp_path / "empty"
    out.mkdir()
    assert run_cli("reconstruct", "--out", str(out)) == 2


def test_evaluate_truth_against_itself(tmp_path):
    out = tmp_path / "irun"
    assert run_cli("generate", "--example", "ex1", "--grid", "16",
                   "--out", str(out)) == 0
    for role in ("sigma", "mu"):
        data = (out / f"truth_{role}.field").read_bytes()
        (out / f"recon_{role}.field").write_bytes(data)
    assert run_cli("evaluate", "--out", str(out)) == 0
    metrics = read_kv(out / "metrics.txt")
    assert float(metrics["sigma_relative_l2_error"]) == 0.0
    assert float(metrics["sigma_support_jaccard"]) == 1.0
    assert float(metrics["mu_background_deviation"]) == 0.0


def test_render_emits_one_pgm_per_field(generated_dir):
    assert run_cli("render", "--out", str(generated_dir)) == 0
    fields = sorted(generated_dir.glob("*.field"))
    for f in fields:
        assert f.with_suffix(".pgm").exists()


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("version=1\nexample=ex1\ngrid=16\nseed=9\n")
    out = tmp_path / "from_cfg"
    assert run_cli("generate", "--config", str(cfg), "--out", str(out)) == 0
    echo = read_kv(out / "run.cfg")
    assert echo["grid"] == "16" and echo["seed"] == "9"
    # flags override config keys
    out2 = tmp_path / "override"
    assert run_cli("generate", "--config", str(cfg), "--grid", "12",
                   "--out", str(out2)) == 0
    assert read_kv(out2 / "run.cfg")["grid"] == "12"
    # missing version key rejected
    bad = tmp_path / "bad.cfg"
    bad.write_text("example=ex1\n")
    assert run_cli("generate", "--config", str(bad), "--out", str(out)) == 2


def test_custom_geometry_file(tmp_path):
    geom = tmp_path / "geom.cfg"
    geom.write_text("\n".join([
        "version=1", "name=custom", "excitations=1",
        "sigma_square_1=0.3,0.7,0.2,15",
        "mu_ring_1=0.6,0.4,0.3,0.2,10",
    ]) + "\n")
    spec = parse_geometry_file(geom)
    assert spec.sigma_inclusions[0].center == (0.3, 0.7)
    assert spec.mu_inclusions[0].value == 10.0
    assert spec.reconstruct_mu
    out = tmp_path / "custom_run"
    assert run_cli("generate", "--geometry", str(geom), "--grid", "16",
                   "--out", str(out)) == 0
    truth = deserialize_field(out / "truth_sigma.field")
    assert truth.values.max() == 15.0


def test_unknown_example_is_config_error(tmp_path):
    # argparse catches bad choices itself; a bad geometry path maps to exit 2
    assert run_cli("generate", "--geometry", str(tmp_path / "nope.cfg"),
                   "--out", str(tmp_path / "o")) == 2

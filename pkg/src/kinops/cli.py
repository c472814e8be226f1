"""Pipeline driver.

One INI config file describes a full study: mechanism and property
files, the scenario grid, noise levels, sampler settings, predictive
ensemble size, and a master seed.  Each subcommand runs one stage and
drops its artifacts into the configured output directory under fixed
names, so the stages chain together without manual bookkeeping:

    kinops generate-data --config study.ini
    kinops invalidate    --config study.ini
    kinops calibrate     --config study.ini
    kinops validate      --config study.ini
    kinops predict       --config study.ini

Stage seeds are derived from the master seed by hashing the stage name,
which makes every stage replayable in isolation.  Exit codes: 0 on
success, 2 when a validation verdict is "invalid", 1 on any error.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import logging
import os
import sys
from dataclasses import dataclass

import numpy as np

from .assess import (
    model_predictive,
    plot_predictive,
    posterior_predictive,
    validate,
    write_band_csv,
    write_gamma_csv,
)
from .bayes import (
    SamplerSettings,
    build_log_posterior,
    chain_diagnostics,
    default_prior,
    dram_sample,
    find_initial_state,
    load_chain,
    save_chain,
)
from .inadequacy import build_operator
from .mechanism import (
    detailed_mechanism_path,
    parse_mechanism,
    reduced_mechanism_path,
)
from .reactor import (
    Scenario,
    build_model,
    integrate,
    observations_from_csv,
    observations_to_csv,
    synthesize_data,
    trajectory_to_csv,
)
from .thermo import default_thermo_path, load_thermo

log = logging.getLogger(__name__)

SCHEMA = """\
# kinops run configuration (INI). Every key is optional; the values
# below are the defaults. Paths may be "builtin" for the shipped files.

[files]
thermo = builtin
detailed_mechanism = builtin
reduced_mechanism = builtin

[grid]
# calibration scenario grid: all phi x T0 combinations
phi = 0.9, 1.0, 1.1
t0 = 1200, 1300, 1400
p0 = 101325
# observation times in microseconds
times_us = 20, 40, 60, 80, 100

[noise]
# standard deviations: species in mol/m^3, temperature in K
sigma_species = 0.0316227766016838
sigma_temperature = 31.6227766016838

[sampler]
n_steps = 25000
burn_in = 5000
initial_scale = 0.1
adapt_start = 1000
adapt_interval = 100
shrink = 0.2

[assess]
j_draws = 500
tolerance = 0.05

[prediction]
phi = 1.15
t0 = 1150

[run]
out = runs/out
seed = 0
"""


@dataclass(frozen=True)
class RunConfig:
    thermo_path: str
    detailed_path: str
    reduced_path: str
    phi_grid: tuple[float, ...]
    t0_grid: tuple[float, ...]
    p0: float
    times: tuple[float, ...]
    sigma_species: float
    sigma_temperature: float
    n_steps: int
    burn_in: int
    initial_scale: float
    adapt_start: int
    adapt_interval: int
    shrink: float
    j_draws: int
    tolerance: float
    prediction_phi: float
    prediction_t0: float
    out_dir: str
    master_seed: int


def _float_list(raw: str) -> tuple[float, ...]:
    items = [part.strip() for part in raw.split(",") if part.strip()]
    return tuple(float(v) for v in items)


def _resolve(raw: str, builtin: str, label: str) -> str:
    if raw == "builtin":
        return builtin
    if not os.path.isfile(raw):
        raise FileNotFoundError(f"{label} file not found: {raw}")
    return raw


def load_config(
    path, out_override: str | None = None, seed_override: int | None = None
) -> RunConfig:
    if not os.path.isfile(path):
        raise FileNotFoundError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    parser.read(path)

    def get(section, key, fallback):
        return parser.get(section, key, fallback=fallback)

    phi_grid = _float_list(get("grid", "phi", "0.9, 1.0, 1.1"))
    t0_grid = _float_list(get("grid", "t0", "1200, 1300, 1400"))
    times_us = _float_list(get("grid", "times_us", "20, 40, 60, 80, 100"))
    if not phi_grid or not t0_grid or not times_us:
        raise ValueError("scenario grid and observation times must be nonempty")
    if any(t <= 0 for t in times_us) or list(times_us) != sorted(times_us):
        raise ValueError("observation times must be positive and increasing")

    cfg = RunConfig(
        thermo_path=_resolve(
            get("files", "thermo", "builtin"), default_thermo_path(), "thermo"
        ),
        detailed_path=_resolve(
            get("files", "detailed_mechanism", "builtin"),
            detailed_mechanism_path(),
            "detailed mechanism",
        ),
        reduced_path=_resolve(
            get("files", "reduced_mechanism", "builtin"),
            reduced_mechanism_path(),
            "reduced mechanism",
        ),
        phi_grid=phi_grid,
        t0_grid=t0_grid,
        p0=float(get("grid", "p0", "101325")),
        times=tuple(t * 1e-6 for t in times_us),
        sigma_species=float(get("noise", "sigma_species", "0.0316227766016838")),
        sigma_temperature=float(
            get("noise", "sigma_temperature", "31.6227766016838")
        ),
        n_steps=int(get("sampler", "n_steps", "25000")),
        burn_in=int(get("sampler", "burn_in", "5000")),
        initial_scale=float(get("sampler", "initial_scale", "0.1")),
        adapt_start=int(get("sampler", "adapt_start", "1000")),
        adapt_interval=int(get("sampler", "adapt_interval", "100")),
        shrink=float(get("sampler", "shrink", "0.2")),
        j_draws=int(get("assess", "j_draws", "500")),
        tolerance=float(get("assess", "tolerance", "0.05")),
        prediction_phi=float(get("prediction", "phi", "1.15")),
        prediction_t0=float(get("prediction", "t0", "1150")),
        out_dir=out_override or get("run", "out", "runs/out"),
        master_seed=seed_override
        if seed_override is not None
        else int(get("run", "seed", "0")),
    )
    if cfg.j_draws < 1:
        raise ValueError("j_draws must be positive")
    if not 0.0 < cfg.tolerance < 1.0:
        raise ValueError("tolerance must lie in (0, 1)")
    return cfg


def stage_seed(master: int, label: str) -> int:
    """Independent per-stage stream, replayable by stage name."""
    digest = hashlib.sha256(f"{master}:{label}".encode()).hexdigest()
    return int(digest[:16], 16)


def calibration_scenarios(cfg: RunConfig) -> tuple[Scenario, ...]:
    return tuple(
        Scenario(phi=phi, t0=t0, p0=cfg.p0, times=cfg.times)
        for phi in cfg.phi_grid
        for t0 in cfg.t0_grid
    )


def prediction_scenario(cfg: RunConfig) -> Scenario:
    return Scenario(
        phi=cfg.prediction_phi, t0=cfg.prediction_t0, p0=cfg.p0, times=cfg.times
    )


# ---------------------------------------------------------------------------
# model construction


def _load_parts(cfg: RunConfig):
    thermo = load_thermo(cfg.thermo_path)
    detailed = parse_mechanism(cfg.detailed_path, thermo=thermo)
    reduced = parse_mechanism(cfg.reduced_path, thermo=thermo)
    return detailed, reduced


def _out(cfg: RunConfig, name: str) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    return os.path.join(cfg.out_dir, name)


def _observations(cfg: RunConfig):
    path = os.path.join(cfg.out_dir, "observations.csv")
    if not os.path.isfile(path):
        raise FileNotFoundError(
            f"{path} not found; run the generate-data stage first"
        )
    return observations_from_csv(path, p0=cfg.p0)


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(cfg: RunConfig, model_name: str, psi_path: str | None) -> int:
    detailed, reduced = _load_parts(cfg)
    if model_name == "detailed":
        model = build_model(detailed)
    elif model_name == "reduced":
        model = build_model(reduced)
    elif model_name == "enriched":
        op = build_operator(reduced)
        if psi_path is None:
            psi = np.zeros(op.dim)
        else:
            psi = np.loadtxt(psi_path, dtype=np.float64).reshape(-1)
        model = op.compile(op.params_from_vector(psi))
    else:
        raise ValueError(f"unknown model {model_name!r}")

    paths = []
    for l, scen in enumerate(calibration_scenarios(cfg)):
        traj = integrate(model, scen)
        path = _out(cfg, f"trajectory_{model_name}_{l:02d}.csv")
        trajectory_to_csv(traj, path)
        paths.append(path)
    print(f"wrote {len(paths)} trajectories:")
    for p in paths:
        print(f"  {p}")
    return 0


def cmd_generate_data(cfg: RunConfig) -> int:
    detailed, reduced = _load_parts(cfg)
    model = build_model(detailed)
    data = synthesize_data(
        model,
        calibration_scenarios(cfg),
        tracked_species=reduced.species_names,
        sigma_species=cfg.sigma_species,
        sigma_T=cfg.sigma_temperature,
        seed=stage_seed(cfg.master_seed, "generate-data"),
    )
    path = _out(cfg, "observations.csv")
    observations_to_csv(data, path)
    print(f"wrote {data.n_d} observations to {path}")
    return 0


def _report_and_emit(cfg: RunConfig, ensemble, data, prefix: str) -> int:
    report = validate(ensemble, data, tau=cfg.tolerance)
    write_gamma_csv(report, _out(cfg, f"{prefix}_gamma.csv"))
    write_band_csv(ensemble, _out(cfg, f"{prefix}_bands.csv"))
    plot_predictive(
        ensemble, data, os.path.join(cfg.out_dir, "plots"), stem=prefix
    )
    print(report.summary())
    return 0 if report.overall_valid else 2


def cmd_invalidate(cfg: RunConfig) -> int:
    _, reduced = _load_parts(cfg)
    data = _observations(cfg)
    ensemble = model_predictive(
        build_model(reduced),
        data,
        J=cfg.j_draws,
        seed=stage_seed(cfg.master_seed, "invalidate"),
    )
    return _report_and_emit(cfg, ensemble, data, "invalidate")


def _sampler_settings(cfg: RunConfig) -> SamplerSettings:
    return SamplerSettings(
        n_steps=cfg.n_steps,
        burn_in=cfg.burn_in,
        seed=stage_seed(cfg.master_seed, "calibrate"),
        initial_scale=cfg.initial_scale,
        adapt_start=cfg.adapt_start,
        adapt_interval=cfg.adapt_interval,
        shrink=cfg.shrink,
    )


def cmd_calibrate(cfg: RunConfig) -> int:
    _, reduced = _load_parts(cfg)
    data = _observations(cfg)
    op = build_operator(reduced)
    prior = default_prior(op)
    posterior = build_log_posterior(op, data, prior)
    init, lp0 = find_initial_state(
        posterior, prior, seed=stage_seed(cfg.master_seed, "calibrate-init")
    )
    log.info("starting chain at log posterior %.3f", lp0)
    chain = dram_sample(
        posterior, init, _sampler_settings(cfg), names=prior.sampling_names()
    )
    save_chain(_out(cfg, "chain.csv"), chain)

    report = chain_diagnostics(chain)
    lines = [report.summary(), "", "parameter, mean, sd, ess"]
    for i, name in enumerate(report.names):
        lines.append(
            f"{name}, {report.mean[i]:.6g}, {report.sd[i]:.6g}, "
            f"{report.ess[i]:.1f}"
        )
    diag_path = _out(cfg, "diagnostics.txt")
    with open(diag_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print(report.summary())
    print(f"wrote {chain.n_steps} samples to {_out(cfg, 'chain.csv')}")
    return 0


def _load_chain_for(cfg: RunConfig, prior):
    path = os.path.join(cfg.out_dir, "chain.csv")
    if not os.path.isfile(path):
        raise FileNotFoundError(f"{path} not found; run the calibrate stage first")
    chain = load_chain(path)
    if chain.names != prior.sampling_names():
        raise ValueError(f"{path}: chain columns do not match the current model")
    return chain


def cmd_validate(cfg: RunConfig) -> int:
    _, reduced = _load_parts(cfg)
    data = _observations(cfg)
    op = build_operator(reduced)
    prior = default_prior(op)
    chain = _load_chain_for(cfg, prior)
    ensemble = posterior_predictive(
        op,
        prior,
        chain,
        data,
        J=cfg.j_draws,
        seed=stage_seed(cfg.master_seed, "validate"),
    )
    return _report_and_emit(cfg, ensemble, data, "validate")


def cmd_predict(cfg: RunConfig) -> int:
    detailed, reduced = _load_parts(cfg)
    scen = prediction_scenario(cfg)
    data = synthesize_data(
        build_model(detailed),
        [scen],
        tracked_species=reduced.species_names,
        sigma_species=cfg.sigma_species,
        sigma_T=cfg.sigma_temperature,
        seed=stage_seed(cfg.master_seed, "predict-data"),
    )
    observations_to_csv(data, _out(cfg, "prediction_observations.csv"))

    op = build_operator(reduced)
    prior = default_prior(op)
    chain = _load_chain_for(cfg, prior)
    ensemble = posterior_predictive(
        op,
        prior,
        chain,
        data,
        J=cfg.j_draws,
        seed=stage_seed(cfg.master_seed, "predict"),
    )
    return _report_and_emit(cfg, ensemble, data, "predict")


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kinops",
        description="reduced-kinetics inadequacy pipeline",
    )
    parser.add_argument(
        "--print-schema",
        action="store_true",
        help="print the documented config schema and exit",
    )
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command")

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="INI config path")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument(
            "--seed", type=int, default=None, help="override the master seed"
        )
        return p

    sim = add("simulate", "integrate one model over the scenario grid")
    sim.add_argument(
        "--model",
        choices=("detailed", "reduced", "enriched"),
        default="detailed",
    )
    sim.add_argument(
        "--psi", default=None, help="parameter vector file for the enriched model"
    )
    add("generate-data", "synthesize noisy observations from the detailed model")
    add("invalidate", "assess the bare reduced model against the observations")
    add("calibrate", "sample the operator posterior and write the chain")
    add("validate", "posterior-predictive check on the calibration scenarios")
    add("predict", "posterior-predictive check on the held-out scenario")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if args.print_schema:
        print(SCHEMA, end="")
        return 0
    if args.command is None:
        parser.print_help()
        return 1
    try:
        cfg = load_config(args.config, out_override=args.out, seed_override=args.seed)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.model, args.psi)
        if args.command == "generate-data":
            return cmd_generate_data(cfg)
        if args.command == "invalidate":
            return cmd_invalidate(cfg)
        if args.command == "calibrate":
            return cmd_calibrate(cfg)
        if args.command == "validate":
            return cmd_validate(cfg)
        if args.command == "predict":
            return cmd_predict(cfg)
        raise ValueError(f"unknown command {args.command!r}")
    except Exception as exc:  # CLI boundary: everything becomes exit code 1
        print(f"error: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())

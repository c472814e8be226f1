"""Constant-volume adiabatic reactor on top of the compiled kernels.

The public boundary works in mol/m^3 and kelvin; internally everything is
mol/cm^3 to match the mechanism units.  A :class:`CompiledModel` bundles a
mechanism with (optionally) the enrichment blocks of an inadequacy
operator, so the same integrator drives detailed, reduced and enriched
models.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import _kernels
from .constants import CM3_PER_M3, CONC_M3_TO_CM3, GAS_CONSTANT, P_ATM
from .mechanism import Mechanism

DEFAULT_RTOL = 1.0e-8
DEFAULT_ATOL = 1.0e-12  # internal mol/cm^3 units

# observation noise scales: variances 0.001 (mol/m^3)^2 and 1000 K^2
SIGMA_SPECIES = math.sqrt(0.001)
SIGMA_T = math.sqrt(1000.0)


class ReactorError(RuntimeError):
    """Base class for reactor evaluation and integration failures."""


class NegativeConcentrationError(ReactorError):
    pass


class SingularEnergyError(ReactorError):
    pass


class TemperatureBoundsError(ReactorError):
    pass


class StiffnessError(ReactorError):
    """Step size underflow.  Carries the last accepted state."""

    def __init__(self, message: str, t: float, state: "ReactorState"):
        super().__init__(message)
        self.t = t
        self.state = state


class KernelModel(NamedTuple):
    """Numeric payload consumed by the compiled kernels.

    State layout: catchall species first (n_cat of them), then the
    mechanism species in file order, then temperature.
    """

    n_cat: int
    nu_reac: np.ndarray
    nu_prod: np.ndarray
    arrh_a: np.ndarray
    arrh_b: np.ndarray
    arrh_e: np.ndarray
    third_body: np.ndarray
    reversible: np.ndarray
    coeff_low: np.ndarray
    coeff_high: np.ndarray
    t_mid: np.ndarray
    t_min: float
    t_max: float
    transfer: np.ndarray
    cat_coeff: np.ndarray
    cat_expo: np.ndarray
    cat_net: np.ndarray
    cat_energy: np.ndarray


@dataclass(frozen=True)
class CompiledModel:
    """A mechanism (plus optional enrichment) ready for integration."""

    payload: KernelModel
    species_names: tuple[str, ...]
    catchall_elements: tuple[str, ...]
    mechanism: Mechanism

    @property
    def n_state(self) -> int:
        return len(self.species_names)

    @property
    def n_cat(self) -> int:
        return self.payload.n_cat

    def index(self, name: str) -> int:
        try:
            return self.species_names.index(name)
        except ValueError:
            raise ReactorError(f"model does not track species {name!r}") from None

    def atom_matrix(self) -> np.ndarray:
        """Atom counts over the full state, catchall columns included."""
        elements = self.mechanism.elements
        mat = np.zeros((len(elements), self.n_state))
        for c, el in enumerate(self.catchall_elements):
            mat[elements.index(el), c] = 1.0
        mech_block = self.mechanism.atom_matrix()
        mat[:, self.n_cat :] = mech_block
        return mat


def build_model(
    mech: Mechanism,
    *,
    catchalls: Sequence[tuple[str, str]] = (),
    transfer: np.ndarray | None = None,
    cat_coeff: np.ndarray | None = None,
    cat_expo: np.ndarray | None = None,
    cat_net: np.ndarray | None = None,
    cat_energy: np.ndarray | None = None,
) -> CompiledModel:
    """Assemble the kernel payload for a mechanism, optionally enriched.

    ``catchalls`` lists (name, element) pairs prepended to the state.
    ``transfer`` (1/s) acts on the full state; ``cat_coeff`` carries the
    catchall rate coefficients in the mechanism's internal cm^3-mol-s
    system (the units the rate exponents imply); ``cat_expo`` holds the
    per-reaction concentration exponents; ``cat_energy`` holds one
    quadratic internal-energy fit (J/mol coefficients) per catchall.
    """
    arr = mech.arrays()
    n_cat = len(catchalls)
    names = tuple(n for n, _ in catchalls) + tuple(mech.species_names)
    n = len(names)
    if len(set(names)) != n:
        raise ReactorError("catchall names collide with mechanism species")

    if transfer is None:
        transfer = np.zeros((n, n))
    transfer = np.ascontiguousarray(np.asarray(transfer, dtype=np.float64))
    if transfer.shape != (n, n):
        raise ReactorError(f"linear operator must be {(n, n)}, got {transfer.shape}")

    if cat_coeff is None:
        cat_coeff = np.zeros(0)
        cat_expo = np.zeros((0, n), dtype=np.int64)
        cat_net = np.zeros((0, n))
    else:
        cat_coeff = np.ascontiguousarray(np.asarray(cat_coeff, dtype=np.float64))
        cat_expo = np.ascontiguousarray(np.asarray(cat_expo, dtype=np.int64))
        cat_net = np.ascontiguousarray(np.asarray(cat_net, dtype=np.float64))
        if cat_expo.shape != (cat_coeff.size, n) or cat_net.shape != cat_expo.shape:
            raise ReactorError("catchall reaction arrays have inconsistent shapes")
        if np.any(cat_expo < 0):
            raise ReactorError("catchall rate exponents must be non-negative")

    if cat_energy is None:
        cat_energy = np.zeros((n_cat, 3))
    cat_energy = np.ascontiguousarray(np.asarray(cat_energy, dtype=np.float64))
    if cat_energy.shape != (n_cat, 3):
        raise ReactorError(f"cat_energy must be {(n_cat, 3)}, got {cat_energy.shape}")

    payload = KernelModel(
        n_cat=n_cat,
        nu_reac=arr.nu_reac,
        nu_prod=arr.nu_prod,
        arrh_a=arr.arrh_a,
        arrh_b=arr.arrh_b,
        arrh_e=arr.arrh_e,
        third_body=arr.third_body,
        reversible=arr.reversible,
        coeff_low=arr.coeff_low,
        coeff_high=arr.coeff_high,
        t_mid=arr.t_mid,
        t_min=float(arr.t_low.max()),
        t_max=float(arr.t_high.min()),
        transfer=transfer,
        cat_coeff=np.ascontiguousarray(cat_coeff),
        cat_expo=np.ascontiguousarray(cat_expo),
        cat_net=np.ascontiguousarray(cat_net),
        cat_energy=cat_energy,
    )
    return CompiledModel(
        payload=payload,
        species_names=names,
        catchall_elements=tuple(el for _, el in catchalls),
        mechanism=mech,
    )


@dataclass(frozen=True)
class ReactorState:
    """Concentrations (mol/m^3), temperature (K) and time (s)."""

    x: np.ndarray
    T: float
    t: float = 0.0

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=np.float64)
        object.__setattr__(self, "x", x)
        if self.T <= 0.0:
            raise ValueError(f"nonpositive temperature {self.T}")
        floor = -1.0e-13 * max(x.max(initial=0.0), 1.0)
        if (x < floor).any():
            raise ValueError("concentration vector has significant negatives")


@dataclass(frozen=True)
class Scenario:
    """Initial condition and observation schedule for one reactor run."""

    phi: float
    t0: float
    p0: float = P_ATM
    times: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.phi <= 0.0:
            raise ValueError(f"equivalence ratio must be positive, got {self.phi}")
        if self.t0 <= 0.0 or self.p0 <= 0.0:
            raise ValueError("initial temperature and pressure must be positive")
        times = tuple(float(t) for t in self.times)
        object.__setattr__(self, "times", times)
        if not times:
            raise ValueError("scenario needs at least one observation time")
        if times[0] <= 0.0 or any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("observation times must be positive and increasing")

    @property
    def label(self) -> str:
        return f"phi={self.phi:g}, T0={self.t0:g} K"


def initial_state(
    scenario: Scenario,
    model: CompiledModel,
    fuel: str = "H2",
    oxidizer: str = "O2",
) -> ReactorState:
    """Fuel/oxidizer mixture at the scenario pressure and temperature.

    The mixture is fuel and oxidizer only; the fuel-to-oxidizer mole
    ratio is 2*phi for the H2/O2 stoichiometry.
    """
    c_tot = scenario.p0 / (GAS_CONSTANT * scenario.t0)  # mol/m^3
    x = np.zeros(model.n_state)
    ratio = 2.0 * scenario.phi
    x[model.index(fuel)] = c_tot * ratio / (1.0 + ratio)
    x[model.index(oxidizer)] = c_tot / (1.0 + ratio)
    return ReactorState(x=x, T=scenario.t0, t=0.0)


def rhs(
    model: CompiledModel, state: ReactorState, atol: float = DEFAULT_ATOL
) -> tuple[np.ndarray, float]:
    """Time derivative (dx/dt in mol/(m^3 s), dT/dt in K/s)."""
    n = model.n_state
    y = np.empty(n + 1)
    y[:n] = state.x * CONC_M3_TO_CM3
    y[n] = state.T
    out = np.empty(n + 1)
    status = _kernels.rhs(y, model.payload, atol, out)
    if status == _kernels.STATUS_NEGATIVE:
        raise NegativeConcentrationError(
            "concentration below the negative-clip window"
        )
    if status == _kernels.STATUS_T_RANGE:
        raise TemperatureBoundsError(
            f"temperature {state.T:.1f} K outside the fitted thermo range "
            f"[{model.payload.t_min:.0f}, {model.payload.t_max:.0f}] K"
        )
    if status == _kernels.STATUS_SINGULAR_ENERGY:
        raise SingularEnergyError("nonpositive heat-capacity weighted sum")
    return out[:n] * CM3_PER_M3, float(out[n])


@dataclass(frozen=True)
class Trajectory:
    """Accepted integrator states, observation times included exactly."""

    scenario: Scenario
    species_names: tuple[str, ...]
    times: np.ndarray
    states: np.ndarray  # (n_rows, n_species + 1), mol/m^3 and K
    stats: dict = field(default_factory=dict)

    @property
    def temperatures(self) -> np.ndarray:
        return self.states[:, -1]

    def state_at(self, t: float) -> np.ndarray:
        """Linear interpolation between accepted steps."""
        if t < self.times[0] or t > self.times[-1]:
            raise ReactorError(
                f"time {t} outside trajectory span "
                f"[{self.times[0]}, {self.times[-1]}]"
            )
        out = np.empty(self.states.shape[1])
        for k in range(self.states.shape[1]):
            out[k] = np.interp(t, self.times, self.states[:, k])
        return out


def integrate(
    model: CompiledModel,
    scenario: Scenario,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
    max_steps: int = 200_000,
    state0: ReactorState | None = None,
) -> Trajectory:
    """Integrate from t=0 through the last observation time.

    ``state0`` overrides the scenario's fuel/oxidizer mixture when a run
    should start from an explicit state.
    """
    if rtol <= 0.0 or atol <= 0.0:
        raise ValueError("tolerances must be positive")
    if state0 is None:
        state0 = initial_state(scenario, model)
    elif state0.x.size != model.n_state:
        raise ReactorError("initial state size does not match the model")
    n = model.n_state
    y0 = np.empty(n + 1)
    y0[:n] = state0.x * CONC_M3_TO_CM3
    y0[n] = state0.T
    t_out = np.asarray(scenario.times, dtype=np.float64)

    status, n_rows, ts, ys, t_last, y_last, nfev, nacc, nrej = _kernels.integrate(
        y0, t_out, rtol, atol, model.payload, max_steps
    )
    if status != _kernels.STATUS_OK:
        last_state = ReactorState(
            x=np.maximum(y_last[:n], 0.0) * CM3_PER_M3, T=float(y_last[n]), t=t_last
        )
        if status == _kernels.STATUS_STEP_UNDERFLOW:
            raise StiffnessError(
                f"step size underflow at t = {t_last:.3e} s ({scenario.label})",
                t_last,
                last_state,
            )
        if status == _kernels.STATUS_STEP_BUDGET:
            raise ReactorError(
                f"step budget {max_steps} exhausted at t = {t_last:.3e} s "
                f"({scenario.label})"
            )
        if status == _kernels.STATUS_SINGULAR_ENERGY:
            raise SingularEnergyError(
                f"nonpositive heat-capacity sum at t = {t_last:.3e} s"
            )
        if status == _kernels.STATUS_T_RANGE:
            raise TemperatureBoundsError(
                f"temperature left the fitted range at t = {t_last:.3e} s"
            )
        raise NegativeConcentrationError(
            f"invalid initial concentrations ({scenario.label})"
        )

    states = ys[:n_rows].copy()
    states[:, :n] *= CM3_PER_M3
    return Trajectory(
        scenario=scenario,
        species_names=model.species_names,
        times=ts[:n_rows].copy(),
        states=states,
        stats={"nfev": int(nfev), "naccept": int(nacc), "nreject": int(nrej)},
    )


def observe(
    trajectory: Trajectory,
    times: Sequence[float],
    tracked_species: Sequence[str],
) -> np.ndarray:
    """Sample tracked species plus temperature at the given times.

    Returns an array of shape (n_times, n_tracked + 1); the last column is
    temperature.  Times must lie within the trajectory span.
    """
    cols = [trajectory.species_names.index(s) for s in tracked_species]
    out = np.empty((len(times), len(cols) + 1))
    for j, t in enumerate(times):
        row = trajectory.state_at(float(t))
        out[j, :-1] = row[cols]
        out[j, -1] = row[-1]
    return out


@dataclass(frozen=True)
class ObservationSet:
    """Noisy observables on a scenario grid, one shared time schedule.

    ``values[l, j, i]`` is observable i at time j under scenario l; the
    observable axis is the tracked species followed by temperature.
    ``truth`` holds the noiseless model output when known.
    """

    scenarios: tuple[Scenario, ...]
    observables: tuple[str, ...]
    times: tuple[float, ...]
    values: np.ndarray
    sigma: np.ndarray
    seed: int | None = None
    truth: np.ndarray | None = None

    def __post_init__(self) -> None:
        expected = (len(self.scenarios), len(self.times), len(self.observables))
        if self.values.shape != expected:
            raise ValueError(f"values must have shape {expected}")
        if (np.asarray(self.sigma) < 0.0).any():
            raise ValueError("noise scales must be nonnegative")

    @property
    def n_d(self) -> int:
        return int(np.prod(self.values.shape))

    def flat(self) -> tuple[np.ndarray, np.ndarray]:
        """Values and matching sigmas as flat vectors (scenario-major)."""
        flat_values = self.values.reshape(-1)
        flat_sigma = np.broadcast_to(self.sigma, self.values.shape).reshape(-1)
        return flat_values, flat_sigma


def synthesize_data(
    model: CompiledModel,
    scenarios: Sequence[Scenario],
    tracked_species: Sequence[str],
    sigma_species: float = SIGMA_SPECIES,
    sigma_T: float = SIGMA_T,
    seed: int = 0,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
) -> ObservationSet:
    """Integrate the model per scenario and add iid Gaussian noise.

    All scenarios must share one observation-time schedule.  Deterministic
    for a fixed seed; failures carry the offending scenario's identity.
    """
    if not scenarios:
        raise ValueError("need at least one scenario")
    times = scenarios[0].times
    if any(s.times != times for s in scenarios):
        raise ValueError("all scenarios in one observation set share the same times")

    n_obs = len(tracked_species) + 1
    truth = np.empty((len(scenarios), len(times), n_obs))
    for l, scen in enumerate(scenarios):
        try:
            traj = integrate(model, scen, rtol=rtol, atol=atol)
        except ReactorError as exc:
            raise ReactorError(f"scenario {l} ({scen.label}): {exc}") from exc
        truth[l] = observe(traj, times, tracked_species)

    sigma = np.full(n_obs, sigma_species)
    sigma[-1] = sigma_T
    rng = np.random.default_rng(seed)
    values = truth + rng.standard_normal(truth.shape) * sigma
    return ObservationSet(
        scenarios=tuple(scenarios),
        observables=tuple(tracked_species) + ("T",),
        times=times,
        values=values,
        sigma=sigma,
        seed=seed,
        truth=truth,
    )


# -- CSV interfaces -------------------------------------------------------

OBSERVATION_CSV_COLUMNS = (
    "scenario_id",
    "phi",
    "T0",
    "time_s",
    "observable_name",
    "value",
    "sigma",
)


def observations_to_csv(obs: ObservationSet, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(OBSERVATION_CSV_COLUMNS)
        for l, scen in enumerate(obs.scenarios):
            for j, t in enumerate(obs.times):
                for i, name in enumerate(obs.observables):
                    writer.writerow(
                        [
                            l,
                            f"{scen.phi:.17g}",
                            f"{scen.t0:.17g}",
                            f"{t:.17g}",
                            name,
                            f"{obs.values[l, j, i]:.17g}",
                            f"{obs.sigma[i]:.17g}",
                        ]
                    )


def observations_from_csv(path: str | Path, p0: float = P_ATM) -> ObservationSet:
    """Rebuild an ObservationSet written by :func:`observations_to_csv`.

    The schema does not carry p0; pass it when the file was generated at a
    non-default pressure.
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != list(OBSERVATION_CSV_COLUMNS):
            raise ValueError(
                f"{path}: expected columns {OBSERVATION_CSV_COLUMNS}, "
                f"got {reader.fieldnames}"
            )
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: empty observation file")

    by_scenario: dict[int, dict] = {}
    times: list[float] = []
    observables: list[str] = []
    for row in rows:
        sid = int(row["scenario_id"])
        info = by_scenario.setdefault(
            sid, {"phi": float(row["phi"]), "T0": float(row["T0"]), "entries": {}}
        )
        t = float(row["time_s"])
        name = row["observable_name"]
        info["entries"][(t, name)] = (float(row["value"]), float(row["sigma"]))
        if t not in times:
            times.append(t)
        if name not in observables:
            observables.append(name)

    times.sort()
    sids = sorted(by_scenario)
    values = np.empty((len(sids), len(times), len(observables)))
    sigma = np.empty(len(observables))
    scenarios = []
    for l, sid in enumerate(sids):
        info = by_scenario[sid]
        scenarios.append(
            Scenario(phi=info["phi"], t0=info["T0"], p0=p0, times=tuple(times))
        )
        for j, t in enumerate(times):
            for i, name in enumerate(observables):
                try:
                    value, sig = info["entries"][(t, name)]
                except KeyError:
                    raise ValueError(
                        f"{path}: scenario {sid} missing observable {name} at t={t}"
                    ) from None
                values[l, j, i] = value
                sigma[i] = sig
    return ObservationSet(
        scenarios=tuple(scenarios),
        observables=tuple(observables),
        times=tuple(times),
        values=values,
        sigma=sigma,
    )


def trajectory_to_csv(traj: Trajectory, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_s", *traj.species_names, "T"])
        for k in range(traj.times.size):
            writer.writerow(
                [f"{traj.times[k]:.17g}"]
                + [f"{v:.17g}" for v in traj.states[k]]
            )

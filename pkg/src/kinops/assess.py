"""Posterior-predictive assessment.

An ensemble of predictive draws is built by pushing hyperparameter rows
from a chain through the conditional parameter distribution, the
enriched reactor, and the observation-noise model.  Each observation is
then scored with a density-ordering tail probability: the fraction of
ensemble draws whose estimated predictive density falls strictly below
the density at the observation.  Small values flag observations the
model considers improbable; the pass threshold divides the tolerance by
the number of observations so the whole report controls the familywise
rate.

Density estimates use a Gaussian kernel with the 1.06 sigma J^(-1/5)
bandwidth.  For moderate ensembles the pairwise evaluation is exact; on
very large ones the draw densities come from a fine binned convolution
grid (well below kernel resolution) while the observation density is
always an exact kernel sum.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bayes import Chain, PriorSpec
from .inadequacy import InadequacyOperator, OperatorError
from .reactor import (
    DEFAULT_ATOL,
    CompiledModel,
    ObservationSet,
    ReactorError,
    integrate,
    observe,
)

__all__ = [
    "AssessmentError",
    "DegenerateEnsembleError",
    "PredictiveEnsemble",
    "GammaReport",
    "posterior_predictive",
    "model_predictive",
    "gamma",
    "credible_band",
    "bonferroni_threshold",
    "validate",
    "ks_uniformity",
    "write_gamma_csv",
    "write_band_csv",
    "plot_predictive",
]


class AssessmentError(RuntimeError):
    """Predictive ensemble could not be built or scored."""


class DegenerateEnsembleError(AssessmentError):
    """All draws identical; no density ordering exists."""


# ---------------------------------------------------------------------------
# predictive ensembles


@dataclass(frozen=True, eq=False)
class PredictiveEnsemble:
    """Predictive draws on an observation grid.

    ``draws[j, l, k, i]`` is draw j of observable i at time k under
    scenario l, observation noise included.  Failed draws are dropped
    during construction, so the first axis holds the survivors.
    """

    scenarios: tuple
    observables: tuple[str, ...]
    times: tuple[float, ...]
    draws: np.ndarray
    sigma: np.ndarray
    seed: int
    n_attempted: int
    n_failed: int

    def __post_init__(self):
        expected = (len(self.scenarios), len(self.times), len(self.observables))
        if self.draws.ndim != 4 or self.draws.shape[1:] != expected:
            raise ValueError(f"draws must have shape (J, {expected})")
        if not np.all(np.isfinite(self.draws)):
            raise ValueError("draws must be finite")

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]


def _tracked_names(data: ObservationSet) -> tuple[str, ...]:
    if data.observables[-1] != "T":
        raise ValueError("observation set must end with the temperature column")
    return data.observables[:-1]


def posterior_predictive(
    op: InadequacyOperator,
    spec: PriorSpec,
    chain: Chain,
    data: ObservationSet,
    J: int = 500,
    seed: int = 0,
    rtol: float = 1e-6,
    atol: float = DEFAULT_ATOL,
    max_failure_fraction: float = 0.05,
) -> PredictiveEnsemble:
    """Push chain rows through the enriched model onto the data grid.

    Each draw picks a retained chain row, samples a fresh parameter
    vector from its conditional distribution, integrates every scenario,
    and adds observation noise.  The ensemble always carries exactly J
    draws: a failed integration is dropped, counted, and replaced by a
    further attempt from a fresh chain row.  More failures than
    ``max_failure_fraction`` of J is an error.  Deterministic for a
    fixed seed.
    """
    kept = chain.retained()
    n = spec.n_components
    if kept.shape[1] != spec.sampling_dim:
        raise ValueError("chain dimension does not match the prior spec")
    if J < 1:
        raise ValueError("need at least one draw")
    tracked = _tracked_names(data)
    sigma = np.asarray(data.sigma, dtype=np.float64)

    rng = np.random.default_rng(seed)
    rows = list(rng.choice(kept.shape[0], size=J, replace=kept.shape[0] < J))
    shape = (len(data.scenarios), len(data.times), len(data.observables))
    out = np.empty((J,) + shape)
    max_failures = max_failure_fraction * J
    n_ok = 0
    n_failed = 0
    attempt = 0
    while n_ok < J:
        if attempt < len(rows):
            r = rows[attempt]
        else:
            # replacement attempt after a dropped draw
            r = int(rng.integers(0, kept.shape[0]))
        attempt += 1
        mu = kept[r, n : 2 * n]
        eta = np.exp(kept[r, 2 * n :])
        z = rng.standard_normal(n)
        t = mu + eta * z
        try:
            psi = np.array(
                [math.exp(ti) if is_log else ti
                 for ti, is_log in zip(t, spec.log_scale)]
            )
            model = op.compile(op.params_from_vector(psi))
            pred = np.empty(shape)
            for l, scen in enumerate(data.scenarios):
                traj = integrate(model, scen, rtol=rtol, atol=atol)
                pred[l] = observe(traj, data.times, tracked)
        except (OverflowError, OperatorError, ReactorError):
            n_failed += 1
            if n_failed > max_failures:
                raise AssessmentError(
                    f"{n_failed} of {J} predictive draws failed to integrate"
                )
            continue
        out[n_ok] = pred + rng.standard_normal(shape) * sigma
        n_ok += 1

    return PredictiveEnsemble(
        scenarios=data.scenarios,
        observables=data.observables,
        times=data.times,
        draws=out,
        sigma=sigma,
        seed=seed,
        n_attempted=attempt,
        n_failed=n_failed,
    )


def model_predictive(
    model: CompiledModel,
    data: ObservationSet,
    J: int = 500,
    seed: int = 0,
    rtol: float = 1e-6,
    atol: float = DEFAULT_ATOL,
) -> PredictiveEnsemble:
    """Predictive for a deterministic model: its output plus noise.

    This is the assessment path for a bare mechanism, whose rate
    parameters are treated as known, so the predictive density is the
    noise distribution centered on the integrated trajectory.
    """
    tracked = _tracked_names(data)
    sigma = np.asarray(data.sigma, dtype=np.float64)
    shape = (len(data.scenarios), len(data.times), len(data.observables))
    pred = np.empty(shape)
    for l, scen in enumerate(data.scenarios):
        traj = integrate(model, scen, rtol=rtol, atol=atol)
        pred[l] = observe(traj, data.times, tracked)
    rng = np.random.default_rng(seed)
    draws = pred[None] + rng.standard_normal((J,) + shape) * sigma
    return PredictiveEnsemble(
        scenarios=data.scenarios,
        observables=data.observables,
        times=data.times,
        draws=draws,
        sigma=sigma,
        seed=seed,
        n_attempted=J,
        n_failed=0,
    )


# ---------------------------------------------------------------------------
# density-ordering score


def _kde_densities(x: np.ndarray, at: np.ndarray, h: float) -> np.ndarray:
    """Exact Gaussian kernel density of sample x at the given points."""
    out = np.empty(at.size)
    norm = 1.0 / (x.size * h * math.sqrt(2.0 * math.pi))
    # chunked so the pairwise matrix stays small
    step = max(1, int(4.0e6 / x.size))
    for i in range(0, at.size, step):
        z = (at[i : i + step, None] - x[None, :]) / h
        out[i : i + step] = norm * np.exp(-0.5 * z * z).sum(axis=1)
    return out


def _kde_grid_densities(x: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Binned-convolution density on a grid much finer than the kernel."""
    lo = x.min() - 6.0 * h
    hi = x.max() + 6.0 * h
    n_grid = int(min(2**16, max(1024, math.ceil((hi - lo) / h) * 16)))
    grid = np.linspace(lo, hi, n_grid)
    delta = grid[1] - grid[0]
    counts = np.histogram(x, bins=n_grid, range=(lo - 0.5 * delta, hi + 0.5 * delta))[0]
    half = int(math.ceil(6.0 * h / delta))
    offsets = np.arange(-half, half + 1) * delta
    kernel = np.exp(-0.5 * (offsets / h) ** 2)
    dens = np.convolve(counts, kernel, mode="same")
    dens /= x.size * h * math.sqrt(2.0 * math.pi)
    return grid, dens


_EXACT_KDE_LIMIT = 4096


def gamma(draws: Sequence[float], observation: float) -> float:
    """Fraction of draws whose estimated density lies strictly below the
    density at the observation.

    Values near one mean the observation sits in the bulk; values near
    zero mean almost every draw is more probable than it.  Ties do not
    count, which can only lower the score.
    """
    x = np.asarray(draws, dtype=np.float64)
    if x.size < 100:
        raise ValueError("need at least 100 draws")
    if not np.isfinite(observation):
        raise ValueError("observation must be finite")
    sd = float(x.std(ddof=1))
    if not sd > 0.0:
        raise DegenerateEnsembleError("ensemble draws are all identical")
    h = 1.06 * sd * x.size ** (-0.2)

    if x.size <= _EXACT_KDE_LIMIT:
        at_draws = _kde_densities(x, x, h)
    else:
        grid, dens = _kde_grid_densities(x, h)
        at_draws = np.interp(x, grid, dens)
    # the observation may sit far outside the draw range, so its density
    # is always an exact kernel sum
    at_obs = float(_kde_densities(x, np.array([observation]), h)[0])
    return float(np.count_nonzero(at_draws < at_obs)) / x.size


def credible_band(
    draws: Sequence[float], levels: Sequence[float] = (0.65, 0.95)
) -> dict[float, tuple[float, float]]:
    """Shortest intervals holding each level's mass (sorted-window).

    For unimodal ensembles the intervals nest as the level grows.
    """
    x = np.sort(np.asarray(draws, dtype=np.float64))
    if x.size < 100:
        raise ValueError("need at least 100 draws")
    out = {}
    for level in levels:
        if not 0.0 < level < 1.0:
            raise ValueError("levels must lie in (0, 1)")
        m = min(x.size, max(2, math.ceil(level * x.size)))
        widths = x[m - 1 :] - x[: x.size - m + 1]
        i = int(np.argmin(widths))
        out[float(level)] = (float(x[i]), float(x[i + m - 1]))
    return out


def bonferroni_threshold(tau: float, n: int) -> float:
    """Familywise tolerance split evenly over n observations."""
    if not 0.0 < tau < 1.0:
        raise ValueError("tolerance must lie in (0, 1)")
    if n < 1:
        raise ValueError("need at least one observation")
    return tau / n


# ---------------------------------------------------------------------------
# validation report


@dataclass(frozen=True, eq=False)
class GammaReport:
    """Per-observation scores and the familywise verdict."""

    scenarios: tuple
    observables: tuple[str, ...]
    times: tuple[float, ...]
    gamma: np.ndarray
    tau: float
    threshold: float
    passed: np.ndarray

    @property
    def n_points(self) -> int:
        return int(self.gamma.size)

    @property
    def n_failed(self) -> int:
        return int(self.gamma.size - np.count_nonzero(self.passed))

    @property
    def overall_valid(self) -> bool:
        return bool(np.all(self.passed))

    @property
    def verdict(self) -> str:
        return "valid" if self.overall_valid else "invalid"

    def failures(self) -> list[tuple[str, float, str, float]]:
        """(scenario label, time, observable, score) for each failing point."""
        rows = []
        for l, scen in enumerate(self.scenarios):
            for k, t in enumerate(self.times):
                for i, name in enumerate(self.observables):
                    if not self.passed[l, k, i]:
                        rows.append((scen.label, t, name, float(self.gamma[l, k, i])))
        return rows

    def summary(self) -> str:
        lines = [
            f"verdict: {self.verdict}",
            f"{self.n_points} observations, tolerance {self.tau:g} "
            f"(per-point threshold {self.threshold:.3e})",
            f"{self.n_failed} failing",
        ]
        for label, t, name, g in self.failures()[:20]:
            lines.append(f"  {label}, t = {t * 1e6:.0f} us, {name}: gamma = {g:.2e}")
        return "\n".join(lines)


def validate(
    ensemble: PredictiveEnsemble,
    data: ObservationSet,
    tau: float = 0.05,
    min_draws: int = 500,
) -> GammaReport:
    """Score every observation against the ensemble.

    A point fails when its score drops below tau divided by the number
    of points; one failing point makes the whole report invalid.
    """
    if ensemble.n_draws < min_draws:
        raise AssessmentError(
            f"{ensemble.n_draws} draws is below the reporting minimum {min_draws}"
        )
    if (
        ensemble.scenarios != data.scenarios
        or ensemble.times != data.times
        or ensemble.observables != data.observables
    ):
        raise ValueError("ensemble does not cover the observation grid")
    shape = data.values.shape
    scores = np.empty(shape)
    for l in range(shape[0]):
        for k in range(shape[1]):
            for i in range(shape[2]):
                scores[l, k, i] = gamma(
                    ensemble.draws[:, l, k, i], data.values[l, k, i]
                )
    threshold = bonferroni_threshold(tau, int(scores.size))
    return GammaReport(
        scenarios=data.scenarios,
        observables=data.observables,
        times=data.times,
        gamma=scores,
        tau=tau,
        threshold=threshold,
        passed=scores >= threshold,
    )


# ---------------------------------------------------------------------------
# uniformity check


def ks_uniformity(values: Sequence[float]) -> tuple[float, float]:
    """Kolmogorov-Smirnov statistic and p-value against Uniform(0, 1)."""
    u = np.sort(np.asarray(values, dtype=np.float64))
    n = u.size
    if n < 10:
        raise ValueError("need at least 10 values")
    if np.any((u < 0.0) | (u > 1.0)):
        raise ValueError("values must lie in [0, 1]")
    pos = np.arange(1, n + 1) / n
    d = float(max(np.max(pos - u), np.max(u - (pos - 1.0 / n))))
    lam = (math.sqrt(n) + 0.12 + 0.11 / math.sqrt(n)) * d
    total = 0.0
    for k in range(1, 101):
        term = 2.0 * (-1.0) ** (k - 1) * math.exp(-2.0 * k * k * lam * lam)
        total += term
        if abs(term) < 1e-12:
            break
    return d, min(max(total, 0.0), 1.0)


# ---------------------------------------------------------------------------
# emission


GAMMA_CSV_COLUMNS = ("phi", "T0", "time_index", "time", "observable", "gamma", "passed")


def write_gamma_csv(report: GammaReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(GAMMA_CSV_COLUMNS)
        for l, scen in enumerate(report.scenarios):
            for k, t in enumerate(report.times):
                for i, name in enumerate(report.observables):
                    writer.writerow(
                        [
                            f"{scen.phi:g}",
                            f"{scen.t0:g}",
                            k,
                            f"{t:.10g}",
                            name,
                            f"{report.gamma[l, k, i]:.10g}",
                            int(report.passed[l, k, i]),
                        ]
                    )


BAND_CSV_COLUMNS = (
    "phi", "T0", "time_index", "time", "observable",
    "mean", "median", "lo65", "hi65", "lo95", "hi95",
)


def write_band_csv(ensemble: PredictiveEnsemble, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BAND_CSV_COLUMNS)
        for l, scen in enumerate(ensemble.scenarios):
            for k, t in enumerate(ensemble.times):
                for i, name in enumerate(ensemble.observables):
                    draws = ensemble.draws[:, l, k, i]
                    bands = credible_band(draws, (0.65, 0.95))
                    writer.writerow(
                        [
                            f"{scen.phi:g}",
                            f"{scen.t0:g}",
                            k,
                            f"{t:.10g}",
                            name,
                            f"{draws.mean():.10g}",
                            f"{float(np.median(draws)):.10g}",
                            *(f"{v:.10g}" for pair in (bands[0.65], bands[0.95]) for v in pair),
                        ]
                    )


def plot_predictive(
    ensemble: PredictiveEnsemble,
    data: ObservationSet | None,
    out_dir,
    stem: str = "predictive",
) -> list[str]:
    """One SVG per scenario: 65/95% bands, median, observations.

    Output bytes depend only on the inputs; the usual volatile metadata
    is pinned.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "kinops"
    os.makedirs(out_dir, exist_ok=True)

    paths = []
    n_obs = len(ensemble.observables)
    ncols = 4
    nrows = math.ceil(n_obs / ncols)
    t_us = np.asarray(ensemble.times) * 1e6
    for l, scen in enumerate(ensemble.scenarios):
        fig, axes = plt.subplots(
            nrows, ncols, figsize=(3.4 * ncols, 2.7 * nrows), squeeze=False
        )
        for i, name in enumerate(ensemble.observables):
            ax = axes[i // ncols][i % ncols]
            lo65 = np.empty(t_us.size)
            hi65 = np.empty(t_us.size)
            lo95 = np.empty(t_us.size)
            hi95 = np.empty(t_us.size)
            med = np.empty(t_us.size)
            for k in range(t_us.size):
                draws = ensemble.draws[:, l, k, i]
                bands = credible_band(draws, (0.65, 0.95))
                lo65[k], hi65[k] = bands[0.65]
                lo95[k], hi95[k] = bands[0.95]
                med[k] = np.median(draws)
            ax.fill_between(t_us, lo95, hi95, color="C0", alpha=0.22, linewidth=0)
            ax.fill_between(t_us, lo65, hi65, color="C0", alpha=0.45, linewidth=0)
            ax.plot(t_us, med, color="C0", lw=1.2)
            if data is not None:
                ax.plot(t_us, data.values[l, :, i], "o", color="C3", ms=4)
            unit = "K" if name == "T" else "mol/m3"
            ax.set_title(f"{name} [{unit}]", fontsize=9)
            if i // ncols == nrows - 1:
                ax.set_xlabel("t [us]", fontsize=8)
            ax.tick_params(labelsize=7)
        for i in range(n_obs, nrows * ncols):
            axes[i // ncols][i % ncols].set_axis_off()
        fig.suptitle(scen.label, fontsize=10)
        fig.tight_layout(rect=(0, 0, 1, 0.96))
        path = os.path.join(out_dir, f"{stem}_{l:02d}.svg")
        fig.savefig(path, metadata={"Date": None})
        plt.close(fig)
        paths.append(path)
    return paths

"""Hierarchical Bayesian calibration of the operator parameters.

Every operator parameter gets its own location/scale pair of
hyperparameters.  Positive parameters (transfer rates, assembly
coefficients, linear and quadratic energy terms) are conditionally
lognormal; the constant energy term is conditionally normal since it
may take either sign.  Locations carry wide normal hyperpriors and the
scales a Jeffreys prior.

The sampler walks a single flat vector: transformed parameters first
(log for the lognormal families), then all locations, then the log of
every scale.  In these coordinates the lognormal densities collapse to
plain normals and the Jeffreys factor cancels against its Jacobian, so
the walk sees no boundaries anywhere.  Natural-coordinate densities are
also exposed; the two agree up to the exact transform Jacobian and a
test pins that identity.

Sampling is delayed-rejection adaptive Metropolis: a Gaussian random
walk whose covariance is re-estimated from the chain history, with one
narrower second-stage proposal after each first-stage rejection.  Runs
are bit-reproducible for a fixed seed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, fields
from typing import Callable, Sequence

import numpy as np

from .inadequacy import InadequacyOperator, OperatorError
from .reactor import (
    DEFAULT_ATOL,
    ObservationSet,
    ReactorError,
    integrate,
    observe,
)

__all__ = [
    "PriorSpec",
    "SamplerSettings",
    "Chain",
    "DiagnosticsReport",
    "default_prior",
    "parameter_names",
    "pack_state",
    "unpack_state",
    "log_prior",
    "sampling_log_prior",
    "build_log_likelihood",
    "build_log_posterior",
    "draw_initial_state",
    "find_initial_state",
    "dram_sample",
    "effective_sample_size",
    "chain_diagnostics",
    "save_chain",
    "load_chain",
]

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)

# hyperprior scales: N(0, 1e2) for rate-like parameters, N(0, 1e12) for
# the unconstrained constant energy term, both read as variances
MU_SD_DEFAULT = 10.0
MU_SD_ENERGY_CONST = 1.0e6


def parameter_names(op: InadequacyOperator) -> tuple[str, ...]:
    """Stable component names, in the canonical parameter-vector order."""
    names = [f"transfer_{i + 1:02d}" for i in range(op.n_transfer)]
    names += [f"assembly_{m + 1}" for m in range(op.n_assembly)]
    for el in op.layout.elements:
        names += [f"energy_{el}_const", f"energy_{el}_lin", f"energy_{el}_quad"]
    return tuple(names)


@dataclass(frozen=True)
class PriorSpec:
    """Per-component prior families and hyperprior widths.

    ``log_scale[i]`` selects the conditionally lognormal family (the
    component is positive and is sampled through log); otherwise the
    component is conditionally normal and sampled raw.  ``mu_sd[i]`` is
    the standard deviation of the zero-mean normal hyperprior on the
    location.  Scales always carry the Jeffreys prior.
    """

    names: tuple[str, ...]
    log_scale: tuple[bool, ...]
    mu_sd: tuple[float, ...]

    def __post_init__(self):
        n = len(self.names)
        if len(self.log_scale) != n or len(self.mu_sd) != n:
            raise ValueError("prior spec field lengths disagree")
        if len(set(self.names)) != n:
            raise ValueError("prior component names must be unique")
        if any(sd <= 0 for sd in self.mu_sd):
            raise ValueError("hyperprior sds must be positive")

    @property
    def n_components(self) -> int:
        return len(self.names)

    @property
    def sampling_dim(self) -> int:
        """Parameters plus one location and one scale each."""
        return 3 * self.n_components

    def sampling_names(self) -> tuple[str, ...]:
        return (
            self.names
            + tuple("mu_" + n for n in self.names)
            + tuple("eta_" + n for n in self.names)
        )


def default_prior(op: InadequacyOperator) -> PriorSpec:
    names = parameter_names(op)
    log_scale = []
    mu_sd = []
    for name in names:
        if name.endswith("_const"):
            log_scale.append(False)
            mu_sd.append(MU_SD_ENERGY_CONST)
        else:
            log_scale.append(True)
            mu_sd.append(MU_SD_DEFAULT)
    return PriorSpec(names=names, log_scale=tuple(log_scale), mu_sd=tuple(mu_sd))


# ---------------------------------------------------------------------------
# coordinate transforms


def pack_state(
    psi: Sequence[float], mu: Sequence[float], eta: Sequence[float], spec: PriorSpec
) -> np.ndarray:
    """Natural (psi, mu, eta) -> flat sampling vector."""
    psi = np.asarray(psi, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    n = spec.n_components
    if psi.shape != (n,) or mu.shape != (n,) or eta.shape != (n,):
        raise ValueError(f"expected three vectors of length {n}")
    if not (
        np.all(np.isfinite(psi)) and np.all(np.isfinite(mu)) and np.all(np.isfinite(eta))
    ):
        raise ValueError("non-finite state")
    if np.any(eta <= 0):
        raise ValueError("scales must be positive")
    t = psi.copy()
    for i, is_log in enumerate(spec.log_scale):
        if is_log:
            if psi[i] <= 0:
                raise ValueError(f"component {spec.names[i]} must be positive")
            t[i] = math.log(psi[i])
    return np.concatenate([t, mu, np.log(eta)])


def unpack_state(
    v: Sequence[float], spec: PriorSpec
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Flat sampling vector -> natural (psi, mu, eta)."""
    v = np.asarray(v, dtype=np.float64)
    n = spec.n_components
    if v.shape != (3 * n,):
        raise ValueError(f"expected sampling vector of length {3 * n}")
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite sampling vector")
    t = v[:n]
    psi = t.copy()
    for i, is_log in enumerate(spec.log_scale):
        if is_log:
            psi[i] = math.exp(t[i])  # OverflowError on absurd coordinates
    eta = np.array([math.exp(s) for s in v[2 * n :]])
    return psi, v[n : 2 * n].copy(), eta


# ---------------------------------------------------------------------------
# densities


def _log_normal_pdf(x: float, mean: float, sd: float) -> float:
    if not sd > 0.0:  # catches nan and underflowed scales
        return -math.inf
    z = (x - mean) / sd
    return -0.5 * z * z - math.log(sd) - 0.5 * LOG_2PI


def log_prior(
    psi: Sequence[float],
    mu: Sequence[float],
    eta: Sequence[float],
    spec: PriorSpec,
) -> float:
    """Joint log density in natural coordinates.

    Conditional families per component, normal hyperpriors on the
    locations, and one -log(eta) Jeffreys term per scale.  Returns -inf
    outside the support.
    """
    psi = np.asarray(psi, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    if np.any(eta <= 0):
        return -math.inf
    total = 0.0
    for i in range(spec.n_components):
        if spec.log_scale[i]:
            if psi[i] <= 0:
                return -math.inf
            t = math.log(psi[i])
            total += _log_normal_pdf(t, mu[i], eta[i]) - t
        else:
            total += _log_normal_pdf(psi[i], mu[i], eta[i])
        total += _log_normal_pdf(mu[i], 0.0, spec.mu_sd[i])
        total += -math.log(eta[i])
    return total


def sampling_log_prior(v: Sequence[float], spec: PriorSpec) -> float:
    """Prior density in sampling coordinates (transform Jacobian folded
    in).  Equal to log_prior plus the log of every positive coordinate;
    the lognormal and Jeffreys terms reduce to plain normals and a
    constant, which is the point of the parameterization."""
    v = np.asarray(v, dtype=np.float64)
    n = spec.n_components
    t = v[:n]
    mu = v[n : 2 * n]
    s = v[2 * n :]
    with np.errstate(over="ignore"):
        eta = np.exp(s)  # inf is fine, the density terms go to -inf
    total = 0.0
    for i in range(n):
        total += _log_normal_pdf(t[i], mu[i], eta[i])
        total += _log_normal_pdf(mu[i], 0.0, spec.mu_sd[i])
        # Jeffreys 1/eta times the Jacobian d(eta)/d(log eta) = eta is flat
    return total


# ---------------------------------------------------------------------------
# likelihood and posterior


def build_log_likelihood(
    op: InadequacyOperator,
    data: ObservationSet,
    rtol: float = 1e-6,
    atol: float = DEFAULT_ATOL,
) -> Callable[[np.ndarray], float]:
    """Gaussian likelihood of the enriched model against one data set.

    The returned callable maps a natural parameter vector to a log
    likelihood; any integration failure is logged and scored -inf so the
    sampler simply rejects that proposal.
    """
    if data.observables[-1] != "T":
        raise ValueError("observation set must end with the temperature column")
    tracked = data.observables[:-1]
    sigma = np.asarray(data.sigma, dtype=np.float64)
    n_points = len(data.scenarios) * len(data.times)
    norm_const = -0.5 * n_points * float(np.sum(np.log(2.0 * math.pi * sigma**2)))
    times = data.times

    def log_likelihood(psi_vec: np.ndarray) -> float:
        try:
            params = op.params_from_vector(psi_vec)
            model = op.compile(params)
        except OperatorError as exc:
            log.debug("parameter rejection: %s", exc)
            return -math.inf
        total = 0.0
        for l, scen in enumerate(data.scenarios):
            try:
                traj = integrate(model, scen, rtol=rtol, atol=atol)
                pred = observe(traj, times, tracked)
            except (ReactorError, ValueError) as exc:
                log.debug("likelihood integration failed (%s): %s", scen.label, exc)
                return -math.inf
            resid = (data.values[l] - pred) / sigma
            total -= 0.5 * float(np.sum(resid * resid))
        return total + norm_const

    return log_likelihood


def build_log_posterior(
    op: InadequacyOperator,
    data: ObservationSet,
    spec: PriorSpec,
    rtol: float = 1e-6,
    atol: float = DEFAULT_ATOL,
) -> Callable[[np.ndarray], float]:
    """Un-normalized posterior density over the sampling vector."""
    loglik = build_log_likelihood(op, data, rtol=rtol, atol=atol)
    n = spec.n_components

    def log_posterior(v: np.ndarray) -> float:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (3 * n,) or not np.all(np.isfinite(v)):
            return -math.inf
        lp = sampling_log_prior(v, spec)
        if not np.isfinite(lp):
            return lp
        try:
            psi, _, _ = unpack_state(v, spec)
        except (ValueError, OverflowError):
            return -math.inf
        if not np.all(np.isfinite(psi)):
            return -math.inf
        ll = loglik(psi)
        if not np.isfinite(ll):
            return -math.inf
        return lp + ll

    return log_posterior


def draw_initial_state(spec: PriorSpec, seed: int) -> np.ndarray:
    """Starting point: locations at their hyperprior mean, unit scales,
    parameters drawn from the conditional prior."""
    rng = np.random.default_rng(seed)
    n = spec.n_components
    t = rng.standard_normal(n)  # conditional draw with mu=0, eta=1
    return np.concatenate([t, np.zeros(n), np.zeros(n)])


def find_initial_state(
    log_post: Callable[[np.ndarray], float],
    spec: PriorSpec,
    seed: int,
    max_tries: int = 64,
) -> tuple[np.ndarray, float]:
    """Redraw the prior initial point until the posterior is finite."""
    for attempt in range(max_tries):
        v = draw_initial_state(spec, seed + attempt)
        lp = log_post(v)
        if np.isfinite(lp):
            if attempt:
                log.info("initial state found after %d redraws", attempt)
            return v, lp
    raise RuntimeError(
        f"no finite-posterior initial state in {max_tries} prior draws"
    )


# ---------------------------------------------------------------------------
# sampler


@dataclass(frozen=True)
class SamplerSettings:
    """Chain length and proposal tuning for the sampler."""

    n_steps: int
    burn_in: int = 0
    seed: int = 0
    initial_scale: float = 0.1
    adapt_start: int = 1000
    adapt_interval: int = 100
    shrink: float = 0.2

    def __post_init__(self):
        if self.n_steps <= 0:
            raise ValueError("n_steps must be positive")
        if not 0 <= self.burn_in < self.n_steps:
            raise ValueError("burn-in must lie inside the chain")
        if not 0.0 < self.shrink < 1.0:
            raise ValueError("shrink must be in (0, 1)")
        if self.initial_scale <= 0:
            raise ValueError("initial_scale must be positive")
        if self.adapt_start < 1 or self.adapt_interval < 1:
            raise ValueError("adaptation indices must be >= 1")


@dataclass(frozen=True, eq=False)
class Chain:
    """Sampler output: every post-step state, its log posterior, and the
    acceptance bookkeeping."""

    samples: np.ndarray
    log_posterior: np.ndarray
    names: tuple[str, ...]
    settings: SamplerSettings
    accepted_stage1: int
    accepted_stage2: int
    stage2_attempts: int

    @property
    def n_steps(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def acceptance_stage1(self) -> float:
        return self.accepted_stage1 / self.n_steps

    @property
    def acceptance_stage2(self) -> float:
        return self.accepted_stage2 / max(self.stage2_attempts, 1)

    @property
    def acceptance_total(self) -> float:
        return (self.accepted_stage1 + self.accepted_stage2) / self.n_steps

    def retained(self) -> np.ndarray:
        """Samples past burn-in."""
        return self.samples[self.settings.burn_in :]


def _log1mexp(a: float) -> float:
    """log(1 - exp(a)) for a <= 0."""
    if a == -math.inf:
        return 0.0
    if a >= 0.0:
        return -math.inf
    return math.log(-math.expm1(a))


def _gauss_quad(diff: np.ndarray, chol: np.ndarray) -> float:
    """-1/2 ||L^-1 diff||^2; the normalizations cancel in the ratios."""
    z = np.linalg.solve(chol, diff)
    return -0.5 * float(z @ z)


def dram_sample(
    log_post: Callable[[np.ndarray], float],
    init: Sequence[float],
    settings: SamplerSettings,
    names: Sequence[str] | None = None,
) -> Chain:
    """Random-walk Metropolis with covariance adaptation and one delayed
    second stage.

    The second-stage proposal shrinks the covariance by shrink^2 and is
    accepted with the two-stage ratio, which preserves detailed balance
    after the first rejection.  Adaptation rebuilds the proposal from
    the full chain history every ``adapt_interval`` steps once
    ``adapt_start`` steps have passed: 2.38^2/dim times the empirical
    covariance plus a small diagonal guard.
    """
    x = np.array(init, dtype=np.float64)
    d = x.size
    lp = float(log_post(x))
    if not np.isfinite(lp):
        raise ValueError("log posterior is not finite at the initial point")
    if names is not None and len(names) != d:
        raise ValueError("names length does not match dimension")

    rng = np.random.default_rng(settings.seed)
    scale_d = 2.38**2 / d
    chol = settings.initial_scale * np.eye(d)

    # running moments over the whole history, init included
    count = 1
    mean = x.copy()
    m2 = np.zeros((d, d))

    samples = np.empty((settings.n_steps, d))
    lps = np.empty(settings.n_steps)
    acc1 = acc2 = att2 = 0

    for step in range(settings.n_steps):
        y1 = x + chol @ rng.standard_normal(d)
        lp1 = float(log_post(y1))
        log_u1 = math.log(rng.uniform())
        log_a1 = min(0.0, lp1 - lp)
        if log_u1 < log_a1:
            x, lp = y1, lp1
            acc1 += 1
        else:
            att2 += 1
            y2 = x + settings.shrink * (chol @ rng.standard_normal(d))
            lp2 = float(log_post(y2))
            log_u2 = math.log(rng.uniform())
            accept = False
            if np.isfinite(lp2):
                # ratio of the stage-2 acceptance: the reverse path must
                # also have failed its first stage for balance to hold
                log_a1_rev = min(0.0, lp1 - lp2)
                log_num = (
                    lp2 + _gauss_quad(y1 - y2, chol) + _log1mexp(log_a1_rev)
                )
                log_den = lp + _gauss_quad(y1 - x, chol) + _log1mexp(log_a1)
                if log_num > -math.inf and log_den > -math.inf:
                    accept = log_u2 < min(0.0, log_num - log_den)
            if accept:
                x, lp = y2, lp2
                acc2 += 1

        samples[step] = x
        lps[step] = lp

        count += 1
        delta = x - mean
        mean += delta / count
        m2 += np.outer(delta, x - mean)

        ready = step + 1 >= settings.adapt_start
        if ready and (step + 1 - settings.adapt_start) % settings.adapt_interval == 0:
            cov = scale_d * (m2 / (count - 1) + 1e-10 * np.eye(d))
            chol = np.linalg.cholesky(cov)

    return Chain(
        samples=samples,
        log_posterior=lps,
        names=tuple(names) if names is not None else tuple(f"p{i}" for i in range(d)),
        settings=settings,
        accepted_stage1=acc1,
        accepted_stage2=acc2,
        stage2_attempts=att2,
    )


# ---------------------------------------------------------------------------
# diagnostics


def effective_sample_size(series: Sequence[float]) -> float:
    """ESS from the autocorrelation time, truncated at the first
    negative autocorrelation.  Degenerate (constant) series count as a
    single effective draw."""
    x = np.asarray(series, dtype=np.float64)
    n = x.size
    if n < 2:
        return float(n)
    x = x - x.mean()
    var = float(x @ x) / n
    if var <= 0.0:
        return 1.0
    # FFT autocovariance, normalized to autocorrelation
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, m)
    acov = np.fft.irfft(f * np.conj(f), m)[:n].real / n
    rho = acov / acov[0]
    tau = 1.0
    for t in range(1, n):
        if rho[t] <= 0.0:
            break
        tau += 2.0 * rho[t]
    return float(n / tau)


@dataclass(frozen=True, eq=False)
class DiagnosticsReport:
    acceptance_stage1: float
    acceptance_stage2: float
    acceptance_total: float
    ess: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    names: tuple[str, ...]

    def summary(self) -> str:
        lines = [
            f"acceptance: stage1 {self.acceptance_stage1:.3f}, "
            f"stage2 {self.acceptance_stage2:.3f}, "
            f"total {self.acceptance_total:.3f}",
            f"min ESS {self.ess.min():.0f} ({self.names[int(self.ess.argmin())]})",
        ]
        return "\n".join(lines)


def chain_diagnostics(chain: Chain) -> DiagnosticsReport:
    kept = chain.retained()
    if kept.shape[0] < 2:
        raise ValueError("chain too short past burn-in for diagnostics")
    ess = np.array([effective_sample_size(kept[:, j]) for j in range(chain.dim)])
    return DiagnosticsReport(
        acceptance_stage1=chain.acceptance_stage1,
        acceptance_stage2=chain.acceptance_stage2,
        acceptance_total=chain.acceptance_total,
        ess=ess,
        mean=kept.mean(axis=0),
        sd=kept.std(axis=0, ddof=1),
        names=chain.names,
    )


# ---------------------------------------------------------------------------
# chain persistence


def save_chain(path, chain: Chain) -> None:
    """CSV with the settings embedded as comments, for exact replay."""
    with open(path, "w") as fh:
        fh.write("# kinops chain v1\n")
        for f in fields(SamplerSettings):
            fh.write(f"# {f.name} = {getattr(chain.settings, f.name)!r}\n")
        fh.write(f"# accepted_stage1 = {chain.accepted_stage1}\n")
        fh.write(f"# accepted_stage2 = {chain.accepted_stage2}\n")
        fh.write(f"# stage2_attempts = {chain.stage2_attempts}\n")
        fh.write(",".join(chain.names) + ",log_posterior\n")
        for row, lp in zip(chain.samples, chain.log_posterior):
            fh.write(",".join(f"{v:.17g}" for v in row) + f",{lp:.17g}\n")


def load_chain(path) -> Chain:
    meta: dict[str, str] = {}
    rows = []
    header: list[str] | None = None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "=" in line:
                    key, _, value = line[1:].partition("=")
                    meta[key.strip()] = value.strip()
                continue
            if header is None:
                header = line.split(",")
                continue
            rows.append([float(v) for v in line.split(",")])
    if header is None or not rows:
        raise ValueError(f"{path}: not a chain file")
    if header[-1] != "log_posterior":
        raise ValueError(f"{path}: last column must be log_posterior")
    data = np.asarray(rows, dtype=np.float64)
    kwargs = {}
    for f in fields(SamplerSettings):
        if f.name not in meta:
            raise ValueError(f"{path}: missing setting {f.name}")
        raw = meta[f.name]
        if f.type == "float":
            kwargs[f.name] = float(raw)
        else:
            kwargs[f.name] = int(float(raw))
    settings = SamplerSettings(**kwargs)
    return Chain(
        samples=data[:, :-1],
        log_posterior=data[:, -1],
        names=tuple(header[:-1]),
        settings=settings,
        accepted_stage1=int(meta.get("accepted_stage1", 0)),
        accepted_stage2=int(meta.get("accepted_stage2", 0)),
        stage2_attempts=int(meta.get("stage2_attempts", 0)),
    )

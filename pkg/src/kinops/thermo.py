"""NASA-7 polynomial thermochemistry.

Properties are molar and SI: J/mol for energies, J/(mol K) for heat
capacities and entropy.  Each species carries two coefficient rows on
adjacent temperature intervals; evaluation picks the low row for
``T <= t_mid`` and the high row above.  Temperatures outside the fitted
range raise :class:`ThermoRangeError` rather than extrapolating.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .constants import GAS_CONSTANT


class ThermoRangeError(ValueError):
    """Temperature outside a species' fitted polynomial range."""

    def __init__(self, name: str, temperature: float, t_low: float, t_high: float):
        self.species = name
        self.temperature = temperature
        super().__init__(
            f"T = {temperature:.2f} K outside fitted range "
            f"[{t_low:.1f}, {t_high:.1f}] K for species {name}"
        )


@dataclass(frozen=True)
class NasaPolynomial:
    """Seven-coefficient fit on two adjacent temperature intervals.

    ``coeff_low`` applies on [t_low, t_mid], ``coeff_high`` on
    (t_mid, t_high].  Evaluation here is unchecked; range enforcement
    happens in :class:`SpeciesThermo`, which knows the species name.
    """

    t_low: float
    t_mid: float
    t_high: float
    coeff_low: tuple[float, ...]
    coeff_high: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.coeff_low) != 7 or len(self.coeff_high) != 7:
            raise ValueError("NASA-7 rows need exactly seven coefficients")
        if not self.t_low < self.t_mid < self.t_high:
            raise ValueError("temperature breakpoints must be increasing")

    def _row(self, T: float) -> tuple[float, ...]:
        return self.coeff_low if T <= self.t_mid else self.coeff_high

    def cp_over_r(self, T: float) -> float:
        a = self._row(T)
        return a[0] + T * (a[1] + T * (a[2] + T * (a[3] + T * a[4])))

    def h_over_rt(self, T: float) -> float:
        a = self._row(T)
        poly = a[0] + T * (
            a[1] / 2.0 + T * (a[2] / 3.0 + T * (a[3] / 4.0 + T * a[4] / 5.0))
        )
        return poly + a[5] / T

    def s_over_r(self, T: float) -> float:
        a = self._row(T)
        poly = T * (a[1] + T * (a[2] / 2.0 + T * (a[3] / 3.0 + T * a[4] / 4.0)))
        return a[0] * math.log(T) + poly + a[6]


@dataclass(frozen=True)
class SpeciesThermo:
    """One species' thermodynamic fit plus its molar mass in kg/mol."""

    name: str
    mass: float
    poly: NasaPolynomial

    def _check(self, T: float) -> None:
        if not (self.poly.t_low <= T <= self.poly.t_high):
            raise ThermoRangeError(self.name, T, self.poly.t_low, self.poly.t_high)

    def cp(self, T: float) -> float:
        """Constant-pressure heat capacity, J/(mol K)."""
        self._check(T)
        return GAS_CONSTANT * self.poly.cp_over_r(T)

    def cv(self, T: float) -> float:
        """Constant-volume heat capacity, J/(mol K)."""
        return self.cp(T) - GAS_CONSTANT

    def enthalpy(self, T: float) -> float:
        """Molar enthalpy including the formation offset, J/mol."""
        self._check(T)
        return GAS_CONSTANT * T * self.poly.h_over_rt(T)

    def internal_energy(self, T: float) -> float:
        """Molar internal energy u = h - R*T, J/mol."""
        return self.enthalpy(T) - GAS_CONSTANT * T

    def entropy(self, T: float) -> float:
        """Standard-state molar entropy at the reference pressure, J/(mol K)."""
        self._check(T)
        return GAS_CONSTANT * self.poly.s_over_r(T)

    def gibbs(self, T: float) -> float:
        """Standard-state molar Gibbs energy g = h - T*s, J/mol."""
        return self.enthalpy(T) - T * self.entropy(T)


class ThermoTable:
    """Lookup from species name to :class:`SpeciesThermo`."""

    def __init__(self, species: dict[str, SpeciesThermo]):
        self._species = dict(species)

    def __getitem__(self, name: str) -> SpeciesThermo:
        try:
            return self._species[name]
        except KeyError:
            raise KeyError(f"no thermodynamic data for species {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._species

    def __len__(self) -> int:
        return len(self._species)

    @property
    def names(self) -> list[str]:
        return list(self._species)

    def coefficient_arrays(
        self, names: list[str]
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Pack fits for the given species into flat arrays.

        Returns (coeff_low, coeff_high, t_mid, t_low, t_high) with the
        coefficient arrays shaped (n, 7), ordered as ``names``.  Compiled
        kernels index these instead of touching Python objects.
        """
        n = len(names)
        c_lo = np.empty((n, 7))
        c_hi = np.empty((n, 7))
        t_mid = np.empty(n)
        t_lo = np.empty(n)
        t_hi = np.empty(n)
        for i, name in enumerate(names):
            sp = self[name]
            c_lo[i] = sp.poly.coeff_low
            c_hi[i] = sp.poly.coeff_high
            t_mid[i] = sp.poly.t_mid
            t_lo[i] = sp.poly.t_low
            t_hi[i] = sp.poly.t_high
        return c_lo, c_hi, t_mid, t_lo, t_hi

    def max_continuity_jump(self, name: str) -> float:
        """Relative cp jump across t_mid, a fit-quality diagnostic."""
        sp = self[name]
        t = sp.poly.t_mid
        lo = sp.poly.coeff_low
        hi = sp.poly.coeff_high
        cp_lo = lo[0] + t * (lo[1] + t * (lo[2] + t * (lo[3] + t * lo[4])))
        cp_hi = hi[0] + t * (hi[1] + t * (hi[2] + t * (hi[3] + t * hi[4])))
        return abs(cp_hi - cp_lo) / abs(cp_lo)


def load_thermo(path: str | Path) -> ThermoTable:
    """Parse a thermodynamic data file into a :class:`ThermoTable`.

    The format is line oriented: ``species``, ``mass``, ``range``, ``low``
    and ``high`` records, with ``#`` comments.  See the shipped data file
    for the layout.
    """
    species: dict[str, SpeciesThermo] = {}
    block: dict[str, object] = {}

    def flush() -> None:
        if not block:
            return
        missing = {"name", "mass", "range", "low", "high"} - set(block)
        if missing:
            raise ValueError(
                f"incomplete thermo block for {block.get('name', '?')}: "
                f"missing {sorted(missing)}"
            )
        t_lo, t_mid, t_hi = block["range"]  # type: ignore[misc]
        poly = NasaPolynomial(
            t_low=t_lo,
            t_mid=t_mid,
            t_high=t_hi,
            coeff_low=tuple(block["low"]),  # type: ignore[arg-type]
            coeff_high=tuple(block["high"]),  # type: ignore[arg-type]
        )
        name = str(block["name"])
        if name in species:
            raise ValueError(f"duplicate thermo block for species {name}")
        species[name] = SpeciesThermo(name=name, mass=float(block["mass"]), poly=poly)  # type: ignore[arg-type]
        block.clear()

    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *rest = line.split()
        try:
            if key == "species":
                flush()
                (block["name"],) = rest
            elif key == "mass":
                (val,) = rest
                block["mass"] = float(val)
            elif key == "range":
                block["range"] = tuple(float(v) for v in rest)
                if len(block["range"]) != 3:  # type: ignore[arg-type]
                    raise ValueError("range takes three temperatures")
            elif key in ("low", "high"):
                block[key] = tuple(float(v) for v in rest)
            else:
                raise ValueError(f"unknown record {key!r}")
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    flush()
    if not species:
        raise ValueError(f"{path}: no species blocks found")
    return ThermoTable(species)


def default_thermo_path() -> Path:
    """Location of the H2/O2 thermodynamic data shipped with the package."""
    return Path(__file__).parent / "data" / "therm_h2o2.dat"

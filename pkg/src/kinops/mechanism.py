"""Elementary reaction mechanisms: parsing, validation, mass-action rates.

Rates run in the mol-cm-s system of the shipped tables: concentrations in
mol/cm^3, activation energies in kJ/mol, net reaction rates in
mol/(cm^3 s).  Reverse rate coefficients are derived from equilibrium
thermodynamics, k_b = k_f / K_c, so reversible evaluation needs a thermo
table attached to the mechanism.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .constants import CM3_PER_M3, GAS_CONSTANT, GAS_CONSTANT_KJ, P_REFERENCE
from .thermo import ThermoTable


class MechanismError(ValueError):
    """Malformed mechanism file or contract violation at evaluation time."""


@dataclass(frozen=True)
class Species:
    """A chemical species identified by name and elemental composition."""

    name: str
    composition: dict[str, int]

    @property
    def atom_count(self) -> int:
        """Total atoms per molecule; the scaling weight for conservation."""
        return sum(self.composition.values())


@dataclass(frozen=True)
class ArrheniusRate:
    """Modified Arrhenius parameters: k(T) = A T^b exp(-E / (R T))."""

    A: float
    b: float
    E: float  # kJ/mol

    def __call__(self, T: float) -> float:
        return self.A * T**self.b * math.exp(-self.E / (GAS_CONSTANT_KJ * T))


@dataclass(frozen=True)
class Reaction:
    """One elementary step with reactant/product stoichiometry by name."""

    equation: str
    reactants: dict[str, int]
    products: dict[str, int]
    rate: ArrheniusRate
    third_body: bool = False
    reversible: bool = True

    @property
    def delta_nu(self) -> int:
        """Mole change, products minus reactants, third body excluded."""
        return sum(self.products.values()) - sum(self.reactants.values())


def forward_rate_coeff(rxn: Reaction, T: float) -> float:
    """Forward rate coefficient at T, in per-reaction-order cm-mol-s units."""
    return rxn.rate(T)


class MechanismArrays(NamedTuple):
    """Flat numeric view of a mechanism for compiled kernels.

    Stoichiometry matrices are (n_reactions, n_species); thermo blocks are
    the packed NASA-7 rows for the mechanism's species order.
    """

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
    t_low: np.ndarray
    t_high: np.ndarray


@dataclass
class Mechanism:
    """Validated reaction set over an ordered species list.

    Species order is the order of the SPECIES section and fixes the layout
    of every concentration vector downstream.  ``thermo`` may be None for
    mechanisms evaluated irreversibly.
    """

    elements: list[str]
    species: list[Species]
    reactions: list[Reaction]
    thermo: ThermoTable | None = None
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._index = {sp.name: i for i, sp in enumerate(self.species)}

    @property
    def n_species(self) -> int:
        return len(self.species)

    @property
    def species_names(self) -> list[str]:
        return [sp.name for sp in self.species]

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise MechanismError(f"unknown species {name!r}") from None

    def atom_matrix(self) -> np.ndarray:
        """Atom counts, shape (n_elements, n_species)."""
        mat = np.zeros((len(self.elements), self.n_species))
        for j, sp in enumerate(self.species):
            for el, count in sp.composition.items():
                mat[self.elements.index(el), j] = count
        return mat

    def molar_masses(self) -> np.ndarray:
        """Masses in kg/mol, from the attached thermo table."""
        if self.thermo is None:
            raise MechanismError("mechanism has no thermo table attached")
        return np.array([self.thermo[name].mass for name in self.species_names])

    # -- rate evaluation ------------------------------------------------

    def equilibrium_constant(self, rxn: Reaction, T: float) -> float:
        """Concentration-based K_c in the mol/cm^3 system.

        K_p = exp(-dG/(R T)) at the 1 bar reference; K_c rescales by the
        reference concentration to the power of the mole change.
        """
        if self.thermo is None:
            raise MechanismError(
                f"equilibrium constant for {rxn.equation!r} needs thermo data"
            )
        dg = 0.0
        for name, nu in rxn.products.items():
            dg += nu * self.thermo[name].gibbs(T)
        for name, nu in rxn.reactants.items():
            dg -= nu * self.thermo[name].gibbs(T)
        kp = math.exp(-dg / (GAS_CONSTANT * T))
        c_ref = P_REFERENCE / (GAS_CONSTANT * T) / CM3_PER_M3  # mol/cm^3
        return kp * c_ref**rxn.delta_nu

    def reverse_rate_coeff(self, rxn: Reaction, T: float) -> float:
        if not rxn.reversible:
            raise MechanismError(
                f"reverse rate requested for irreversible reaction {rxn.equation!r}"
            )
        return rxn.rate(T) / self.equilibrium_constant(rxn, T)

    def reaction_rate(self, rxn: Reaction, x: np.ndarray, T: float) -> float:
        """Net molar rate of progress, mol/(cm^3 s), for x in mol/cm^3."""
        fwd = rxn.rate(T)
        for name, nu in rxn.reactants.items():
            fwd *= x[self._index[name]] ** nu
        rev = 0.0
        if rxn.reversible:
            rev = self.reverse_rate_coeff(rxn, T)
            for name, nu in rxn.products.items():
                rev *= x[self._index[name]] ** nu
        rate = fwd - rev
        if rxn.third_body:
            rate *= float(np.sum(x))
        return rate

    def production_rates(self, x: np.ndarray, T: float) -> np.ndarray:
        """Species net production, mol/(cm^3 s), for x in mol/cm^3."""
        xdot = np.zeros(self.n_species)
        for rxn in self.reactions:
            r = self.reaction_rate(rxn, x, T)
            for name, nu in rxn.reactants.items():
                xdot[self._index[name]] -= nu * r
            for name, nu in rxn.products.items():
                xdot[self._index[name]] += nu * r
        return xdot

    # -- kernel packing -------------------------------------------------

    def arrays(self) -> MechanismArrays:
        if self.thermo is None:
            raise MechanismError("kernel packing needs an attached thermo table")
        n_r, n_s = len(self.reactions), self.n_species
        nu_reac = np.zeros((n_r, n_s))
        nu_prod = np.zeros((n_r, n_s))
        arrh = np.zeros((3, n_r))
        third = np.zeros(n_r, dtype=np.bool_)
        rev = np.zeros(n_r, dtype=np.bool_)
        for k, rxn in enumerate(self.reactions):
            for name, nu in rxn.reactants.items():
                nu_reac[k, self._index[name]] = nu
            for name, nu in rxn.products.items():
                nu_prod[k, self._index[name]] = nu
            arrh[:, k] = rxn.rate.A, rxn.rate.b, rxn.rate.E
            third[k] = rxn.third_body
            rev[k] = rxn.reversible
        c_lo, c_hi, t_mid, t_lo, t_hi = self.thermo.coefficient_arrays(
            self.species_names
        )
        return MechanismArrays(
            nu_reac=nu_reac,
            nu_prod=nu_prod,
            arrh_a=arrh[0].copy(),
            arrh_b=arrh[1].copy(),
            arrh_e=arrh[2].copy(),
            third_body=third,
            reversible=rev,
            coeff_low=c_lo,
            coeff_high=c_hi,
            t_mid=t_mid,
            t_low=t_lo,
            t_high=t_hi,
        )


# -- parsing -------------------------------------------------------------

_SECTIONS = ("ELEMENTS", "SPECIES", "REACTIONS")


def _parse_side(text: str, lineno: int) -> tuple[dict[str, int], bool]:
    """One side of an equation -> (stoichiometry, has third body)."""
    terms: dict[str, int] = {}
    has_m = False
    for part in text.split("+"):
        part = part.strip()
        if not part:
            raise MechanismError(f"line {lineno}: empty term in equation side {text!r}")
        if part == "M":
            if has_m:
                raise MechanismError(f"line {lineno}: repeated third body M")
            has_m = True
            continue
        tokens = part.split()
        if len(tokens) == 2 and tokens[0].isdigit():
            count, name = int(tokens[0]), tokens[1]
        elif len(tokens) == 1:
            name = tokens[0]
            count = 1
            # glued integer prefix, e.g. 2H2O
            i = 0
            while i < len(name) and name[i].isdigit():
                i += 1
            if 0 < i < len(name):
                count, name = int(name[:i]), name[i:]
        else:
            raise MechanismError(f"line {lineno}: cannot parse term {part!r}")
        if count < 1:
            raise MechanismError(f"line {lineno}: nonpositive coefficient in {part!r}")
        terms[name] = terms.get(name, 0) + count
    return terms, has_m


def _parse_reaction_line(line: str, lineno: int) -> Reaction:
    tokens = line.split()
    flags: set[str] = set()
    while tokens and tokens[-1] in ("REV", "IRREV", "M"):
        flags.add(tokens.pop())
    if "REV" in flags and "IRREV" in flags:
        raise MechanismError(f"line {lineno}: both REV and IRREV given")
    if len(tokens) < 4:
        raise MechanismError(f"line {lineno}: expected equation plus A b E")
    try:
        a, b, e = (float(t) for t in tokens[-3:])
    except ValueError:
        raise MechanismError(
            f"line {lineno}: trailing fields must be numeric A b E"
        ) from None
    equation = " ".join(tokens[:-3])
    if "->" not in equation:
        raise MechanismError(f"line {lineno}: equation {equation!r} lacks '->'")
    lhs, rhs = equation.split("->", 1)
    reactants, m_lhs = _parse_side(lhs, lineno)
    products, m_rhs = _parse_side(rhs, lineno)
    if m_lhs != m_rhs:
        raise MechanismError(
            f"line {lineno}: third body M must appear on both sides or neither"
        )
    return Reaction(
        equation=" ".join(equation.split()),
        reactants=reactants,
        products=products,
        rate=ArrheniusRate(A=a, b=b, E=e),
        third_body=m_lhs or "M" in flags,
        reversible="IRREV" not in flags,
    )


def parse_mechanism(path: str | Path, thermo: ThermoTable | None = None) -> Mechanism:
    """Read and fully validate a mechanism file.

    Validation covers section structure, species/element references, per
    reaction atom balance, and, when a thermo table is supplied, coverage
    of every species in that table.
    """
    elements: list[str] = []
    species: list[Species] = []
    reactions: list[Reaction] = []
    seen: set[str] = set()
    section = None

    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line in _SECTIONS:
            section = line
            continue
        if section == "ELEMENTS":
            elements.extend(line.split())
        elif section == "SPECIES":
            name, *comp_tokens = line.split()
            if name in seen:
                raise MechanismError(f"line {lineno}: duplicate species {name}")
            seen.add(name)
            if name == "M":
                raise MechanismError(f"line {lineno}: M is reserved for third bodies")
            composition: dict[str, int] = {}
            for token in comp_tokens:
                el, _, count = token.partition(":")
                if el not in elements:
                    raise MechanismError(
                        f"line {lineno}: species {name} uses unknown element {el!r}"
                    )
                try:
                    composition[el] = int(count)
                except ValueError:
                    raise MechanismError(
                        f"line {lineno}: bad composition token {token!r}"
                    ) from None
            if not composition:
                raise MechanismError(f"line {lineno}: species {name} has no atoms")
            species.append(Species(name=name, composition=composition))
        elif section == "REACTIONS":
            reactions.append(_parse_reaction_line(line, lineno))
        else:
            raise MechanismError(f"line {lineno}: content before any section header")

    if not species or not reactions:
        raise MechanismError(f"{path}: needs SPECIES and REACTIONS sections")

    mech = Mechanism(
        elements=elements, species=species, reactions=reactions, thermo=thermo
    )
    _validate(mech, thermo)
    return mech


def _validate(mech: Mechanism, thermo: ThermoTable | None) -> None:
    by_name = {sp.name: sp for sp in mech.species}
    for rxn in mech.reactions:
        balance: dict[str, int] = {el: 0 for el in mech.elements}
        for side, sign in ((rxn.reactants, -1), (rxn.products, +1)):
            for name, nu in side.items():
                if name not in by_name:
                    raise MechanismError(
                        f"reaction {rxn.equation!r} references unknown species {name}"
                    )
                for el, count in by_name[name].composition.items():
                    balance[el] += sign * nu * count
        if any(v != 0 for v in balance.values()):
            raise MechanismError(f"reaction {rxn.equation!r} does not balance atoms")
    if thermo is not None:
        missing = [name for name in by_name if name not in thermo]
        if missing:
            raise MechanismError(f"no thermo data for species {sorted(missing)}")


def detailed_mechanism_path() -> Path:
    return Path(__file__).parent / "data" / "mech_h2o2_detailed.mech"


def reduced_mechanism_path() -> Path:
    return Path(__file__).parent / "data" / "mech_h2o2_reduced.mech"

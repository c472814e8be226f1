"""Stochastic model-error operator for reduced kinetics.

A reduced mechanism discards species, so atoms that should flow through
the missing intermediates have nowhere to go.  This module builds the
correction: the state is augmented with one *catchall* species per
element (a pool of single atoms, written H', O', ...) and the dynamics
gain three parts,

  * a linear transfer operator that moves atoms between species and
    pools, constrained so that atoms are conserved and no concentration
    can be driven negative from zero,
  * a small set of assembly reactions that rebuild multi-element
    species out of the pools (a linear operator cannot do this, since
    forming OH from H' needs O' atoms at the same time),
  * a quadratic internal-energy model per pool, so the temperature
    equation sees the atoms parked there.

The linear part is where the structure lives.  Conservation forces the
operator's columns into the nullspace of the atom-fraction matrix, so
the operator is C·P with C fixed and P free; sign constraints on the
entries of P are then reduced to simple non-negativity by a change of
variables (the "transfer map" below).  Everything up to that map is
exact rational arithmetic; assembly of concrete matrices is float.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .mechanism import Mechanism
from .reactor import CompiledModel, ReactorState, build_model, rhs

__all__ = [
    "OperatorError",
    "CatchallLayout",
    "AtomMatrix",
    "NullspaceFactor",
    "ZeroPattern",
    "TransferMap",
    "CatchallReaction",
    "FirstOrderReaction",
    "InadequacyParams",
    "InadequacyOperator",
    "build_layout",
    "atom_fractions",
    "nullspace_factor",
    "zero_pattern",
    "zero_count_by_primes",
    "build_transfer_map",
    "catchall_reactions",
    "catchall_increments",
    "catchall_energy",
    "to_reactions",
    "first_order_rates",
    "build_operator",
    "enriched_rhs",
]


class OperatorError(ValueError):
    """Raised when operator construction or assembly is handed bad input."""


def catchall_name(element: str) -> str:
    return element + "'"


# ---------------------------------------------------------------------------
# layout


@dataclass(frozen=True)
class CatchallLayout:
    """Augmented state ordering: one catchall per element, then the
    mechanism species.  ``atom_table[i][j]`` counts atoms of element i
    in one molecule of state species j; the catchall block is the
    identity by construction."""

    elements: tuple[str, ...]
    species_names: tuple[str, ...]
    atom_table: tuple[tuple[int, ...], ...]

    @property
    def n_alpha(self) -> int:
        return len(self.elements)

    @property
    def n_state(self) -> int:
        return len(self.species_names)

    @property
    def n_reduced(self) -> int:
        return self.n_state - self.n_alpha

    @property
    def atom_counts(self) -> tuple[int, ...]:
        """Total atoms per molecule, l_j.  Always 1 for catchalls."""
        return tuple(
            sum(self.atom_table[i][j] for i in range(self.n_alpha))
            for j in range(self.n_state)
        )

    def count_matrix(self) -> np.ndarray:
        """Element-by-species atom counts as floats, shape (n_alpha, n_state)."""
        return np.array(self.atom_table, dtype=np.float64)


def build_layout(mech: Mechanism) -> CatchallLayout:
    """Prepend one catchall species per mechanism element."""
    elements = tuple(mech.elements)
    if not elements:
        raise OperatorError("mechanism declares no elements")
    names = tuple(catchall_name(e) for e in elements) + tuple(mech.species_names)
    rows = []
    for i, el in enumerate(elements):
        row = [1 if k == i else 0 for k in range(len(elements))]
        row.extend(sp.composition.get(el, 0) for sp in mech.species)
        rows.append(tuple(row))
    layout = CatchallLayout(
        elements=elements, species_names=names, atom_table=tuple(rows)
    )
    for j, count in enumerate(layout.atom_counts):
        if count <= 0:
            raise OperatorError(f"species {names[j]} has no atoms")
    return layout


# ---------------------------------------------------------------------------
# exact matrices


@dataclass(frozen=True, eq=False)
class AtomMatrix:
    """Atom fractions: entry (i, j) is the fraction of the atoms in one
    molecule of species j that are of element i.  Columns sum to one and
    the catchall block is the identity."""

    exact: tuple[tuple[Fraction, ...], ...]

    @property
    def n_alpha(self) -> int:
        return len(self.exact)

    @property
    def n_state(self) -> int:
        return len(self.exact[0])

    def values(self) -> np.ndarray:
        return np.array([[float(e) for e in row] for row in self.exact])


def atom_fractions(layout: CatchallLayout) -> AtomMatrix:
    counts = layout.atom_counts
    exact = tuple(
        tuple(
            Fraction(layout.atom_table[i][j], counts[j])
            for j in range(layout.n_state)
        )
        for i in range(layout.n_alpha)
    )
    # construction invariants, cheap enough to always verify
    for j in range(layout.n_state):
        if sum(exact[i][j] for i in range(layout.n_alpha)) != 1:
            raise OperatorError(f"atom fractions of column {j} do not sum to 1")
    for i in range(layout.n_alpha):
        for k in range(layout.n_alpha):
            if exact[i][k] != (1 if i == k else 0):
                raise OperatorError("catchall block of the atom matrix is not I")
    return AtomMatrix(exact=exact)


@dataclass(frozen=True, eq=False)
class NullspaceFactor:
    """Basis of the atom matrix nullspace, stacked as [-reduced columns
    of the atom matrix; identity].  Every transfer operator is this
    factor times a free matrix, which is what makes conservation exact
    by construction rather than by solving anything."""

    exact: tuple[tuple[Fraction, ...], ...]
    n_alpha: int

    @property
    def n_state(self) -> int:
        return len(self.exact)

    @property
    def n_reduced(self) -> int:
        return self.n_state - self.n_alpha

    def values(self) -> np.ndarray:
        return np.array([[float(e) for e in row] for row in self.exact])

    def star_block(self) -> tuple[tuple[Fraction, ...], ...]:
        """Top n_alpha rows (the non-positive block)."""
        return self.exact[: self.n_alpha]


def nullspace_factor(atoms: AtomMatrix) -> NullspaceFactor:
    n_alpha, n_state = atoms.n_alpha, atoms.n_state
    n_red = n_state - n_alpha
    rows = []
    for i in range(n_alpha):
        rows.append(tuple(-atoms.exact[i][n_alpha + j] for j in range(n_red)))
    for j in range(n_red):
        rows.append(tuple(Fraction(1 if k == j else 0) for k in range(n_red)))
    factor = NullspaceFactor(exact=tuple(rows), n_alpha=n_alpha)
    for i in range(n_alpha):
        for k in range(n_red):
            prod = sum(
                atoms.exact[i][j] * factor.exact[j][k] for j in range(n_state)
            )
            if prod != 0:
                raise OperatorError("nullspace factor fails the exact product test")
    return factor


# ---------------------------------------------------------------------------
# structural zeros


@dataclass(frozen=True, eq=False)
class ZeroPattern:
    """Mask of transfer-matrix entries that vanish identically: atoms
    can only flow into a species from sources that contain every element
    the destination needs."""

    zero: np.ndarray  # bool, (n_state, n_state); True = identically zero

    @property
    def n_zero(self) -> int:
        return int(self.zero.sum())


def zero_pattern(atoms: AtomMatrix) -> ZeroPattern:
    n = atoms.n_state
    zero = np.zeros((n, n), dtype=bool)
    for i in range(atoms.n_alpha):
        members = [j for j in range(n) if atoms.exact[i][j] != 0]
        absent = [k for k in range(n) if atoms.exact[i][k] == 0]
        for j in members:
            for k in absent:
                zero[j, k] = True
    return ZeroPattern(zero=zero)


def _first_primes(n: int) -> list[int]:
    primes: list[int] = []
    candidate = 2
    while len(primes) < n:
        if all(candidate % p for p in primes):
            primes.append(candidate)
        candidate += 1
    return primes


def zero_count_by_primes(layout: CatchallLayout) -> int:
    """Independent count of the structural zeros.

    Each element gets a prime; each species the product of the primes of
    the elements it contains (multiplicity ignored).  Flow from column
    species k into row species j is impossible exactly when some prime
    of j does not divide the product for k, i.e. gcd < rho_j.
    """
    primes = _first_primes(layout.n_alpha)
    rho = []
    for j in range(layout.n_state):
        r = 1
        for i in range(layout.n_alpha):
            if layout.atom_table[i][j] > 0:
                r *= primes[i]
        rho.append(r)
    count = 0
    for j in range(layout.n_state):
        for k in range(layout.n_state):
            if math.gcd(rho[j], rho[k]) < rho[j]:
                count += 1
    return count


# ---------------------------------------------------------------------------
# transfer map


@dataclass(frozen=True)
class TransferEntry:
    """One free parameter of the transfer operator.

    Simple entries set P[row, col] directly.  Constrained entries are
    the column diagonals P[k, k + n_alpha]; their magnitude must exceed
    a weighted sum of the other parameters in the same column or the
    catchall rows of the assembled operator could go negative, so the
    parameter measures the slack beyond that bound:
    P[row, col] = -(value + sum(weight * other values)).
    """

    row: int
    col: int
    constrained: bool
    bound_idx: tuple[int, ...] = ()
    bound_weight: tuple[Fraction, ...] = ()


@dataclass(frozen=True, eq=False)
class TransferMap:
    """Bijection between the non-negative parameter vector and the
    admissible transfer operators."""

    entries: tuple[TransferEntry, ...]
    factor: NullspaceFactor
    atom_counts: tuple[int, ...]

    @property
    def n_params(self) -> int:
        return len(self.entries)

    @property
    def n_constrained(self) -> int:
        return sum(1 for e in self.entries if e.constrained)

    @property
    def n_state(self) -> int:
        return self.factor.n_state

    def assemble(self, values: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
        """Return (atom_flow, species_flow) for a parameter vector.

        ``atom_flow`` acts on atom-weighted concentrations and has zero
        column sums; ``species_flow`` is its conjugation by the atom
        counts and is the matrix that enters the rate equations.
        """
        vals = np.asarray(values, dtype=np.float64)
        if vals.shape != (self.n_params,):
            raise OperatorError(
                f"expected {self.n_params} transfer parameters, got {vals.shape}"
            )
        if not np.all(np.isfinite(vals)) or np.any(vals < 0.0):
            raise OperatorError("transfer parameters must be finite and >= 0")
        n_alpha = self.factor.n_alpha
        p = np.zeros((self.factor.n_reduced, self.n_state))
        for l, ent in enumerate(self.entries):
            if not ent.constrained:
                p[ent.row, ent.col] = vals[l]
        for l, ent in enumerate(self.entries):
            if ent.constrained:
                bound = 0.0
                for idx, w in zip(ent.bound_idx, ent.bound_weight):
                    bound += float(w) * vals[idx]
                p[ent.row, ent.col] = -(vals[l] + bound)
        atom_flow = self.factor.values() @ p
        counts = np.array(self.atom_counts, dtype=np.float64)
        species_flow = atom_flow * (counts[None, :] / counts[:, None])
        return atom_flow, species_flow


def build_transfer_map(
    factor: NullspaceFactor, pattern: ZeroPattern, layout: CatchallLayout
) -> TransferMap:
    """Enumerate the free entries of P and precompute the constraint
    weights for the column diagonals.

    P inherits the zero pattern of the reduced-species rows of the
    operator (those rows of C·P are P itself).  Row-major order; the
    diagonal of column k + n_alpha is the constrained entry for reduced
    species k, and its bound sums every other parameter in the same
    column weighted by max|star column| / min nonzero |star column of k|.
    """
    n_alpha = factor.n_alpha
    n_red = factor.n_reduced
    n_state = factor.n_state
    star = factor.star_block()

    free: dict[tuple[int, int], int] = {}
    order: list[tuple[int, int]] = []
    for j in range(n_red):
        for k in range(n_state):
            if not pattern.zero[n_alpha + j, k]:
                free[(j, k)] = len(order)
                order.append((j, k))

    col_max = []
    col_min_nonzero = []
    for j in range(n_red):
        mags = [abs(star[i][j]) for i in range(n_alpha)]
        nonzero = [m for m in mags if m != 0]
        if not nonzero:
            raise OperatorError(f"reduced species {j} has an empty atom column")
        col_max.append(max(mags))
        col_min_nonzero.append(min(nonzero))

    entries = []
    for j, k in order:
        if k == j + n_alpha:
            idx = []
            weight = []
            for j2 in range(n_red):
                if j2 != j and (j2, k) in free:
                    idx.append(free[(j2, k)])
                    weight.append(col_max[j2] / col_min_nonzero[j])
            entries.append(
                TransferEntry(
                    row=j,
                    col=k,
                    constrained=True,
                    bound_idx=tuple(idx),
                    bound_weight=tuple(weight),
                )
            )
        else:
            entries.append(TransferEntry(row=j, col=k, constrained=False))
    return TransferMap(
        entries=tuple(entries), factor=factor, atom_counts=layout.atom_counts
    )


# ---------------------------------------------------------------------------
# catchall assembly reactions


@dataclass(frozen=True)
class CatchallReaction:
    """Formation of one multi-element species out of the atom pools.

    ``reactant_counts`` is the stoichiometry over the catchalls;
    ``rate_exponents`` the concentration powers in the rate law, which
    the shipped hydrogen-oxygen case keeps at one per distinct pool.
    """

    product: int
    reactant_counts: tuple[int, ...]
    rate_exponents: tuple[int, ...]


def catchall_reactions(
    layout: CatchallLayout, rate_law: str = "first-order"
) -> tuple[CatchallReaction, ...]:
    """One assembly reaction per multi-element species.

    ``rate_law`` selects the concentration exponents: "first-order" uses
    power one for each distinct pool involved; "stoichiometric" raises
    each pool to its stoichiometric count.
    """
    if rate_law not in ("first-order", "stoichiometric"):
        raise OperatorError(f"unknown rate law {rate_law!r}")
    out = []
    for j in range(layout.n_alpha, layout.n_state):
        counts = tuple(layout.atom_table[i][j] for i in range(layout.n_alpha))
        if sum(1 for c in counts if c > 0) < 2:
            continue
        if rate_law == "first-order":
            expo = tuple(1 if c > 0 else 0 for c in counts)
        else:
            expo = counts
        out.append(
            CatchallReaction(product=j, reactant_counts=counts, rate_exponents=expo)
        )
    return tuple(out)


def catchall_increments(
    coeffs: Sequence[float],
    x: Sequence[float],
    reactions: Sequence[CatchallReaction],
    n_state: int,
) -> np.ndarray:
    """Concentration increments contributed by the assembly reactions."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if coeffs.shape != (len(reactions),):
        raise OperatorError(
            f"expected {len(reactions)} assembly coefficients, got {coeffs.shape}"
        )
    out = np.zeros(n_state)
    for coeff, rxn in zip(coeffs, reactions):
        rate = coeff
        for i, e in enumerate(rxn.rate_exponents):
            if e:
                rate *= x[i] ** e
        out[rxn.product] += rate
        for i, c in enumerate(rxn.reactant_counts):
            if c:
                out[i] -= c * rate
    return out


def catchall_energy(
    coeffs: np.ndarray, T: float
) -> tuple[np.ndarray, np.ndarray]:
    """Internal energy and heat capacity of each pool at T.

    ``coeffs`` has one (constant, linear, quadratic) row per pool in
    J/mol units; energy is the quadratic, capacity its derivative.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    u = coeffs[:, 0] + coeffs[:, 1] * T + coeffs[:, 2] * T * T
    cv = coeffs[:, 1] + 2.0 * coeffs[:, 2] * T
    return u, cv


# ---------------------------------------------------------------------------
# parameters and the assembled operator


@dataclass(frozen=True, eq=False)
class InadequacyParams:
    """Full parameter set of the operator: transfer rates (1/s),
    assembly rate coefficients (concentration units of the mechanism),
    and per-pool energy coefficients (J/mol basis, rows of
    (constant, linear, quadratic)).  The constant energy term may take
    either sign; everything else is non-negative."""

    transfer: np.ndarray
    assembly: np.ndarray
    energy: np.ndarray

    def __post_init__(self):
        transfer = np.atleast_1d(np.asarray(self.transfer, dtype=np.float64))
        assembly = np.atleast_1d(np.asarray(self.assembly, dtype=np.float64))
        energy = np.asarray(self.energy, dtype=np.float64)
        if energy.ndim != 2 or energy.shape[1] != 3:
            raise OperatorError(f"energy coefficients must be (n, 3), got {energy.shape}")
        for name, arr in (("transfer", transfer), ("assembly", assembly), ("energy", energy)):
            if not np.all(np.isfinite(arr)):
                raise OperatorError(f"{name} parameters must be finite")
        if np.any(transfer < 0):
            raise OperatorError("transfer rates must be >= 0")
        if np.any(assembly < 0):
            raise OperatorError("assembly coefficients must be >= 0")
        if np.any(energy[:, 1:] < 0):
            raise OperatorError("linear and quadratic energy terms must be >= 0")
        object.__setattr__(self, "transfer", transfer)
        object.__setattr__(self, "assembly", assembly)
        object.__setattr__(self, "energy", energy)

    @property
    def dim(self) -> int:
        return self.transfer.size + self.assembly.size + self.energy.size

    def to_vector(self) -> np.ndarray:
        """Canonical flat order: transfer, assembly, then energy rows."""
        return np.concatenate([self.transfer, self.assembly, self.energy.ravel()])

    @classmethod
    def from_vector(
        cls, vec: Sequence[float], n_transfer: int, n_assembly: int, n_pools: int
    ) -> "InadequacyParams":
        vec = np.asarray(vec, dtype=np.float64)
        expect = n_transfer + n_assembly + 3 * n_pools
        if vec.shape != (expect,):
            raise OperatorError(f"expected vector of length {expect}, got {vec.shape}")
        return cls(
            transfer=vec[:n_transfer],
            assembly=vec[n_transfer : n_transfer + n_assembly],
            energy=vec[n_transfer + n_assembly :].reshape(n_pools, 3),
        )

    @classmethod
    def zeros(cls, n_transfer: int, n_assembly: int, n_pools: int) -> "InadequacyParams":
        return cls(
            transfer=np.zeros(n_transfer),
            assembly=np.zeros(n_assembly),
            energy=np.zeros((n_pools, 3)),
        )


@dataclass(frozen=True, eq=False)
class InadequacyOperator:
    """Everything derived from a reduced mechanism that the operator
    needs: the layout, the exact matrices, the transfer map, and the
    assembly reactions.  Immutable; compile() produces a kernel-ready
    model for one parameter set."""

    mechanism: Mechanism
    layout: CatchallLayout
    atoms: AtomMatrix
    factor: NullspaceFactor
    pattern: ZeroPattern
    transfer_map: TransferMap
    reactions: tuple[CatchallReaction, ...]

    @property
    def n_transfer(self) -> int:
        return self.transfer_map.n_params

    @property
    def n_assembly(self) -> int:
        return len(self.reactions)

    @property
    def n_pools(self) -> int:
        return self.layout.n_alpha

    @property
    def dim(self) -> int:
        return self.n_transfer + self.n_assembly + 3 * self.n_pools

    def params_from_vector(self, vec: Sequence[float]) -> InadequacyParams:
        return InadequacyParams.from_vector(
            vec, self.n_transfer, self.n_assembly, self.n_pools
        )

    def zero_params(self) -> InadequacyParams:
        return InadequacyParams.zeros(self.n_transfer, self.n_assembly, self.n_pools)

    def assemble(self, transfer_rates: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
        return self.transfer_map.assemble(transfer_rates)

    def compile(self, params: InadequacyParams) -> CompiledModel:
        """Kernel-ready enriched model for one parameter draw."""
        if params.transfer.size != self.n_transfer:
            raise OperatorError(
                f"expected {self.n_transfer} transfer rates, got {params.transfer.size}"
            )
        if params.assembly.size != self.n_assembly:
            raise OperatorError(
                f"expected {self.n_assembly} assembly coefficients, "
                f"got {params.assembly.size}"
            )
        if params.energy.shape[0] != self.n_pools:
            raise OperatorError(
                f"expected {self.n_pools} energy rows, got {params.energy.shape[0]}"
            )
        _, species_flow = self.assemble(params.transfer)
        n = self.layout.n_state
        expo = np.zeros((self.n_assembly, n), dtype=np.int64)
        net = np.zeros((self.n_assembly, n))
        for m, rxn in enumerate(self.reactions):
            net[m, rxn.product] = 1.0
            for i in range(self.n_pools):
                expo[m, i] = rxn.rate_exponents[i]
                net[m, i] -= rxn.reactant_counts[i]
        return build_model(
            self.mechanism,
            catchalls=tuple(
                (catchall_name(e), e) for e in self.layout.elements
            ),
            transfer=species_flow,
            cat_coeff=params.assembly,
            cat_expo=expo,
            cat_net=net,
            cat_energy=params.energy,
        )

    def describe(self, params: InadequacyParams | None = None) -> str:
        return describe_operator(self, params)


def build_operator(
    mech: Mechanism, rate_law: str = "first-order"
) -> InadequacyOperator:
    layout = build_layout(mech)
    atoms = atom_fractions(layout)
    factor = nullspace_factor(atoms)
    pattern = zero_pattern(atoms)
    transfer_map = build_transfer_map(factor, pattern, layout)
    reactions = catchall_reactions(layout, rate_law=rate_law)
    return InadequacyOperator(
        mechanism=mech,
        layout=layout,
        atoms=atoms,
        factor=factor,
        pattern=pattern,
        transfer_map=transfer_map,
        reactions=reactions,
    )


def enriched_rhs(
    op: InadequacyOperator, params: InadequacyParams, state: ReactorState
) -> tuple[np.ndarray, float]:
    """Time derivatives of the enriched state; convenience wrapper for
    one-off evaluations.  Sampling code should compile() once per draw
    and integrate instead."""
    return rhs(op.compile(params), state)


# ---------------------------------------------------------------------------
# first-order reaction view


@dataclass(frozen=True)
class FirstOrderReaction:
    """Reaction equivalent of one column of the species-basis transfer
    matrix: source decays at ``rate`` into fractional products."""

    source: int
    rate: float
    products: tuple[tuple[int, float], ...]


def to_reactions(
    species_flow: np.ndarray, tol: float = 0.0
) -> tuple[FirstOrderReaction, ...]:
    """Read the transfer matrix as a list of first-order reactions.

    Column j with diagonal -k maps to: species j decays with rate
    coefficient k, producing (entry / k) molecules of each species with
    a positive entry in that column.  Columns that are entirely zero
    produce no reaction.
    """
    m = np.asarray(species_flow, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise OperatorError("transfer matrix must be square")
    out = []
    n = m.shape[0]
    for j in range(n):
        diag = m[j, j]
        col = m[:, j]
        if diag > tol:
            raise OperatorError(f"column {j} has a positive diagonal")
        if abs(diag) <= tol:
            if np.any(np.abs(np.delete(col, j)) > tol):
                raise OperatorError(
                    f"column {j} has flow but no decay; not a reaction"
                )
            continue
        rate = -diag
        products = tuple(
            (i, col[i] / rate) for i in range(n) if i != j and abs(col[i]) > tol
        )
        out.append(FirstOrderReaction(source=j, rate=rate, products=products))
    return tuple(out)


def first_order_rates(
    reactions: Sequence[FirstOrderReaction], x: Sequence[float], n_state: int
) -> np.ndarray:
    """Evaluate the reaction view; matches species_flow @ x."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros(n_state)
    for rxn in reactions:
        flux = rxn.rate * x[rxn.source]
        out[rxn.source] -= flux
        for i, frac in rxn.products:
            out[i] += frac * flux
    return out


# ---------------------------------------------------------------------------
# text export


def describe_operator(
    op: InadequacyOperator, params: InadequacyParams | None = None
) -> str:
    """Human-readable dump of the operator structure, for docs and
    debugging.  With params, also prints the assembled first-order
    reaction view."""
    layout = op.layout
    lines = []
    lines.append("state: " + " ".join(layout.species_names))
    lines.append(f"pools={layout.n_alpha} reduced={layout.n_reduced} total={layout.n_state}")
    lines.append("")
    lines.append("atom fractions (rows are elements):")
    for i, el in enumerate(layout.elements):
        lines.append(
            f"  {el}: " + " ".join(str(e) for e in op.atoms.exact[i])
        )
    lines.append("")
    lines.append("nullspace factor:")
    for row in op.factor.exact:
        lines.append("  " + " ".join(str(e) for e in row))
    lines.append("")
    lines.append("transfer pattern (. zero, - diagonal, + off-diagonal):")
    for j in range(layout.n_state):
        chars = []
        for k in range(layout.n_state):
            if op.pattern.zero[j, k]:
                chars.append(".")
            elif j == k:
                chars.append("-")
            else:
                chars.append("+")
        lines.append("  " + " ".join(chars))
    lines.append("")
    lines.append(
        f"transfer parameters: {op.n_transfer} "
        f"({op.transfer_map.n_constrained} constrained column diagonals)"
    )
    for l, ent in enumerate(op.transfer_map.entries):
        loc = f"P[{ent.row + 1},{ent.col + 1}]"
        if not ent.constrained:
            lines.append(f"  t{l + 1:02d} = {loc}")
        else:
            terms = "".join(
                f" + {w}*t{i + 1:02d}" for i, w in zip(ent.bound_idx, ent.bound_weight)
            )
            lines.append(f"  t{l + 1:02d}: {loc} = -(t{l + 1:02d}{terms})")
    lines.append("")
    lines.append("assembly reactions:")
    for m, rxn in enumerate(op.reactions):
        left = " + ".join(
            (f"{c} " if c > 1 else "") + catchall_name(layout.elements[i])
            for i, c in enumerate(rxn.reactant_counts)
            if c > 0
        )
        factors = " ".join(
            f"[{catchall_name(layout.elements[i])}]" + (f"^{e}" if e > 1 else "")
            for i, e in enumerate(rxn.rate_exponents)
            if e > 0
        )
        lines.append(
            f"  {left} -> {layout.species_names[rxn.product]}"
            f"   rate = a{m + 1} {factors}"
        )
    if params is not None:
        _, species_flow = op.assemble(params.transfer)
        lines.append("")
        lines.append("first-order view of the assembled transfer matrix:")
        for rxn in to_reactions(species_flow, tol=0.0):
            rhs_terms = " + ".join(
                f"{frac:.6g} {layout.species_names[i]}" for i, frac in rxn.products
            )
            lines.append(
                f"  {layout.species_names[rxn.source]} -> {rhs_terms or '(sink)'}"
                f"   k = {rxn.rate:.6g} 1/s"
            )
    return "\n".join(lines) + "\n"

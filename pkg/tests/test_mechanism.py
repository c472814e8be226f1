"""Mechanism parsing and mass-action rate evaluation."""

from __future__ import annotations

import math

import numpy as np
import pytest

from kinops.constants import CM3_PER_M3, GAS_CONSTANT, P_REFERENCE
from kinops.mechanism import (
    ArrheniusRate,
    MechanismError,
    Reaction,
    detailed_mechanism_path,
    forward_rate_coeff,
    parse_mechanism,
    reduced_mechanism_path,
)
from kinops.thermo import default_thermo_path, load_thermo


@pytest.fixture(scope="module")
def thermo():
    return load_thermo(default_thermo_path())


@pytest.fixture(scope="module")
def detailed(thermo):
    return parse_mechanism(detailed_mechanism_path(), thermo)


@pytest.fixture(scope="module")
def reduced(thermo):
    return parse_mechanism(reduced_mechanism_path(), thermo)


def test_detailed_shape(detailed):
    assert detailed.n_species == 8
    assert len(detailed.reactions) == 21
    assert detailed.species_names == ["H2", "O2", "H", "O", "OH", "HO2", "H2O", "H2O2"]


def test_reduced_shape(reduced):
    assert reduced.n_species == 7
    assert len(reduced.reactions) == 5
    assert reduced.species_names == ["H2", "O2", "H", "O", "OH", "HO2", "H2O"]


def test_third_body_flags(detailed, reduced):
    third = [i for i, r in enumerate(detailed.reactions) if r.third_body]
    assert third == [4, 5, 6, 7, 8, 9, 15]
    assert [i for i, r in enumerate(reduced.reactions) if r.third_body] == [3]


def test_all_reactions_reversible_by_default(detailed, reduced):
    assert all(r.reversible for r in detailed.reactions)
    assert all(r.reversible for r in reduced.reactions)


def test_duplicate_reactant_collapses_to_coefficient(detailed):
    rxn = detailed.reactions[4]  # H + H + M -> H2 + M
    assert rxn.reactants == {"H": 2}
    assert rxn.products == {"H2": 1}
    assert rxn.third_body


def test_atom_imbalance_rejected(tmp_path, thermo):
    bad = tmp_path / "bad.mech"
    bad.write_text(
        "ELEMENTS\nH\nSPECIES\nH2 H:2\nH H:1\nREACTIONS\nH2 -> H 1.0 0 0\n"
    )
    with pytest.raises(MechanismError, match="balance"):
        parse_mechanism(bad)


def test_forward_rate_coeff_reaction_one(detailed):
    # independent evaluation of 3.52e16 * 1300^-0.7 * exp(-71.4/(R*1300))
    k = forward_rate_coeff(detailed.reactions[0], 1300.0)
    assert k == pytest.approx(314739449598.7824, rel=1e-12)


def test_forward_rate_coeff_degenerate():
    rate = ArrheniusRate(A=2.5e13, b=0.0, E=0.0)
    for T in (300.0, 1300.0, 4000.0):
        assert rate(T) == 2.5e13


def test_forward_rate_monotone_for_positive_activation(reduced):
    rxn = reduced.reactions[4]  # b = 0, E = 249.5
    temps = np.linspace(900.0, 3000.0, 40)
    ks = [forward_rate_coeff(rxn, t) for t in temps]
    assert all(k2 > k1 for k1, k2 in zip(ks, ks[1:]))


def _manual_kp(mech, rxn, T):
    dg = sum(nu * mech.thermo[n].gibbs(T) for n, nu in rxn.products.items()) - sum(
        nu * mech.thermo[n].gibbs(T) for n, nu in rxn.reactants.items()
    )
    return math.exp(-dg / (GAS_CONSTANT * T))


def test_equilibrium_constant_mole_neutral(detailed):
    rxn = detailed.reactions[1]  # H2 + O -> OH + H, delta nu = 0
    assert rxn.delta_nu == 0
    T = 1300.0
    assert detailed.equilibrium_constant(rxn, T) == pytest.approx(
        _manual_kp(detailed, rxn, T), rel=1e-12
    )


def test_equilibrium_constant_reference_scaling(detailed):
    rxn = detailed.reactions[9]  # H + O2 + M -> HO2 + M, delta nu = -1
    assert rxn.delta_nu == -1
    T = 1300.0
    c_ref = P_REFERENCE / (GAS_CONSTANT * T) / CM3_PER_M3
    assert detailed.equilibrium_constant(rxn, T) == pytest.approx(
        _manual_kp(detailed, rxn, T) / c_ref, rel=1e-12
    )


def test_equilibrium_constant_reaction_one_cross_check(detailed):
    # H + O2 -> OH + O at 1300 K, assembled from per-species g values
    rxn = detailed.reactions[0]
    T = 1300.0
    g = {n: detailed.thermo[n].gibbs(T) for n in ("H", "O2", "OH", "O")}
    dg = g["OH"] + g["O"] - g["H"] - g["O2"]
    assert detailed.equilibrium_constant(rxn, T) == pytest.approx(
        math.exp(-dg / (GAS_CONSTANT * T)), rel=1e-12
    )


def test_reverse_times_kc_equals_forward(detailed):
    for rxn in detailed.reactions:
        for T in (1000.0, 1700.0, 2600.0):
            kc = detailed.equilibrium_constant(rxn, T)
            kb = detailed.reverse_rate_coeff(rxn, T)
            assert kb * kc == pytest.approx(forward_rate_coeff(rxn, T), rel=1e-12)


def test_reverse_rate_on_irreversible_raises(tmp_path, thermo):
    path = tmp_path / "irrev.mech"
    path.write_text(
        "ELEMENTS\nH O\nSPECIES\nH2 H:2\nO2 O:2\nHO2 H:1 O:2\nH H:1\n"
        "REACTIONS\nH2 + O2 -> HO2 + H 1.4e14 0 249.5 IRREV\n"
    )
    mech = parse_mechanism(path, thermo)
    assert not mech.reactions[0].reversible
    with pytest.raises(MechanismError, match="irreversible"):
        mech.reverse_rate_coeff(mech.reactions[0], 1300.0)


def test_reaction_rate_zero_at_equilibrium(detailed):
    rxn = detailed.reactions[1]  # H2 + O -> OH + H
    T = 1500.0
    kc = detailed.equilibrium_constant(rxn, T)
    x = np.zeros(detailed.n_species)
    x[detailed.index("H2")] = 2.0e-6
    x[detailed.index("O")] = 3.0e-7
    x[detailed.index("OH")] = 1.0e-6
    x[detailed.index("H")] = kc * 2.0e-6 * 3.0e-7 / 1.0e-6
    scale = forward_rate_coeff(rxn, T) * 2.0e-6 * 3.0e-7
    assert abs(detailed.reaction_rate(rxn, x, T)) <= 1e-12 * scale


def test_reaction_rate_zero_concentrations(detailed):
    x = np.zeros(detailed.n_species)
    for rxn in detailed.reactions:
        assert detailed.reaction_rate(rxn, x, 1400.0) == 0.0


def test_third_body_multiplies_rate(thermo, tmp_path):
    path = tmp_path / "tb.mech"
    path.write_text(
        "ELEMENTS\nH\nSPECIES\nH H:1\nH2 H:2\n"
        "REACTIONS\nH + H + M -> H2 + M 1.30e18 -1.0 0.0 IRREV\n"
    )
    mech = parse_mechanism(path, thermo)
    x = np.array([4.0e-6, 1.0e-6])
    T = 1000.0
    expected = 1.30e18 / T * (4.0e-6) ** 2 * (5.0e-6)
    assert mech.reaction_rate(mech.reactions[0], x, T) == pytest.approx(
        expected, rel=1e-12
    )


def test_production_rates_single_reaction_hand_case(tmp_path):
    path = tmp_path / "abc.mech"
    path.write_text(
        "ELEMENTS\nX Y\nSPECIES\nA X:1\nB Y:1\nC X:1 Y:1\n"
        "REACTIONS\nA + B -> C 1.0 0 0 IRREV\n"
    )
    mech = parse_mechanism(path)
    xdot = mech.production_rates(np.array([2.0, 3.0, 0.0]), 1000.0)
    assert xdot == pytest.approx([-6.0, -6.0, 6.0])


def test_production_rates_atom_conservation(detailed):
    rng = np.random.default_rng(7)
    atoms = detailed.atom_matrix()
    for _ in range(25):
        x = rng.uniform(0.0, 1.0e-5, detailed.n_species)
        T = rng.uniform(1000.0, 3000.0)
        xdot = detailed.production_rates(x, T)
        drift = np.abs(atoms @ xdot).sum()
        assert drift <= 1e-12 * np.abs(xdot).sum()


def test_production_rates_homogeneous_for_unimolecular(tmp_path):
    path = tmp_path / "uni.mech"
    path.write_text(
        "ELEMENTS\nX\nSPECIES\nA X:1\nB X:1\nC X:1\n"
        "REACTIONS\nA -> B 5.0 0 0 IRREV\nB -> C 2.0 0.5 10.0 IRREV\n"
    )
    mech = parse_mechanism(path)
    x = np.array([0.3, 0.2, 0.1])
    f1 = mech.production_rates(x, 1200.0)
    f2 = mech.production_rates(2.0 * x, 1200.0)
    assert f2 == pytest.approx(2.0 * f1, rel=1e-14)


def test_parse_error_reports_line_number(tmp_path):
    path = tmp_path / "broken.mech"
    path.write_text("ELEMENTS\nH\nSPECIES\nH H:1\nREACTIONS\nH -> H 1.0 zero 0\n")
    with pytest.raises(MechanismError, match="line 6"):
        parse_mechanism(path)


def test_parse_rejects_one_sided_third_body(tmp_path):
    path = tmp_path / "m.mech"
    path.write_text(
        "ELEMENTS\nH\nSPECIES\nH H:1\nH2 H:2\nREACTIONS\nH + H + M -> H2 1e18 -1 0\n"
    )
    with pytest.raises(MechanismError, match="both sides"):
        parse_mechanism(path)


def test_parse_rejects_unknown_species_in_reaction(tmp_path):
    path = tmp_path / "m.mech"
    path.write_text("ELEMENTS\nH\nSPECIES\nH2 H:2\nREACTIONS\nH2 -> H2X 1 0 0\n")
    with pytest.raises(MechanismError, match="unknown species"):
        parse_mechanism(path)


def test_parse_rejects_conflicting_flags(tmp_path):
    path = tmp_path / "m.mech"
    path.write_text(
        "ELEMENTS\nH\nSPECIES\nH H:1\nH2 H:2\nREACTIONS\nH + H -> H2 1 0 0 REV IRREV\n"
    )
    with pytest.raises(MechanismError, match="REV and IRREV"):
        parse_mechanism(path)


def test_glued_coefficient_prefix(tmp_path, thermo):
    path = tmp_path / "m.mech"
    path.write_text(
        "ELEMENTS\nH O\nSPECIES\nH2O2 H:2 O:2\nOH H:1 O:1\n"
        "REACTIONS\nH2O2 -> 2OH 1e13 0 100 IRREV\n"
    )
    mech = parse_mechanism(path, thermo)
    assert mech.reactions[0].products == {"OH": 2}


def test_missing_thermo_coverage_rejected(tmp_path, thermo):
    path = tmp_path / "m.mech"
    path.write_text("ELEMENTS\nN\nSPECIES\nN2 N:2\nREACTIONS\nN2 -> N2 1 0 0\n")
    with pytest.raises(MechanismError, match="N2"):
        parse_mechanism(path, thermo)


def test_arrays_packing(detailed):
    arr = detailed.arrays()
    assert arr.nu_reac.shape == (21, 8)
    assert arr.nu_prod.shape == (21, 8)
    r0 = arr.nu_reac[0]
    assert r0[detailed.index("H")] == 1 and r0[detailed.index("O2")] == 1
    assert arr.nu_prod[0][detailed.index("OH")] == 1
    assert arr.arrh_a[0] == 3.52e16
    assert arr.arrh_b[9] == -1.4
    assert arr.arrh_e[20] == 2.0
    assert arr.third_body[9] and not arr.third_body[0]
    assert arr.reversible.all()
    assert arr.coeff_low.shape == (8, 7)


def test_atom_matrix(reduced):
    atoms = reduced.atom_matrix()
    h_row = atoms[reduced.elements.index("H")]
    assert list(h_row) == [2, 0, 1, 0, 1, 1, 2]
    o_row = atoms[reduced.elements.index("O")]
    assert list(o_row) == [0, 2, 0, 1, 1, 2, 1]


def test_species_atom_count(reduced):
    counts = {sp.name: sp.atom_count for sp in reduced.species}
    assert counts == {"H2": 2, "O2": 2, "H": 1, "O": 1, "OH": 2, "HO2": 3, "H2O": 3}


def test_reaction_delta_nu(detailed):
    assert detailed.reactions[0].delta_nu == 0
    assert detailed.reactions[4].delta_nu == -1  # 2H -> H2
    assert detailed.reactions[3].delta_nu == 0  # H2O + O -> 2OH

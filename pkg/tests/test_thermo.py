"""Thermochemistry checks against standard-state literature values."""

from __future__ import annotations

import math

import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from kinops.constants import GAS_CONSTANT
from kinops.thermo import (
    NasaPolynomial,
    SpeciesThermo,
    ThermoRangeError,
    default_thermo_path,
    load_thermo,
)

T_REF = 298.15


@pytest.fixture(scope="module")
def table():
    return load_thermo(default_thermo_path())


def test_all_eight_species_present(table):
    assert sorted(table.names) == sorted(
        ["H2", "O2", "H", "O", "OH", "HO2", "H2O", "H2O2"]
    )


def test_cp_continuity_at_breakpoint(table):
    for name in table.names:
        assert table.max_continuity_jump(name) <= 1e-3, name


def test_cp_o2_room_temperature(table):
    # JANAF: 29.38 J/(mol K)
    assert table["O2"].cp(T_REF) == pytest.approx(29.38, abs=0.1)


def test_formation_enthalpies(table):
    # Standard 298.15 K formation enthalpies, kJ/mol (JANAF / Burcat).
    assert table["H2O"].enthalpy(T_REF) / 1e3 == pytest.approx(-241.83, abs=1.0)
    assert table["H2"].enthalpy(T_REF) == pytest.approx(0.0, abs=100.0)
    assert table["O2"].enthalpy(T_REF) == pytest.approx(0.0, abs=100.0)
    assert table["H"].enthalpy(T_REF) / 1e3 == pytest.approx(218.0, abs=1.0)
    assert table["OH"].enthalpy(T_REF) / 1e3 == pytest.approx(39.0, abs=2.0)
    assert table["H2O2"].enthalpy(T_REF) / 1e3 == pytest.approx(-136.1, abs=2.0)


def test_o2_standard_entropy(table):
    # JANAF: 205.15 J/(mol K) at 1 bar.
    assert table["O2"].entropy(T_REF) == pytest.approx(205.15, abs=0.5)


def test_cv_is_cp_minus_r(table):
    for name in table.names:
        sp = table[name]
        for T in (350.0, 1000.0, 2500.0, 4800.0):
            assert sp.cv(T) == sp.cp(T) - GAS_CONSTANT


def test_internal_energy_identity(table):
    sp = table["H2O"]
    for T in (400.0, 1300.0, 3000.0):
        assert sp.internal_energy(T) == pytest.approx(
            sp.enthalpy(T) - GAS_CONSTANT * T, rel=1e-14
        )


def test_gibbs_identity(table):
    sp = table["OH"]
    T = 1500.0
    assert sp.gibbs(T) == pytest.approx(sp.enthalpy(T) - T * sp.entropy(T), rel=1e-14)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=320.0, max_value=4980.0))
def test_enthalpy_derivative_matches_cp(T):
    assume(abs(T - 1000.0) > 1.0)  # finite difference must not straddle the seam
    table = load_thermo(default_thermo_path())
    sp = table["H2O"]
    eps = 1e-2
    dh = (sp.enthalpy(T + eps) - sp.enthalpy(T - eps)) / (2.0 * eps)
    assert dh == pytest.approx(sp.cp(T), rel=1e-6)


def test_branch_selection_at_midpoint(table):
    # T == t_mid must evaluate the low row.
    sp = table["H2"]
    lo = sp.poly.coeff_low
    t = sp.poly.t_mid
    expected = GAS_CONSTANT * (
        lo[0] + t * (lo[1] + t * (lo[2] + t * (lo[3] + t * lo[4])))
    )
    assert sp.cp(t) == pytest.approx(expected, rel=1e-15)


def test_out_of_range_raises_with_context(table):
    sp = table["O2"]
    with pytest.raises(ThermoRangeError) as exc:
        sp.cp(250.0)
    assert "O2" in str(exc.value)
    assert "250" in str(exc.value)
    with pytest.raises(ThermoRangeError):
        sp.enthalpy(5100.0)
    with pytest.raises(ThermoRangeError):
        sp.entropy(0.0)


def test_missing_species_lookup(table):
    with pytest.raises(KeyError, match="N2"):
        table["N2"]


def test_coefficient_arrays_round_trip(table):
    names = ["O2", "H2O"]
    c_lo, c_hi, t_mid, t_lo, t_hi = table.coefficient_arrays(names)
    assert c_lo.shape == (2, 7)
    assert tuple(c_lo[0]) == table["O2"].poly.coeff_low
    assert tuple(c_hi[1]) == table["H2O"].poly.coeff_high
    assert t_mid[0] == table["O2"].poly.t_mid
    assert t_lo[1] == table["H2O"].poly.t_low
    assert t_hi[0] == table["O2"].poly.t_high


def test_polynomial_validation():
    with pytest.raises(ValueError, match="seven"):
        NasaPolynomial(300.0, 1000.0, 5000.0, (1.0, 2.0), (0.0,) * 7)
    with pytest.raises(ValueError, match="increasing"):
        NasaPolynomial(1000.0, 300.0, 5000.0, (0.0,) * 7, (0.0,) * 7)


def test_parser_rejects_incomplete_block(tmp_path):
    bad = tmp_path / "bad.dat"
    bad.write_text("species X\nmass 1e-3\nrange 300 1000 5000\nlow " + " ".join(["0"] * 7) + "\n")
    with pytest.raises(ValueError, match="incomplete"):
        load_thermo(bad)


def test_parser_rejects_duplicate_species(tmp_path):
    row = " ".join(["1.0"] * 7)
    block = f"species X\nmass 1e-3\nrange 300 1000 5000\nlow {row}\nhigh {row}\n"
    bad = tmp_path / "dup.dat"
    bad.write_text(block + block)
    with pytest.raises(ValueError, match="duplicate"):
        load_thermo(bad)


def test_parser_reports_line_numbers(tmp_path):
    bad = tmp_path / "bad.dat"
    bad.write_text("species X\nmass not-a-number\n")
    with pytest.raises(ValueError, match=":2:"):
        load_thermo(bad)


def test_entropy_uses_log_term(table):
    # Doubling T adds roughly cp*ln(2) for a slowly varying cp.
    sp = table["H"]  # cp constant for atomic hydrogen
    s1 = sp.entropy(500.0)
    s2 = sp.entropy(1000.0)
    assert s2 - s1 == pytest.approx(sp.cp(700.0) * math.log(2.0), rel=1e-12)

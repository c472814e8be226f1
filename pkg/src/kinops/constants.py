"""Physical constants and unit conventions shared across the package.

Rate evaluation runs in mol-cm-s units with activation energies in kJ/mol,
matching the mechanism tables.  Reactor state and reported concentrations
are mol/m^3.  Conversions happen only at module boundaries; every array
deeper down is in one of these two systems.
"""

from __future__ import annotations

# CODATA 2018 exact value, J/(mol K).
GAS_CONSTANT = 8.31446261815324

# Same constant in the units the Arrhenius tables use, kJ/(mol K).
GAS_CONSTANT_KJ = GAS_CONSTANT * 1.0e-3

# Thermodynamic reference pressure for equilibrium constants, Pa (1 bar).
P_REFERENCE = 1.0e5

# Default initial pressure for reactor scenarios, Pa (1 atm).
P_ATM = 101325.0

# mol/m^3 -> mol/cm^3
CONC_M3_TO_CM3 = 1.0e-6
CM3_PER_M3 = 1.0e6

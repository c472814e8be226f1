"""Physics-constrained stochastic inadequacy operators for gas-phase kinetics.

The package covers the full workflow: NASA-7 thermochemistry, elementary
mechanism evaluation, stiff constant-volume reactor integration, construction
of atom-conserving linear inadequacy operators with catchall species,
hierarchical Bayesian calibration by delayed-rejection adaptive Metropolis,
and ensemble-based validation of model predictions.
"""

__version__ = "0.1.0"

"""Simulation and analysis of superconducting pi-periodic plaquette circuits.

The package is organised around a small pipeline:

- :mod:`plaqsim.circuit` declares circuit parameter sets and bias points and
  validates them into solver-ready records.
- :mod:`plaqsim.plaquette` works with a single two-arm loop: classical
  potential surfaces, effective loop harmonics, and the collapse of a
  structured plaquette into a single multi-harmonic branch.
- :mod:`plaqsim.quantize` builds sparse or factored Hamiltonians in a mixed
  charge/oscillator basis and solves for low-lying eigenpairs.
- :mod:`plaqsim.scan` sweeps flux and offset-charge axes, tracking bands
  through crossings and reporting gaps and slopes.
- :mod:`plaqsim.calib` fits flux-line mutual-inductance and charge-line
  capacitance matrices from measured interference features.
- :mod:`plaqsim.fit` adjusts circuit parameters to measured transition
  frequencies with a bounded Nelder-Mead search, and grows basis truncations
  until target transitions stabilise.
- :mod:`plaqsim.stabilizer` evaluates the effective spin-chain model:
  suppression ratios and noise-limited coherence times.
- :mod:`plaqsim.cli` exposes all of the above as the ``plaqsim`` command.
"""

from .circuit import (
    BiasPoint,
    CircuitSpec,
    CircuitValidationError,
    PlaquetteSpec,
    ValidatedCircuit,
    ValidatedPlaquette,
    circuit_from_json,
    circuit_to_json,
    preset,
    preset_names,
    validate_circuit,
)
from .plaquette import (
    build_structureless,
    calibrate_renorm,
    extract_e2,
    extract_loop_harmonics,
    potential_surface,
)
from .quantize import (
    QuantizeError,
    SpectrumResult,
    Truncation,
    spectrum,
)
from .scan import (
    GapReport,
    ScanAxis,
    ScanResult,
    charge_dispersion,
    common_flux_axis,
    extract_gaps,
    flux_dispersion,
    island_charge_axis,
    single_flux_axis,
)
from .calib import (
    ChargeCapModel,
    MutualModel,
    bias_for_flux,
    device_capacitance_model,
    device_mutual_model,
    fit_capacitance_matrix,
    fit_mutual_matrix,
)
from .fit import (
    CircuitTransitionModel,
    FitConfig,
    FitResult,
    TransitionDataset,
    TransitionRecord,
    converge_truncation,
    fit_circuit,
    nelder_mead,
    uncertainty_scan,
)
from .stabilizer import (
    NoiseModel,
    SpinChainModel,
    lambda_ratios,
    logical_slope,
    spin_levels,
    t1_estimate,
    t2_charge,
    t2_flux,
)

__version__ = "0.1.0"

__all__ = [
    "BiasPoint",
    "ChargeCapModel",
    "CircuitSpec",
    "CircuitTransitionModel",
    "CircuitValidationError",
    "FitConfig",
    "FitResult",
    "GapReport",
    "MutualModel",
    "NoiseModel",
    "PlaquetteSpec",
    "QuantizeError",
    "ScanAxis",
    "ScanResult",
    "SpectrumResult",
    "SpinChainModel",
    "TransitionDataset",
    "TransitionRecord",
    "Truncation",
    "ValidatedCircuit",
    "ValidatedPlaquette",
    "bias_for_flux",
    "build_structureless",
    "calibrate_renorm",
    "charge_dispersion",
    "circuit_from_json",
    "circuit_to_json",
    "common_flux_axis",
    "converge_truncation",
    "device_capacitance_model",
    "device_mutual_model",
    "extract_e2",
    "extract_gaps",
    "extract_loop_harmonics",
    "fit_capacitance_matrix",
    "fit_circuit",
    "fit_mutual_matrix",
    "flux_dispersion",
    "island_charge_axis",
    "lambda_ratios",
    "logical_slope",
    "nelder_mead",
    "potential_surface",
    "preset",
    "preset_names",
    "single_flux_axis",
    "spectrum",
    "spin_levels",
    "t1_estimate",
    "t2_charge",
    "t2_flux",
    "uncertainty_scan",
    "validate_circuit",
    "__version__",
]

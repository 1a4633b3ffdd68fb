"""Ultracold polar-molecule collision rates from a two-parameter
short-range model plus numerically propagated long-range physics."""

from .errors import (
    CalibrationError,
    ColdchemError,
    FitError,
    GridError,
    MatchingError,
    NumericalError,
    ScanError,
    SingularConversionError,
    UnitarityError,
)
from .potential import (
    AdiabaticCurve,
    Barrier,
    Channel,
    ChannelBasis,
    CollisionSystem,
    Symmetry,
    adiabatic_curves,
    build_basis,
    coupling_matrix,
    find_barrier,
    lowest_curves,
    p2_matrix_element,
    potential_matrix,
    single_channel_curve,
)
from .propagator import (
    BoundaryCondition,
    RadialGrid,
    calibrate_phase,
    propagate,
    propagate_block,
    short_range_boundary,
)
from .qdt import (
    CharacteristicEnergies,
    ComplexScatteringLength,
    RatePair,
    ScatteringResult,
    ShortRangeParams,
    barrier_top_transmission,
    barrier_transmission_qt,
    characteristic_energies,
    complex_scattering_length,
    inverse_morse_exponent,
    length_from_s_matrix,
    low_energy_loss_probability,
    mean_scattering_length,
    p_wave_mean_scattering_length,
    rates_from_length,
    rates_from_s_matrix,
    resonance_position,
    s_matrix_from_length,
)
from .scanfit import (
    Dataset,
    RateCurve,
    Resonance,
    SeriesFit,
    ShortRangeFit,
    detect_resonances,
    fit_resonance_series,
    fit_short_range,
    load_dataset,
    rate_point,
    scan_dipole,
    scan_energy,
    symmetry_blocks,
)

__version__ = "0.1.0"

__all__ = [
    "AdiabaticCurve",
    "Barrier",
    "BoundaryCondition",
    "CalibrationError",
    "Channel",
    "ChannelBasis",
    "CharacteristicEnergies",
    "ColdchemError",
    "CollisionSystem",
    "ComplexScatteringLength",
    "Dataset",
    "FitError",
    "GridError",
    "MatchingError",
    "NumericalError",
    "RadialGrid",
    "RateCurve",
    "RatePair",
    "Resonance",
    "ScanError",
    "ScatteringResult",
    "SeriesFit",
    "ShortRangeFit",
    "ShortRangeParams",
    "SingularConversionError",
    "Symmetry",
    "UnitarityError",
    "adiabatic_curves",
    "barrier_top_transmission",
    "barrier_transmission_qt",
    "build_basis",
    "calibrate_phase",
    "characteristic_energies",
    "complex_scattering_length",
    "coupling_matrix",
    "detect_resonances",
    "find_barrier",
    "fit_resonance_series",
    "fit_short_range",
    "inverse_morse_exponent",
    "length_from_s_matrix",
    "load_dataset",
    "low_energy_loss_probability",
    "lowest_curves",
    "mean_scattering_length",
    "p2_matrix_element",
    "p_wave_mean_scattering_length",
    "potential_matrix",
    "propagate",
    "propagate_block",
    "rate_point",
    "rates_from_length",
    "rates_from_s_matrix",
    "resonance_position",
    "s_matrix_from_length",
    "scan_dipole",
    "scan_energy",
    "short_range_boundary",
    "single_channel_curve",
    "symmetry_blocks",
    "__version__",
]

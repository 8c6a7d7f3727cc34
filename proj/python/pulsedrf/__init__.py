"""Pulsed resonance fluorescence simulator.

Units are ns and rad/ns throughout.
"""

from ._core import (
    ConfigError,
    CorrelationRecord,
    Emitter,
    Envelope,
    NumericalGuardError,
    beat_frequency,
    correlation,
    cw_correlation,
    cw_g2_analytic,
    efficiency_report,
    evolve,
    fit_exponential,
    fit_rabi,
    jump_oracle,
    run_scenario,
    tpi_visibility,
    validate_config,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "CorrelationRecord",
    "Emitter",
    "Envelope",
    "NumericalGuardError",
    "beat_frequency",
    "correlation",
    "cw_correlation",
    "cw_g2_analytic",
    "efficiency_report",
    "evolve",
    "fit_exponential",
    "fit_rabi",
    "jump_oracle",
    "run_scenario",
    "tpi_visibility",
    "validate_config",
]

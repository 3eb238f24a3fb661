"""Differentially private Freq>=k counting over windows of event streams."""

from dpfreq.core import (EventStream, StreamError, exact_freq_at_least, exact_freq_equal,
                         exact_table, query_family, read_stream, validate_stream, write_stream)
from dpfreq.estimators import ConfigError, EstimateTable, EstimatorConfig, estimate
from dpfreq.genbench import ErrorReport, GeneratorSpec, generate, run_experiment, sweep
from dpfreq.privacy import PrivacyBudget, make_rng

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ErrorReport", "EstimateTable", "EstimatorConfig", "EventStream",
    "GeneratorSpec", "PrivacyBudget", "StreamError", "estimate", "exact_freq_at_least",
    "exact_freq_equal", "exact_table", "generate", "make_rng", "query_family", "read_stream",
    "run_experiment", "sweep", "validate_stream", "write_stream", "__version__",
]

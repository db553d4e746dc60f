"""Quantitative group testing on sparse pooling graphs.

Belief-propagation and peeling decoders, an exhaustive oracle for small
instances, and a seeded Monte Carlo harness for misdetection-rate sweeps.
"""

from .bp import DecodeResult, DecoderConfig, decode
from .graph import (
    GraphConfig,
    PoolingGraph,
    build_regular_graph,
    from_dense_matrix,
    from_pools,
    read_graph,
    validate,
    write_graph,
)
from .model import PrevalenceModel, compute_syndrome, sample_defective, trial_stream
from .oracle import OracleResult, exact_marginals
from .peeling import peel
from .sim import ExperimentSpec, MetricsTable, run_experiment, run_trial

__version__ = "0.1.0"

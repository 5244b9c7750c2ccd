"""Averaged higher-order out-of-time-order correlators in a minimal chaotic circuit model."""

__version__ = "0.1.0"

from .errors import (DegeneracyError, DimensionError, DomainError, KotocError, OrderError, SizeLimitError,
                     ValidationError)
from .ncpart import NcPartition, enumerate_nc, kreweras, lattice, mobius
from .replica import Gate, Observable, ReplicaVector, load_gate, load_observable, save_gate, save_observable
from .channel import build_channel, diagnose, gate_library, parse_gate_spec
from .freeprob import cumulant_table, moment_table, steady_state_prediction
from .multichain import OtocSeries, kotoc_multichain
from .markov import (MarkovState, boundary_states, dressed_eigenstates, export_influence_mps, kotoc_transfer,
                     kotoc_transfer_deflated, leading_eigenstates, steady_state, transfer_apply)
from .montecarlo import McConfig, McEstimate, estimate, extended_bath_estimate

"""Uniform k-partition population protocols with a base station.

Modules: :mod:`core` (protocol model and semantics), :mod:`protocols`
(builders), :mod:`sim` (schedulers and traces), :mod:`mc` (explicit-state
model checking), :mod:`analysis` (homonym analyses), :mod:`cli`.
"""

from .core import (BS, Configuration, ProtocolSpec, is_symmetric_protocol, make_configuration,
                   step, validate_protocol)
from .protocols import (build_bipartition_oddP, build_kpartition_asym,
                        build_kpartition_sym_candidate)

__version__ = "0.1.0"

__all__ = [
    "BS", "Configuration", "ProtocolSpec", "build_bipartition_oddP", "build_kpartition_asym",
    "build_kpartition_sym_candidate", "is_symmetric_protocol", "make_configuration", "step",
    "validate_protocol",
]

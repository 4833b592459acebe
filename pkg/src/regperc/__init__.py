"""Critical bond percolation on random regular graphs: samplers, exploration, metrics."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    DisconnectedError,
    ExhaustedError,
    ParityError,
    PreconditionError,
    RegpercError,
)
from .graph import (  # noqa: E402
    CompleteGraph,
    Multigraph,
    RegularGraph,
    SwitchingCycle,
    apply_switching,
    complete_graph,
    has_edge,
)
from .percolation import PercolationOutcome, critical_p, percolate  # noqa: E402
from .sampler import (  # noqa: E402
    enumerate_regular,
    estimate_simple_probability,
    sample_pairing,
    sample_regular,
    sample_switching_chain,
    sample_uniform_rejection,
)

__all__ = [
    "__version__",
    "CompleteGraph", "Multigraph", "RegularGraph", "SwitchingCycle",
    "apply_switching", "complete_graph", "has_edge",
    "PercolationOutcome", "critical_p", "percolate",
    "enumerate_regular", "estimate_simple_probability", "sample_pairing",
    "sample_regular", "sample_switching_chain", "sample_uniform_rejection",
    "RegpercError", "PreconditionError", "ParityError", "ExhaustedError", "DisconnectedError",
]

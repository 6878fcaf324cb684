"""envgnn: out-of-distribution graph classification on molecular graphs.

The pipeline: a fragment library grows label-preserving molecular
environments around labeled cores; a stochastic edge mask splits each graph
into an environment part and an invariant part under an information
bottleneck objective; cross attention with a gated bridge fuses the two
halves into the prediction representation. Training, evaluation, dataset
synthesis and explanation export are reachable from the ``envgnn`` CLI.
"""

__version__ = "0.1.0"

"""Graph-regularized tensor robust PCA for video background subtraction."""

from .batch import BatchConfig, Decomposition, Graphs, build_graphs, solve_batch
from .graph import GraphConfig, KnnGraph, laplacian, spatial_graph, temporal_graph, trace_quad
from .ingest import SequenceSpec, SynthObject, SynthSpec, load_sequence, preset, synth
from .online import OnlineConfig, OnlineDecomposition, solve_online
from .segmentation import EvalReport, binarize, score
from .tensor import dft3, fold, idft3, tnn, tprod, tsvd, tsvt, unfold

__all__ = [
    "BatchConfig",
    "Decomposition",
    "EvalReport",
    "GraphConfig",
    "Graphs",
    "KnnGraph",
    "OnlineConfig",
    "OnlineDecomposition",
    "SequenceSpec",
    "SynthObject",
    "SynthSpec",
    "binarize",
    "build_graphs",
    "dft3",
    "fold",
    "idft3",
    "laplacian",
    "load_sequence",
    "preset",
    "score",
    "solve_batch",
    "solve_online",
    "spatial_graph",
    "synth",
    "temporal_graph",
    "tnn",
    "tprod",
    "trace_quad",
    "tsvd",
    "tsvt",
    "unfold",
]

__version__ = "0.1.0"

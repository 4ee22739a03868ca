"""Partial multi-graph matching through learned universe embeddings."""

from .assignment import LapResult, solve_lap_auction, solve_lap_exact
from .errors import (
    CheckpointError,
    ContractError,
    DimensionError,
    FactorizationError,
    IncompleteCollectionError,
    InfeasibleError,
    NumericError,
    SizeLimitError,
    SupervisionError,
    URLMatchError,
    ValidationError,
)
from .geometry import Graph, delaunay_edges, pseudo_coords
from .matching import (
    ConsistencyReport,
    MatchingCollection,
    PartialPermutation,
    UniverseMatching,
    check_cycle_consistency,
    factorize_pairwise,
    pairwise_from_universe,
)
from .model import (
    EncoderConfig,
    MatchResult,
    centroid_universe,
    discretize,
    encode,
    init_params,
    match_collection,
    node_loss,
    soft_matching,
    total_loss,
)
from .params import ParamStore, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

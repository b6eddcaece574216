"""Incremental reseeding graph clustering."""

__version__ = "0.1.0"

from .evaluation import aggregate_runs, confusion_counts, purity, time_to_purity
from .graph import (GraphError, SparseGraph, add_noise_edges, connected_components, from_adjacency,
                    from_edges, generate_sbm, knn_graph, load_edge_list, load_labels,
                    load_matrix_market, tfidf)
from .incres import (DisconnectedGraphError, GrowConfig, GrowDidNotTerminate, IncresError,
                     Partition, SeedSchedule, StoppingRule, grow, harvest, incres_run, plant)
from .multigrid import build_hierarchy, coarsen_once, make_schedule, multilevel_run

__all__ = [
    "aggregate_runs", "confusion_counts", "purity", "time_to_purity",
    "GraphError", "SparseGraph", "add_noise_edges", "connected_components", "from_adjacency",
    "from_edges", "generate_sbm", "knn_graph", "load_edge_list", "load_labels",
    "load_matrix_market", "tfidf",
    "DisconnectedGraphError", "GrowConfig", "GrowDidNotTerminate", "IncresError",
    "Partition", "SeedSchedule", "StoppingRule", "grow", "harvest", "incres_run", "plant",
    "build_hierarchy", "coarsen_once", "make_schedule", "multilevel_run",
]

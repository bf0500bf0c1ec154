"""Branch-and-bound approximate subgraph matching with learned node-pair policies."""
from .graph import EditCost, Graph, NodeMapping, ged, induced_subgraph, load_graph, partial_cost, save_graph

__all__ = [
    "EditCost",
    "Graph",
    "NodeMapping",
    "ged",
    "induced_subgraph",
    "load_graph",
    "partial_cost",
    "save_graph",
]
__version__ = "0.1.0"

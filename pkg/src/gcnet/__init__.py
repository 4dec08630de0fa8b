"""Graph-based next-day stock movement prediction with plausible label discovery."""

from .classifiers import POOL_ORDER, train_pool, train_qda
from .errors import (
    ConfigurationError, ContractError, DegenerateTrainingError, GcnetError, LabelUnavailableError,
    ParseError, RunFailure, WindowingError,
)
from .gcn import GcnHyperParams, GcnModel, normalize_adjacency, train_on_stack
from .indicators import compute_features, compute_signals, movement_label
from .influence import InfluenceGraph, build_correlation_graph, build_influence_graph, density, sparsify
from .market_data import MarketSnapshot, SynthConfig, generate_synthetic, load_csv, split
from .pipeline import RunConfig, evaluate, run_backtest, sweep_n
from .pld import assign_labels, rank_nodes

__all__ = [
    "POOL_ORDER", "train_pool", "train_qda",
    "ConfigurationError", "ContractError", "DegenerateTrainingError", "GcnetError",
    "LabelUnavailableError", "ParseError", "RunFailure", "WindowingError",
    "GcnHyperParams", "GcnModel", "normalize_adjacency", "train_on_stack",
    "compute_features", "compute_signals", "movement_label",
    "InfluenceGraph", "build_correlation_graph", "build_influence_graph", "density", "sparsify",
    "MarketSnapshot", "SynthConfig", "generate_synthetic", "load_csv", "split",
    "RunConfig", "evaluate", "run_backtest", "sweep_n",
    "assign_labels", "rank_nodes",
]

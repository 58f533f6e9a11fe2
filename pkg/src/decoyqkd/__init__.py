"""Decoy-state BB84 simulation, finite-statistics analysis and key post-processing."""
from .analysis import AnalysisReport, InconsistentObservations, analyze
from .cascade import cascade_reconcile
from .channel import ChannelModel
from .protocol import DecoyConfig, SessionTallies, simulate_session
from .toeplitz import ToeplitzSpec, toeplitz_hash

__version__ = "0.1.0"

__all__ = [
    "AnalysisReport",
    "ChannelModel",
    "DecoyConfig",
    "InconsistentObservations",
    "SessionTallies",
    "ToeplitzSpec",
    "analyze",
    "cascade_reconcile",
    "simulate_session",
    "toeplitz_hash",
]

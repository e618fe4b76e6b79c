"""Simulation and verification toolkit for consensus under switching topologies."""
from .dynamics import BallDomain, BoxDomain, Mode, ModeSet, NumericalError, SwitchedSystem, Trajectory, integrate
from .graph import QUASI, STRONG, Digraph, GraphProcess, union_graph, verify_uniform_connectivity
from .lyapunov import check_assumption_v, check_assumption_w, consensus_distance, monitor, strict_decrease_window
from .signal import SwitchingSignal, expand_timeshift, normalize_bounded, random_signal

__version__ = "0.1.0"

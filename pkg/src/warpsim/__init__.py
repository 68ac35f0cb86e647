"""SIMT device simulator and warp-level-parallelism runtime for replicated stochastic simulations."""

__version__ = "0.1.0"

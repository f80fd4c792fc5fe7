"""Desk-scale laboratory for recurrent-cell architecture search with weight
sharing: a controller/shared-weights search loop, a replay-buffer
reconstruction regularizer, and the hidden-state / similarity analyses that
diagnose whether the controller conditions on its past choices."""

__version__ = "0.1.0"

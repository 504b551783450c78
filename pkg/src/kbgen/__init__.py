"""Generative knowledge-base construction toolkit.

Trains a small autoregressive transformer on seed (subject, relation,
object) tuples and uses it to decode new objects for (subject, relation)
prompts, growing the graph with novel nodes and edges.
"""

__version__ = "0.1.0"


class KbgenError(Exception):
    """Base class for errors raised by this package."""

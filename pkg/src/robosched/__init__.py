"""Multi-robot task scheduling with random-graph embeddings and auction-fitted Q-iteration."""

__version__ = "0.1.0"

"""Group-buying recommendation toolkit.

Multi-view graph convolutional embeddings over launch/join/share graphs,
trained with a double-pairwise ranking loss, plus matrix-factorization
baselines, a leave-one-out evaluator, and a planted-model synthetic generator.
"""

__version__ = "0.1.0"

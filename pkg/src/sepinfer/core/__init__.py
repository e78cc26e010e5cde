"""Core probabilistic models, decompositions and inference."""

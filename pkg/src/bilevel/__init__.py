"""Bilevel optimization: hypergradient estimators, outer solvers, meta-learning
gradients and a verification harness."""

__version__ = "0.1.0"

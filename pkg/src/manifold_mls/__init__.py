"""Estimate points and tangent spaces of a noisy sampled manifold."""

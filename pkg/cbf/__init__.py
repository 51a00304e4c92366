"""Pseudo-spectral CBF solver and inverse-source toolkit on the periodic torus."""

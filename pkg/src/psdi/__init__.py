"""Steepest-descent-like solvers for SPD-preconditioned symmetric indefinite systems."""

"""Numerical core, networks, trainers, solvers and evaluation of the GE toolkit."""

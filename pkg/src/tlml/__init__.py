"""Temporally local maximum likelihood for the stochastic SIS model."""

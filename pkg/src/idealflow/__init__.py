"""Spectral simulation of m-ideal energies and their normalised gradient flow
on closed plane curves."""

__version__ = "0.1.0"

"""Blow-up analysis for weakly coupled reaction-diffusion systems with
time-dependent coefficients: expression-defined coefficients, scalar Osgood
problems, the companion ODE system, explicit bounds and a spectral PDE
simulator."""

__version__ = "0.1.0"

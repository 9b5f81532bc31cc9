"""Multirate (MPDE) simulation of pulsed nonlinear circuits with PWM Galerkin bases."""

__version__ = "0.1.0"

"""Underwater structured-light scanning: gray-code patterns, flat-port
refraction, triangulation, port calibration, a ray-traced simulator and a
simulated capture control plane."""
__version__ = "0.1.0"

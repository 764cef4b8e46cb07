"""Thermoacoustic photoacoustic tomography: forward, adjoint and CG inversion."""

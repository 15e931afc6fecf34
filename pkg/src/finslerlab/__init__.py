"""Numerical laboratory for recursive first integrals of Finsler geodesic flows."""

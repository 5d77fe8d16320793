"""Offline/online solver for geometrically parametrised 2D Stokes flow.

The spatial discretisation is a high-order hybridisable discontinuous
Galerkin (HDG) method posed on a fixed reference domain; the geometric
parameters enter through a separated (low-rank) mapping.  A greedy
proper generalised decomposition (PGD) builds a generalised solution
over the whole parameter box in an offline phase; evaluation at any
parameter point is then a cheap sum of precomputed modes.
"""

__version__ = "0.1.0"

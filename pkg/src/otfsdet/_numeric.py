"""Numerical guard rails shared by every sweep implementation.

The compiled kernel bakes the same values in as C constants; a parity test
keeps the two in sync.
"""

VAR_FLOOR = 1e-12     # posterior variances never drop below this
DENOM_FLOOR = 1e-12   # factor variance + gamma never divides below this
Q_CAP = 1e12          # combined precision cap (message variance floor inverted)
EDGE_THRESHOLD = 1e-14  # |H_dc|^2 below this: edge treated as absent

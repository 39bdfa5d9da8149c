"""Certified stability for piecewise-linear closed loops.

Learns a controller together with a monotonic piecewise-linear Lyapunov
function, proves the decrease condition exactly with a built-in MILP
solver, and grows the certified sublevel set from there.
"""

__version__ = "0.1.0"

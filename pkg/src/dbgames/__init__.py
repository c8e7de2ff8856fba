"""Simulator and verification harness for death-birth evolutionary games
on finite weighted graphs: spatial kernels, exact-event dynamics with a
pathwise semimartingale decomposition, coalescing-walker meeting laws and
tail constants, the limiting replicator ODEs, brute-force oracles, and
ensemble statistics.
"""

__version__ = "0.1.0"

"""Energy-efficient contention-based ranging and synchronization simulator.

An OFDMA uplink where contending stations repeat code-spread ranging
transmissions on shared tiles until a GLRT receiver detects them with
timing-grade SINR. Transmit powers follow a finite noncooperative game;
the package analyzes its generalized Nash equilibria and simulates the
limited-feedback algorithms that reach them.
"""

__version__ = "0.1.0"

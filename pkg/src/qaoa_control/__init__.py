"""
Package initialization for qaoa-control

Hybrid discrete-continuous policy-gradient control of QAOA-style protocols
(RL-QAOA) together with the QAOA, PG-QAOA and CD-QAOA baselines.
"""

__version__ = "1.0.0"
__description__ = "Noise-robust ground state preparation with hybrid policy gradients"

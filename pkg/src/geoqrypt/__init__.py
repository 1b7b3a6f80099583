"""Simulation toolkit for location-locked quantum encryption.

Submodules: ``quantum`` (statevector and Gaussian-state primitives), ``qdc``
(ping-pong direct communication), ``channel`` (Rician fading and timing
bounds), ``localization`` (TDoA Fisher bounds and estimation), ``qlv``
(location verification), ``orchestrator`` (end-to-end sessions) and ``cli``.
"""

__version__ = "0.1.0"

"""Non-Markovian open quantum system dynamics with memory channels and delay-time hierarchies."""

__version__ = "0.1.0"

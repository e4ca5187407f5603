"""SIR epidemics on configuration-model random graphs: simulation and deterministic limits."""

__version__ = "0.1.0"

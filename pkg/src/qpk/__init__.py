"""Phase-keyed message transfer over two-mode squeezed light, with a Gaussian simulator and a Fock-space checker."""

__version__ = "0.1.0"

"""Flexible duplex resource allocation: channel simulation, classical
solvers, and the Flex-Net graph neural network."""

__version__ = "0.1.0"

"""
neuralfield - Plastic neural field toolkit

Simulation of the neural field equation with Hebbian plasticity, checks of
its well-posedness bounds, stationary states, and the learned-kernel to
gain-field to Schrödinger pipeline. The command-line entry point is
neuralfield.neural_field_tool.
"""

__version__ = '1.0.0'

"""Robust high-dimensional memory-augmented neural network simulator.

Episodically trains a small convolutional embedding controller, clips its
outputs to bipolar/binary HD vectors and evaluates few-shot inference on a
simulated phase-change-memory crossbar.
"""

__version__ = "0.1.0"

DEFAULT_DIM = 512

"""Genuine multipartite entanglement detection.

Random multi-qubit states, the witness-SDP and closed-form GMN labels,
feature vectors, and a small NumPy 1-D CNN (optionally with a
squeeze-and-excitation block) trained to predict the labels.
"""

__version__ = "0.1.0"

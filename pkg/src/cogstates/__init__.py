"""Cognitive-state classification from multichannel time series.

From-scratch 1D-CNN and BiLSTM classifiers over fixed-length segments,
grouped permutation feature importance over channel networks, and
behavior-quartile analysis relating prediction correctness to per-session
task performance.
"""

__version__ = "0.1.0"

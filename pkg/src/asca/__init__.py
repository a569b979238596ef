"""Desk-scale acoustic keystroke side-channel pipeline.

keystroke audio -> segmentation -> mel-spectrogram -> classification ->
noisy text channel -> typo correction -> text-similarity scoring.
"""

__version__ = "0.1.0"

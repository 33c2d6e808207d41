"""Stereo-vision risk assessment: synthetic scenes, SGM disparity, grid-map risk labels and a numpy CNN."""

__version__ = "0.1.0"
MODEL_FORMAT_VERSION = 1

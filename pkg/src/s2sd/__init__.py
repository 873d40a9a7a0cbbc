"""Damage-severity segmentation from paired pre/post-disaster satellite images.

Pipeline: polygon label files -> class masks -> dual-input U-Net training ->
per-class Dice/IoU reports -> color-coded damage maps.
"""

__version__ = "0.1.0"

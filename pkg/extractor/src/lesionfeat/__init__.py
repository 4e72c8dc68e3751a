"""Lesion-image feature extraction.

Runs a pretrained CNN backbone over lesion images, applies global average
pooling to the last feature maps, and writes one embedding row per manifest
row in the cohort CSV/JSONL formats consumed by the duckling toolkit.
"""

__version__ = "0.1.0"

"""Joint temporal step segmentation and key-action quality scoring."""

__version__ = "0.1.0"

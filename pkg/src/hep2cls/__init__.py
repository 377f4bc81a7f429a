"""Class-specific feature extraction and ensemble classification of
HEp-2 cell staining patterns."""

__version__ = "0.1.0"

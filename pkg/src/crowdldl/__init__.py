"""Subjectivity-aware crowd-voted label distribution learning at desk scale."""

__version__ = "0.1.0"

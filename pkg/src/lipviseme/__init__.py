"""Viseme-labeled multi-task sequence classification with temporal
attention fusion, plus the pronouncing-lexicon toolchain and a synthetic
benchmark corpus for desk-scale experiments."""

__version__ = "0.1.0"

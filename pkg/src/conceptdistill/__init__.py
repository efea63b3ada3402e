"""Concept-similarity knowledge distillation between unpaired modalities."""

__version__ = "0.1.0"

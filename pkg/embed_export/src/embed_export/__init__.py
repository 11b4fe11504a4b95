"""Pretrained-model embedding exporter for the predicate debiasing pipeline."""

from .exporter import ExportError, ModelLoadError, SentenceEmbedder, export, read_sentences

__version__ = "0.1.0"

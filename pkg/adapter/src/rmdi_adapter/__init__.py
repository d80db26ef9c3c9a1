"""Exporter packaging segmentation-model outputs into .rmdi record streams."""

from .exporter import AdapterConfig, RecordExporter, encode_runs

__version__ = "0.1.0"

__all__ = ["AdapterConfig", "RecordExporter", "encode_runs", "__version__"]

"""Diversity decomposition, margin-based risk analysis and diversity-driven
pruning for binary voting ensembles."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

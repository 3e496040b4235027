"""Scale-across LLM training explorer."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("scale-across-explorer")
except PackageNotFoundError:
    __version__ = "0.1.0"

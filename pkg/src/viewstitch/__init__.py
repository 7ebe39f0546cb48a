"""Target-view stitching for calibrated multi-camera rigs.

Submodules are imported on first attribute access so that ``viewstitch.cli``
can configure the environment before numerical libraries load.
"""

import importlib

__version__ = "0.1.0"

_SUBMODULES = (
    "align",
    "attention",
    "config",
    "datagen",
    "errors",
    "evaluation",
    "features",
    "fileio",
    "fusion",
    "geometry",
    "losses",
    "pipeline",
    "synth",
)


def __getattr__(name):
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")

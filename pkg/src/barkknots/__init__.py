"""Synthetic wood logs with internal knots.

Modules:

* ``synthesis``: parametric log descriptions and dataset manifests
* ``raster``: surface patches, half-plane targets, cross-sections, volumes
* ``extract``: bark contours, knot blobs and tracking on slice stacks
* ``metrics``: RMSE, IoU, average precision, dataset splits
* ``minimodel``: a small numpy encoder-decoder and its training loop
* ``io`` / ``cli``: file formats and the command-line interface
"""

from .errors import (
    BarkKnotsError,
    ConfigError,
    DimensionError,
    DomainError,
    ExtractionError,
    FormatError,
    MagicError,
    StateError,
    TrainingError,
    TruncationError,
    VersionError,
)

__version__ = "0.1.0"

"""Real-time reduction of 2D scattering images to 1D radial profiles.

The core turns detector frames into azimuthally averaged I(q) curves
with Poisson error bands, integral classifiers, and detector-coordinate
line cuts, using a precomputed sparse weighting matrix so each frame
costs one sparse matrix-vector product.  Around the core: a threaded
image queue, a network layer (event stream, encrypted control channel,
results stream, browser gateway), and a CLI.
"""

from .calib import (
    Calibration,
    CalibrationError,
    DetectorGeometry,
    MaskSource,
    SliceSpec,
    load_calibration,
    parse_calibration,
    save_calibration,
    serialize_calibration,
)
from .geometry import GeometryError, pixel_q, q_grid
from .pipeline import HistoryStore, ImageQueue, QueueError, QueueState, dataset_stem
from .reduce import (
    ClassifierRecord,
    Frame,
    RadialProfile,
    ReduceError,
    SliceProfile,
    classifiers,
    integrate_frame,
    load_frame,
    slice_profiles,
    write_chi,
)
from .weights import WeightingMatrix, build_weight_matrix, cached_build

__version__ = "0.1.0"

__all__ = [
    "Calibration",
    "CalibrationError",
    "ClassifierRecord",
    "DetectorGeometry",
    "Frame",
    "GeometryError",
    "HistoryStore",
    "ImageQueue",
    "MaskSource",
    "QueueError",
    "QueueState",
    "RadialProfile",
    "ReduceError",
    "SliceProfile",
    "SliceSpec",
    "WeightingMatrix",
    "__version__",
    "build_weight_matrix",
    "cached_build",
    "classifiers",
    "dataset_stem",
    "integrate_frame",
    "load_calibration",
    "load_frame",
    "parse_calibration",
    "pixel_q",
    "q_grid",
    "save_calibration",
    "serialize_calibration",
    "slice_profiles",
    "write_chi",
]

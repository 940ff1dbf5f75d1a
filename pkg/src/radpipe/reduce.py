"""Frame reduction: matrix integration, errors, classifiers, line cuts.

A frame is one detector image, treated as a flat pixel vector.  The mean
intensity per radial bin is the weighted pixel sum divided by the bin's
effective area; the per-bin error follows the Poisson model
E = sqrt(I / A).  The unnormalized weighted sums are kept on the profile
so conservation can be checked exactly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import numpy as np
from PIL import Image

from .calib import Calibration, SliceSpec
from .weights import WeightingMatrix

logger = logging.getLogger(__name__)

TIFF_DATETIME_TAG = 306
_TIFF_DATETIME_FMT = "%Y:%m:%d %H:%M:%S"


class ReduceError(Exception):
    pass


class FrameError(ReduceError):
    """The image file cannot be read or contains invalid data."""


@dataclass(frozen=True)
class Frame:
    """One detector image plus acquisition metadata."""

    pixels: np.ndarray          # (V, H) float64
    acquired_at: float          # epoch seconds
    timestamp_source: str       # "header" | "mtime" | "synthetic"
    source_path: str

    @property
    def dims(self) -> tuple[int, int]:
        return self.pixels.shape  # type: ignore[return-value]


def load_frame(path: str | Path) -> Frame:
    """Load a grayscale image file as a frame.

    The acquisition time is taken from the TIFF DateTime header when
    present, otherwise from the file modification time; the provenance
    is recorded so mixed sources stay visible downstream.
    """
    path = Path(path)
    try:
        with Image.open(path) as img:
            acquired_at, source = _acquisition_time(img, path)
            pixels = np.asarray(img, dtype=np.float64)
    except FileNotFoundError:
        raise FrameError(f"no such image: {path}") from None
    except (OSError, SyntaxError, ValueError) as exc:
        raise FrameError(f"cannot read image {path}: {exc}") from exc
    if pixels.ndim != 2:
        raise FrameError(f"{path}: expected a single-channel image, got shape {pixels.shape}")
    if not np.all(np.isfinite(pixels)):
        raise FrameError(f"{path}: image contains non-finite pixel values")
    return Frame(
        pixels=pixels,
        acquired_at=acquired_at,
        timestamp_source=source,
        source_path=str(path),
    )


def _acquisition_time(img: Image.Image, path: Path) -> tuple[float, str]:
    stamp = None
    if hasattr(img, "tag_v2"):
        stamp = img.tag_v2.get(TIFF_DATETIME_TAG)
    if stamp:
        try:
            return datetime.strptime(str(stamp), _TIFF_DATETIME_FMT).timestamp(), "header"
        except ValueError:
            logger.warning("%s: unparsable DateTime header %r, using mtime", path, stamp)
    return path.stat().st_mtime, "mtime"


@dataclass(frozen=True)
class RadialProfile:
    """Azimuthally averaged 1D profile of one frame."""

    q: np.ndarray               # 1/nm per bin
    intensity: np.ndarray       # mean intensity per bin
    error: np.ndarray           # Poisson error per bin
    area: np.ndarray            # effective pixel count per bin
    weighted_sum: np.ndarray    # unnormalized weighted pixel sums
    source_path: str = ""
    acquired_at: float = 0.0
    timestamp_source: str = "synthetic"


def integrate_frame(w: WeightingMatrix, frame: Frame) -> RadialProfile:
    """Apply the weighting matrix to one frame.

    I_j is the weighted mean over the bin (0 where the bin is empty),
    E_j the Poisson error sqrt(I_j / A_j).
    """
    if frame.dims != w.image_size:
        raise ReduceError(
            f"frame {frame.source_path or '<memory>'} has dims {frame.dims}, "
            f"matrix expects {w.image_size}"
        )
    raw = w.matrix @ frame.pixels.ravel()
    area = w.area
    nonempty = area > 0
    intensity = np.zeros_like(raw)
    np.divide(raw, area, out=intensity, where=nonempty)
    return RadialProfile(
        q=w.q_centers,
        intensity=intensity,
        error=poisson_errors(intensity, area),
        area=area,
        weighted_sum=raw,
        source_path=frame.source_path,
        acquired_at=frame.acquired_at,
        timestamp_source=frame.timestamp_source,
    )


def poisson_errors(intensity: np.ndarray, area: np.ndarray) -> np.ndarray:
    """Per-bin counting error: E = sqrt(I / A), 0 where the bin is empty."""
    intensity = np.asarray(intensity, dtype=float)
    area = np.asarray(area, dtype=float)
    if intensity.shape != area.shape:
        raise ReduceError("intensity and area vectors differ in length")
    if np.any(area < 0):
        raise ReduceError("negative bin area")
    if np.any(intensity < 0):
        raise ReduceError("negative mean intensity: counts cannot be negative")
    out = np.zeros_like(intensity)
    nonempty = area > 0
    np.divide(intensity, area, out=out, where=nonempty)
    return np.sqrt(out, out=out)


# ---------------------------------------------------------------------------
# integral classifiers


@dataclass(frozen=True)
class ClassifierRecord:
    """Scalar profile summaries used for online experiment feedback.

    ``None`` marks a classifier that is unavailable for this frame
    (fewer than two usable bins, or a vanishing invariant for the
    correlation length).
    """

    total_intensity: float | None
    invariant: float | None
    correlation_length: float | None
    source_path: str = ""
    dataset: str = ""
    acquired_at: float = 0.0
    timestamp_source: str = "synthetic"

    def to_dict(self) -> dict:
        return {
            "total_intensity": self.total_intensity,
            "invariant": self.invariant,
            "correlation_length": self.correlation_length,
            "source_path": self.source_path,
            "dataset": self.dataset,
            "acquired_at": self.acquired_at,
            "timestamp_source": self.timestamp_source,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ClassifierRecord":
        return cls(**doc)


def classifiers(profile: RadialProfile, q_start: float, q_stop: float) -> ClassifierRecord:
    """Integral classifiers of a profile over [q_start, q_stop].

    total = integral of I dq, invariant = integral of q^2 I dq, and the
    correlation length pi * integral(q I dq) / invariant; trapezoidal
    quadrature over the bins inside the range, empty bins excluded.
    Bounds outside the grid are clamped with a warning so one
    calibration can serve several detector distances.
    """
    if not q_start < q_stop:
        raise ReduceError("q_start must be < q_stop")
    q, intensity, area = profile.q, profile.intensity, profile.area
    if len(q) and (q_start < q[0] or q_stop > q[-1]):
        logger.warning(
            "classifier bounds [%g, %g] clamped to q grid [%g, %g]",
            q_start, q_stop, q[0], q[-1],
        )
    sel = (q >= q_start) & (q <= q_stop) & (area > 0)
    meta = {
        "source_path": profile.source_path,
        "acquired_at": profile.acquired_at,
        "timestamp_source": profile.timestamp_source,
    }
    if np.count_nonzero(sel) < 2:
        return ClassifierRecord(None, None, None, **meta)
    qs = q[sel]
    ys = intensity[sel]
    total = float(np.trapezoid(ys, qs))
    invariant = float(np.trapezoid(qs * qs * ys, qs))
    first_moment = float(np.trapezoid(qs * ys, qs))
    corr = math.pi * first_moment / invariant if invariant != 0.0 else None
    return ClassifierRecord(total, invariant, corr, **meta)


# ---------------------------------------------------------------------------
# detector-coordinate line cuts


@dataclass(frozen=True)
class SliceProfile:
    """Mean intensity along one detector-coordinate cut.

    The abscissa is the in-detector scattering component (q_H for an
    x-cut, q_V for a y-cut) in the small-angle approximation, without
    Ewald-sphere correction; it is signed across the beam center.
    """

    spec: SliceSpec
    axis: str                   # "q_H" | "q_V"
    q: np.ndarray               # 1/nm, signed
    intensity: np.ndarray
    error: np.ndarray
    area: np.ndarray            # unmasked pixels per window column/row


def _axis_q(offsets_mm: np.ndarray, distance: float, wavelength: float) -> np.ndarray:
    two_theta = np.arctan(offsets_mm / distance)
    return 4.0 * math.pi * 10.0 / wavelength * np.sin(two_theta / 2.0)


def slice_profile(
    frame: Frame,
    cal: Calibration,
    spec: SliceSpec,
    mask: np.ndarray,
) -> SliceProfile:
    """Mean intensity across a +-margin window around one row or column.

    An x-cut at row p averages rows [p-m, p+m] per column (window
    thickness 2m + 1, clipped at the sensor edge); a y-cut is the
    symmetric column-window average per row.  ``mask`` is the loaded
    mask that ``spec.mask_reference`` points at.
    """
    geom = cal.geometry
    n_v, n_h = frame.dims
    if (n_v, n_h) != tuple(geom.image_size):
        raise ReduceError(f"frame dims {frame.dims} do not match geometry {geom.image_size}")
    if mask.shape != (n_v, n_h):
        raise ReduceError(f"slice mask shape {mask.shape} does not match frame {frame.dims}")
    center = int(round(spec.position))
    extent = n_v if spec.direction == "x" else n_h
    lo = max(0, center - spec.margin)
    hi = min(extent - 1, center + spec.margin)
    if lo > hi:
        raise ReduceError(f"slice window around {spec.position} lies outside the sensor")

    good = (~np.asarray(mask, dtype=bool)).astype(np.float64)
    pixels = frame.pixels
    pv, ph = geom.pixel_size_mm
    if spec.direction == "x":
        window_sum = (pixels[lo:hi + 1, :] * good[lo:hi + 1, :]).sum(axis=0)
        counts = good[lo:hi + 1, :].sum(axis=0)
        offsets = (np.arange(n_h, dtype=float) - geom.beamcenter[1]) * ph
        axis = "q_H"
    else:
        window_sum = (pixels[:, lo:hi + 1] * good[:, lo:hi + 1]).sum(axis=1)
        counts = good[:, lo:hi + 1].sum(axis=1)
        offsets = (geom.beamcenter[0] - np.arange(n_v, dtype=float)) * pv
        axis = "q_V"

    intensity = np.zeros_like(window_sum)
    np.divide(window_sum, counts, out=intensity, where=counts > 0)
    return SliceProfile(
        spec=spec,
        axis=axis,
        q=_axis_q(offsets, geom.detector_distance, cal.wavelength),
        intensity=intensity,
        error=poisson_errors(intensity, counts),
        area=counts,
    )


def slice_profiles(frame: Frame, cal: Calibration, masks: list[np.ndarray]) -> list[SliceProfile]:
    """All slices of the calibration, each with its referenced mask."""
    out = []
    for spec in cal.slices:
        if not 0 <= spec.mask_reference < len(masks):
            raise ReduceError(f"mask_reference {spec.mask_reference} out of range")
        out.append(slice_profile(frame, cal, spec, masks[spec.mask_reference]))
    return out


# ---------------------------------------------------------------------------
# profile files


def _format_rows(q: np.ndarray, intensity: np.ndarray, error: np.ndarray) -> list[str]:
    return [
        f"{qv:.10e} {iv:.10e} {ev:.10e}"
        for qv, iv, ev in zip(q, intensity, error)
    ]


def write_chi(profile: RadialProfile, path: str | Path, comment: str = "") -> None:
    """Write a profile as a plain-text .chi file.

    Four header lines (source path, abscissa label, ordinate label,
    point count) followed by one ``q I E`` row per bin.  Formatting is
    fixed-width scientific with 11 significant digits, so identical
    profiles produce byte-identical files.  Empty bins are written with
    I = E = 0 to keep files of one series row-aligned.
    """
    title = profile.source_path
    if comment:
        title = f"{title}  {comment}" if title else comment
    lines = [title, "q [1/nm]", "I [a.u.]", str(len(profile.q))]
    lines += _format_rows(profile.q, profile.intensity, profile.error)
    Path(path).write_text("\n".join(lines) + "\n")


def write_slice_chi(
    profile: SliceProfile, source_path: str, path: str | Path, comment: str = ""
) -> None:
    """Write one line cut in the same .chi layout, labeled q_H or q_V."""
    title = source_path
    if comment:
        title = f"{title}  {comment}" if title else comment
    lines = [title, f"{profile.axis} [1/nm]", "I [a.u.]", str(len(profile.q))]
    lines += _format_rows(profile.q, profile.intensity, profile.error)
    Path(path).write_text("\n".join(lines) + "\n")


def read_chi(path: str | Path) -> tuple[list[str], np.ndarray, np.ndarray, np.ndarray]:
    """Parse a .chi file back into (header_lines, q, I, E)."""
    lines = Path(path).read_text().splitlines()
    if len(lines) < 4:
        raise ReduceError(f"{path}: truncated .chi file")
    header, body = lines[:4], lines[4:]
    count = int(header[3])
    rows = [tuple(float(tok) for tok in line.split()) for line in body[:count]]
    data = np.asarray(rows, dtype=float).reshape(count, 3)
    return header, data[:, 0], data[:, 1], data[:, 2]

"""Calibration parsing, validation, serialization and detector masks.

The calibration is a JSON document that carries everything the pipeline
needs: detector geometry (including tilt), mask files, radial binning,
classifier bounds, the image directory and the worker count.  Parsed
calibrations are immutable and safe to share across worker threads.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
from PIL import Image

logger = logging.getLogger(__name__)

#: FIT2D mask file layout: 1024-byte header starting with the magic tag,
#: horizontal and vertical dimensions as little-endian uint32 at offsets
#: 4 and 8, then one bit per pixel (LSB first), rows padded to 4 bytes.
MSK_MAGIC = b"MASK"
MSK_HEADER_SIZE = 1024

DEFAULT_EXTENSIONS = (".tif", ".tiff")


class CalibrationError(Exception):
    """Base class for calibration problems."""


class SchemaError(CalibrationError):
    """The document does not match the calibration schema."""

    def __init__(self, message: str, path: tuple = ()):  # noqa: D107
        super().__init__(message)
        self.path = tuple(path)


class ValidationError(CalibrationError):
    """The document is well-formed but violates a calibration invariant."""


class MaskError(Exception):
    """A mask file cannot be read or does not fit the geometry."""


@dataclass(frozen=True)
class DetectorGeometry:
    """Detector placement relative to the beam.

    Angles are stored in degree and lengths in the units of the
    calibration file (mm for the distance, micrometer for the pixel
    size); the ``*_rad`` and ``*_mm`` properties convert on access so
    that serialization reproduces the stored values bit-exactly.
    """

    beamcenter: tuple[float, float]          # [vertical, horizontal], pixel
    detector_distance: float                 # mm
    image_size: tuple[int, int]              # [vertical, horizontal], pixel
    pixel_size: tuple[float, float]          # [vertical, horizontal], um
    tilt_rotation: float = 0.0               # degree
    tilt_angle: float = 0.0                  # degree

    @property
    def tilt_rotation_rad(self) -> float:
        return math.radians(self.tilt_rotation)

    @property
    def tilt_angle_rad(self) -> float:
        return math.radians(self.tilt_angle)

    @property
    def pixel_size_mm(self) -> tuple[float, float]:
        return (self.pixel_size[0] * 1e-3, self.pixel_size[1] * 1e-3)

    def validate(self) -> None:
        if self.image_size[0] < 1 or self.image_size[1] < 1:
            raise ValidationError("image_size components must be >= 1")
        if self.pixel_size[0] <= 0 or self.pixel_size[1] <= 0:
            raise ValidationError("pixel_size components must be > 0")
        if self.detector_distance <= 0:
            raise ValidationError("detector_distance must be > 0")
        if abs(self.tilt_angle) >= 90.0:
            raise ValidationError("|tilt_angle| must be < 90 degree")


@dataclass(frozen=True)
class MaskSource:
    """Reference to a mask file plus its declared format."""

    path_to_file: str
    format: str = "auto"                     # "fit2d" | "grayscale" | "auto"


@dataclass(frozen=True)
class SliceSpec:
    """One detector-coordinate line cut averaged over a pixel band."""

    direction: str                           # "x" | "y"
    plane: str                               # "InPlane" | "Vertical"
    position: float                          # pixel; row for x, column for y
    margin: int                              # pixels each side of position
    mask_reference: int                      # index into Calibration.masks


@dataclass(frozen=True)
class Calibration:
    """Parsed, validated integration configuration."""

    geometry: DetectorGeometry
    masks: tuple[MaskSource, ...]
    oversampling: int
    pixels_per_radial_element: float
    q_start: float                           # 1/nm
    q_stop: float                            # 1/nm
    wavelength: float                        # Angstrom
    directory: str
    threads: int
    slices: tuple[SliceSpec, ...] = ()
    output_directory: str | None = None
    chi_header_comment: str = ""
    extensions: tuple[str, ...] = DEFAULT_EXTENSIONS
    extras: dict = field(default_factory=dict)

    def validate(self) -> None:
        self.geometry.validate()
        if self.oversampling < 1:
            raise ValidationError("oversampling must be >= 1")
        if self.pixels_per_radial_element <= 0:
            raise ValidationError("pixels_per_radial_element must be > 0")
        if not self.q_start < self.q_stop:
            raise ValidationError("q_start must be < q_stop")
        if self.wavelength <= 0:
            raise ValidationError("wavelength must be > 0")
        if self.threads < 1:
            raise ValidationError("threads must be >= 1")
        n_v, n_h = self.geometry.image_size
        for k, spec in enumerate(self.slices):
            if spec.margin < 0:
                raise ValidationError(f"slice {k}: margin must be >= 0")
            if not 0 <= spec.mask_reference < len(self.masks):
                raise ValidationError(
                    f"slice {k}: mask_reference {spec.mask_reference} does not "
                    f"index the masks list (length {len(self.masks)})"
                )
            extent = n_v if spec.direction == "x" else n_h
            if spec.position + spec.margin < 0 or spec.position - spec.margin > extent - 1:
                raise ValidationError(
                    f"slice {k}: window [{spec.position - spec.margin}, "
                    f"{spec.position + spec.margin}] lies outside the sensor"
                )


_SCHEMA = None


def calibration_schema() -> dict:
    """Return the JSON schema shipped with the package."""
    global _SCHEMA
    if _SCHEMA is None:
        text = resources.files("radpipe").joinpath("schemas/calibration.schema.json").read_text()
        _SCHEMA = json.loads(text)
    return _SCHEMA


def _schema_error(err: jsonschema.ValidationError) -> SchemaError:
    path = tuple(err.absolute_path)
    if err.validator == "required":
        # message looks like: 'wavelength' is a required property
        key = err.message.split("'")[1]
        dotted = ".".join(str(p) for p in path + (key,))
        return SchemaError(f"missing mandatory key '{dotted}'", path + (key,))
    dotted = ".".join(str(p) for p in path) or "<document root>"
    return SchemaError(f"invalid value at {dotted}: {err.message}", path)


_KNOWN_KEYS = frozenset(
    [
        "geometry",
        "masks",
        "oversampling",
        "pixels_per_radial_element",
        "q_start",
        "q_stop",
        "wavelength",
        "directory",
        "threads",
        "slices",
        "output_directory",
        "chi_header_comment",
        "extensions",
    ]
)


def parse_calibration(text: str) -> Calibration:
    """Parse a calibration JSON document.

    Raises ``SchemaError`` for missing keys or type mismatches (naming the
    offending key), ``ValidationError`` for invariant violations.  Unknown
    top-level keys are kept and written back on serialization.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("calibration document must be a JSON object")

    validator = jsonschema.Draft202012Validator(calibration_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        raise _schema_error(errors[0])

    g = doc["geometry"]
    geometry = DetectorGeometry(
        beamcenter=(float(g["beamcenter"][0]), float(g["beamcenter"][1])),
        detector_distance=float(g["detector_distance"]),
        image_size=(int(g["image_size"][0]), int(g["image_size"][1])),
        pixel_size=(float(g["pixel_size"][0]), float(g["pixel_size"][1])),
        tilt_rotation=float(g["tilt"]["tilt_rotation"]),
        tilt_angle=float(g["tilt"]["tilt_angle"]),
    )
    masks = tuple(
        MaskSource(path_to_file=m["path_to_file"], format=m.get("format", "auto"))
        for m in doc["masks"]
    )
    slices = tuple(
        SliceSpec(
            direction=s["direction"],
            plane=s["plane"],
            position=float(s["position"]),
            margin=int(s["margin"]),
            mask_reference=int(s["mask_reference"]),
        )
        for s in doc.get("slices", [])
    )
    cal = Calibration(
        geometry=geometry,
        masks=masks,
        oversampling=int(doc["oversampling"]),
        pixels_per_radial_element=float(doc["pixels_per_radial_element"]),
        q_start=float(doc["q_start"]),
        q_stop=float(doc["q_stop"]),
        wavelength=float(doc["wavelength"]),
        directory=str(doc["directory"]),
        threads=int(doc["threads"]),
        slices=slices,
        output_directory=doc.get("output_directory"),
        chi_header_comment=doc.get("chi_header_comment", ""),
        extensions=tuple(doc.get("extensions", DEFAULT_EXTENSIONS)),
        extras={k: v for k, v in doc.items() if k not in _KNOWN_KEYS},
    )
    cal.validate()
    return cal


def calibration_to_dict(cal: Calibration) -> dict:
    """Plain-dict form of a calibration, in file units."""
    doc: dict = {
        "geometry": {
            "beamcenter": list(cal.geometry.beamcenter),
            "detector_distance": cal.geometry.detector_distance,
            "image_size": list(cal.geometry.image_size),
            "pixel_size": list(cal.geometry.pixel_size),
            "tilt": {
                "tilt_rotation": cal.geometry.tilt_rotation,
                "tilt_angle": cal.geometry.tilt_angle,
            },
        },
        "masks": [
            {"path_to_file": m.path_to_file, "format": m.format} for m in cal.masks
        ],
        "oversampling": cal.oversampling,
        "pixels_per_radial_element": cal.pixels_per_radial_element,
        "q_start": cal.q_start,
        "q_stop": cal.q_stop,
        "wavelength": cal.wavelength,
        "directory": cal.directory,
        "threads": cal.threads,
        "slices": [
            {
                "direction": s.direction,
                "plane": s.plane,
                "position": s.position,
                "margin": s.margin,
                "mask_reference": s.mask_reference,
            }
            for s in cal.slices
        ],
        "output_directory": cal.output_directory,
        "chi_header_comment": cal.chi_header_comment,
        "extensions": list(cal.extensions),
    }
    for key in sorted(cal.extras):
        doc[key] = cal.extras[key]
    return doc


def serialize_calibration(cal: Calibration) -> str:
    """Serialize back to the JSON file format (deterministic layout)."""
    return json.dumps(calibration_to_dict(cal), indent=2) + "\n"


def load_calibration(path: str | Path) -> Calibration:
    return parse_calibration(Path(path).read_text())


def save_calibration(cal: Calibration, path: str | Path) -> None:
    Path(path).write_text(serialize_calibration(cal))


# ---------------------------------------------------------------------------
# masks


def _resolve_format(source: MaskSource) -> str:
    if source.format != "auto":
        return source.format
    return "fit2d" if source.path_to_file.lower().endswith(".msk") else "grayscale"


def load_mask(source: MaskSource, base_dir: str | Path | None = None) -> np.ndarray:
    """Load one mask file as a boolean array; True marks excluded pixels.

    Grayscale images mask every nonzero pixel; FIT2D ``.msk`` files mask
    every set bit.  Relative paths are resolved against ``base_dir``.
    """
    path = Path(source.path_to_file)
    if base_dir is not None and not path.is_absolute():
        path = Path(base_dir) / path
    fmt = _resolve_format(source)
    if fmt == "fit2d":
        return read_msk(path)
    if fmt == "grayscale":
        try:
            with Image.open(path) as img:
                data = np.asarray(img.convert("I"))
        except FileNotFoundError:
            raise MaskError(f"mask file not found: {path}") from None
        except OSError as exc:
            raise MaskError(f"cannot read mask image {path}: {exc}") from exc
        return data != 0
    raise MaskError(f"unknown mask format '{source.format}' for {path}")


def read_msk(path: str | Path) -> np.ndarray:
    """Read a FIT2D ``.msk`` bitmask file.

    The reader follows the de-facto layout used by FIT2D exports (see
    module constant); it is round-trip consistent with :func:`write_msk`
    and should be cross-checked against beamline-produced files when a
    new detector is commissioned.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise MaskError(f"mask file not found: {path}") from None
    if len(raw) < MSK_HEADER_SIZE or raw[:4] != MSK_MAGIC:
        raise MaskError(f"{path} is not a FIT2D mask file")
    n_h, n_v = struct.unpack_from("<II", raw, 4)
    row_bytes = ((n_h + 31) // 32) * 4
    body = np.frombuffer(raw, np.uint8, count=n_v * row_bytes, offset=MSK_HEADER_SIZE)
    bits = np.unpackbits(body.reshape(n_v, row_bytes), axis=1, bitorder="little")
    return bits[:, :n_h].astype(bool)


def write_msk(mask: np.ndarray, path: str | Path) -> None:
    """Write a boolean mask in the FIT2D ``.msk`` layout."""
    mask = np.asarray(mask, dtype=bool)
    n_v, n_h = mask.shape
    row_bytes = ((n_h + 31) // 32) * 4
    header = bytearray(MSK_HEADER_SIZE)
    header[:4] = MSK_MAGIC
    struct.pack_into("<II", header, 4, n_h, n_v)
    padded = np.zeros((n_v, row_bytes * 8), dtype=np.uint8)
    padded[:, :n_h] = mask
    body = np.packbits(padded, axis=1, bitorder="little")
    Path(path).write_bytes(bytes(header) + body.tobytes())


def combine_masks(masks: list[np.ndarray], shape: tuple[int, int]) -> np.ndarray:
    """Union of masks; with no inputs, nothing is masked."""
    out = np.zeros(shape, dtype=bool)
    for m in masks:
        if m.shape != tuple(shape):
            raise MaskError(f"mask shape {m.shape} does not match image size {tuple(shape)}")
        out |= m.astype(bool)
    return out


def load_combined_mask(cal: Calibration, base_dir: str | Path | None = None) -> np.ndarray:
    """Union of all calibration masks, checked against the image size."""
    shape = tuple(cal.geometry.image_size)
    loaded = []
    for src in cal.masks:
        m = load_mask(src, base_dir)
        if m.shape != shape:
            raise MaskError(
                f"mask {src.path_to_file} has shape {m.shape}, geometry expects {shape}"
            )
        loaded.append(m)
    return combine_masks(loaded, shape)


# ---------------------------------------------------------------------------
# content digests (cache keys)


def geometry_digest(cal: Calibration) -> str:
    """Digest of every calibration field that shapes the weighting matrix."""
    key = json.dumps(
        {
            "beamcenter": list(cal.geometry.beamcenter),
            "detector_distance": cal.geometry.detector_distance,
            "image_size": list(cal.geometry.image_size),
            "pixel_size": list(cal.geometry.pixel_size),
            "tilt_rotation": cal.geometry.tilt_rotation,
            "tilt_angle": cal.geometry.tilt_angle,
            "oversampling": cal.oversampling,
            "pixels_per_radial_element": cal.pixels_per_radial_element,
            "wavelength": cal.wavelength,
        },
        sort_keys=True,
    )
    return hashlib.sha256(key.encode()).hexdigest()


def mask_digest(mask: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(np.asarray(mask.shape, dtype=np.int64).tobytes())
    h.update(np.packbits(np.asarray(mask, dtype=bool)).tobytes())
    return h.hexdigest()

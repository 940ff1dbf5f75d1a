"""Sparse pixel-to-bin weighting matrix with anti-aliasing.

Row j of the matrix holds the fractional contribution of every pixel to
radial bin j.  With oversampling factor s, each pixel is sampled on an
s-by-s grid of subpixel centers; each center adds 1/s^2 to the bin its
own q value falls into, so border pixels split their weight between
adjacent bins and integrated intensity is conserved.  s = 1 reduces to
plain nearest-bin assignment.

Subpixel counts are accumulated as integers and divided by s^2 once at
the end, which keeps every weight an exact multiple of 1/s^2 and makes
the build bit-deterministic (a prerequisite for the digest-keyed cache).
"""

from __future__ import annotations

import logging
import math
import struct
from bisect import bisect_right
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
from scipy import sparse

from . import calib as _calib
from . import geometry as _geometry
from .calib import Calibration

logger = logging.getLogger(__name__)

CACHE_MAGIC = b"RPWM"
CACHE_VERSION = 1

# pixels per vectorized chunk; bounds peak memory for large sensors
_CHUNK = 1 << 18


class WeightMatrixError(Exception):
    pass


@dataclass(frozen=True)
class WeightingMatrix:
    """Immutable integration operator for one calibration + mask."""

    matrix: sparse.csr_matrix        # (n_bins, n_pixels)
    area: np.ndarray                 # per-bin effective pixel count
    q_edges: np.ndarray              # 1/nm, length n_bins + 1
    q_centers: np.ndarray            # 1/nm, length n_bins
    image_size: tuple[int, int]
    oversampling: int
    geometry_digest: str
    mask_digest: str

    @property
    def n_bins(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_pixels(self) -> int:
        return self.matrix.shape[1]

    def rows(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """Yield (pixel_indices, weights) for each bin."""
        m = self.matrix
        for j in range(m.shape[0]):
            lo, hi = m.indptr[j], m.indptr[j + 1]
            yield m.indices[lo:hi], m.data[lo:hi]


def _subpixel_offsets(s: int) -> np.ndarray:
    """Centers of an s-by-s subdivision of [-0.5, 0.5]."""
    return -0.5 + (np.arange(s, dtype=float) + 0.5) / s


def build_weight_matrix(cal: Calibration, mask: np.ndarray) -> WeightingMatrix:
    """Build the sparse weighting matrix for one calibration and mask.

    Masked pixels contribute to no bin; subpixels whose q falls beyond
    the last bin edge are dropped, so pixels at the sensor rim may carry
    partial total weight.
    """
    geom = cal.geometry
    shape = tuple(geom.image_size)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != shape:
        raise WeightMatrixError(f"mask shape {mask.shape} does not match image size {shape}")
    edges, centers = _geometry.q_grid(cal)
    n_bins = len(centers)
    if n_bins < 1:
        raise WeightMatrixError("empty q grid")
    n_v, n_h = shape
    n_pixels = n_v * n_h
    s = cal.oversampling
    offsets = _subpixel_offsets(s)

    unmasked = np.flatnonzero(~mask.ravel())
    acc = sparse.csr_matrix((n_bins, n_pixels), dtype=np.int32)
    for start in range(0, len(unmasked), _CHUNK):
        pix = unmasked[start:start + _CHUNK]
        v = (pix // n_h).astype(float)
        h = (pix % n_h).astype(float)
        chunk_bins = []
        chunk_pix = []
        for dv in offsets:
            for dh in offsets:
                q = _geometry.pixel_q(geom, cal.wavelength, v + dv, h + dh)
                b = np.searchsorted(edges, q, side="right") - 1
                ok = (b >= 0) & (b < n_bins)
                chunk_bins.append(b[ok])
                chunk_pix.append(pix[ok])
        rows = np.concatenate(chunk_bins)
        cols = np.concatenate(chunk_pix)
        counts = sparse.coo_matrix(
            (np.ones(len(rows), dtype=np.int32), (rows, cols)), shape=(n_bins, n_pixels)
        )
        acc = acc + counts.tocsr()

    weights = acc.astype(np.float64)
    weights.data /= float(s * s)
    weights.sort_indices()
    area = np.asarray(weights.sum(axis=1)).ravel()
    return WeightingMatrix(
        matrix=weights,
        area=area,
        q_edges=np.asarray(edges),
        q_centers=np.asarray(centers),
        image_size=shape,
        oversampling=s,
        geometry_digest=_calib.geometry_digest(cal),
        mask_digest=_calib.mask_digest(mask),
    )


def area_vector(w: WeightingMatrix) -> np.ndarray:
    """Per-bin effective pixel count: row sums of the weighting matrix."""
    return np.asarray(w.matrix.sum(axis=1)).ravel()


# ---------------------------------------------------------------------------
# brute-force reference (test oracle)


def reference_build_dense(cal: Calibration, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Dense weighting matrix built by plain per-subpixel loops.

    Independent of the sparse path and of the vectorized geometry code:
    everything is scalar ``math`` arithmetic.  Returns (matrix, q_edges).
    Guarded to desk-scale images.
    """
    geom = cal.geometry
    n_v, n_h = geom.image_size
    if n_v > 64 or n_h > 64:
        raise WeightMatrixError("reference build is limited to 64x64 images")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (n_v, n_h):
        raise WeightMatrixError("mask shape mismatch")

    pv = geom.pixel_size[0] * 1e-3
    ph = geom.pixel_size[1] * 1e-3
    bc_v, bc_h = geom.beamcenter
    d = geom.detector_distance
    tau = math.radians(geom.tilt_angle)
    phi = math.radians(geom.tilt_rotation)
    lam = cal.wavelength

    def q_at(vv: float, hh: float) -> float:
        up = (bc_v - vv) * pv
        right = (hh - bc_h) * ph
        r = math.hypot(up, right)
        psi = math.atan2(right, up) % (2.0 * math.pi)
        alpha = math.asin(math.sin(tau) * math.sin(psi + phi + math.pi / 2.0))
        l = math.sqrt(d * d + r * r - 2.0 * d * r * math.cos(math.pi / 2.0 + alpha))
        cos_tt = (l * l + d * d - r * r) / (2.0 * l * d)
        cos_tt = min(1.0, max(-1.0, cos_tt))
        theta = math.acos(cos_tt) / 2.0
        return 4.0 * math.pi * 10.0 / lam * math.sin(theta)

    def q_edge(r: float) -> float:
        # edge radii map through the distortion-free direction (alpha = 0)
        l = math.sqrt(d * d + r * r)
        cos_tt = (l * l + d * d - r * r) / (2.0 * l * d)
        theta = math.acos(min(1.0, max(-1.0, cos_tt))) / 2.0
        return 4.0 * math.pi * 10.0 / lam * math.sin(theta)

    # grid edges recomputed from scratch with the same definition
    corner_r = max(
        math.hypot((cv - bc_v) * pv, (ch - bc_h) * ph)
        for cv in (-0.5, n_v - 0.5)
        for ch in (-0.5, n_h - 0.5)
    )
    step = cal.pixels_per_radial_element * 0.5 * (pv + ph)
    n_bins = max(1, math.ceil(corner_r / step))
    edges = [q_edge(k * step) for k in range(n_bins + 1)]

    s = cal.oversampling
    w = 1.0 / (s * s)
    dense = np.zeros((n_bins, n_v * n_h))
    for v in range(n_v):
        for h in range(n_h):
            if mask[v, h]:
                continue
            for a in range(s):
                for b in range(s):
                    vv = v - 0.5 + (a + 0.5) / s
                    hh = h - 0.5 + (b + 0.5) / s
                    j = bisect_right(edges, q_at(vv, hh)) - 1
                    if 0 <= j < n_bins:
                        dense[j, v * n_h + h] += w
    return dense, np.asarray(edges)


# ---------------------------------------------------------------------------
# disk cache

_HEADER = struct.Struct("<4sI64s64sIIIQQQ")


def save_cache(w: WeightingMatrix, path: str | Path) -> None:
    """Write the matrix to a little-endian binary cache file."""
    m = w.matrix
    nnz = m.indptr[-1]
    header = _HEADER.pack(
        CACHE_MAGIC,
        CACHE_VERSION,
        w.geometry_digest.encode(),
        w.mask_digest.encode(),
        w.image_size[0],
        w.image_size[1],
        w.oversampling,
        w.n_bins,
        w.n_pixels,
        int(nnz),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.asarray(w.q_edges, dtype="<f8").tobytes())
        fh.write(np.asarray(w.area, dtype="<f8").tobytes())
        fh.write(np.asarray(m.indptr, dtype="<i8").tobytes())
        fh.write(np.asarray(m.indices, dtype="<i8").tobytes())
        fh.write(np.asarray(m.data, dtype="<f8").tobytes())


def load_cache(path: str | Path) -> WeightingMatrix:
    """Read a cache file back; raises on version or layout mismatch."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size or raw[:4] != CACHE_MAGIC:
        raise WeightMatrixError(f"{path} is not a weighting-matrix cache file")
    (_, version, gdig, mdig, n_v, n_h, s, n_bins, n_pixels, nnz) = _HEADER.unpack_from(raw)
    if version != CACHE_VERSION:
        raise WeightMatrixError(f"unsupported cache version {version}")
    off = _HEADER.size
    def take(count, dtype):
        nonlocal off
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=off)
        off += arr.nbytes
        return arr
    q_edges = take(n_bins + 1, "<f8").copy()
    area = take(n_bins, "<f8").copy()
    indptr = take(n_bins + 1, "<i8").copy()
    indices = take(nnz, "<i8").copy()
    data = take(nnz, "<f8").copy()
    matrix = sparse.csr_matrix((data, indices, indptr), shape=(n_bins, n_pixels))
    return WeightingMatrix(
        matrix=matrix,
        area=area,
        q_edges=q_edges,
        q_centers=0.5 * (q_edges[:-1] + q_edges[1:]),
        image_size=(n_v, n_h),
        oversampling=s,
        geometry_digest=gdig.decode(),
        mask_digest=mdig.decode(),
    )


def cached_build(cal: Calibration, mask: np.ndarray, cache_dir: str | Path | None) -> WeightingMatrix:
    """Build the matrix, reusing a digest-matched cache file when present.

    The cache is purely an optimization: results are identical with
    caching disabled (``cache_dir=None``).
    """
    if cache_dir is None:
        return build_weight_matrix(cal, mask)
    gdig = _calib.geometry_digest(cal)
    mdig = _calib.mask_digest(np.asarray(mask, dtype=bool))
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"wm_{gdig[:16]}_{mdig[:16]}.rpw"
    if path.exists():
        try:
            w = load_cache(path)
            if w.geometry_digest == gdig and w.mask_digest == mdig:
                logger.debug("weighting matrix loaded from cache %s", path)
                return w
            logger.warning("cache digest mismatch for %s, rebuilding", path)
        except (WeightMatrixError, ValueError) as exc:
            logger.warning("unreadable cache %s (%s), rebuilding", path, exc)
    w = build_weight_matrix(cal, mask)
    save_cache(w, path)
    return w

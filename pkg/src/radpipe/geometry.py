"""Pixel-to-q conversion under arbitrary detector tilt.

The 3D tilt geometry is reduced per pixel to plane trigonometry: the
tilt direction, tilt magnitude and the pixel's azimuth combine into a
single distortion angle, from which the scattered-flight path and the
scattering angle follow by the law of cosines.  All functions accept
scalars or numpy arrays and are pure; q is returned in 1/nm for a
wavelength given in Angstrom.

Conventions (pinned by the test fixtures):

* pixel (v, h) has its center at coordinate (v, h); the sensor spans
  [-0.5, V-0.5] x [-0.5, H-0.5] in pixel units,
* the azimuth psi is measured from the vertical detector axis, with
  "one pixel above the beam center" at psi = 0 and "one pixel to the
  right" at psi = +pi/2 (FIT2D tilt convention),
* the radial distance r is physical (mm), built from per-axis pixel
  sizes, so non-square pixels are handled before any trigonometry.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .calib import Calibration, DetectorGeometry

TWO_PI = 2.0 * math.pi

#: q [1/nm] = Q_SCALE / lambda [Angstrom] * sin(theta)
Q_SCALE = 4.0 * math.pi * 10.0


class GeometryError(ValueError):
    """Inconsistent geometric inputs (e.g. triangle inequality violated)."""


class PixelPolar(NamedTuple):
    r: np.ndarray | float      # mm, distance beam center -> pixel
    psi: np.ndarray | float    # rad in [0, 2*pi), azimuth from vertical


class ScatterCoords(NamedTuple):
    two_theta: np.ndarray | float  # rad in [0, pi)
    q: np.ndarray | float          # 1/nm


def pixel_polar(geom: DetectorGeometry, v, h) -> PixelPolar:
    """Polar detector-plane coordinates of (sub)pixel positions.

    ``v``/``h`` are fractional pixel coordinates and may lie outside the
    sensor (oversampled subpixel centers at the rim do).
    """
    pv, ph = geom.pixel_size_mm
    up = (geom.beamcenter[0] - np.asarray(v, dtype=float)) * pv
    right = (np.asarray(h, dtype=float) - geom.beamcenter[1]) * ph
    r = np.hypot(up, right)
    psi = np.mod(np.arctan2(right, up), TWO_PI)
    if np.ndim(r) == 0:
        return PixelPolar(float(r), float(psi))
    return PixelPolar(r, psi)


def distortion_angle(tau, phi, psi):
    """Single angle summarizing the tilt as seen by one pixel.

    sin(alpha) = sin(tau) * sin(psi + phi + pi/2); alpha vanishes for an
    untilted detector and is bounded by |tau|.
    """
    alpha = np.arcsin(np.sin(tau) * np.sin(np.asarray(psi, dtype=float) + phi + math.pi / 2.0))
    return float(alpha) if np.ndim(alpha) == 0 else alpha


def path_length(d, r, alpha):
    """Scattered-flight path from sample to pixel (law of cosines).

    l = sqrt(d^2 + r^2 - 2 d r cos(pi/2 + alpha)), written with the
    identity cos(pi/2 + alpha) = -sin(alpha) so that the untilted case
    is the exact (d, r) hypotenuse with no spurious cos(pi/2) residue.
    """
    r = np.asarray(r, dtype=float)
    l = np.sqrt(d * d + r * r + 2.0 * d * r * np.sin(np.asarray(alpha)))
    return float(l) if np.ndim(l) == 0 else l


def scattering_q(l, r, d, wavelength: float) -> ScatterCoords:
    """Scattering angle and momentum transfer for a pixel.

    The defining relation is the law of cosines,
    cos(2 theta) = (l^2 + d^2 - r^2) / (2 l d), but arccos of a value
    near 1 loses precision at small angles, so the angle is evaluated in
    the equivalent arctangent form: with sin(alpha) recovered from
    l^2 = d^2 + r^2 + 2 d r sin(alpha),

        2 theta = atan2(r cos(alpha), d + r sin(alpha)),

    which is well conditioned for every scattering angle.  Then
    q = (4 pi / lambda) sin(theta), converted to 1/nm.  The three
    lengths must form a triangle; a violation signals a broken
    calibration and raises :class:`GeometryError`.
    """
    l = np.asarray(l, dtype=float)
    r = np.asarray(r, dtype=float)
    if d <= 0 or np.any(l <= 0):
        raise GeometryError("path length and detector distance must be positive")
    if np.any(r < 0):
        raise GeometryError("detector-plane radius must be >= 0")
    # tolerate float round-off at the r = 0 and alpha = +-tau extremes
    slack = 1e-9 * (l + d)
    if np.any(r > l + d + slack) or np.any(l > r + d + slack) or np.any(d > l + r + slack):
        raise GeometryError("(l, r, d) do not satisfy the triangle inequality")
    sin_alpha = np.zeros_like(l + r)
    np.divide(l * l - d * d - r * r, 2.0 * d * r, out=sin_alpha, where=r > 0)
    np.clip(sin_alpha, -1.0, 1.0, out=sin_alpha)
    cos_alpha = np.sqrt(1.0 - sin_alpha * sin_alpha)
    two_theta = np.arctan2(r * cos_alpha, d + r * sin_alpha)
    q = Q_SCALE / wavelength * np.sin(two_theta / 2.0)
    if np.ndim(q) == 0:
        return ScatterCoords(float(two_theta), float(q))
    return ScatterCoords(two_theta, q)


def pixel_q(geom: DetectorGeometry, wavelength: float, v, h):
    """Full chain pixel coordinates -> q [1/nm] (vectorized)."""
    r, psi = pixel_polar(geom, v, h)
    alpha = distortion_angle(geom.tilt_angle_rad, geom.tilt_rotation_rad, psi)
    l = path_length(geom.detector_distance, r, alpha)
    return scattering_q(l, r, geom.detector_distance, wavelength).q


def radius_to_q(r, d: float, wavelength: float):
    """q of a detector-plane radius along the distortion-free direction."""
    l = path_length(d, r, 0.0)
    return scattering_q(l, r, d, wavelength).q


class QGrid(NamedTuple):
    edges: np.ndarray    # 1/nm, strictly increasing, length n_bins + 1
    centers: np.ndarray  # 1/nm, midpoints, length n_bins


def radial_step_mm(cal: Calibration) -> float:
    """Radial bin width in mm: bin width in pixels times the mean pixel size."""
    pv, ph = cal.geometry.pixel_size_mm
    return cal.pixels_per_radial_element * 0.5 * (pv + ph)


def q_grid(cal: Calibration) -> QGrid:
    """Radial bin grid in q.

    Edges are laid out at constant radial steps (in pixel units) along
    the distortion-free direction and converted to q, so the grid keeps
    its meaning under tilt; the grid reaches the sensor corner farthest
    from the beam center.  Each (sub)pixel is later assigned by its own
    q value, making the binning iso-q.
    """
    geom = cal.geometry
    pv, ph = geom.pixel_size_mm
    n_v, n_h = geom.image_size
    corners_v = np.array([-0.5, -0.5, n_v - 0.5, n_v - 0.5])
    corners_h = np.array([-0.5, n_h - 0.5, -0.5, n_h - 0.5])
    r_corner = np.hypot((corners_v - geom.beamcenter[0]) * pv, (corners_h - geom.beamcenter[1]) * ph)
    r_max = float(r_corner.max())
    step = radial_step_mm(cal)
    n_bins = max(1, math.ceil(r_max / step))
    radii = np.arange(n_bins + 1, dtype=float) * step
    edges = np.asarray(radius_to_q(radii, geom.detector_distance, cal.wavelength))
    centers = 0.5 * (edges[:-1] + edges[1:])
    return QGrid(edges, centers)

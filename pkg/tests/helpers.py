"""Shared test utilities: synthetic images, calibration factories, servers."""

from __future__ import annotations

import threading
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np
from PIL import Image

from radpipe.calib import Calibration, DetectorGeometry, MaskSource, SliceSpec

BASE_STAMP = datetime(2024, 6, 1, 12, 0, 0)


def tiff_stamp(offset_s: int = 0) -> str:
    return (BASE_STAMP + timedelta(seconds=offset_s)).strftime("%Y:%m:%d %H:%M:%S")


def write_tiff(path: str | Path, pixels: np.ndarray, stamp: str | None = None) -> Path:
    """Write a single-channel uncompressed TIFF, optionally timestamped."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(pixels)
    img = Image.fromarray(np.rint(arr).astype(np.uint32), mode="I")
    kwargs = {"tiffinfo": {306: stamp}} if stamp else {}
    img.save(path, format="TIFF", **kwargs)
    return path


def write_frame_series(
    directory: str | Path,
    count: int,
    shape: tuple[int, int] = (32, 32),
    *,
    seed: int = 0,
    prefix: str = "frame",
) -> list[Path]:
    """Uniform random frames with distinct, increasing acquisition stamps."""
    rng = np.random.default_rng(seed)
    directory = Path(directory)
    paths = []
    for k in range(count):
        pixels = rng.integers(0, 1000, size=shape)
        paths.append(write_tiff(directory / f"{prefix}_{k:04d}.tif", pixels, tiff_stamp(k)))
    return paths


def make_geometry(**overrides) -> DetectorGeometry:
    fields = {
        "beamcenter": (16.0, 16.0),
        "detector_distance": 300.0,
        "image_size": (32, 32),
        "pixel_size": (172.0, 172.0),
        "tilt_rotation": 0.0,
        "tilt_angle": 0.0,
    }
    fields.update(overrides)
    return DetectorGeometry(**fields)


def make_cal(directory: str = ".", **overrides) -> Calibration:
    geometry = overrides.pop("geometry", None) or make_geometry(
        **overrides.pop("geometry_overrides", {})
    )
    fields = {
        "geometry": geometry,
        "masks": (),
        "oversampling": 1,
        "pixels_per_radial_element": 1.0,
        "q_start": 0.01,
        "q_stop": 1.0,
        "wavelength": 1.54,
        "directory": directory,
        "threads": 1,
        "slices": (),
    }
    fields.update(overrides)
    return Calibration(**fields)


def full_calibration_doc(directory: str = "/data/run7") -> dict:
    """A document exercising every schema field, tilt and slices included."""
    return {
        "geometry": {
            "beamcenter": [61.5, 60.25],
            "detector_distance": 1053.0,
            "image_size": [128, 120],
            "pixel_size": [172.0, 150.0],
            "tilt": {"tilt_rotation": 12.0, "tilt_angle": 3.5},
        },
        "masks": [{"path_to_file": "beamstop.msk", "format": "fit2d"}],
        "oversampling": 2,
        "pixels_per_radial_element": 1.5,
        "q_start": 0.05,
        "q_stop": 4.0,
        "wavelength": 1.54,
        "directory": directory,
        "threads": 2,
        "slices": [
            {"direction": "x", "plane": "InPlane", "position": 64.0, "margin": 7, "mask_reference": 0},
            {"direction": "y", "plane": "Vertical", "position": 60.0, "margin": 3, "mask_reference": 0},
        ],
        "output_directory": None,
        "chi_header_comment": "",
        "extensions": [".tif", ".tiff", ".png", ".edf", ".cbf"],
    }


def random_geometry(rng: np.random.Generator, max_size: int = 32) -> DetectorGeometry:
    n_v = int(rng.integers(4, max_size + 1))
    n_h = int(rng.integers(4, max_size + 1))
    return DetectorGeometry(
        beamcenter=(
            float(rng.uniform(-0.3 * n_v, 1.3 * n_v)),
            float(rng.uniform(-0.3 * n_h, 1.3 * n_h)),
        ),
        detector_distance=float(rng.uniform(80.0, 2000.0)),
        image_size=(n_v, n_h),
        pixel_size=(float(rng.uniform(50.0, 400.0)), float(rng.uniform(50.0, 400.0))),
        tilt_rotation=float(rng.uniform(0.0, 360.0)),
        tilt_angle=float(rng.uniform(-30.0, 30.0)),
    )


def random_calibration(
    rng: np.random.Generator, max_size: int = 32, **overrides
) -> tuple[Calibration, np.ndarray]:
    """Random valid calibration plus a random mask of matching shape."""
    geometry = random_geometry(rng, max_size)
    fields = {
        "geometry": geometry,
        "masks": (),
        "oversampling": int(rng.integers(1, 4)),
        "pixels_per_radial_element": float(rng.uniform(0.5, 4.0)),
        "q_start": 0.01,
        "q_stop": 10.0,
        "wavelength": float(rng.uniform(0.7, 2.0)),
        "directory": ".",
        "threads": 1,
    }
    fields.update(overrides)
    cal = Calibration(**fields)
    mask = rng.random(geometry.image_size) < rng.uniform(0.0, 0.3)
    return cal, mask


class UvicornThread:
    """Run an ASGI app on an ephemeral port inside the test process."""

    def __init__(self, app, host: str = "127.0.0.1", port: int = 0) -> None:
        import uvicorn

        self._config = uvicorn.Config(app, host=host, port=port, log_level="error")
        self.server = uvicorn.Server(self._config)
        self._thread = threading.Thread(target=self.server.run, daemon=True)
        self.host = host
        self.port: int | None = None

    def __enter__(self) -> "UvicornThread":
        self._thread.start()
        deadline = 50
        import time

        for _ in range(deadline * 10):
            if self.server.started:
                break
            time.sleep(0.02)
        else:
            raise RuntimeError("uvicorn did not start")
        self.port = self.server.servers[0].sockets[0].getsockname()[1]
        return self

    def __exit__(self, *exc) -> None:
        self.server.should_exit = True
        self._thread.join(timeout=10.0)

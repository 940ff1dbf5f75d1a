"""Throughput harness on synthetic frames with a known radial pattern.

Frames are uncompressed TIFFs of Poisson counts drawn around a smooth
isotropic intensity law, so a benchmark run can spot-check correctness
(the integrated profile must follow the law) while it measures speed.
Each worker count is timed over several repeats; the report carries fps
mean and spread, MB/s, a determinism digest over the output files, and
the spot-check verdict, and validates against the shipped JSON schema.
"""

from __future__ import annotations

import hashlib
import json
import math
import shutil
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
from PIL import Image

from .calib import Calibration, DetectorGeometry
from .pipeline import ImageQueue
from .reduce import Frame, integrate_frame

BENCH_WAVELENGTH = 1.54       # Angstrom
BENCH_DISTANCE = 1000.0       # mm
BENCH_PIXEL_UM = 172.0
SPOT_CHECK_TOLERANCE = 0.05
_DATETIME = "2024:01:01 00:00:00"


def bench_calibration(shape: tuple[int, int], threads: int, directory: str, out_dir: str) -> Calibration:
    """A plain untilted calibration matching the synthetic pattern."""
    n_v, n_h = shape
    geometry = DetectorGeometry(
        beamcenter=(n_v / 2.0, n_h / 2.0),
        detector_distance=BENCH_DISTANCE,
        image_size=(n_v, n_h),
        pixel_size=(BENCH_PIXEL_UM, BENCH_PIXEL_UM),
        tilt_rotation=0.0,
        tilt_angle=0.0,
    )
    return Calibration(
        geometry=geometry,
        masks=(),
        oversampling=1,
        pixels_per_radial_element=2.0,
        q_start=0.05,
        q_stop=2.0,
        wavelength=BENCH_WAVELENGTH,
        directory=directory,
        threads=threads,
        slices=(),
        output_directory=out_dir,
    )


def intensity_law(r_mm: np.ndarray) -> np.ndarray:
    """Expected counts per pixel at radius r: a Lorentzian plus background."""
    return 2000.0 / (1.0 + (r_mm / 20.0) ** 2) + 10.0


def synthetic_rate(shape: tuple[int, int]) -> np.ndarray:
    n_v, n_h = shape
    bc_v, bc_h = n_v / 2.0, n_h / 2.0
    pix = BENCH_PIXEL_UM / 1000.0
    vv, hh = np.indices(shape, dtype=np.float64)
    r = np.hypot((vv - bc_v) * pix, (hh - bc_h) * pix)
    return intensity_law(r)


def write_frames(
    directory: str | Path,
    count: int,
    shape: tuple[int, int],
    *,
    seed: int = 0,
    noiseless: bool = False,
) -> list[Path]:
    """Write `count` uncompressed TIFF frames with acquisition timestamps."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rate = synthetic_rate(shape)
    rng = np.random.default_rng(seed)
    width = max(4, len(str(count)))
    paths = []
    for k in range(count):
        counts = rate if noiseless else rng.poisson(rate).astype(np.float64)
        img = Image.fromarray(counts.astype(np.uint32), mode="I")
        path = directory / f"bench_{k:0{width}d}.tif"
        img.save(path, format="TIFF", tiffinfo={306: _DATETIME})
        paths.append(path)
    return paths


def spot_check(shape: tuple[int, int], work_dir: Path) -> dict:
    """Integrate one noiseless frame and compare against the intensity law.

    Bins average the law over a narrow ring, so agreement is expected to
    a few percent away from the beam center; the innermost bins are
    excluded because the law bends fastest there.
    """
    cal = bench_calibration(shape, 1, str(work_dir), str(work_dir))
    frame_dir = work_dir / "spot"
    path = write_frames(frame_dir, 1, shape, noiseless=True)[0]
    mask = np.zeros(shape, dtype=bool)
    from .weights import build_weight_matrix

    w = build_weight_matrix(cal, mask)
    img = np.asarray(Image.open(path), dtype=np.float64)
    profile = integrate_frame(w, Frame(img, 0.0, "synthetic", str(path)))
    # map bin centers back to radius to evaluate the law
    theta = np.arcsin(profile.q * cal.wavelength / (4.0 * math.pi * 10.0))
    r_mm = BENCH_DISTANCE * np.tan(2.0 * theta)
    expected = intensity_law(r_mm)
    usable = (profile.area > 0) & (np.arange(len(profile.q)) >= 3)
    rel = np.abs(profile.intensity[usable] - expected[usable]) / expected[usable]
    max_rel = float(rel.max()) if rel.size else 0.0
    return {
        "max_rel_err": max_rel,
        "tolerance": SPOT_CHECK_TOLERANCE,
        "ok": bool(max_rel <= SPOT_CHECK_TOLERANCE),
    }


def _digest_outputs(out_dir: Path) -> str:
    h = hashlib.sha256()
    for path in sorted(out_dir.rglob("*.chi")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()


def run_bench(
    frame_count: int,
    shape: tuple[int, int],
    threads_list: list[int],
    repeats: int,
    work_dir: str | Path,
    *,
    seed: int = 0,
    keep_outputs: bool = False,
    progress=None,
) -> dict:
    """Time the full pipeline per worker count; returns the report dict."""
    work_dir = Path(work_dir)
    frames_dir = work_dir / "frames"
    if progress:
        progress(f"generating {frame_count} frames of {shape[0]}x{shape[1]}")
    paths = write_frames(frames_dir, frame_count, shape, seed=seed)
    bytes_per_frame = paths[0].stat().st_size if paths else 0

    runs = []
    digests = set()
    for threads in threads_list:
        for repeat in range(repeats):
            out_dir = work_dir / f"out_t{threads}_r{repeat}"
            cal = bench_calibration(shape, threads, str(frames_dir), str(out_dir))
            queue = ImageQueue(cal, cache_dir=work_dir / "cache", include_profile_in_events=False)
            queue.start()
            t0 = time.perf_counter()
            queue.walk_directory(frames_dir)
            queue.wait_idle()
            elapsed = time.perf_counter() - t0
            queue.abort()
            queue.join(timeout=10.0)
            status = queue.status()
            fps = frame_count / elapsed if elapsed > 0 else 0.0
            digest = _digest_outputs(out_dir)
            digests.add(digest)
            runs.append(
                {
                    "threads": threads,
                    "repeat": repeat,
                    "seconds": elapsed,
                    "fps": fps,
                    "mb_per_s": fps * bytes_per_frame / 1e6,
                    "failed": status.failed,
                    "outputs_digest": digest,
                }
            )
            if progress:
                progress(f"threads={threads} repeat={repeat}: {fps:.1f} fps")
            if not keep_outputs:
                shutil.rmtree(out_dir, ignore_errors=True)

    summary = []
    for threads in threads_list:
        fps_values = [r["fps"] for r in runs if r["threads"] == threads]
        mb_values = [r["mb_per_s"] for r in runs if r["threads"] == threads]
        mean = sum(fps_values) / len(fps_values)
        spread = (max(fps_values) - min(fps_values)) / 2.0 if len(fps_values) > 1 else 0.0
        summary.append(
            {
                "threads": threads,
                "fps_mean": mean,
                "fps_spread": spread,
                "mb_per_s_mean": sum(mb_values) / len(mb_values),
            }
        )

    report = {
        "frames": {
            "count": frame_count,
            "size": [shape[0], shape[1]],
            "bytes_per_frame": bytes_per_frame,
            "seed": seed,
        },
        "runs": runs,
        "summary": summary,
        "determinism": {"identical_outputs": len(digests) <= 1, "distinct_digests": len(digests)},
        "spot_check": spot_check((min(shape[0], 256), min(shape[1], 256)), work_dir),
    }
    if not keep_outputs:
        shutil.rmtree(frames_dir, ignore_errors=True)
        shutil.rmtree(work_dir / "spot", ignore_errors=True)
    return report


def bench_report_schema() -> dict:
    from importlib.resources import files

    text = files("radpipe.schemas").joinpath("bench_report.schema.json").read_text()
    return json.loads(text)


def validate_report(report: dict) -> None:
    import jsonschema

    jsonschema.validate(report, bench_report_schema())


__all__ = [
    "bench_calibration",
    "bench_report_schema",
    "intensity_law",
    "run_bench",
    "spot_check",
    "synthetic_rate",
    "validate_report",
    "write_frames",
]

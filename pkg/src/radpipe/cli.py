"""Command-line entry points.

serve    run the integration daemon (control + results endpoints)
feed     watch an acquisition directory and publish "new file" events
local    walk a directory and integrate everything in it, no network
gateway  run the browser-facing bridge
netconf  show or edit the network dotfile
bench    throughput measurement on synthetic frames

Exit codes: 0 success, 1 runtime failures (e.g. frames that would not
integrate), 2 usage errors (bad flags, missing files).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import bench as bench_mod
from .calib import CalibrationError, load_calibration
from .net.config import (
    ConfigError,
    Endpoint,
    NetworkConfig,
    default_config_path,
    load_network_config,
    save_network_config,
)
from .pipeline import ImageQueue, QueueError

logger = logging.getLogger(__name__)


def default_cache_dir() -> Path:
    return Path.home() / ".cache" / "radpipe"


def _parse_endpoint(text: str) -> Endpoint:
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise argparse.ArgumentTypeError(f"expected host:port, got {text!r}")
    try:
        return Endpoint(host, int(port))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad port in {text!r}") from exc


def _parse_size(text: str) -> tuple[int, int]:
    try:
        v, h = text.lower().split("x")
        return int(v), int(h)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected VxH, got {text!r}") from exc


def _parse_threads_list(text: str) -> list[int]:
    try:
        values = [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError("worker counts must be positive")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="radpipe", description=__doc__.strip().splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("serve", help="run the integration daemon")
    p.add_argument("--config", type=Path, default=None, help="network dotfile path")
    p.add_argument("--base-dir", type=Path, default=None, help="base for relative mask paths")
    p.add_argument("--cache-dir", type=Path, default=default_cache_dir())

    p = sub.add_parser("feed", help="watch a directory and publish new-file events")
    p.add_argument("--source", type=Path, required=True)
    p.add_argument("--storage", type=Path, required=True)
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--poll", type=float, default=0.05, help="poll interval in seconds")

    p = sub.add_parser("local", help="integrate every image under a directory")
    p.add_argument("--calibration", type=Path, required=True)
    p.add_argument("--dir", type=Path, default=None, help="override the calibration's directory")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", type=Path, default=None, help="output directory (default: beside inputs)")
    p.add_argument("--cache-dir", type=Path, default=default_cache_dir())

    p = sub.add_parser("gateway", help="run the browser-facing bridge")
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--static", type=Path, default=None, help="directory of UI files to serve")

    p = sub.add_parser("netconf", help="show or edit the network dotfile")
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--feeder", type=_parse_endpoint, default=None)
    p.add_argument("--server", type=_parse_endpoint, default=None)
    p.add_argument("--results", type=_parse_endpoint, default=None)
    p.add_argument("--gateway", type=_parse_endpoint, default=None)
    p.add_argument("--secret", default=None)
    p.add_argument("--show-secret", action="store_true")

    p = sub.add_parser("bench", help="throughput measurement on synthetic frames")
    p.add_argument("--frames", type=int, default=100)
    p.add_argument("--size", type=_parse_size, default=(1024, 1024), metavar="VxH")
    p.add_argument("--threads", type=_parse_threads_list, default=[1, 4], metavar="a,b,c")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out", type=Path, default=Path("bench_report.json"))
    p.add_argument("--work-dir", type=Path, default=Path("bench_work"))
    p.add_argument("--keep", action="store_true", help="keep frames and outputs")

    return parser


# -- subcommands ----------------------------------------------------------------


def cmd_serve(args) -> int:
    from .net.server import run_server

    config = load_network_config(args.config)
    config.require_secret()
    run_server(config, base_dir=args.base_dir, cache_dir=args.cache_dir)
    return 0


def cmd_feed(args) -> int:
    from .net.feeder import Feeder, FeederError
    from .net.pubsub import Publisher

    config = load_network_config(args.config)
    if not args.source.is_dir():
        print(f"source directory does not exist: {args.source}", file=sys.stderr)
        return 2
    publisher = Publisher(config.feeder.host, config.feeder.port)
    try:
        feeder = Feeder(args.source, args.storage, publisher, poll_interval=args.poll)
    except FeederError as exc:
        print(str(exc), file=sys.stderr)
        publisher.close()
        return 2
    print(f"feeding {args.source} -> {args.storage}, events on port {publisher.port}")
    try:
        feeder.run_forever()
    finally:
        publisher.close()
    return 0


def _progress_line(queue: ImageQueue, total: int, final: bool = False) -> None:
    s = queue.status()
    line = f"processed {s.processed}/{total}  failed {s.failed}  {s.rate_fps:.1f} fps"
    if sys.stderr.isatty():
        end = "\n" if final else ""
        print(f"\r{line}\033[K", end=end, file=sys.stderr, flush=True)
    elif final:
        print(line, file=sys.stderr)


def _write_classifier_csv(queue: ImageQueue, path: Path) -> None:
    columns = [
        "source_path",
        "dataset",
        "acquired_at",
        "timestamp_source",
        "total_intensity",
        "invariant",
        "correlation_length",
    ]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for record in queue.query_history():
            row = record.to_dict()
            writer.writerow({k: "" if row[k] is None else row[k] for k in columns})


def cmd_local(args) -> int:
    try:
        cal = load_calibration(args.calibration)
    except FileNotFoundError:
        print(f"calibration file not found: {args.calibration}", file=sys.stderr)
        return 2
    except CalibrationError as exc:
        print(f"invalid calibration: {exc}", file=sys.stderr)
        return 2
    if args.dir is not None:
        cal = replace(cal, directory=str(args.dir))
    if args.threads is not None:
        cal = replace(cal, threads=args.threads)
    if args.out is not None:
        cal = replace(cal, output_directory=str(args.out))
    if not Path(cal.directory).is_dir():
        print(f"image directory does not exist: {cal.directory}", file=sys.stderr)
        return 2

    failures: list[dict] = []

    def on_result(event: dict) -> None:
        if event.get("status") == "failed":
            failures.append(event)

    try:
        queue = ImageQueue(
            cal,
            base_dir=args.calibration.parent,
            cache_dir=args.cache_dir,
            include_profile_in_events=False,
        )
    except Exception as exc:
        print(f"cannot build the weighting matrix: {exc}", file=sys.stderr)
        return 2
    queue.add_result_listener(on_result)
    queue.start()
    t0 = time.perf_counter()
    try:
        total = queue.walk_directory(cal.directory)
    except QueueError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    while not queue.wait_idle(timeout=0.2):
        _progress_line(queue, total)
    elapsed = time.perf_counter() - t0
    _progress_line(queue, total, final=True)
    queue.abort()
    queue.join(timeout=10.0)

    out_root = Path(cal.output_directory) if cal.output_directory else Path(cal.directory)
    out_root.mkdir(parents=True, exist_ok=True)
    summary_path = out_root / "classifiers.csv"
    _write_classifier_csv(queue, summary_path)

    status = queue.status()
    fps = total / elapsed if elapsed > 0 and total else 0.0
    print(f"{total} frames in {elapsed:.2f} s ({fps:.1f} fps); summary: {summary_path}")
    if failures:
        print(f"{len(failures)} frame(s) failed:", file=sys.stderr)
        for event in failures:
            print(f"  {event['path']}: {event['error']}", file=sys.stderr)
        return 1
    return 0 if status.failed == 0 else 1


def cmd_gateway(args) -> int:
    from .net.gateway import run_gateway

    config = load_network_config(args.config)
    config.require_secret()
    run_gateway(config, static_dir=args.static)
    return 0


def cmd_netconf(args) -> int:
    path = args.config if args.config is not None else default_config_path()
    config = load_network_config(path)
    changed = False
    for field in ("feeder", "server", "results", "gateway", "secret"):
        value = getattr(args, field)
        if value is not None:
            config = replace(config, **{field: value})
            changed = True
    if changed:
        save_network_config(config, path)
    doc = config.to_dict()
    if not args.show_secret:
        doc["secret"] = "(set)" if config.secret else "(empty)"
    print(json.dumps(doc, indent=2, sort_keys=True))
    if changed:
        print(f"saved to {path}", file=sys.stderr)
    return 0


def cmd_bench(args) -> int:
    if args.frames < 1 or args.repeats < 1:
        print("frames and repeats must be positive", file=sys.stderr)
        return 2
    report = bench_mod.run_bench(
        args.frames,
        args.size,
        args.threads,
        args.repeats,
        args.work_dir,
        keep_outputs=args.keep,
        progress=lambda line: print(line, file=sys.stderr),
    )
    bench_mod.validate_report(report)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(report, indent=2) + "\n")
    for row in report["summary"]:
        print(
            f"threads={row['threads']}: {row['fps_mean']:.1f} ± {row['fps_spread']:.1f} fps, "
            f"{row['mb_per_s_mean']:.1f} MB/s"
        )
    print(f"report: {args.out}")
    ok = (
        report["spot_check"]["ok"]
        and report["determinism"]["identical_outputs"]
        and all(r["failed"] == 0 for r in report["runs"])
    )
    return 0 if ok else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    handlers = {
        "serve": cmd_serve,
        "feed": cmd_feed,
        "local": cmd_local,
        "gateway": cmd_gateway,
        "netconf": cmd_netconf,
        "bench": cmd_bench,
    }
    try:
        return handlers[args.cmd](args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 0


if __name__ == "__main__":
    sys.exit(main())

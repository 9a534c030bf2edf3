"""Command-line entry point (``iris``).

Exit codes: 0 ok, 1 usage, 2 I/O, 3 validation. Failures print one
``error kind=<Name> message="..."`` line on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import random
import sys
import time
from pathlib import Path

from . import budget as bg
from .errors import IrisError
from .gesture import GestureConfig, recognize
from .instances import (
    EmbeddingDb,
    PatchProjectionEmbedder,
    add_reference,
    load_embedding,
    resolve_instance,
    save_embedding,
)
from .orchestrator import DeviceRegistry
from .perception import DeviceClass
from .pgm import read_pgm, write_pgm
from .protocol import FrameAssembler, ImuEvent, read_capture, write_capture
from .ringsim import LinkConfig, QUOTED_CURRENT_PROFILE, PowerProfile, image_to_frame, packetize_frame, read_imu_csv

log = logging.getLogger("iris_ring")

EXIT_USAGE, EXIT_IO, EXIT_VALIDATION = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _out(line: str = "") -> None:
    sys.stdout.write(line + "\n")


def _config_path(args, key: str) -> Path:
    val = getattr(args, key, None)
    if val:
        return Path(val)
    if args.config:
        cfg = json.loads(Path(args.config).read_text())
        if key in cfg:
            return Path(args.config).parent / cfg[key]
    raise UsageError(f"--{key} is required (or set it in --config)")


# -- subcommands --------------------------------------------------------------------


def cmd_decode(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    asm = FrameAssembler()
    n_frames = n_imu = 0
    for pkt in read_capture(args.input):
        frame, events = asm.push(pkt)
        n_imu += sum(isinstance(e, ImuEvent) for e in events)
        if frame is not None:
            write_pgm(out_dir / f"frame_{n_frames:04d}.pgm", frame.pixels, frame.width, frame.height)
            n_frames += 1
    _out(f"packets {asm.packets_seen}")
    _out(f"frames_ok {asm.frames_ok}")
    _out(f"frames_invalidated {asm.frames_invalid}")
    _out(f"imu_samples {n_imu}")
    return 0


def cmd_encode(args) -> int:
    rng = random.Random(args.seed)
    frames = [image_to_frame(read_pgm(path)) for path in args.images]
    packets = []
    for frame in frames:
        packets += packetize_frame(frame, len(packets) & 0xFF)
    # a trailing start-of-frame packet terminates the last image
    packets += packetize_frame(frames[-1], len(packets) & 0xFF)[:1]
    kept = [p for p in packets if not (args.drop > 0 and rng.random() < args.drop)]
    write_capture(args.out, kept)
    _out(f"frames {len(args.images)}")
    _out(f"packets {len(packets)}")
    _out(f"dropped {len(packets) - len(kept)}")
    return 0


def cmd_simulate(args) -> int:
    from .pipeline import Scenario, simulate

    scenario = Scenario.load(args.scene, args.images)
    trace = read_imu_csv(args.imu)
    registry = DeviceRegistry.load(_config_path(args, "registry"))
    db_path = args.db or None
    if db_path is None and args.config:
        try:
            db_path = _config_path(args, "db")
        except UsageError:
            db_path = None
    db = EmbeddingDb.load(db_path) if db_path else EmbeddingDb()
    result = simulate(scenario, trace, registry, db, seed=args.seed)
    text = "\n".join(result.timeline) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.capture:
        write_capture(args.capture, result.packets)
    if args.db_out:
        result.db.save(args.db_out)
    return 0


def cmd_gesture(args) -> int:
    cfg = GestureConfig(
        hold_threshold_ms=args.hold_ms, double_click_window_ms=args.double_click_ms, rotate_step_deg=args.step_deg
    )
    samples = [(s.t_ms, s.button, s.imu.accel_g()) for s in read_imu_csv(args.trace)]
    for ev in recognize(samples, cfg):
        _out(ev.format())
    return 0


def _registry_names(args) -> dict:
    try:
        reg = DeviceRegistry.load(_config_path(args, "registry"))
    except UsageError:
        return {}
    return {r.uuid: r.name for r in reg}


def cmd_resolve(args) -> int:
    db = EmbeddingDb.load(_config_path(args, "db"))
    q = load_embedding(args.query)
    hint = DeviceClass.parse(args.class_) if args.class_ else None
    res = resolve_instance(q, db, hint)
    names = _registry_names(args)
    seen = set()
    for m in res.ranked:
        uid = m.entry.device_uuid
        if uid in seen:
            continue
        seen.add(uid)
        _out(f"{m.score:.6f} {uid} {m.entry.device_class.value} {names.get(uid, '-')} {m.entry.label or '-'}")
    return 0


def cmd_embed(args) -> int:
    db_dims = (4, 382)
    if args.db:
        db = EmbeddingDb.load(args.db)
        db_dims = (db.grid, db.dim)
    emb = PatchProjectionEmbedder(*db_dims).embed(image_to_frame(read_pgm(args.image)))
    save_embedding(args.out, emb)
    _out(f"embedding grid={emb.grid} dim={emb.dim}")
    return 0


def cmd_db(args) -> int:
    db_path = _config_path(args, "db")
    if args.db_cmd == "add":
        registry = DeviceRegistry.load(_config_path(args, "registry"))
        db = EmbeddingDb.load(db_path) if db_path.exists() else EmbeddingDb()
        dev = registry.find(args.device)
        frame = image_to_frame(read_pgm(args.image))
        added_at = args.added_at if args.added_at is not None else int(time.time() * 1000)
        add_reference(db, frame, PatchProjectionEmbedder(db.grid, db.dim), dev.uuid, dev.device_class, registry,
                      label=args.label or Path(args.image).stem, added_at=added_at)
        db.save(db_path)
        _out(f"added {dev.name} {dev.uuid} entries={len(db)}")
    elif args.db_cmd == "list":
        db = EmbeddingDb.load(db_path)
        _out(f"grid={db.grid} dim={db.dim} entries={len(db)}")
        for i, e in enumerate(db.entries):
            _out(f"{i} {e.device_uuid} {e.device_class.value} {e.added_at} {e.label or '-'}")
    else:  # undo: drop the most recent reference
        db = EmbeddingDb.load(db_path)
        if not db.entries:
            raise IrisError("database is empty")
        keep = EmbeddingDb(db.grid, db.dim)
        for e in db.entries[:-1]:
            keep.add(e)
        keep.save(db_path)
        last = db.entries[-1]
        _out(f"removed {last.device_uuid} {last.label or '-'} entries={len(keep)}")
    return 0


def cmd_budget(args) -> int:
    link = LinkConfig(args.interval_ms, args.packets_per_interval, args.packet_size)
    if args.what == "throughput":
        bps = bg.ble_throughput(link)
        if not args.table:
            _out(str(bps))
            return 0
        _out(f"{'quantity':<22}{'computed':>12}{'reported':>12}")
        _out(f"{'throughput_bps':<22}{bps:>12d}{bg.REPORTED_THROUGHPUT_BPS:>12d}")
        for (w, h), (ms, fps) in bg.REPORTED_FRAME_LATENCY.items():
            _out(f"{f'latency_ms {w}x{h}':<22}{bg.frame_latency_ms(w, h, link=link):>12.2f}{ms:>12g}")
            _out(f"{f'fps {w}x{h}':<22}{bg.frame_rate_fps(w, h, link=link):>12.2f}{fps:>12g}")
    elif args.what == "latency":
        prof = bg.LatencyProfile()
        if args.db_size is not None:
            part = args.partition if args.partition is not None else args.db_size
            _out(f"unscoped {bg.e2e_latency_ms(prof, args.db_size):.1f}")
            _out(f"scoped {bg.e2e_latency_ms(prof, args.db_size, True, part):.1f}")
            return 0
        if args.table:
            _out(f"{'db_size':<10}{'hardware':>10}{'yolo':>8}{'embed':>8}{'query':>8}{'total':>8}{'reported':>10}")
        for n, reported in bg.REPORTED_LATENCY_TABLE.items():
            total = bg.e2e_latency_ms(prof, n)
            if args.table:
                _out(f"{n:<10}{prof.hardware_ms:>10g}{prof.yolo_ms:>8g}{prof.embed_gen_ms:>8g}"
                     f"{prof.query_ms(n):>8g}{total:>8g}{reported:>10d}")
            else:
                _out(f"{n} {total:g}")
    else:
        profile = PowerProfile() if args.power_mode == "power" else QUOTED_CURRENT_PROFILE
        rates = [args.gestures] if args.gestures is not None else list(bg.REPORTED_BATTERY_TABLE)
        if args.table:
            _out(f"{'gestures/h':<12}{'hours':>8}{'reported':>10}{f'hours@{args.sleep_fraction:g}':>12}{'reported':>10}")
        for n in rates:
            awake = bg.battery_life_hours(n, profile, 0.0)
            slept = bg.battery_life_hours(n, profile, args.sleep_fraction)
            if args.table:
                rep = bg.REPORTED_BATTERY_TABLE.get(n, (float("nan"), float("nan")))
                _out(f"{n:<12g}{awake:>8.2f}{rep[0]:>10g}{slept:>12.2f}{rep[1]:>10g}")
            else:
                _out(f"{n:g} {awake:.2f} {slept:.2f}")
    return 0


def cmd_demo(args) -> int:
    from .demo import write_demo

    paths = write_demo(args.out_dir, seed=args.seed)
    for k, v in paths.items():
        _out(f"{k} {v}")
    return 0


# -- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="iris", description="Smart-ring interaction pipeline tools")
    p.add_argument("--seed", type=int, default=0, help="seed for every randomized path")
    p.add_argument("--config", help="JSON file with default 'registry' and 'db' paths")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    s = sub.add_parser("decode", help="reassemble a packet capture into PGM frames")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("encode", help="packetize images into a capture file")
    s.add_argument("--out", required=True)
    s.add_argument("--drop", type=float, default=0.0, help="packet drop probability")
    s.add_argument("images", nargs="+")
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("simulate", help="run the ring + phone pipeline over a scripted scenario")
    s.add_argument("--scene", required=True)
    s.add_argument("--images", required=True)
    s.add_argument("--imu", required=True)
    s.add_argument("--registry")
    s.add_argument("--db")
    s.add_argument("--out", help="write the timeline here instead of stdout")
    s.add_argument("--capture", help="also write the sent packets as a capture file")
    s.add_argument("--db-out", help="save the database (with corrections) here")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("gesture", help="recognize gestures in an IMU trace")
    s.add_argument("--trace", required=True)
    s.add_argument("--hold-ms", type=float, default=500)
    s.add_argument("--double-click-ms", type=float, default=400)
    s.add_argument("--step-deg", type=float, default=1.8)
    s.set_defaults(func=cmd_gesture)

    s = sub.add_parser("resolve", help="rank devices for a query embedding")
    s.add_argument("--db")
    s.add_argument("--registry")
    s.add_argument("--query", required=True)
    s.add_argument("--class", dest="class_")
    s.set_defaults(func=cmd_resolve)

    s = sub.add_parser("embed", help="embed an image into a query file")
    s.add_argument("--image", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--db", help="take grid/dim from this database")
    s.set_defaults(func=cmd_embed)

    s = sub.add_parser("db", help="reference database management")
    dbs = s.add_subparsers(dest="db_cmd", required=True, parser_class=_Parser)
    a = dbs.add_parser("add")
    a.add_argument("--db")
    a.add_argument("--registry")
    a.add_argument("--device", required=True, help="device name or uuid")
    a.add_argument("--image", required=True)
    a.add_argument("--label")
    a.add_argument("--added-at", type=int)
    a = dbs.add_parser("list")
    a.add_argument("--db")
    a = dbs.add_parser("undo")
    a.add_argument("--db")
    s.set_defaults(func=cmd_db)

    s = sub.add_parser("budget", help="throughput, latency and battery calculators")
    s.add_argument("what", choices=["throughput", "latency", "battery"])
    s.add_argument("--table", action="store_true", help="print computed and reported values side by side")
    s.add_argument("--interval-ms", type=float, default=15)
    s.add_argument("--packets-per-interval", type=int, default=4)
    s.add_argument("--packet-size", type=int, default=247)
    s.add_argument("--db-size", type=int)
    s.add_argument("--partition", type=int)
    s.add_argument("--gestures", type=float)
    s.add_argument("--sleep-fraction", type=float, default=0.5)
    s.add_argument("--power-mode", choices=["current", "power"], default="current")
    s.set_defaults(func=cmd_budget)

    s = sub.add_parser("demo", help="write a self-contained demo scenario")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_demo)
    return p


def _fail(code: int, exc: BaseException) -> int:
    msg = json.dumps(str(exc))
    sys.stderr.write(f"error kind={type(exc).__name__} message={msg}\n")
    return code


def main(argv=None) -> int:
    logging.basicConfig(
        level=getattr(logging, os.environ.get("IRIS_LOG", "error").upper(), logging.ERROR),
        format="%(levelname)s %(name)s %(message)s",
    )
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, exc)
    except (OSError, json.JSONDecodeError) as exc:
        return _fail(EXIT_IO, exc)
    except (IrisError, ValueError, KeyError) as exc:
        return _fail(EXIT_VALIDATION, exc)


if __name__ == "__main__":
    sys.exit(main())

"""``glckpt`` command line: run, ckpt, restore, bench, verify.

Machine-readable output is one ``key=value`` pair per line.
"""

from __future__ import annotations

import argparse
import random
import statistics
import sys

from glckpt import __version__
from glckpt.errors import GLCkptError
from glckpt.harness import scenarios
from glckpt.harness.bench import bench_overhead, bench_restart
from glckpt.harness.workloads import (
    MODEL_REGION,
    STATE_REGION,
    ModelLoad,
    Workload,
    load_app,
)
from glckpt.minigl import Kind
from glckpt.splitproc import CheckpointImage, Session, checkpoint, restore

WINDOW_TITLE = "glckpt"


def emit(**pairs) -> None:
    for k, v in pairs.items():
        if isinstance(v, float):
            v = f"{v:.6f}"
        print(f"{k}={v}")


def _hex(h: int) -> str:
    return f"{h:016x}"


def _start(args) -> tuple[Session, object]:
    """A fresh session with the workload run and a window showing its frame."""
    wl = Workload(args.workload, args.frames, args.seed, args.synth_ms)
    session = Session.launch(args.driver_seed, args.display)
    app = wl.make_app()
    if isinstance(app, ModelLoad):
        session.write_region(MODEL_REGION, app.load(session.gl, wl.frames))
    else:
        app.start(session.gl)
        app.run(session.gl, wl.frames)
    if session.conn is not None:
        win = session.create_window(*app.fb_size, WINDOW_TITLE)
        session.present(win, app.ctx)
    session.write_region(STATE_REGION, app.to_bytes())
    return session, app


def _resume(path, seed, display) -> tuple[Session, object]:
    with open(path, "rb") as fh:
        session = restore(CheckpointImage.from_bytes(fh.read()), seed, display)
    app = load_app(session.read_region(STATE_REGION))
    if isinstance(app, ModelLoad):
        app.model = session.read_region(MODEL_REGION)
    return session, app


def cmd_run(args) -> int:
    if args.image:
        session, app = _resume(args.image, args.driver_seed, args.display)
        if isinstance(app, ModelLoad) and args.frames:
            raise SystemExit("modelload cannot continue past its loaded model")
        app.run(session.gl, args.frames)
    else:
        session, app = _start(args)
    emit(workload=app.name, frames=app.frame, seed=app.seed, fb_hash=_hex(session.fb_hash(app.ctx)),
         log_len=len(session.log), epoch=session.epoch)
    return 0


def cmd_ckpt(args) -> int:
    session, app = _start(args)
    fb = session.fb_hash(app.ctx)
    log_len = len(session.log)
    image = checkpoint(session, prune=args.prune)
    data = image.to_bytes()
    with open(args.image, "wb") as fh:
        fh.write(data)
    emit(fb_hash=_hex(fb), log_len=log_len, pruned_len=len(image.call_log),
         image_bytes=len(data), regions=len(image.upper_regions), epoch=image.epoch)
    return 0


def cmd_restore(args) -> int:
    session, app = _resume(args.image, args.driver_seed, args.display)
    fb = session.fb_hash(app.ctx)
    emit(fb_hash=_hex(fb), log_len=len(session.log), epoch=session.epoch,
         threads=len(session.space.threads), windows=len(session.table.virtuals(Kind.WINDOW)))
    if session.conn is not None:
        for win in session.table.virtuals(Kind.WINDOW):
            shown = session.present(win, app.ctx)
            emit(**{f"window_{win}_hash": _hex(shown)})
    return 0


def cmd_bench(args) -> int:
    if args.which == "overhead":
        rep = bench_overhead(Workload("gears", args.frames, args.seed), args.repeat)
        print("\n".join(rep.as_lines()))
        return 0
    wl = Workload("modelload", args.frames, args.seed, args.synth_ms)
    reports = [bench_restart(wl, prune=args.prune, restore_seed=args.seed + 1 + i) for i in range(args.repeat)]
    wins = sum(r.restore_duration < r.coldstart_duration for r in reports)
    med = reports[0]
    for name in ("coldstart_duration", "ckpt_duration", "restore_duration"):
        setattr(med, name, statistics.median(getattr(r, name) for r in reports))
    print("\n".join(med.as_lines()))
    emit(restore_faster_runs=f"{wins}/{len(reports)}")
    return 0 if wins == len(reports) else 1


def cmd_verify(args) -> int:
    rng = random.Random(args.seed)
    checks = {
        "transparency": lambda i: scenarios.transparency(rng.randrange(1 << 30), rng.randrange(1, 400), rng.randrange(1 << 20)),
        "replay_equivalence": lambda i: scenarios.replay_equivalence(
            rng.randrange(1 << 30), rng.randrange(1, 400), rng.randrange(1 << 20), rng.randrange(1 << 20)),
        "crash_equivalence": lambda i: scenarios.crash_equivalence(
            "random", rng.randrange(0, 200), rng.randrange(0, 200), rng.randrange(1 << 30),
            rng.randrange(1 << 20), rng.randrange(1 << 20), prune=bool(i % 2)),
        "vid_stability": lambda i: scenarios.vid_stability(
            rng.randrange(1 << 30), rng.randrange(1, 200), rng.randrange(1, 200),
            rng.randrange(1 << 20), rng.randrange(1 << 20)),
        "prune_soundness": lambda i: scenarios.prune_soundness(rng.randrange(1 << 30), rng.randrange(1, 400)),
        "raster_oracle": lambda i: scenarios.raster_oracle(rng),
    }
    failed = 0
    for name, check in checks.items():
        bad = None
        for i in range(args.cases):
            out = check(i)
            if not out.ok:
                bad = out.detail
                break
            for image, lower in out.images:
                if not scenarios.lower_half_excluded(image, lower):
                    bad = "lower-half region found in image"
                    break
            if bad:
                break
        failed += bad is not None
        emit(**{name: "pass" if bad is None else f"fail ({bad})"})
    emit(cases=args.cases, failed=failed)
    return 0 if failed == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="glckpt", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"glckpt {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def workload_flags(sp, frames=100):
        sp.add_argument("--workload", choices=["gears", "modelload", "random"], default="gears")
        sp.add_argument("--frames", type=int, default=frames)
        sp.add_argument("--seed", type=int, default=0, help="workload seed")
        sp.add_argument("--synth-ms", type=float, default=5.0,
                        help="modelload synthetic parse cost per frame (ms)")

    def session_flags(sp):
        sp.add_argument("--driver-seed", type=int, default=0)
        sp.add_argument("--display", default=":0", help="display name; empty for headless")

    sp = sub.add_parser("run", help="run a workload, or continue one from --image")
    workload_flags(sp)
    session_flags(sp)
    sp.add_argument("--image", help="resume from this checkpoint image first")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("ckpt", help="run a workload and write a checkpoint image")
    workload_flags(sp)
    session_flags(sp)
    sp.add_argument("--image", required=True)
    sp.add_argument("--prune", action="store_true")
    sp.set_defaults(func=cmd_ckpt)

    sp = sub.add_parser("restore", help="restore a checkpoint image on a fresh driver")
    session_flags(sp)
    sp.add_argument("--image", required=True)
    sp.set_defaults(func=cmd_restore)

    sp = sub.add_parser("bench", help="timing experiments")
    sp.add_argument("which", choices=["overhead", "restart"])
    sp.add_argument("--frames", type=int, default=10_000)
    sp.add_argument("--repeat", type=int, default=3)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--synth-ms", type=float, default=5.0)
    sp.add_argument("--prune", action="store_true")
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("verify", help="randomized property checks")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--cases", type=int, default=50)
    sp.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "display", None) == "":
        args.display = None
    if args.command == "bench" and args.repeat < 3:
        print("glckpt: error: --repeat must be at least 3", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (GLCkptError, OSError, ValueError) as exc:
        print(f"glckpt: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

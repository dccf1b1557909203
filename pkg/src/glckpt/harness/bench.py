"""Timing experiments: interposition overhead and restart-vs-cold-start."""

from __future__ import annotations

import gc
import os
import statistics
import tempfile
import time
from dataclasses import dataclass, fields

from glckpt import minigl
from glckpt.harness.workloads import (
    MODEL_REGION,
    STATE_REGION,
    Gears,
    ModelLoad,
    Workload,
    fb_size_from_env,
    load_app,
)
from glckpt.splitproc import CheckpointImage, Session, checkpoint, restore


@dataclass
class BenchReport:
    workload: str = ""
    frames: int = 0
    baseline_duration: float = 0.0
    interposed_duration: float = 0.0
    overhead_ratio: float = 0.0
    coldstart_duration: float = 0.0
    ckpt_duration: float = 0.0
    restore_duration: float = 0.0
    log_len: int = 0
    pruned_len: int = 0
    fps_baseline: float = 0.0
    fps_interposed: float = 0.0
    fb_hash: str = ""

    def as_lines(self) -> list[str]:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            out.append(f"{f.name}={v:.6f}" if isinstance(v, float) else f"{f.name}={v}")
        return out


def overhead_ratio(baseline: float, interposed: float) -> float:
    return (interposed - baseline) / baseline


# Frames per timed block in the overhead bench. Short enough that CPU speed
# drift hits a bare block and its interposed partner alike.
OVERHEAD_BLOCK = 200


def _gears_bare(seed, fb_size):
    driver = minigl.create_driver(seed)
    app = Gears(seed=seed, fb_size=fb_size)
    app.start(driver)
    return driver, app


def _gears_interposed(seed, fb_size):
    session = Session.launch(seed, display=None)
    app = Gears(seed=seed, fb_size=fb_size)
    app.start(session.gl)
    return session, app


def _timed(app, gl, frames) -> float:
    # The collector is paused while timing, as timeit does; otherwise full
    # collections over the growing call log bill the interposed side by log size.
    gc.disable()
    try:
        t0 = time.perf_counter()
        app.run(gl, frames)
        return time.perf_counter() - t0
    finally:
        gc.enable()


def _overhead_pass(frames, seed, fb_size, block=OVERHEAD_BLOCK):
    """One bare run and one interposed run, timed in alternating blocks."""
    driver, app_b = _gears_bare(seed, fb_size)
    session, app_i = _gears_interposed(seed, fb_size)
    gc.collect()
    bare = inter = 0.0
    done = 0
    while done < frames:
        n = min(block, frames - done)
        # alternate which side goes first so neither always sees a warmer cache
        if (done // block) % 2 == 0:
            bare += _timed(app_b, driver, n)
            inter += _timed(app_i, session.gl, n)
        else:
            inter += _timed(app_i, session.gl, n)
            bare += _timed(app_b, driver, n)
        done += n
    h_bare, h_inter = driver.fb_hash(app_b.ctx), session.fb_hash(app_i.ctx)
    if h_bare != h_inter:
        raise AssertionError("interposed run diverged from bare driver")
    return bare, inter, session, h_inter


def bench_overhead(workload: Workload, repeats: int = 3, fb_size=None) -> BenchReport:
    """Median wall time of a bare-driver run vs. the same run under interposition.

    Each repeat runs both sides to completion, alternating blocks of frames
    between them; the phases never overlap. A short warmup pass is discarded.
    """
    if repeats < 3:
        raise ValueError("repeats must be >= 3")
    if workload.name != "gears":
        raise ValueError("overhead bench runs the gears workload")
    if workload.frames <= 0:
        raise ValueError("overhead bench needs at least one frame")
    fb_size = tuple(fb_size or fb_size_from_env())
    _overhead_pass(min(workload.frames, 2 * OVERHEAD_BLOCK), workload.seed, fb_size)
    base, inter = [], []
    for _ in range(repeats):
        tb, ti, session, h = _overhead_pass(workload.frames, workload.seed, fb_size)
        base.append(tb)
        inter.append(ti)
    b, t = statistics.median(base), statistics.median(inter)
    return BenchReport(
        workload=workload.name,
        frames=workload.frames,
        baseline_duration=b,
        interposed_duration=t,
        overhead_ratio=overhead_ratio(b, t),
        log_len=len(session.log),
        pruned_len=len(session.log),
        fps_baseline=workload.frames / b if b else 0.0,
        fps_interposed=workload.frames / t if t else 0.0,
        fb_hash=f"{h:016x}",
    )


def cold_start(workload: Workload, seed: int = 0, fb_size=None) -> tuple[Session, ModelLoad]:
    """Launch a session and load the model from scratch."""
    session = Session.launch(seed)
    app = workload.make_app(fb_size)
    model = app.load(session.gl, workload.frames)
    session.write_region(MODEL_REGION, model)
    session.write_region(STATE_REGION, app.to_bytes())
    return session, app


def bench_restart(workload: Workload, prune: bool = False, restore_seed: int = 1,
                  image_dir: str | None = None, fb_size=None) -> BenchReport:
    if workload.name != "modelload":
        raise ValueError("restart bench runs the modelload workload")
    if workload.synth_load_ms_per_unit * workload.frames <= 0:
        raise ValueError("restart bench needs a nonzero synthetic load")

    t0 = time.perf_counter()
    session, app = cold_start(workload, workload.seed, fb_size)
    coldstart = time.perf_counter() - t0
    live_hash = session.fb_hash(app.ctx)
    log_len = len(session.log)

    with tempfile.TemporaryDirectory(dir=image_dir) as tmp:
        path = os.path.join(tmp, "model.ckpt")
        t0 = time.perf_counter()
        image = checkpoint(session, prune=prune)
        with open(path, "wb") as fh:
            fh.write(image.to_bytes())
        ckpt = time.perf_counter() - t0
        pruned_len = len(image.call_log)

        session.destroy()
        del session, image

        t0 = time.perf_counter()
        with open(path, "rb") as fh:
            restored = restore(CheckpointImage.from_bytes(fh.read()), restore_seed)
        app2 = load_app(restored.read_region(STATE_REGION))
        restore_t = time.perf_counter() - t0

    restored_hash = restored.fb_hash(app2.ctx)
    if restored_hash != live_hash:
        raise AssertionError("restored framebuffer differs from the live run")
    return BenchReport(
        workload=workload.name,
        frames=workload.frames,
        coldstart_duration=coldstart,
        ckpt_duration=ckpt,
        restore_duration=restore_t,
        log_len=log_len,
        pruned_len=pruned_len,
        fb_hash=f"{restored_hash:016x}",
    )



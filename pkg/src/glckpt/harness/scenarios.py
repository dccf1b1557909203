"""End-to-end checks shared by ``glckpt verify`` and the acceptance suite.

Each check builds its own oracle from an independent run: a bare driver, an
uninterrupted session, or the exhaustive reference rasterizer.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from glckpt import logstore, minigl
from glckpt.errors import GLCkptError
from glckpt.harness import reference
from glckpt.harness.workloads import (
    MODEL_REGION,
    STATE_REGION,
    ModelLoad,
    RandomApp,
    Workload,
    load_app,
    run_workload,
)
from glckpt.interpose import VirtualIdTable, virtual_view
from glckpt.minigl import Kind
from glckpt.splitproc import Session, Tag, checkpoint, restore, scan_region_labels


@dataclass
class Outcome:
    ok: bool
    detail: str = ""
    images: list = field(default_factory=list)


class RecordingGL:
    """Wraps a GL backend and records every ID it hands back to the app."""

    def __init__(self, gl):
        self._gl = gl
        self.issued: list[int] = []

    def __getattr__(self, name):
        return getattr(self._gl, name)

    def create_context(self, *a):
        v = self._gl.create_context(*a)
        self.issued.append(v)
        return v

    def gen_resource(self, *a):
        v = self._gl.gen_resource(*a)
        self.issued.append(v)
        return v


def _upper_session(seed, app, display=":0"):
    session = Session.launch(seed, display)
    session.tag_region("app-heap", random.Random(app.seed).randbytes(256))
    return session


def _freeze(session, app, prune=False):
    session.write_region(STATE_REGION, app.to_bytes())
    lower = set(session.space.labels(Tag.LOWER))
    image = checkpoint(session, prune=prune).to_bytes()
    return image, lower


def _resume(image, seed, display=":0"):
    session = restore(image, seed, display)
    app = load_app(session.read_region(STATE_REGION))
    if isinstance(app, ModelLoad):
        app.model = session.read_region(MODEL_REGION)
    return session, app


def replay_equivalence(app_seed, calls, live_seed, restore_seed, prune=False) -> Outcome:
    """Live framebuffer hash equals the hash after checkpoint + restore."""
    app = RandomApp(seed=app_seed)
    session = _upper_session(live_seed, app)
    app.start(session.gl)
    app.run(session.gl, calls)
    live = session.fb_hash(app.ctx)
    view = session.virtual_view()
    image, lower = _freeze(session, app, prune)
    session.destroy()
    restored, app2 = _resume(image, restore_seed)
    ok = restored.fb_hash(app2.ctx) == live and restored.virtual_view() == view
    return Outcome(ok, f"live={live:016x} seeds={live_seed}->{restore_seed}", [(image, lower)])


def crash_equivalence(name, before, after, app_seed, live_seed, restore_seed, prune=False) -> Outcome:
    """checkpoint, kill, restore, continue == an uninterrupted run."""
    _, expected = run_workload(Workload(name, before + after, app_seed), minigl.create_driver(live_seed))

    app = Workload(name, before + after, app_seed).make_app()
    session = _upper_session(live_seed, app)
    app.start(session.gl)
    app.run(session.gl, before)
    image, lower = _freeze(session, app, prune)
    session.destroy()
    del session

    restored, app2 = _resume(image, restore_seed)
    app2.run(restored.gl, after)
    got = restored.fb_hash(app2.ctx)
    return Outcome(got == expected, f"expected={expected:016x} got={got:016x}", [(image, lower)])


def vid_stability(app_seed, before, after, live_seed, restore_seed) -> Outcome:
    """Virtual IDs seen by the app do not depend on driver seeds or restores."""
    # reference: uninterrupted run on a third seed
    ref_gl = RecordingGL(Session.launch(live_seed + restore_seed + 1, None).gl)
    ref = RandomApp(seed=app_seed)
    ref.start(ref_gl)
    ref.run(ref_gl, before + after)

    app = RandomApp(seed=app_seed)
    session = _upper_session(live_seed, app)
    gl = RecordingGL(session.gl)
    app.start(gl)
    app.run(gl, before)
    held = {(k, v): session.gl.read_payload(c, k, v) for k, v, c, alive in app.resources
            if alive and _owned(session, c, k, v)}
    image, lower = _freeze(session, app)
    issued_before = list(gl.issued)
    session.destroy()

    restored, app2 = _resume(image, restore_seed)
    # every old virtual ID must still work after restore
    for (k, v), payload in held.items():
        ctx = next(c for kk, vv, c, _ in app2.resources if (kk, vv) == (k, v))
        if restored.gl.read_payload(ctx, k, v) != payload:
            return Outcome(False, f"payload of {Kind(k).name} {v} changed", [(image, lower)])
        restored.gl.upload_data(ctx, k, v, payload)
    gl2 = RecordingGL(restored.gl)
    app2.run(gl2, after)
    seq = issued_before + gl2.issued
    ok = seq == ref_gl.issued and restored.fb_hash(app2.ctx) == ref_gl.fb_hash(ref.ctx)
    return Outcome(ok, f"{len(seq)} virtual ids, {len(held)} held across restore", [(image, lower)])


def _owned(session, ctx, kind, vid) -> bool:
    try:
        session.gl.read_payload(ctx, kind, vid)
        return True
    except GLCkptError:
        return False


def lower_half_excluded(image: bytes, lower_labels: set[str]) -> bool:
    labels = scan_region_labels(image)
    return not (set(labels) & lower_labels)


def transparency(app_seed, calls, seed) -> Outcome:
    """Interposed run matches a bare-driver run byte for byte."""
    _, bare = run_workload(Workload("random", calls, app_seed), minigl.create_driver(seed))
    session = Session.launch(seed, None)
    _, inter = run_workload(Workload("random", calls, app_seed), session.gl)
    return Outcome(bare == inter, f"bare={bare:016x} interposed={inter:016x}")


def replay_state(log, seed=0) -> tuple[dict, VirtualIdTable]:
    """Replay ``log`` into a fresh driver; returns its virtual view."""
    driver = minigl.create_driver(seed)
    table = VirtualIdTable()
    logstore.replay(log, driver, table)
    return virtual_view(driver, table), table


def prune_soundness(app_seed, calls, seed=0) -> Outcome:
    session = Session.launch(seed, None)
    run_workload(Workload("random", calls, app_seed), session.gl)
    full, _ = replay_state(session.log, seed + 1)
    pruned_log, report = logstore.prune(session.log)
    pruned, _ = replay_state(pruned_log, seed + 2)
    ok = full == pruned and report.after_len <= report.before_len
    ok = ok and report.after_len == report.before_len - report.removed
    return Outcome(ok, f"{report.before_len} -> {report.after_len}")


def raster_oracle(rng: random.Random, size=(64, 64)) -> Outcome:
    w, h = size
    driver = minigl.create_driver(0)
    ctx = driver.create_context(w, h)
    vp = (0, 0, w, h)
    if rng.random() < 0.3:
        vp = (rng.randrange(-4, w), rng.randrange(-4, h), rng.randrange(0, w + 4), rng.randrange(0, h + 4))
        driver.set_state(ctx, minigl.StateKey.VIEWPORT, vp)
    verts = [(rng.randrange(-16, w + 16), rng.randrange(-16, h + 16)) for _ in range(3)]
    before = driver.read_framebuffer(ctx)
    driver.draw_triangle(ctx, *verts, (255, 255, 255, 255))
    got = reference.drawn_pixels(before, driver.read_framebuffer(ctx), w)
    clip = (max(vp[0], 0), max(vp[1], 0), min(vp[0] + vp[2], w), min(vp[1] + vp[3], h))
    want = reference.covered_pixels(*verts, clip)
    return Outcome(got == want, f"verts={verts} vp={vp} got={len(got)} want={len(want)}")

"""Deterministic synthetic applications.

Each workload is an "application" whose own state (frame counter, the IDs it
holds, parsed model data) is plain upper-half memory: it round-trips through
``to_bytes``/``from_bytes`` so a checkpointed run can resume where it left off.
A workload drives any GL backend with the driver's method signatures, either a
bare :class:`~glckpt.minigl.DriverInstance` or a session's interposer.
"""

from __future__ import annotations

import json
import math
import os
import random
import time
from dataclasses import asdict, dataclass, field

from glckpt.errors import GLCkptError
from glckpt.fnv import fnv1a64
from glckpt.minigl import DEFAULT_FB_SIZE, BindTarget, Kind, StateKey

STATE_REGION = "app-state"
MODEL_REGION = "model-data"
FB_SIZE_ENV = "GLCKPT_FB_SIZE"


def fb_size_from_env() -> tuple[int, int]:
    raw = os.environ.get(FB_SIZE_ENV)
    if not raw:
        return DEFAULT_FB_SIZE
    try:
        w, h = (int(p) for p in raw.lower().split("x"))
    except ValueError:
        raise ValueError(f"{FB_SIZE_ENV} must look like WxH, got {raw!r}") from None
    if w <= 0 or h <= 0:
        raise ValueError(f"{FB_SIZE_ENV} dimensions must be positive")
    return w, h


def burn_cpu(ms: float) -> int:
    """Busy-compute for ``ms`` milliseconds; returns a digest so it can't be elided."""
    deadline = time.perf_counter() + ms / 1000.0
    acc = 0
    block = b"model" * 64
    while time.perf_counter() < deadline:
        acc = fnv1a64(block, acc or 0xCBF29CE484222325)
    return acc


@dataclass
class App:
    seed: int = 0
    frame: int = 0
    fb_size: tuple = DEFAULT_FB_SIZE
    ctx: int = 0

    name = "app"
    calls_per_frame = 0
    setup_calls = 0

    def to_bytes(self) -> bytes:
        return json.dumps({"name": self.name, **asdict(self)}, sort_keys=True).encode()

    @classmethod
    def from_bytes(cls, data: bytes) -> "App":
        raw = json.loads(data.decode())
        raw.pop("name", None)
        raw["fb_size"] = tuple(raw["fb_size"])
        return cls(**raw)

    def start(self, gl) -> None:
        self.ctx = gl.create_context(*self.fb_size)

    def step(self, gl, i: int) -> None:
        raise NotImplementedError

    def run(self, gl, frames: int) -> None:
        if self.frame == 0 and not self.ctx:
            self.start(gl)
        end = self.frame + frames
        while self.frame < end:
            self.step(gl, self.frame)
            self.frame += 1


# rotation table so vertex positions are exact across platforms
_COS = [round(math.cos(math.radians(a)) * 4096) for a in range(360)]
_SIN = [round(math.sin(math.radians(a)) * 4096) for a in range(360)]


def _spin(cx, cy, r, deg):
    deg %= 360
    return (cx + (r * _COS[deg]) // 4096, cy + (r * _SIN[deg]) // 4096)


@dataclass
class Gears(App):
    """Spinning-gears demo loop: per frame a clear-colour set, a clear and two rotating triangles."""

    name = "gears"
    calls_per_frame = 4
    setup_calls = 1

    def step(self, gl, i):
        w, h = self.fb_size
        cx, cy = w // 2, h // 2
        r = max(2, min(w, h) * 7 // 16)
        shade = (i % 16) / 16.0
        gl.set_state(self.ctx, StateKey.CLEAR_COLOR, (shade, 0.1, 1.0 - shade, 1.0))
        gl.clear(self.ctx)
        a = (i * 3 + self.seed * 7) % 360
        gl.draw_triangle(
            self.ctx, _spin(cx, cy, r, a), _spin(cx, cy, r, a + 120), _spin(cx, cy, r, a + 240),
            (200, (i * 5) % 256, 40, 255),
        )
        b = (-i * 5 + self.seed * 11) % 360
        gl.draw_triangle(
            self.ctx, _spin(cx, cy, r // 2, b), _spin(cx, cy, r // 2, b + 120),
            _spin(cx, cy, r // 2, b + 240), (40, 220, (i * 3) % 256, 255),
        )


@dataclass
class ModelLoad(App):
    """Heavy model load: an expensive parse, then upload-heavy GL calls.

    The parsed chunks live in upper-half memory, so a restore never re-parses.
    """

    name = "modelload"
    calls_per_frame = 4
    setup_calls = 1
    synth_load_ms_per_unit: float = 5.0
    buffers: list = field(default_factory=list)

    def parse_model(self, frames: int) -> bytes:
        burn_cpu(self.synth_load_ms_per_unit * frames)
        rng = random.Random(f"model:{self.seed}")
        return rng.randbytes(64 * max(frames, 1))

    def step(self, gl, i):
        chunk = self.model[64 * i:64 * (i + 1)]
        w, h = self.fb_size
        buf = gl.gen_resource(self.ctx, Kind.BUFFER)
        self.buffers.append(buf)
        gl.upload_data(self.ctx, Kind.BUFFER, buf, chunk)
        gl.bind(self.ctx, BindTarget.ARRAY_BUFFER, buf)
        x0, y0, x1, y1, x2, y2 = (c % max(w, h) for c in chunk[:6])
        gl.draw_triangle(self.ctx, (x0, y0), (x1, y1), (x2, y2), tuple(chunk[6:9]) + (255,))

    def load(self, gl, frames: int) -> bytes:
        """Cold start: parse the model, then issue every frame's calls."""
        self.model = self.parse_model(frames)
        self.run(gl, frames)
        return self.model


@dataclass
class RandomApp(App):
    """Random call mix used for property checks.

    One call per step. Deliberately issues some failing calls (out-of-range
    values, stale or cross-context IDs); the app tolerates and counts them.
    """

    name = "random"
    calls_per_frame = 1
    setup_calls = 1
    ctxs: list = field(default_factory=list)
    # [kind, id, ctx, alive]
    resources: list = field(default_factory=list)
    errors: int = 0
    reads: int = 0

    def start(self, gl):
        super().start(gl)
        self.ctxs = [self.ctx]

    def _pick(self, rng, kind=None, alive_bias=0.9):
        pool = [r for r in self.resources if kind is None or r[0] == kind]
        if not pool:
            return None
        live = [r for r in pool if r[3]]
        if live and rng.random() < alive_bias:
            return rng.choice(live)
        return rng.choice(pool)

    def step(self, gl, i):
        rng = random.Random(self.seed * 1_000_003 + i)
        w, h = self.fb_size
        ctx = rng.choice(self.ctxs) if rng.random() < 0.2 else self.ctx
        op = rng.choices(
            ["ctx", "gen", "delete", "upload", "state", "viewport", "bind", "clear", "draw", "read"],
            weights=[1, 14, 6, 10, 8, 5, 8, 6, 24, 4],
        )[0]
        try:
            if op == "ctx" and len(self.ctxs) < 3:
                self.ctxs.append(gl.create_context(w, h))
            elif op == "gen":
                kind = rng.choice([Kind.SHADER, Kind.PROGRAM, Kind.BUFFER, Kind.TEXTURE])
                self.resources.append([int(kind), gl.gen_resource(ctx, kind), ctx, True])
            elif op == "delete":
                r = self._pick(rng)
                if r is not None:
                    gl.delete_resource(r[2] if rng.random() < 0.9 else ctx, r[0], r[1])
                    r[3] = False
            elif op == "upload":
                r = self._pick(rng)
                if r is not None:
                    gl.upload_data(r[2] if rng.random() < 0.9 else ctx, r[0], r[1],
                                   rng.randbytes(rng.randrange(0, 48)))
            elif op == "state":
                color = tuple(round(rng.random(), 3) for _ in range(4))
                if rng.random() < 0.1:
                    color = (1.5,) + color[1:]
                gl.set_state(ctx, StateKey.CLEAR_COLOR, color)
            elif op == "viewport":
                if rng.random() < 0.4:
                    vp = (0, 0, w, h)
                else:
                    vp = (rng.randrange(-4, w), rng.randrange(-4, h),
                          rng.randrange(0, w + 8), rng.randrange(0, h + 8))
                gl.set_state(ctx, StateKey.VIEWPORT, vp)
            elif op == "bind":
                target = rng.choice(list(BindTarget))
                kind = {BindTarget.ARRAY_BUFFER: Kind.BUFFER, BindTarget.TEXTURE_2D: Kind.TEXTURE,
                        BindTarget.PROGRAM: Kind.PROGRAM}[target]
                r = self._pick(rng, int(kind))
                gl.bind(ctx if r is None else r[2], target, 0 if r is None or rng.random() < 0.1 else r[1])
            elif op == "clear":
                gl.clear(ctx)
            elif op == "draw":
                verts = [(rng.randrange(-8, w + 8), rng.randrange(-8, h + 8)) for _ in range(3)]
                color = tuple(rng.randrange(256) for _ in range(3)) + (255,)
                gl.draw_triangle(ctx, *verts, color)
            elif op == "read":
                if rng.random() < 0.5:
                    gl.read_framebuffer(ctx)
                else:
                    r = self._pick(rng)
                    if r is not None:
                        gl.read_payload(r[2], r[0], r[1])
                self.reads += 1
        except GLCkptError:
            self.errors += 1


WORKLOADS = {"gears": Gears, "modelload": ModelLoad, "random": RandomApp}


@dataclass
class Workload:
    name: str
    frames: int
    seed: int = 0
    synth_load_ms_per_unit: float = 5.0

    def __post_init__(self):
        if self.name not in WORKLOADS:
            raise ValueError(f"unknown workload {self.name!r}")
        if self.frames < 0:
            raise ValueError("frames must be non-negative")

    def make_app(self, fb_size=None) -> App:
        fb_size = tuple(fb_size or fb_size_from_env())
        if self.name == "modelload":
            return ModelLoad(seed=self.seed, fb_size=fb_size,
                             synth_load_ms_per_unit=self.synth_load_ms_per_unit)
        return WORKLOADS[self.name](seed=self.seed, fb_size=fb_size)


def load_app(data: bytes) -> App:
    name = json.loads(data.decode())["name"]
    return WORKLOADS[name].from_bytes(data)


def run_workload(workload: Workload, gl, fb_size=None) -> tuple[App, int]:
    """Run ``workload`` from the start on ``gl``; returns the app and final fb hash."""
    app = workload.make_app(fb_size)
    if isinstance(app, ModelLoad):
        app.load(gl, workload.frames)
    else:
        app.start(gl)
        app.run(gl, workload.frames)
    return app, gl.fb_hash(app.ctx)

"""A deterministic miniature OpenGL-style driver.

This is the "lower half": a state machine holding resources, binding points,
scalar state and a software-rasterized RGBA8 framebuffer. Resource IDs are a
function of the driver seed, so two drivers built with different seeds hand
out different IDs for the same call sequence, like real drivers do across
restarts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from numbers import Real

import numpy as np

from glckpt.errors import (
    BadValue,
    DriverDestroyed,
    UnknownContext,
    UnknownId,
    UnknownKey,
    UnknownKind,
)
from glckpt.fnv import fnv1a64

DEFAULT_FB_SIZE = (64, 64)
MAX_FB_DIM = 4096
# Keeps doubled-coordinate edge functions well inside int64.
MAX_COORD = 1 << 24
I32_MAX = (1 << 31) - 1

ID_MULT_SEED = 2654435761
ID_MULT_N = 40503
ID_MOD = 1 << 31


class Kind(IntEnum):
    SHADER = 1
    PROGRAM = 2
    BUFFER = 3
    TEXTURE = 4
    # Namespaces virtualized by the interposer but not allocated by gen_resource.
    CONTEXT = 5
    WINDOW = 6


RESOURCE_KINDS = (Kind.SHADER, Kind.PROGRAM, Kind.BUFFER, Kind.TEXTURE)


class StateKey(IntEnum):
    CLEAR_COLOR = 1
    VIEWPORT = 2


class BindTarget(IntEnum):
    ARRAY_BUFFER = 1
    TEXTURE_2D = 2
    PROGRAM = 3


BIND_KIND = {
    BindTarget.ARRAY_BUFFER: Kind.BUFFER,
    BindTarget.TEXTURE_2D: Kind.TEXTURE,
    BindTarget.PROGRAM: Kind.PROGRAM,
}


def allocate_id(seed: int, n: int) -> int:
    """RealId for the n-th allocation (0-based) of a kind under ``seed``."""
    if seed == 0:
        return n + 1
    return 1 + ((seed * ID_MULT_SEED + n * ID_MULT_N) % ID_MOD)


def quantize(c: float) -> int:
    # round half up
    return int(math.floor(c * 255 + 0.5))


def as_kind(kind) -> Kind:
    try:
        k = Kind(kind)
    except ValueError:
        raise UnknownKind(f"unknown resource kind {kind!r}") from None
    if k not in RESOURCE_KINDS:
        raise UnknownKind(f"{k.name} is not an allocatable resource kind")
    return k


def as_state_key(key) -> StateKey:
    try:
        return StateKey(key)
    except ValueError:
        raise UnknownKey(f"unknown state key {key!r}") from None


def as_bind_target(target) -> BindTarget:
    try:
        return BindTarget(target)
    except ValueError:
        raise UnknownKey(f"unknown bind target {target!r}") from None


def _is_int(v) -> bool:
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool)


def check_state_value(key: StateKey, value) -> tuple:
    try:
        vals = tuple(value)
    except TypeError:
        raise BadValue(f"{key.name} expects a 4-tuple, got {value!r}") from None
    if len(vals) != 4:
        raise BadValue(f"{key.name} expects 4 components, got {len(vals)}")
    if key is StateKey.CLEAR_COLOR:
        for c in vals:
            if isinstance(c, bool) or not isinstance(c, Real):
                raise BadValue(f"clear color channel {c!r} is not a number")
            if not (0.0 <= c <= 1.0):
                raise BadValue(f"clear color channel {c!r} outside [0, 1]")
        return vals
    # VIEWPORT
    for c in vals:
        if not _is_int(c):
            raise BadValue(f"viewport component {c!r} is not an integer")
    x, y, w, h = (int(c) for c in vals)
    if w < 0 or h < 0:
        raise BadValue("viewport width/height must be non-negative")
    if any(abs(c) > I32_MAX for c in (x, y, w, h)):
        raise BadValue("viewport component out of range")
    return (x, y, w, h)


def check_vertex(v) -> tuple[int, int]:
    try:
        x, y = v
    except (TypeError, ValueError):
        raise BadValue(f"vertex must be an (x, y) pair, got {v!r}") from None
    if not (_is_int(x) and _is_int(y)):
        raise BadValue(f"vertex {v!r} must have integer coordinates")
    x, y = int(x), int(y)
    if abs(x) > MAX_COORD or abs(y) > MAX_COORD:
        raise BadValue(f"vertex {v!r} out of range")
    return x, y


def check_color(color) -> tuple[int, int, int, int]:
    try:
        vals = tuple(color)
    except TypeError:
        raise BadValue(f"color must be RGBA8, got {color!r}") from None
    if len(vals) != 4 or not all(_is_int(c) and 0 <= c <= 255 for c in vals):
        raise BadValue(f"color must be 4 integers in [0, 255], got {color!r}")
    return tuple(int(c) for c in vals)


@dataclass
class ResourceObject:
    kind: Kind
    real_id: int
    payload: bytes = b""


@dataclass(eq=False)
class Framebuffer:
    """Row-major RGBA8 pixels; row 0 is the top of the image."""

    width: int
    height: int
    pixels: np.ndarray = None

    def __post_init__(self):
        if self.pixels is None:
            self.pixels = np.zeros((self.height, self.width, 4), dtype=np.uint8)
            self.pixels[..., 3] = 255

    def tobytes(self) -> bytes:
        return self.pixels.tobytes()

    def copy(self) -> "Framebuffer":
        return Framebuffer(self.width, self.height, self.pixels.copy())


@dataclass
class ContextState:
    width: int
    height: int
    resources: dict = field(default_factory=lambda: {k: {} for k in RESOURCE_KINDS})
    bindings: dict = field(default_factory=lambda: {t: None for t in BindTarget})
    state_slots: dict = field(default_factory=dict)
    framebuffer: Framebuffer = None

    def __post_init__(self):
        if not self.state_slots:
            self.state_slots = {
                StateKey.CLEAR_COLOR: (0.0, 0.0, 0.0, 1.0),
                StateKey.VIEWPORT: (0, 0, self.width, self.height),
            }
        if self.framebuffer is None:
            self.framebuffer = Framebuffer(self.width, self.height)


def triangle_mask(v0, v1, v2, clip):
    """Coverage of a triangle over the clip rectangle ``(x0, y0, x1, y1)``.

    Pixels are sampled at their centres. Edges use integer half-plane tests in
    doubled coordinates; samples exactly on an edge belong to the triangle only
    if the edge is a top or left edge. Returns ``(mask, x0, y0)`` with the mask
    origin, or ``None`` when nothing is covered.
    """
    (ax, ay), (bx, by), (cx, cy) = v0, v1, v2
    area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    if area == 0:
        return None
    if area < 0:
        bx, by, cx, cy = cx, cy, bx, by

    x0 = max(clip[0], min(ax, bx, cx))
    y0 = max(clip[1], min(ay, by, cy))
    x1 = min(clip[2], max(ax, bx, cx))
    y1 = min(clip[3], max(ay, by, cy))
    if x0 >= x1 or y0 >= y1:
        return None

    px = np.arange(x0, x1, dtype=np.int64)[None, :] * 2 + 1
    py = np.arange(y0, y1, dtype=np.int64)[:, None] * 2 + 1
    mask = None
    for (sx, sy), (ex, ey) in (((ax, ay), (bx, by)), ((bx, by), (cx, cy)), ((cx, cy), (ax, ay))):
        dx, dy = 2 * (ex - sx), 2 * (ey - sy)
        top_left = dy < 0 or (dy == 0 and dx > 0)
        e = dx * (py - 2 * sy) - dy * (px - 2 * sx)
        inside = e >= 0 if top_left else e > 0
        mask = inside if mask is None else mask & inside
    if not mask.any():
        return None
    return mask, x0, y0


class DriverInstance:
    def __init__(self, seed: int = 0):
        if seed < 0:
            raise BadValue("driver seed must be unsigned")
        self.seed = seed
        self.contexts: dict[int, ContextState] = {}
        self.next_context_serial = 1
        self.destroyed = False
        self._alloc_n = {k: 0 for k in RESOURCE_KINDS}
        self._live = {k: set() for k in RESOURCE_KINDS}

    def __repr__(self):
        state = "destroyed" if self.destroyed else f"{len(self.contexts)} contexts"
        return f"<DriverInstance seed={self.seed} {state}>"

    def _ctx(self, ctx) -> ContextState:
        if self.destroyed:
            raise DriverDestroyed("driver instance has been destroyed")
        try:
            return self.contexts[ctx]
        except (KeyError, TypeError):
            raise UnknownContext(f"no context {ctx!r}") from None

    def _resource(self, cs: ContextState, kind: Kind, rid) -> ResourceObject:
        try:
            return cs.resources[kind][rid]
        except (KeyError, TypeError):
            raise UnknownId(f"no {kind.name.lower()} with id {rid!r}") from None

    def _next_id(self, kind: Kind) -> int:
        n = self._alloc_n[kind]
        rid = allocate_id(self.seed, n)
        while rid in self._live[kind]:
            n += 1
            rid = allocate_id(self.seed, n)
        self._alloc_n[kind] = n + 1
        return rid

    def destroy(self) -> None:
        self.destroyed = True
        self.contexts.clear()

    def create_context(self, width: int = DEFAULT_FB_SIZE[0], height: int = DEFAULT_FB_SIZE[1]) -> int:
        if self.destroyed:
            raise DriverDestroyed("driver instance has been destroyed")
        if not (_is_int(width) and _is_int(height)) or not (
            0 < width <= MAX_FB_DIM and 0 < height <= MAX_FB_DIM
        ):
            raise BadValue(f"bad framebuffer size {width!r}x{height!r}")
        ctx = self.next_context_serial
        self.next_context_serial += 1
        self.contexts[ctx] = ContextState(int(width), int(height))
        return ctx

    def gen_resource(self, ctx: int, kind) -> int:
        cs = self._ctx(ctx)
        kind = as_kind(kind)
        rid = self._next_id(kind)
        cs.resources[kind][rid] = ResourceObject(kind, rid)
        self._live[kind].add(rid)
        return rid

    def delete_resource(self, ctx: int, kind, rid: int) -> None:
        cs = self._ctx(ctx)
        kind = as_kind(kind)
        self._resource(cs, kind, rid)
        del cs.resources[kind][rid]
        self._live[kind].discard(rid)
        for target, bound in cs.bindings.items():
            if bound == rid and BIND_KIND[target] is kind:
                cs.bindings[target] = None

    def upload_data(self, ctx: int, kind, rid: int, data: bytes) -> None:
        cs = self._ctx(ctx)
        kind = as_kind(kind)
        obj = self._resource(cs, kind, rid)
        if not isinstance(data, (bytes, bytearray, memoryview)):
            raise BadValue("upload payload must be bytes")
        obj.payload = bytes(data)

    def read_payload(self, ctx: int, kind, rid: int) -> bytes:
        cs = self._ctx(ctx)
        return self._resource(cs, as_kind(kind), rid).payload

    def set_state(self, ctx: int, key, value) -> None:
        cs = self._ctx(ctx)
        key = as_state_key(key)
        cs.state_slots[key] = check_state_value(key, value)

    def bind(self, ctx: int, target, rid: int) -> None:
        cs = self._ctx(ctx)
        target = as_bind_target(target)
        if rid == 0:
            cs.bindings[target] = None
            return
        self._resource(cs, BIND_KIND[target], rid)
        cs.bindings[target] = rid

    def clear(self, ctx: int) -> None:
        cs = self._ctx(ctx)
        color = [quantize(c) for c in cs.state_slots[StateKey.CLEAR_COLOR]]
        cs.framebuffer.pixels[...] = color

    def draw_triangle(self, ctx: int, v0, v1, v2, color) -> None:
        cs = self._ctx(ctx)
        verts = [check_vertex(v) for v in (v0, v1, v2)]
        rgba = check_color(color)
        vx, vy, vw, vh = cs.state_slots[StateKey.VIEWPORT]
        clip = (max(vx, 0), max(vy, 0), min(vx + vw, cs.width), min(vy + vh, cs.height))
        hit = triangle_mask(*verts, clip)
        if hit is None:
            return
        mask, x0, y0 = hit
        h, w = mask.shape
        cs.framebuffer.pixels[y0:y0 + h, x0:x0 + w][mask] = rgba

    def read_framebuffer(self, ctx: int) -> bytes:
        return self._ctx(ctx).framebuffer.tobytes()

    def snapshot_framebuffer(self, ctx: int) -> Framebuffer:
        return self._ctx(ctx).framebuffer.copy()

    def fb_hash(self, ctx: int) -> int:
        return fnv1a64(self.read_framebuffer(ctx))

    def framebuffer_size(self, ctx: int) -> tuple[int, int]:
        cs = self._ctx(ctx)
        return cs.width, cs.height

    def context_state(self, ctx: int) -> ContextState:
        """The live state object; callers must treat it as read-only."""
        return self._ctx(ctx)


def create_driver(seed: int = 0) -> DriverInstance:
    return DriverInstance(seed)

"""Application-facing API surface.

Every call goes through :meth:`Interposer.intercept`, which translates the
application's virtual IDs to the driver's real IDs, forwards the call, and
records it (in virtual form) in the call log.
"""

from __future__ import annotations

import struct
import threading
from dataclasses import dataclass
from enum import IntEnum

from glckpt import minigl
from glckpt.errors import (
    BadValue,
    DriverError,
    RealIdCollision,
    SessionNotLive,
    StaleVirtualId,
    UnknownVirtual,
)
from glckpt.fnv import fnv1a64
from glckpt.minigl import BIND_KIND, Kind

U32_MAX = (1 << 32) - 1


class VirtualIdTable:
    """Per-kind bijection between virtual IDs and the current driver's real IDs.

    A virtual may also be *pending*: known to the application but not yet bound
    to a real ID. Restore starts from a table where every live virtual is
    pending and replay binds them.
    """

    def __init__(self):
        self._v2r: dict[Kind, dict[int, int | None]] = {k: {} for k in Kind}
        self._r2v: dict[Kind, dict[int, int]] = {k: {} for k in Kind}
        self.next_virtual: dict[Kind, int] = {k: 1 for k in Kind}

    def __eq__(self, other):
        if not isinstance(other, VirtualIdTable):
            return NotImplemented
        return self._v2r == other._v2r and self.next_virtual == other.next_virtual

    def __repr__(self):
        sizes = {k.name: len(m) for k, m in self._v2r.items() if m}
        return f"<VirtualIdTable {sizes}>"

    def issue(self, kind: Kind, real: int) -> int:
        """Allocate a fresh virtual ID for ``real``."""
        if real in self._r2v[kind]:
            raise RealIdCollision(f"{kind.name} real id {real} already mapped")
        v = self.next_virtual[kind]
        self.next_virtual[kind] = v + 1
        self._v2r[kind][v] = real
        self._r2v[kind][real] = v
        return v

    def resolve(self, kind: Kind, virtual: int) -> int:
        if virtual == 0:
            return 0
        real = self._v2r[kind].get(virtual)
        if real is None:
            raise StaleVirtualId(f"{kind.name} virtual id {virtual!r} has no real mapping")
        return real

    def reverse(self, kind: Kind, real: int) -> int:
        if real == 0:
            return 0
        try:
            return self._r2v[kind][real]
        except KeyError:
            raise UnknownVirtual(f"{kind.name} real id {real} is not mapped") from None

    def rebind(self, kind: Kind, virtual: int, new_real: int) -> None:
        v2r, r2v = self._v2r[kind], self._r2v[kind]
        if virtual not in v2r:
            raise UnknownVirtual(f"{kind.name} virtual id {virtual} not in table")
        owner = r2v.get(new_real)
        if owner is not None and owner != virtual:
            raise RealIdCollision(
                f"{kind.name} real id {new_real} already owned by virtual {owner}"
            )
        old = v2r[virtual]
        if old is not None:
            del r2v[old]
        v2r[virtual] = new_real
        r2v[new_real] = virtual

    def install(self, kind: Kind, virtual: int, real: int) -> None:
        """Bind ``virtual`` to ``real``, adding it if absent (used by replay)."""
        if virtual not in self._v2r[kind]:
            if virtual >= self.next_virtual[kind]:
                self.next_virtual[kind] = virtual + 1
            self._v2r[kind][virtual] = None
        self.rebind(kind, virtual, real)

    def retire(self, kind: Kind, virtual: int) -> None:
        real = self._v2r[kind].pop(virtual, None)
        if real is not None:
            del self._r2v[kind][real]

    def add_pending(self, kind: Kind, virtual: int) -> None:
        self._v2r[kind].setdefault(virtual, None)
        if virtual >= self.next_virtual[kind]:
            self.next_virtual[kind] = virtual + 1

    def pending(self, kind: Kind) -> list[int]:
        return sorted(v for v, r in self._v2r[kind].items() if r is None)

    def virtuals(self, kind: Kind) -> list[int]:
        return sorted(self._v2r[kind])

    def items(self, kind: Kind) -> list[tuple[int, int | None]]:
        return sorted(self._v2r[kind].items())

    def skeleton(self) -> "VirtualIdTable":
        """Same virtual side and counters, every real ID dropped."""
        t = VirtualIdTable()
        t.next_virtual = dict(self.next_virtual)
        for k in Kind:
            t._v2r[k] = {v: None for v in self._v2r[k]}
        return t

    def copy(self) -> "VirtualIdTable":
        t = VirtualIdTable()
        t.next_virtual = dict(self.next_virtual)
        for k in Kind:
            t._v2r[k] = dict(self._v2r[k])
            t._r2v[k] = dict(self._r2v[k])
        return t

    def to_bytes(self) -> bytes:
        out = [struct.pack("<B", len(Kind))]
        for k in Kind:
            items = self.items(k)
            out.append(struct.pack("<BII", k, self.next_virtual[k], len(items)))
            for v, r in items:
                out.append(struct.pack("<II", v, 0 if r is None else r))
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "VirtualIdTable":
        t = cls()
        (nkinds,) = struct.unpack_from("<B", data, 0)
        off = 1
        for _ in range(nkinds):
            k, nxt, n = struct.unpack_from("<BII", data, off)
            off += 9
            kind = Kind(k)
            t.next_virtual[kind] = nxt
            for _ in range(n):
                v, r = struct.unpack_from("<II", data, off)
                off += 8
                if r == 0:
                    t._v2r[kind][v] = None
                else:
                    t._v2r[kind][v] = r
                    t._r2v[kind][r] = v
        if off != len(data):
            raise ValueError("trailing bytes after id table")
        return t


class Opcode(IntEnum):
    CREATE_CONTEXT = 1
    GEN_RESOURCE = 2
    DELETE_RESOURCE = 3
    UPLOAD_DATA = 4
    SET_STATE = 5
    BIND = 6
    CLEAR = 7
    DRAW_TRIANGLE = 8
    READ_FRAMEBUFFER = 9
    READ_PAYLOAD = 10


class CallClass(IntEnum):
    RESOURCE_CREATE = 1
    RESOURCE_DESTROY = 2
    STATE_SET = 3
    DATA_UPLOAD = 4
    BIND = 5
    DRAW = 6
    CLEAR = 7
    PURE_READ = 8


_CLASS_OF = {
    Opcode.CREATE_CONTEXT: CallClass.RESOURCE_CREATE,
    Opcode.GEN_RESOURCE: CallClass.RESOURCE_CREATE,
    Opcode.DELETE_RESOURCE: CallClass.RESOURCE_DESTROY,
    Opcode.UPLOAD_DATA: CallClass.DATA_UPLOAD,
    Opcode.SET_STATE: CallClass.STATE_SET,
    Opcode.BIND: CallClass.BIND,
    Opcode.CLEAR: CallClass.CLEAR,
    Opcode.DRAW_TRIANGLE: CallClass.DRAW,
    Opcode.READ_FRAMEBUFFER: CallClass.PURE_READ,
    Opcode.READ_PAYLOAD: CallClass.PURE_READ,
}


def classify(opcode) -> CallClass:
    return _CLASS_OF[Opcode(opcode)]


@dataclass(frozen=True)
class CallRecord:
    seq: int
    thread: int
    ctx: int
    opcode: Opcode
    args: bytes
    fault: bool = False
    result_virtual: int | None = None

    @property
    def call_class(self) -> CallClass:
        return classify(self.opcode)

    def decoded(self) -> tuple:
        return decode_args(self.opcode, self.args)


# Argument codec. Resource IDs are always stored in virtual form.

_TAG_INT, _TAG_FLOAT = 0, 1


def _u8(v, what):
    if not isinstance(v, int) or not 0 <= v <= 0xFF:
        raise BadValue(f"{what} {v!r} does not fit the call log")
    return v


def _u32(v, what):
    if not isinstance(v, int) or isinstance(v, bool) or not 0 <= v <= U32_MAX:
        raise BadValue(f"{what} {v!r} is not a valid id")
    return v


def _encode_state_value(value) -> bytes:
    try:
        vals = tuple(value)
    except TypeError:
        raise BadValue(f"state value {value!r} is not a sequence") from None
    if len(vals) > 0xFF:
        raise BadValue("state value too long")
    out = [struct.pack("<B", len(vals))]
    for c in vals:
        if isinstance(c, bool):
            raise BadValue(f"state component {c!r} is not a number")
        if isinstance(c, int):
            if not -(1 << 63) <= c < (1 << 63):
                raise BadValue(f"state component {c!r} out of range")
            out.append(struct.pack("<Bq", _TAG_INT, c))
        elif isinstance(c, float):
            out.append(struct.pack("<Bd", _TAG_FLOAT, c))
        else:
            raise BadValue(f"state component {c!r} is not a number")
    return b"".join(out)


def _decode_state_value(data: bytes, off: int) -> tuple:
    (n,) = struct.unpack_from("<B", data, off)
    off += 1
    vals = []
    for _ in range(n):
        tag = data[off]
        if tag == _TAG_INT:
            vals.append(struct.unpack_from("<q", data, off + 1)[0])
        elif tag == _TAG_FLOAT:
            vals.append(struct.unpack_from("<d", data, off + 1)[0])
        else:
            raise ValueError(f"bad state value tag {tag}")
        off += 9
    if off != len(data):
        raise ValueError("trailing bytes in state value")
    return tuple(vals)


def encode_args(opcode: Opcode, args: tuple) -> bytes:
    """Serialize the virtual-form arguments of a state-changing call."""
    try:
        if opcode is Opcode.CREATE_CONTEXT:
            w, h = args
            return struct.pack("<II", _u32(w, "width"), _u32(h, "height"))
        if opcode is Opcode.GEN_RESOURCE:
            (kind,) = args
            return struct.pack("<B", _u8(int(kind), "kind"))
        if opcode in (Opcode.DELETE_RESOURCE, Opcode.BIND):
            sel, v = args
            return struct.pack("<BI", _u8(int(sel), "selector"), _u32(v, "id"))
        if opcode is Opcode.UPLOAD_DATA:
            kind, v, data = args
            if not isinstance(data, (bytes, bytearray, memoryview)):
                raise BadValue("upload payload must be bytes")
            return struct.pack("<BI", _u8(int(kind), "kind"), _u32(v, "id")) + bytes(data)
        if opcode is Opcode.SET_STATE:
            key, value = args
            return struct.pack("<B", _u8(int(key), "state key")) + _encode_state_value(value)
        if opcode is Opcode.CLEAR:
            () = args
            return b""
        if opcode is Opcode.DRAW_TRIANGLE:
            v0, v1, v2, color = args
            coords = [minigl.check_vertex(v) for v in (v0, v1, v2)]
            return struct.pack("<6i4B", *(c for p in coords for c in p), *minigl.check_color(color))
    except (TypeError, ValueError, struct.error) as exc:
        raise BadValue(f"cannot encode {opcode.name} args {args!r}: {exc}") from None
    raise ValueError(f"{opcode!r} is never logged")


def decode_args(opcode: Opcode, data: bytes) -> tuple:
    """Inverse of :func:`encode_args`; selectors come back as plain ints."""
    if opcode is Opcode.CREATE_CONTEXT:
        return struct.unpack("<II", data)
    if opcode is Opcode.GEN_RESOURCE:
        return struct.unpack("<B", data)
    if opcode in (Opcode.DELETE_RESOURCE, Opcode.BIND):
        return struct.unpack("<BI", data)
    if opcode is Opcode.UPLOAD_DATA:
        kind, v = struct.unpack_from("<BI", data, 0)
        return (kind, v, bytes(data[5:]))
    if opcode is Opcode.SET_STATE:
        (key,) = struct.unpack_from("<B", data, 0)
        return (key, _decode_state_value(data, 1))
    if opcode is Opcode.CLEAR:
        if data:
            raise ValueError("CLEAR takes no arguments")
        return ()
    if opcode is Opcode.DRAW_TRIANGLE:
        vals = struct.unpack("<6i4B", data)
        return ((vals[0], vals[1]), (vals[2], vals[3]), (vals[4], vals[5]), tuple(vals[6:]))
    raise ValueError(f"{opcode!r} is never logged")


def referenced_resource(opcode: Opcode, args: tuple) -> tuple[Kind, int] | None:
    """The (kind, virtual) a decoded call operates on, if any."""
    try:
        if opcode in (Opcode.DELETE_RESOURCE, Opcode.UPLOAD_DATA, Opcode.READ_PAYLOAD):
            return minigl.as_kind(args[0]), args[1]
        if opcode is Opcode.BIND:
            return BIND_KIND[minigl.as_bind_target(args[0])], args[1]
    except DriverError:
        pass
    return None


def forward(driver, table: VirtualIdTable, opcode: Opcode, ctx: int, args: tuple):
    """Run one call against ``driver``, translating virtual IDs through ``table``.

    Returns the driver's raw result (a real ID for creations). Table updates
    for creation and deletion are the caller's business.
    """
    if opcode is Opcode.CREATE_CONTEXT:
        return driver.create_context(*args)
    rctx = table.resolve(Kind.CONTEXT, ctx)
    if opcode is Opcode.GEN_RESOURCE:
        return driver.gen_resource(rctx, args[0])
    if opcode is Opcode.SET_STATE:
        return driver.set_state(rctx, *args)
    if opcode is Opcode.CLEAR:
        return driver.clear(rctx)
    if opcode is Opcode.DRAW_TRIANGLE:
        return driver.draw_triangle(rctx, *args)
    if opcode is Opcode.READ_FRAMEBUFFER:
        return driver.read_framebuffer(rctx)
    sel, v = args[0], args[1]
    kind = BIND_KIND[minigl.as_bind_target(sel)] if opcode is Opcode.BIND else minigl.as_kind(sel)
    real = table.resolve(kind, v)
    if opcode is Opcode.DELETE_RESOURCE:
        return driver.delete_resource(rctx, kind, real)
    if opcode is Opcode.UPLOAD_DATA:
        return driver.upload_data(rctx, kind, real, args[2])
    if opcode is Opcode.BIND:
        return driver.bind(rctx, sel, real)
    if opcode is Opcode.READ_PAYLOAD:
        return driver.read_payload(rctx, kind, real)
    raise ValueError(f"unhandled opcode {opcode!r}")


MAIN_THREAD = 1


class Interposer:
    """Intercepts calls for one driver, keeping the ID table and the call log.

    ``log`` only needs an ``append(record)`` method and a ``next_seq``
    attribute; :class:`glckpt.logstore.CallLog` provides both.
    """

    def __init__(self, driver, log, table: VirtualIdTable | None = None, on_new_thread=None):
        self.driver = driver
        self.log = log
        self.table = table if table is not None else VirtualIdTable()
        self.faults: list[tuple[CallRecord, DriverError]] = []
        self._lock = threading.RLock()
        self._threads: dict[int, int] = {threading.get_ident(): MAIN_THREAD}
        self._next_upper = MAIN_THREAD + 1
        self._on_new_thread = on_new_thread
        self.enabled = True

    # thread bookkeeping

    def attach_thread(self, upper: int | None = None) -> int:
        """Register the calling OS thread as an upper-half thread."""
        with self._lock:
            ident = threading.get_ident()
            if upper is None:
                upper = self._threads.get(ident) or self._next_upper
            self._threads[ident] = upper
            self._next_upper = max(self._next_upper, upper + 1)
            if self._on_new_thread is not None:
                self._on_new_thread(upper)
            return upper

    def current_thread(self) -> int:
        upper = self._threads.get(threading.get_ident())
        if upper is None:
            upper = self.attach_thread()
        return upper

    @property
    def lock(self):
        return self._lock

    # the interception point

    def intercept(self, opcode, ctx: int = 0, *args):
        opcode = Opcode(opcode)
        cls = _CLASS_OF[opcode]
        with self._lock:
            if not self.enabled or self.driver is None:
                raise SessionNotLive("session has no live driver")
            thread = self.current_thread()
            logged = cls is not CallClass.PURE_READ
            arg_bytes = encode_args(opcode, args) if logged else b""
            try:
                result = forward(self.driver, self.table, opcode, ctx, args)
            except DriverError as exc:
                if logged:
                    rec = CallRecord(self.log.next_seq, thread, ctx, opcode, arg_bytes, True, None)
                    self.log.append(rec)
                    self.faults.append((rec, exc))
                raise
            result_virtual = None
            if opcode is Opcode.CREATE_CONTEXT:
                result_virtual = result = self.table.issue(Kind.CONTEXT, result)
            elif opcode is Opcode.GEN_RESOURCE:
                result_virtual = result = self.table.issue(minigl.as_kind(args[0]), result)
            elif opcode is Opcode.DELETE_RESOURCE:
                self.table.retire(minigl.as_kind(args[0]), args[1])
            if logged:
                self.log.append(
                    CallRecord(self.log.next_seq, thread, ctx, opcode, arg_bytes, False, result_virtual)
                )
            return result

    # GL-style entry points, same signatures as DriverInstance

    def create_context(self, width: int = minigl.DEFAULT_FB_SIZE[0], height: int = minigl.DEFAULT_FB_SIZE[1]) -> int:
        return self.intercept(Opcode.CREATE_CONTEXT, 0, width, height)

    def gen_resource(self, ctx: int, kind) -> int:
        return self.intercept(Opcode.GEN_RESOURCE, ctx, kind)

    def delete_resource(self, ctx: int, kind, vid: int) -> None:
        self.intercept(Opcode.DELETE_RESOURCE, ctx, kind, vid)

    def upload_data(self, ctx: int, kind, vid: int, data: bytes) -> None:
        self.intercept(Opcode.UPLOAD_DATA, ctx, kind, vid, data)

    def read_payload(self, ctx: int, kind, vid: int) -> bytes:
        return self.intercept(Opcode.READ_PAYLOAD, ctx, kind, vid)

    def set_state(self, ctx: int, key, value) -> None:
        self.intercept(Opcode.SET_STATE, ctx, key, value)

    def bind(self, ctx: int, target, vid: int) -> None:
        self.intercept(Opcode.BIND, ctx, target, vid)

    def clear(self, ctx: int) -> None:
        self.intercept(Opcode.CLEAR, ctx)

    def draw_triangle(self, ctx: int, v0, v1, v2, color) -> None:
        self.intercept(Opcode.DRAW_TRIANGLE, ctx, v0, v1, v2, color)

    def read_framebuffer(self, ctx: int) -> bytes:
        return self.intercept(Opcode.READ_FRAMEBUFFER, ctx)

    def fb_hash(self, ctx: int) -> int:
        return fnv1a64(self.read_framebuffer(ctx))

    def snapshot_framebuffer(self, ctx: int):
        with self._lock:
            return self.driver.snapshot_framebuffer(self.table.resolve(Kind.CONTEXT, ctx))

    def virtual_view(self) -> dict:
        return virtual_view(self.driver, self.table)


def virtual_view(driver, table: VirtualIdTable) -> dict:
    """Driver state re-expressed in virtual IDs, comparable across seeds."""
    view = {}
    for vctx, rctx in table.items(Kind.CONTEXT):
        cs = driver.context_state(rctx)
        resources = {}
        for kind in minigl.RESOURCE_KINDS:
            resources[kind] = {
                table.reverse(kind, rid): obj.payload for rid, obj in cs.resources[kind].items()
            }
        bindings = {
            t: (0 if r is None else table.reverse(BIND_KIND[t], r)) for t, r in cs.bindings.items()
        }
        view[vctx] = {
            "size": (cs.width, cs.height),
            "state": dict(cs.state_slots),
            "bindings": bindings,
            "resources": resources,
            "framebuffer": cs.framebuffer.tobytes(),
        }
    return view

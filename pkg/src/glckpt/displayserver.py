"""Mock display server: windows, framebuffer presentation, and the
disconnect-before-checkpoint / reconnect-on-restart lifecycle."""

from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass, field
from enum import Enum

from glckpt.errors import DimensionMismatch, DisplayUnavailable, NotConnected, UnknownWindow
from glckpt.fnv import fnv1a64

# Names with this prefix are refused; fault-injection tests rely on it.
REFUSE_PREFIX = "refuse:"

_connection_serial = itertools.count(1)


class ConnState(Enum):
    CONNECTED = "connected"
    DISCONNECTED = "disconnected"


@dataclass
class WindowMeta:
    window: int
    width: int
    height: int
    title: str
    last_presented_hash: int | None = None


@dataclass
class DisplayConnection:
    display_name: str
    state: ConnState = ConnState.CONNECTED
    windows: dict[int, WindowMeta] = field(default_factory=dict)
    id_base: int = 0
    _next: int = 1

    def _require_connected(self):
        if self.state is not ConnState.CONNECTED:
            raise NotConnected(f"connection to {self.display_name} is down")


def connect(display_name: str) -> DisplayConnection:
    if not display_name or display_name.startswith(REFUSE_PREFIX):
        raise DisplayUnavailable(f"cannot open display {display_name!r}")
    # X-style resource id base: each client gets its own id range.
    return DisplayConnection(display_name, id_base=next(_connection_serial) << 20)


def create_window(conn: DisplayConnection, width: int, height: int, title: str = "") -> int:
    conn._require_connected()
    if width <= 0 or height <= 0:
        raise ValueError(f"bad window size {width}x{height}")
    wid = conn.id_base | conn._next
    conn._next += 1
    conn.windows[wid] = WindowMeta(wid, width, height, title)
    return wid


def present(conn: DisplayConnection, window: int, framebuffer) -> int:
    """Show ``framebuffer`` (anything with width, height and pixel bytes)."""
    conn._require_connected()
    try:
        meta = conn.windows[window]
    except KeyError:
        raise UnknownWindow(f"no window {window:#x}") from None
    if (framebuffer.width, framebuffer.height) != (meta.width, meta.height):
        raise DimensionMismatch(
            f"{framebuffer.width}x{framebuffer.height} frame for "
            f"{meta.width}x{meta.height} window"
        )
    meta.last_presented_hash = fnv1a64(framebuffer.tobytes())
    return meta.last_presented_hash


def disconnect_for_checkpoint(conn: DisplayConnection) -> list[WindowMeta]:
    conn._require_connected()
    conn.state = ConnState.DISCONNECTED
    return [
        WindowMeta(m.window, m.width, m.height, m.title, m.last_presented_hash)
        for m in conn.windows.values()
    ]


def reconnect_from_metadata(
    display_name: str, metas: list[WindowMeta]
) -> tuple[DisplayConnection, dict[int, int]]:
    """Open a new connection and recreate ``metas``; returns it with an old→new window map."""
    conn = connect(display_name)
    mapping = {}
    for m in metas:
        mapping[m.window] = create_window(conn, m.width, m.height, m.title)
    return conn, mapping


def encode_windows(metas: list[WindowMeta]) -> bytes:
    out = [struct.pack("<I", len(metas))]
    for m in metas:
        title = m.title.encode("utf-8")
        out.append(struct.pack("<IIIH", m.window, m.width, m.height, len(title)))
        out.append(title)
        h = m.last_presented_hash
        out.append(struct.pack("<BQ", h is not None, h or 0))
    return b"".join(out)


def decode_windows(data: bytes) -> list[WindowMeta]:
    (n,) = struct.unpack_from("<I", data, 0)
    off = 4
    metas = []
    for _ in range(n):
        wid, w, h, tlen = struct.unpack_from("<IIIH", data, off)
        off += 14
        title = bytes(data[off:off + tlen]).decode("utf-8")
        if len(title.encode("utf-8")) != tlen:
            raise ValueError("window title truncated")
        off += tlen
        has, hsh = struct.unpack_from("<BQ", data, off)
        off += 9
        if has not in (0, 1):
            raise ValueError("bad has_hash flag")
        metas.append(WindowMeta(wid, w, h, title, hsh if has else None))
    if off != len(data):
        raise ValueError("trailing bytes after windows section")
    return metas

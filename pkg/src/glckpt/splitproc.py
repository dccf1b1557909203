"""Split-process model and the checkpoint/restore protocol.

A :class:`Session` is one modeled process. Its memory regions are tagged
UPPER (application) or LOWER (driver libraries). A checkpoint keeps only the
upper half plus the call log, ID table, window metadata and thread ids;
restore launches a fresh lower half and replays the log into it.
"""

from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass, field
from enum import Enum, IntEnum

from glckpt import displayserver, logstore, minigl
from glckpt.displayserver import DisplayConnection, WindowMeta
from glckpt.errors import (
    AlreadyPaired,
    DisplayUnavailable,
    DuplicateLabel,
    GLCkptError,
    ImageCorrupt,
    ReplayDivergence,
    SessionBusy,
    SessionNotLive,
)
from glckpt.fnv import fnv1a64
from glckpt.interpose import MAIN_THREAD, Interposer, VirtualIdTable
from glckpt.logstore import CallLog
from glckpt.minigl import Kind

IMAGE_MAGIC = b"OGLC"
IMAGE_VERSION = 1
_IMG_HEADER = struct.Struct("<4sII")
_SECTION = struct.Struct("<HQQ")
_TRAILER = struct.Struct("<Q")


class Tag(Enum):
    UPPER = "upper"
    LOWER = "lower"


class Section(IntEnum):
    REGIONS = 1
    CALLLOG = 2
    VIDTABLE = 3
    WINDOWS = 4
    THREADS = 5


@dataclass
class Region:
    id: int
    tag: Tag
    label: str
    bytes: bytes


class AddressSpaceModel:
    def __init__(self):
        self.regions: dict[int, Region] = {}
        self.threads: dict[int, int | None] = {}
        self._region_ids = itertools.count(1)
        self._lower_slots = itertools.count(1)

    def __repr__(self):
        return f"<AddressSpaceModel {len(self.regions)} regions, {len(self.threads)} threads>"

    def by_label(self, label: str) -> Region:
        for r in self.regions.values():
            if r.label == label:
                return r
        raise KeyError(label)

    def labels(self, tag: Tag | None = None) -> list[str]:
        return [r.label for r in self.regions.values() if tag is None or r.tag is tag]

    def upper_regions(self) -> list[Region]:
        return [r for r in self.regions.values() if r.tag is Tag.UPPER]

    def drop_lower(self) -> None:
        self.regions = {i: r for i, r in self.regions.items() if r.tag is Tag.UPPER}


def tag_region(space: AddressSpaceModel, label: str, data: bytes, tag: Tag) -> int:
    if any(r.label == label for r in space.regions.values()):
        raise DuplicateLabel(f"region label {label!r} already in use")
    if not data:
        raise ValueError("regions must be non-empty")
    if len(label.encode("utf-8")) > 0xFFFF:
        raise ValueError("region label too long")
    rid = next(space._region_ids)
    space.regions[rid] = Region(rid, Tag(tag), label, bytes(data))
    return rid


def pair_thread(space: AddressSpaceModel, upper: int) -> int:
    if space.threads.get(upper) is not None:
        raise AlreadyPaired(f"upper thread {upper} already paired")
    lower = next(space._lower_slots)
    space.threads[upper] = lower
    return lower


def launch_lower_half(space: AddressSpaceModel, seed: int) -> minigl.DriverInstance:
    """The trivial lower-half launcher: a fresh driver and its library regions."""
    driver = minigl.create_driver(seed)
    tag_region(space, "libminigl.so", b"\x7fELF minigl " + seed.to_bytes(8, "little"), Tag.LOWER)
    tag_region(space, "minigl.heap", bytes(4096), Tag.LOWER)
    tag_region(space, "libdisplay.so", b"\x7fELF display client", Tag.LOWER)
    return driver


# checkpoint image


@dataclass
class CheckpointImage:
    epoch: int
    upper_regions: list[tuple[str, bytes]]
    call_log: CallLog
    vid_table: VirtualIdTable
    windows: list[WindowMeta] = field(default_factory=list)
    upper_thread_ids: list[int] = field(default_factory=list)

    def region_labels(self) -> list[str]:
        return [label for label, _ in self.upper_regions]

    def to_bytes(self) -> bytes:
        sections = [
            (Section.REGIONS, _encode_regions(self.upper_regions)),
            (Section.CALLLOG, logstore.serialize(self.call_log)),
            (Section.VIDTABLE, self.vid_table.to_bytes()),
            (Section.WINDOWS, displayserver.encode_windows(self.windows)),
            (Section.THREADS, _encode_threads(self.upper_thread_ids)),
        ]
        head = _IMG_HEADER.pack(IMAGE_MAGIC, IMAGE_VERSION, self.epoch)
        table_len = 4 + _SECTION.size * len(sections)
        offset = len(head) + table_len
        entries = [struct.pack("<I", len(sections))]
        for sid, body in sections:
            entries.append(_SECTION.pack(sid, offset, len(body)))
            offset += len(body)
        out = head + b"".join(entries) + b"".join(body for _, body in sections)
        return out + _TRAILER.pack(fnv1a64(out))

    @classmethod
    def from_bytes(cls, data: bytes) -> "CheckpointImage":
        data = bytes(data)
        if len(data) < _IMG_HEADER.size + 4 + _TRAILER.size:
            raise ImageCorrupt(f"image truncated ({len(data)} bytes)")
        (stored,) = _TRAILER.unpack_from(data, len(data) - _TRAILER.size)
        payload = data[:-_TRAILER.size]
        if fnv1a64(payload) != stored:
            raise ImageCorrupt("image checksum mismatch")
        magic, version, epoch = _IMG_HEADER.unpack_from(payload, 0)
        if magic != IMAGE_MAGIC:
            raise ImageCorrupt(f"bad image magic {magic!r}")
        if version != IMAGE_VERSION:
            raise ImageCorrupt(f"unsupported image version {version}")
        try:
            sections = _read_section_table(payload)
            return cls(
                epoch=epoch,
                upper_regions=_decode_regions(sections[Section.REGIONS]),
                call_log=logstore.deserialize(sections[Section.CALLLOG], epoch),
                vid_table=VirtualIdTable.from_bytes(sections[Section.VIDTABLE]),
                windows=displayserver.decode_windows(sections[Section.WINDOWS]),
                upper_thread_ids=_decode_threads(sections[Section.THREADS]),
            )
        except ImageCorrupt:
            raise
        except (GLCkptError, ValueError, KeyError, struct.error, UnicodeDecodeError) as exc:
            raise ImageCorrupt(f"malformed image: {exc}") from exc


def _read_section_table(payload: bytes) -> dict[Section, bytes]:
    off = _IMG_HEADER.size
    (count,) = struct.unpack_from("<I", payload, off)
    off += 4
    sections = {}
    for _ in range(count):
        sid, start, length = _SECTION.unpack_from(payload, off)
        off += _SECTION.size
        if start + length > len(payload) or start < off:
            raise ImageCorrupt(f"section {sid} out of bounds")
        sections[Section(sid)] = payload[start:start + length]
    missing = set(Section) - set(sections)
    if missing:
        raise ImageCorrupt(f"missing sections {sorted(s.name for s in missing)}")
    return sections


def _encode_regions(regions) -> bytes:
    out = [struct.pack("<I", len(regions))]
    for label, data in regions:
        raw = label.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw + struct.pack("<Q", len(data)) + data)
    return b"".join(out)


def _decode_regions(data: bytes) -> list[tuple[str, bytes]]:
    (n,) = struct.unpack_from("<I", data, 0)
    off = 4
    regions = []
    for _ in range(n):
        (llen,) = struct.unpack_from("<H", data, off)
        off += 2
        label = data[off:off + llen].decode("utf-8")
        off += llen
        (dlen,) = struct.unpack_from("<Q", data, off)
        off += 8
        if off + dlen > len(data):
            raise ValueError("region data truncated")
        regions.append((label, bytes(data[off:off + dlen])))
        off += dlen
    if off != len(data):
        raise ValueError("trailing bytes after regions")
    return regions


def _encode_threads(ids) -> bytes:
    return struct.pack(f"<I{len(ids)}I", len(ids), *ids)


def _decode_threads(data: bytes) -> list[int]:
    (n,) = struct.unpack_from("<I", data, 0)
    if len(data) != 4 + 4 * n:
        raise ValueError("threads section length mismatch")
    return list(struct.unpack_from(f"<{n}I", data, 4))


def scan_region_labels(image_bytes: bytes) -> list[str]:
    """Region labels present in a serialized image, read straight off the bytes."""
    sections = _read_section_table(bytes(image_bytes[:-_TRAILER.size]))
    return [label for label, _ in _decode_regions(sections[Section.REGIONS])]


# the session


class SessionState(Enum):
    LIVE = "live"
    FROZEN = "frozen"
    DESTROYED = "destroyed"


class Session:
    """One modeled split process: upper-half app memory plus a driver lower half."""

    def __init__(self, driver, space, log, table, conn, display_name, epoch=0):
        self.space = space
        self.conn: DisplayConnection | None = conn
        self.display_name = display_name
        self.epoch = epoch
        self.state = SessionState.LIVE
        self.gl = Interposer(driver, log, table, on_new_thread=self._pair)
        if MAIN_THREAD not in space.threads:
            pair_thread(space, MAIN_THREAD)

    @classmethod
    def launch(cls, seed: int = 0, display: str | None = ":0") -> "Session":
        space = AddressSpaceModel()
        driver = launch_lower_half(space, seed)
        conn = displayserver.connect(display) if display else None
        return cls(driver, space, CallLog(), VirtualIdTable(), conn, display)

    def __repr__(self):
        return f"<Session {self.state.value} epoch={self.epoch} log={len(self.log)}>"

    def _pair(self, upper: int) -> None:
        if self.space.threads.get(upper) is None:
            pair_thread(self.space, upper)

    @property
    def driver(self):
        return self.gl.driver

    @property
    def log(self) -> CallLog:
        return self.gl.log

    @property
    def table(self) -> VirtualIdTable:
        return self.gl.table

    @property
    def live(self) -> bool:
        return self.state is SessionState.LIVE

    def _require_live(self):
        if not self.live:
            raise SessionNotLive(f"session is {self.state.value}")

    # upper-half memory

    def tag_region(self, label: str, data: bytes, tag: Tag = Tag.UPPER) -> int:
        return tag_region(self.space, label, data, tag)

    def write_region(self, label: str, data: bytes) -> None:
        try:
            region = self.space.by_label(label)
        except KeyError:
            self.tag_region(label, data, Tag.UPPER)
            return
        if not data:
            raise ValueError("regions must be non-empty")
        region.bytes = bytes(data)

    def read_region(self, label: str) -> bytes:
        return self.space.by_label(label).bytes

    # windows

    def _require_display(self) -> DisplayConnection:
        self._require_live()
        if self.conn is None:
            raise DisplayUnavailable("session is headless")
        return self.conn

    def create_window(self, width: int, height: int, title: str = "") -> int:
        conn = self._require_display()
        real = displayserver.create_window(conn, width, height, title)
        return self.table.issue(Kind.WINDOW, real)

    def present(self, window: int, ctx: int) -> int:
        conn = self._require_display()
        frame = self.gl.snapshot_framebuffer(ctx)
        return displayserver.present(conn, self.table.resolve(Kind.WINDOW, window), frame)

    def window_meta(self, window: int) -> WindowMeta:
        return self._require_display().windows[self.table.resolve(Kind.WINDOW, window)]

    # convenience

    def fb_hash(self, ctx: int) -> int:
        return self.gl.fb_hash(ctx)

    def virtual_view(self) -> dict:
        self._require_live()
        return self.gl.virtual_view()

    def destroy(self) -> None:
        """Tear the whole modeled process down (a crash, from the app's view)."""
        if self.gl.driver is not None:
            self.gl.driver.destroy()
        self.gl.driver = None
        self.gl.enabled = False
        self.conn = None
        self.space.regions.clear()
        self.space.threads.clear()
        self.state = SessionState.DESTROYED


def checkpoint(session: Session, prune: bool = False) -> CheckpointImage:
    """Freeze ``session`` into a self-contained image holding only the upper half."""
    lock = session.gl.lock
    if not lock.acquire(blocking=False):
        raise SessionBusy("checkpoint raced with an in-flight call")
    try:
        session._require_live()
        table = session.table.copy()
        windows = []
        if session.conn is not None:
            for meta in displayserver.disconnect_for_checkpoint(session.conn):
                meta.window = table.reverse(Kind.WINDOW, meta.window)
                windows.append(meta)
        log = session.log
        if prune:
            log, _ = logstore.prune(log)
        image = CheckpointImage(
            epoch=session.epoch,
            upper_regions=[(r.label, r.bytes) for r in session.space.upper_regions()],
            call_log=CallLog(list(log.records), session.epoch),
            vid_table=table,
            windows=windows,
            upper_thread_ids=sorted(session.space.threads),
        )
        # drop everything belonging to the lower half
        session.space.drop_lower()
        session.gl.driver.destroy()
        session.gl.driver = None
        session.gl.enabled = False
        session.conn = None
        session.state = SessionState.FROZEN
        return image
    finally:
        lock.release()


def restore(image: CheckpointImage | bytes, new_seed: int = 0, display_name: str | None = ":0") -> Session:
    if not isinstance(image, CheckpointImage):
        image = CheckpointImage.from_bytes(image)

    # 1. trivial lower half
    space = AddressSpaceModel()
    driver = launch_lower_half(space, new_seed)

    # 2. upper-half memory, byte for byte
    for label, data in image.upper_regions:
        tag_region(space, label, data, Tag.UPPER)

    # 3. display connection and windows
    table = image.vid_table.skeleton()
    conn = None
    if display_name:
        conn, window_map = displayserver.reconnect_from_metadata(display_name, image.windows)
        for virtual, real in window_map.items():
            table.rebind(Kind.WINDOW, virtual, real)
    elif image.windows:
        raise DisplayUnavailable("image has windows but no display was given")

    # 4-5. virtual side is in place; replay binds fresh real ids under it
    log = CallLog(list(image.call_log.records), image.epoch + 1)
    logstore.replay(log, driver, table)
    unbound = {k.name: table.pending(k) for k in Kind if table.pending(k)}
    if unbound:
        raise ReplayDivergence(f"virtual ids not recreated by replay: {unbound}")

    session = Session(driver, space, log, table, conn, display_name, epoch=image.epoch + 1)
    # 6. thread pairing
    for upper in image.upper_thread_ids:
        session._pair(upper)
    if image.upper_thread_ids:
        session.gl._next_upper = max(image.upper_thread_ids) + 1
    return session

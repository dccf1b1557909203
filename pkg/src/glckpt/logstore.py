"""The call log: append, binary format, replay into a fresh driver, pruning."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from glckpt import minigl
from glckpt.errors import (
    BadMagic,
    BadVersion,
    ChecksumMismatch,
    GLCkptError,
    MalformedRecord,
    ReplayDivergence,
    SequenceGap,
    TruncatedLog,
)
from glckpt.fnv import fnv1a64
from glckpt.interpose import (
    CallClass,
    CallRecord,
    Opcode,
    VirtualIdTable,
    classify,
    decode_args,
    forward,
    referenced_resource,
)
from glckpt.minigl import Kind, StateKey

LOG_MAGIC = b"OGLL"
LOG_VERSION = 1
_HEADER = struct.Struct("<4sIQ")
_RECORD = struct.Struct("<QIIHBBI")
_TRAILER = struct.Struct("<Q")

# Creation records carry their result virtual as a trailing u32 of the arg bytes.
_CREATES = (Opcode.CREATE_CONTEXT, Opcode.GEN_RESOURCE)


@dataclass
class CallLog:
    records: list[CallRecord] = field(default_factory=list)
    epoch: int = field(default=0, compare=False)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def next_seq(self) -> int:
        return self.records[-1].seq + 1 if self.records else 1

    def append(self, record: CallRecord) -> None:
        expected = self.next_seq
        if record.seq != expected:
            raise SequenceGap(f"expected seq {expected}, got {record.seq}")
        self.records.append(record)

    def live_records(self):
        return (r for r in self.records if not r.fault)


def append(log: CallLog, record: CallRecord) -> None:
    log.append(record)


# binary format


def _encode_record(rec: CallRecord) -> bytes:
    args = rec.args
    if rec.opcode in _CREATES:
        args = args + struct.pack("<I", rec.result_virtual or 0)
    head = _RECORD.pack(
        rec.seq, rec.thread, rec.ctx, rec.opcode, classify(rec.opcode), int(rec.fault), len(args)
    )
    return head + args


def serialize(log: CallLog) -> bytes:
    body = b"".join(_encode_record(r) for r in log.records)
    return (
        _HEADER.pack(LOG_MAGIC, LOG_VERSION, len(log.records))
        + body
        + _TRAILER.pack(fnv1a64(body))
    )


def _decode_record(body: bytes, off: int) -> tuple[CallRecord, int]:
    if off + _RECORD.size > len(body):
        raise TruncatedLog("record header runs past end of log")
    seq, thread, ctx, op, cls, fault, arg_len = _RECORD.unpack_from(body, off)
    off += _RECORD.size
    if off + arg_len > len(body):
        raise TruncatedLog("record arguments run past end of log")
    args = bytes(body[off:off + arg_len])
    off += arg_len
    try:
        opcode = Opcode(op)
    except ValueError:
        raise MalformedRecord(f"unknown opcode {op}") from None
    if classify(opcode) is CallClass.PURE_READ or cls != classify(opcode):
        raise MalformedRecord(f"record {seq}: class {cls} invalid for {opcode.name}")
    if fault not in (0, 1):
        raise MalformedRecord(f"record {seq}: bad fault flag {fault}")
    result_virtual = None
    if opcode in _CREATES:
        if len(args) < 4:
            raise MalformedRecord(f"record {seq}: creation without result id")
        (rv,) = struct.unpack("<I", args[-4:])
        args = args[:-4]
        result_virtual = rv or None
    if not fault:
        try:
            decode_args(opcode, args)
        except (ValueError, struct.error) as exc:
            raise MalformedRecord(f"record {seq}: {exc}") from None
    return CallRecord(seq, thread, ctx, opcode, args, bool(fault), result_virtual), off


def deserialize(data: bytes, epoch: int = 0) -> CallLog:
    data = memoryview(data)
    if len(data) < _HEADER.size + _TRAILER.size:
        if len(data) >= 4 and bytes(data[:4]) != LOG_MAGIC:
            raise BadMagic("not a call log")
        raise TruncatedLog(f"log is only {len(data)} bytes")
    magic, version, count = _HEADER.unpack_from(data, 0)
    if magic != LOG_MAGIC:
        raise BadMagic(f"bad log magic {magic!r}")
    if version != LOG_VERSION:
        raise BadVersion(f"unsupported log version {version}")
    body = data[_HEADER.size:len(data) - _TRAILER.size]
    (stored,) = _TRAILER.unpack_from(data, len(data) - _TRAILER.size)
    if fnv1a64(body) != stored:
        raise ChecksumMismatch("call log checksum mismatch")
    records = []
    off = 0
    for _ in range(count):
        rec, off = _decode_record(body, off)
        if records and rec.seq <= records[-1].seq:
            raise MalformedRecord(f"seq {rec.seq} does not increase")
        records.append(rec)
    if off != len(body):
        raise TruncatedLog(f"{len(body) - off} unparsed bytes after {count} records")
    return CallLog(records, epoch)


# replay


def replay(log: CallLog, driver, table: VirtualIdTable) -> None:
    """Re-execute every non-fault record against ``driver`` in seq order.

    Creation records bind their original virtual ID to whatever real ID the
    fresh driver hands out; deletions retire the virtual.
    """
    for rec in log.records:
        if rec.fault:
            continue
        args = decode_args(rec.opcode, rec.args)
        try:
            real = forward(driver, table, rec.opcode, rec.ctx, args)
            if rec.opcode is Opcode.CREATE_CONTEXT:
                table.install(Kind.CONTEXT, rec.result_virtual, real)
            elif rec.opcode is Opcode.GEN_RESOURCE:
                table.install(minigl.as_kind(args[0]), rec.result_virtual, real)
            elif rec.opcode is Opcode.DELETE_RESOURCE:
                table.retire(minigl.as_kind(args[0]), args[1])
        except GLCkptError as exc:
            raise ReplayDivergence(
                f"record {rec.seq} ({rec.opcode.name}) failed on replay: {exc}"
            ) from exc


# pruning


@dataclass
class PruneReport:
    removed_create_destroy_pairs: int = 0
    removed_shadowed_state_sets: int = 0
    removed_predraw_calls: int = 0
    before_len: int = 0
    after_len: int = 0

    @property
    def removed(self) -> int:
        return (
            self.removed_create_destroy_pairs
            + self.removed_shadowed_state_sets
            + self.removed_predraw_calls
        )


def _dead_lifecycles(recs: list[CallRecord]) -> set[int]:
    """Indices of resources created and destroyed with only uploads in between."""
    touching: dict[tuple[Kind, int], list[int]] = {}
    created: dict[tuple[Kind, int], int] = {}
    for i, rec in enumerate(recs):
        if rec.opcode is Opcode.GEN_RESOURCE:
            if not rec.fault and rec.result_virtual:
                created[(Kind(rec.decoded()[0]), rec.result_virtual)] = i
            continue
        if rec.opcode not in (Opcode.DELETE_RESOURCE, Opcode.UPLOAD_DATA, Opcode.BIND):
            continue
        try:
            ref = referenced_resource(rec.opcode, rec.decoded())
        except (ValueError, struct.error):
            ref = None
        if ref is not None:
            touching.setdefault(ref, []).append(i)

    dead = set()
    for key, ci in created.items():
        idx = touching.get(key, [])
        live = [i for i in idx if not recs[i].fault]
        deletes = [i for i in live if recs[i].opcode is Opcode.DELETE_RESOURCE]
        if len(deletes) != 1:
            continue
        if any(recs[i].opcode is not Opcode.UPLOAD_DATA for i in live if i != deletes[0]):
            continue
        dead.add(ci)
        dead.update(idx)
    return dead


def _shadowed_state_sets(recs: list[CallRecord]) -> set[int]:
    """StateSets overwritten for the same (ctx, key) before any Draw/Clear on ctx."""
    unobserved: dict[tuple[int, int], int] = {}
    dead = set()
    for i, rec in enumerate(recs):
        if rec.fault:
            continue
        if rec.opcode is Opcode.SET_STATE:
            key = (rec.ctx, rec.decoded()[0])
            prev = unobserved.get(key)
            if prev is not None:
                dead.add(prev)
            unobserved[key] = i
        elif rec.opcode in (Opcode.DRAW_TRIANGLE, Opcode.CLEAR):
            for k in [k for k in unobserved if k[0] == rec.ctx]:
                del unobserved[k]
    return dead


def _overdrawn(recs: list[CallRecord]) -> set[int]:
    """Draws and Clears preceding the last full-framebuffer Clear of their context."""
    size: dict[int, tuple[int, int]] = {}
    viewport: dict[int, tuple] = {}
    last_full_clear: dict[int, int] = {}
    for i, rec in enumerate(recs):
        if rec.fault:
            continue
        if rec.opcode is Opcode.CREATE_CONTEXT and rec.result_virtual:
            w, h = rec.decoded()
            size[rec.result_virtual] = (w, h)
            viewport[rec.result_virtual] = (0, 0, w, h)
        elif rec.opcode is Opcode.SET_STATE:
            key, value = rec.decoded()
            if key == StateKey.VIEWPORT:
                viewport[rec.ctx] = value
        elif rec.opcode is Opcode.CLEAR and rec.ctx in size:
            w, h = size[rec.ctx]
            x, y, vw, vh = viewport[rec.ctx]
            if x <= 0 and y <= 0 and x + vw >= w and y + vh >= h:
                last_full_clear[rec.ctx] = i
    dead = set()
    for i, rec in enumerate(recs):
        if rec.fault or rec.opcode not in (Opcode.DRAW_TRIANGLE, Opcode.CLEAR):
            continue
        cut = last_full_clear.get(rec.ctx)
        if cut is not None and i < cut:
            dead.add(i)
    return dead


def prune(log: CallLog) -> tuple[CallLog, PruneReport]:
    """Drop records whose effects cannot reach the final driver state.

    Rules run in order until a full pass removes nothing: dead resource
    lifecycles, shadowed state sets, then draws and clears wiped out by a
    later full-framebuffer clear. The result is renumbered from seq 1.
    """
    recs = list(log.records)
    report = PruneReport(before_len=len(recs))
    while True:
        changed = False
        for rule, attr in (
            (_dead_lifecycles, "removed_create_destroy_pairs"),
            (_shadowed_state_sets, "removed_shadowed_state_sets"),
            (_overdrawn, "removed_predraw_calls"),
        ):
            dead = rule(recs)
            if dead:
                recs = [r for i, r in enumerate(recs) if i not in dead]
                setattr(report, attr, getattr(report, attr) + len(dead))
                changed = True
        if not changed:
            break
    renumbered = [
        CallRecord(n, r.thread, r.ctx, r.opcode, r.args, r.fault, r.result_virtual)
        for n, r in enumerate(recs, start=1)
    ]
    report.after_len = len(renumbered)
    return CallLog(renumbered, log.epoch), report

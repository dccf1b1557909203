import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glckpt import logstore, minigl
from glckpt.errors import (
    BadMagic,
    BadVersion,
    ChecksumMismatch,
    LogFormatError,
    MalformedRecord,
    ReplayDivergence,
    SequenceGap,
    TruncatedLog,
)
from glckpt.fnv import fnv1a64
from glckpt.harness.scenarios import replay_state
from glckpt.harness.workloads import Workload, run_workload
from glckpt.interpose import CallRecord, Interposer, Opcode, VirtualIdTable
from glckpt.logstore import CallLog, deserialize, prune, replay, serialize
from glckpt.minigl import Kind, StateKey


def recorded(fn, seed=0):
    """Run ``fn(gl, ctx)`` through an interposer and return the log."""
    log = CallLog()
    gl = Interposer(minigl.create_driver(seed), log)
    ctx = gl.create_context()
    fn(gl, ctx)
    return log, gl


def random_log(app_seed, calls, seed=0):
    log = CallLog()
    run_workload(Workload("random", calls, app_seed), Interposer(minigl.create_driver(seed), log))
    return log


def rec(seq, opcode=Opcode.CLEAR, args=b""):
    return CallRecord(seq, 1, 1, opcode, args)


class TestAppend:
    def test_first_record(self):
        log = CallLog()
        logstore.append(log, rec(1))
        assert len(log) == 1

    def test_gap(self):
        log = CallLog()
        log.append(rec(1))
        with pytest.raises(SequenceGap):
            log.append(rec(3))
        with pytest.raises(SequenceGap):
            CallLog().append(rec(0))

    def test_many(self):
        log = CallLog()
        for i in range(1, 10_001):
            log.append(rec(i))
        assert len(log) == 10_000 and log.next_seq == 10_001


class TestSerialize:
    def test_empty_layout(self):
        data = serialize(CallLog())
        assert data == b"OGLL" + struct.pack("<IQQ", 1, 0, 0xCBF29CE484222325)
        assert deserialize(data) == CallLog()

    def test_record_layout(self):
        log, _ = recorded(lambda gl, ctx: gl.clear(ctx))
        data = serialize(log)
        # create_context: 8 arg bytes + result virtual, then an empty clear
        first = struct.pack("<QIIHBBI", 1, 1, 0, 1, 1, 0, 12) + struct.pack("<III", 64, 64, 1)
        second = struct.pack("<QIIHBBI", 2, 1, 1, 7, 7, 0, 0)
        body = first + second
        assert data == b"OGLL" + struct.pack("<IQ", 1, 2) + body + struct.pack("<Q", fnv1a64(body))

    def test_large_round_trip(self):
        log = random_log(11, 10_000)
        data = serialize(log)
        back = deserialize(data)
        assert back == log
        assert serialize(back) == data

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**30), st.integers(0, 400))
    def test_round_trip(self, app_seed, calls):
        log = random_log(app_seed, calls)
        assert deserialize(serialize(log)) == log

    def test_flip_payload_byte(self):
        log, _ = recorded(lambda gl, ctx: gl.upload_data(ctx, Kind.BUFFER, gl.gen_resource(ctx, Kind.BUFFER), b"hello"))
        data = bytearray(serialize(log))
        data[-12] ^= 0x01
        with pytest.raises(ChecksumMismatch):
            deserialize(bytes(data))

    def test_header_errors(self):
        data = serialize(random_log(1, 20))
        with pytest.raises(BadMagic):
            deserialize(b"XGLL" + data[4:])
        with pytest.raises(BadVersion):
            deserialize(data[:4] + struct.pack("<I", 2) + data[8:])
        with pytest.raises(TruncatedLog):
            deserialize(data[:10])
        with pytest.raises(TruncatedLog):
            deserialize(data[:8] + struct.pack("<Q", 999) + data[16:])

    def test_malformed_record_with_valid_checksum(self):
        body = struct.pack("<QIIHBBI", 1, 1, 1, 9, 8, 0, 0)  # a pure read
        data = b"OGLL" + struct.pack("<IQ", 1, 1) + body + struct.pack("<Q", fnv1a64(body))
        with pytest.raises(MalformedRecord):
            deserialize(data)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**30), st.data())
    def test_any_single_byte_corruption_detected(self, app_seed, data):
        raw = serialize(random_log(app_seed, 30))
        i = data.draw(st.integers(0, len(raw) - 1))
        delta = data.draw(st.integers(1, 255))
        bad = bytearray(raw)
        bad[i] ^= delta
        with pytest.raises(LogFormatError):
            deserialize(bytes(bad))


class TestReplay:
    def test_empty_log(self):
        d = minigl.create_driver(5)
        replay(CallLog(), d, VirtualIdTable())
        assert d.read_framebuffer(d.create_context()) == bytes([0, 0, 0, 255]) * 4096

    def test_cross_seed(self):
        log = CallLog()
        app, live = run_workload(Workload("gears", 20, 3), Interposer(minigl.create_driver(0), log))
        d = minigl.create_driver(7)
        t = VirtualIdTable()
        replay(log, d, t)
        assert fnv1a64(d.read_framebuffer(t.resolve(Kind.CONTEXT, app.ctx))) == live

    def test_faults_are_skipped(self):
        def body(gl, ctx):
            with pytest.raises(minigl.BadValue):
                gl.set_state(ctx, StateKey.CLEAR_COLOR, (9, 9, 9, 9))
            gl.set_state(ctx, StateKey.CLEAR_COLOR, (0, 1, 0, 1))
            gl.clear(ctx)
        log, gl = recorded(body)
        assert any(r.fault for r in log)
        view, _ = replay_state(log, seed=3)
        assert view == gl.virtual_view()

    def test_divergence(self):
        log, _ = recorded(lambda gl, ctx: gl.clear(ctx))
        log.append(CallRecord(3, 1, 1, Opcode.DELETE_RESOURCE, struct.pack("<BI", Kind.BUFFER, 0)))
        with pytest.raises(ReplayDivergence):
            replay(log, minigl.create_driver(0), VirtualIdTable())

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**30), st.integers(1, 400), st.integers(0, 2**32), st.integers(0, 2**32))
    def test_replay_equivalence(self, app_seed, calls, s_live, s_restore):
        log = CallLog()
        gl = Interposer(minigl.create_driver(s_live), log)
        run_workload(Workload("random", calls, app_seed), gl)
        view, _ = replay_state(log, s_restore)
        assert view == gl.virtual_view()


def _set_clear(gl, ctx, color):
    gl.set_state(ctx, StateKey.CLEAR_COLOR, color)
    gl.clear(ctx)


class TestPrune:
    def test_red_then_blue(self):
        def body(gl, ctx):
            _set_clear(gl, ctx, (1, 0, 0, 1))
            _set_clear(gl, ctx, (0, 0, 1, 1))
        log, _ = recorded(body)
        pruned, report = prune(log)
        assert [r.opcode for r in pruned][1:] == [Opcode.SET_STATE, Opcode.CLEAR]
        assert pruned.records[1].decoded() == (StateKey.CLEAR_COLOR, (0, 0, 1, 1))
        assert report.removed_predraw_calls == 1
        assert report.removed_shadowed_state_sets == 1
        assert replay_state(pruned)[0] == replay_state(log)[0]

    def test_dead_lifecycle(self):
        def body(gl, ctx):
            v = gl.gen_resource(ctx, Kind.BUFFER)
            gl.upload_data(ctx, Kind.BUFFER, v, b"abc")
            gl.delete_resource(ctx, Kind.BUFFER, v)
        log, _ = recorded(body)
        pruned, report = prune(log)
        assert [r.opcode for r in pruned] == [Opcode.CREATE_CONTEXT]
        assert report.removed_create_destroy_pairs == 3

    def test_bound_resource_survives(self):
        def body(gl, ctx):
            v = gl.gen_resource(ctx, Kind.BUFFER)
            gl.bind(ctx, minigl.BindTarget.ARRAY_BUFFER, v)
            gl.delete_resource(ctx, Kind.BUFFER, v)
        log, _ = recorded(body)
        assert len(prune(log)[0]) == len(log)

    def test_nothing_fires(self):
        def body(gl, ctx):
            gl.set_state(ctx, StateKey.CLEAR_COLOR, (0.2, 0.2, 0.2, 1))
            gl.set_state(ctx, StateKey.VIEWPORT, (0, 0, 10, 10))
            gl.draw_triangle(ctx, (0, 0), (9, 0), (0, 9), (1, 2, 3, 255))
        log, _ = recorded(body)
        pruned, report = prune(log)
        assert pruned == log and report.removed == 0

    def test_partial_viewport_clear_keeps_draws(self):
        def body(gl, ctx):
            gl.draw_triangle(ctx, (0, 0), (60, 0), (0, 60), (1, 2, 3, 255))
            gl.set_state(ctx, StateKey.VIEWPORT, (0, 0, 8, 8))
            gl.clear(ctx)
        log, _ = recorded(body)
        assert len(prune(log)[0]) == len(log)

    def test_observed_state_set_kept(self):
        def body(gl, ctx):
            _set_clear(gl, ctx, (1, 0, 0, 1))
            gl.draw_triangle(ctx, (0, 0), (8, 0), (0, 8), (1, 1, 1, 255))
            gl.set_state(ctx, StateKey.CLEAR_COLOR, (0, 1, 0, 1))
        log, _ = recorded(body)
        pruned, _ = prune(log)
        assert len(pruned) == len(log)

    def test_renumbered(self):
        def body(gl, ctx):
            for _ in range(5):
                _set_clear(gl, ctx, (0.5, 0.5, 0.5, 1))
        pruned, report = prune(recorded(body)[0])
        assert [r.seq for r in pruned] == list(range(1, len(pruned) + 1))
        assert report.after_len == len(pruned) == 3

    @pytest.mark.parametrize("k", [1, 10, 100])
    def test_progress_independent_of_k(self, k):
        def body(gl, ctx):
            for i in range(k):
                gl.set_state(ctx, StateKey.CLEAR_COLOR, (i / 100, 0, 0, 1))
            gl.clear(ctx)
        log, _ = recorded(body)
        pruned, report = prune(log)
        assert report.before_len == k + 2
        assert report.after_len == 3

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**30), st.integers(1, 500))
    def test_soundness(self, app_seed, calls):
        log = random_log(app_seed, calls)
        pruned, report = prune(log)
        assert replay_state(pruned, 4)[0] == replay_state(log, 9)[0]
        assert report.after_len <= report.before_len
        assert report.before_len - report.after_len == report.removed

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**30), st.integers(1, 300))
    def test_fixed_point(self, app_seed, calls):
        once, _ = prune(random_log(app_seed, calls))
        twice, report = prune(once)
        assert twice == once and report.removed == 0

    def test_pruned_log_serializes(self):
        pruned, _ = prune(random_log(5, 600))
        assert deserialize(serialize(pruned)) == pruned

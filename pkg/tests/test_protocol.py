import io
import socket
import struct
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pointvos import synthetic, wire
from pointvos.backends import TrackerCapabilities, track_full
from pointvos.core import LabeledPoint, PointLabel
from pointvos.errors import (ProtocolError, TransportError,
                             UnsupportedCapabilityError)
from pointvos.synthetic import make_backends, render

from conftest import CountingTracker


def loopback(server: wire.BackendServer):
    """Connect a client to a server over an in-process socket pair."""
    a, b = socket.socketpair()
    thread = threading.Thread(
        target=server.serve_stream, args=(a.makefile("rb"), a.makefile("wb")), daemon=True)
    thread.start()
    return wire.WireConnection(b.makefile("rb"), b.makefile("wb")), thread


@pytest.fixture(scope="module")
def scene():
    return synthetic.acceptance_suite()[1]


@pytest.fixture(scope="module")
def video(scene):
    return render(scene)


class TestFraming:
    def test_message_round_trip(self):
        buf = io.BytesIO()
        wire.write_message(buf, {"kind": "hello", "id": 1, "protocol": 1})
        buf.seek(0)
        assert wire.read_message(buf) == {"kind": "hello", "id": 1, "protocol": 1}

    @pytest.mark.parametrize("dtype", ["uint8", "int8", "int64", "float64", "bool"])
    def test_tensor_round_trip(self, dtype):
        rng = np.random.default_rng(1)
        arr = (rng.random((3, 4, 2)) * 100).astype(dtype)
        out = wire.tensor_from_wire(wire.tensor_to_wire(arr))
        assert out.dtype == arr.dtype
        assert np.array_equal(out, arr)

    def test_oversized_length_prefix_is_transport_error(self):
        buf = io.BytesIO(struct.pack(">I", wire.MAX_BODY_BYTES + 1) + b"x" * 16)
        with pytest.raises(TransportError):
            wire.read_message(buf)

    def test_truncated_frame_is_transport_error(self):
        buf = io.BytesIO(struct.pack(">I", 100) + b"shorty")
        with pytest.raises(TransportError):
            wire.read_message(buf)

    def test_non_json_body_is_transport_error(self):
        body = b"\xff\xfe binary junk"
        buf = io.BytesIO(struct.pack(">I", len(body)) + body)
        with pytest.raises(TransportError):
            wire.read_message(buf)

    @settings(max_examples=1000, deadline=None)
    @given(blob=st.binary(min_size=0, max_size=64))
    def test_fuzz_random_bytes_never_crash_the_framing(self, blob):
        try:
            wire.read_message(io.BytesIO(blob))
        except TransportError:
            pass  # the only acceptable failure mode

    def test_fuzz_server_survives_garbage_connections(self, scene):
        tracker, segmenter = make_backends(scene)
        server = wire.BackendServer(tracker=tracker, segmenter=segmenter)
        rng = np.random.default_rng(0)
        for _ in range(50):
            a, b = socket.socketpair()
            t = threading.Thread(target=server.serve_stream,
                                 args=(a.makefile("rb"), a.makefile("wb")), daemon=True)
            t.start()
            blob = rng.bytes(int(rng.integers(1, 200)))
            b.sendall(blob)
            b.close()
            t.join(timeout=5)
            assert not t.is_alive()
        # the server object still works afterwards
        conn, _ = loopback(server)
        assert conn.capabilities["tracker"] is not None
        conn.close()


class TestSession:
    def test_hello_negotiates_capabilities(self, scene):
        tracker, segmenter = make_backends(scene)
        conn, _ = loopback(wire.BackendServer(tracker=tracker, segmenter=segmenter))
        assert conn.capabilities["tracker"]["predicts_occlusion"] is True
        assert conn.capabilities["segmenter"]["proposes_masks"] is True
        conn.close()

    def test_protocol_version_mismatch(self, scene):
        tracker, segmenter = make_backends(scene)
        server = wire.BackendServer(tracker=tracker, segmenter=segmenter)
        a, b = socket.socketpair()
        threading.Thread(target=server.serve_stream,
                         args=(a.makefile("rb"), a.makefile("wb")), daemon=True).start()
        rf, wf = b.makefile("rb"), b.makefile("wb")
        wire.write_message(wf, {"kind": "hello", "id": 0, "protocol": 99})
        reply = wire.read_message(rf)
        assert reply["kind"] == "error" and reply["code"] == "protocol"

    def test_unknown_kind_gets_error_with_echoed_id(self, scene):
        tracker, segmenter = make_backends(scene)
        server = wire.BackendServer(tracker=tracker, segmenter=segmenter)
        a, b = socket.socketpair()
        threading.Thread(target=server.serve_stream,
                         args=(a.makefile("rb"), a.makefile("wb")), daemon=True).start()
        rf, wf = b.makefile("rb"), b.makefile("wb")
        wire.write_message(wf, {"kind": "frobnicate", "id": 17})
        reply = wire.read_message(rf)
        assert reply == {"kind": "error", "id": 17, "code": "protocol",
                         "message": "unknown message kind 'frobnicate'"}

    def test_ids_echo_bijectively(self, scene, video):
        tracker, segmenter = make_backends(scene)
        conn, _ = loopback(wire.BackendServer(tracker=tracker, segmenter=segmenter))
        seen = set()
        original_request = conn.request

        def spying_request(message):
            reply = original_request(message)
            assert reply["id"] not in seen
            seen.add(reply["id"])
            return reply

        conn.request = spying_request
        segmenter_remote = wire.RemoteSegmenter(conn)
        for i in range(20):
            segmenter_remote.segment(video.frames[i % video.num_frames],
                                     [LabeledPoint(33.0, 42.0, PointLabel.POSITIVE, 1)])
        assert len(seen) == 20
        conn.close()

    def test_stale_prior_and_cross_connection_priors(self, scene, video):
        tracker, segmenter = make_backends(scene)
        server = wire.BackendServer(tracker=tracker, segmenter=segmenter)
        conn1, _ = loopback(server)
        conn2, _ = loopback(server)
        seg1 = wire.RemoteSegmenter(conn1)
        seg2 = wire.RemoteSegmenter(conn2)
        point = [LabeledPoint(33.0, 42.0, PointLabel.POSITIVE, 1)]
        pred = seg1.segment(video.frames[0], point)
        seg1.segment(video.frames[0], point, prior=pred.dense_prior)  # valid
        with pytest.raises(ProtocolError):
            seg2.segment(video.frames[0], point, prior=pred.dense_prior)
        with pytest.raises(ProtocolError):
            seg1.segment(video.frames[0], point, prior="prior-404")
        conn1.close()
        conn2.close()

    def test_capability_gaps_are_reported(self, scene, video):
        tracker, _ = make_backends(scene)
        conn, _ = loopback(wire.BackendServer(tracker=tracker, segmenter=None))
        with pytest.raises(UnsupportedCapabilityError):
            wire.RemoteSegmenter(conn)
        tr = wire.RemoteTracker(conn)
        assert tr.capabilities.predicts_occlusion
        conn.close()


class TestLoopbackEquivalence:
    def test_hundred_randomized_requests_are_bit_identical(self, scene, video):
        tracker, segmenter = make_backends(scene)
        conn, _ = loopback(wire.BackendServer(*make_backends(scene)))
        remote_tracker = wire.RemoteTracker(conn)
        remote_segmenter = wire.RemoteSegmenter(conn)
        rng = np.random.default_rng(7)
        gt0 = video.gt_masks[1][0]
        pixels = np.argwhere(gt0.data)[:, ::-1]
        for i in range(100):
            op = rng.integers(3)
            if op == 0:
                n = int(rng.integers(1, 6))
                idx = rng.integers(len(pixels), size=n)
                queries = [LabeledPoint(float(pixels[j][0]), float(pixels[j][1]),
                                        PointLabel.POSITIVE, 1) for j in idx]
                start = int(rng.integers(0, video.num_frames - 1))
                frames = video.frames[start:start + int(rng.integers(2, 8))]
                local = tracker.track(frames, queries)
                remote = remote_tracker.track(frames, queries)
                assert np.array_equal(local.positions, remote.positions)
                assert np.array_equal(local.occlusion, remote.occlusion)
            elif op == 1:
                t = int(rng.integers(video.num_frames))
                j = rng.integers(len(pixels))
                pts = [LabeledPoint(float(pixels[j][0]), float(pixels[j][1]),
                                    PointLabel.POSITIVE, 1),
                       LabeledPoint(float(rng.integers(128)), float(rng.integers(128)),
                                    PointLabel.NEGATIVE, 1)]
                local = segmenter.segment(video.frames[t], pts)
                remote = remote_segmenter.segment(video.frames[t], pts)
                assert local.mask == remote.mask
            else:
                t = int(rng.integers(video.num_frames))
                k = int(rng.integers(1, 4))
                local = segmenter.propose_masks(video.frames[t], k)
                remote = remote_segmenter.propose_masks(video.frames[t], k)
                assert local == remote
        conn.close()


class TestChunkedTracking:
    def test_24_frames_window_8_makes_3_stitched_chunks(self, scene, video):
        tracker, _ = make_backends(scene)
        windowed = CountingTracker(tracker, window_size=8)
        queries = [LabeledPoint(30.0, 40.0, PointLabel.POSITIVE, 1)]
        bundle = track_full(windowed, video.frames, queries)
        assert bundle.num_frames == 24
        assert len(windowed.calls) == 3
        assert [c[1] for c in windowed.calls] == [8, 8, 8]
        # carry-forward arithmetic: each boundary re-queries with the previous
        # chunk's final position, so chunk c lags the true motion by c frames
        vx, vy = scene.shapes[0].motion.velocity
        for t in range(24):
            lag = t // 8
            assert bundle.positions[t, 0, 0] == pytest.approx(30.0 + vx * (t - lag))
            assert bundle.positions[t, 0, 1] == pytest.approx(40.0 + vy * (t - lag))

    def test_window_larger_than_video_is_single_call(self, scene, video):
        tracker, _ = make_backends(scene)
        windowed = CountingTracker(tracker, window_size=64)
        bundle = track_full(windowed, video.frames,
                            [LabeledPoint(30.0, 40.0, PointLabel.POSITIVE, 1)])
        assert bundle.num_frames == 24
        assert len(windowed.calls) == 1

    def test_single_frame_video_is_identity(self, scene, video):
        tracker, _ = make_backends(scene)
        windowed = CountingTracker(tracker, window_size=8)
        q = LabeledPoint(30.0, 40.0, PointLabel.POSITIVE, 1)
        bundle = track_full(windowed, video.frames[:1], [q])
        assert bundle.num_frames == 1
        assert bundle.positions[0, 0].tolist() == [30.0, 40.0]
        assert bundle.occlusion[0, 0] == 0.0

    def test_capabilities_shape(self):
        caps = TrackerCapabilities(predicts_occlusion=False, window_size=8)
        assert caps.window_size == 8 and not caps.predicts_occlusion


class TestStdioTransport:
    def test_backend_serve_over_stdio_pipes(self, tmp_path, scene, video):
        import subprocess
        import sys

        from pointvos.synthetic import scene_to_json

        scene_path = tmp_path / "scene.json"
        scene_path.write_text(scene_to_json(scene))
        proc = subprocess.Popen(
            [sys.executable, "-m", "pointvos.cli", "backend-serve",
             "--scene", str(scene_path), "--stdio"],
            stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        try:
            conn = wire.WireConnection(proc.stdout, proc.stdin)
            assert conn.capabilities["tracker"] is not None
            remote = wire.RemoteTracker(conn)
            tracker, _ = make_backends(scene)
            queries = [LabeledPoint(30.0, 40.0, PointLabel.POSITIVE, 1)]
            local = tracker.track(video.frames[:6], queries)
            over_pipe = remote.track(video.frames[:6], queries)
            assert np.array_equal(local.positions, over_pipe.positions)
        finally:
            proc.stdin.close()
            proc.wait(timeout=10)

import base64
import json
import os
import socket
import threading
import time

import numpy as np
import pytest

from reefsim.config import CameraConfig, RunConfig, TeleopConfig
from reefsim.reef import Heightfield, ReefScene, SceneInstance, turbidity_to_medium
from reefsim.rotations import RigidTransform
from reefsim.shellgen import TriangleMesh, vertex_normals
from reefsim.teleop import TeleopServer
from reefsim.trajectory import ControlCommand


def quad_scene():
    verts = np.array([[-60, -60, 0], [60, -60, 0], [60, 60, 0], [-60, 60, 0]], dtype=float)
    tris = np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int32)
    mesh = TriangleMesh(vertices=verts, triangles=tris, normals=vertex_normals(verts, tris),
                        uv=np.zeros((4, 2)), class_id=0, instance_id=0)
    hf = Heightfield(nx=2, ny=2, cell_size=1.0, heights=np.zeros((2, 2)))
    return ReefScene(
        heightfield=hf,
        instances=[SceneInstance(mesh=mesh, pose=RigidTransform(), class_id=0, instance_id=0)],
        medium=turbidity_to_medium(0.8, (0.1, 0.35, 0.2)),
        sun_direction=(0, 0, -1),
        ambient=0.3,
    )


def server_config(tick_hz=50.0, timeout_s=5.0):
    return RunConfig(
        seed=3,
        cameras=CameraConfig(width=32, height=24, rgb=("front_facing",), depth=False,
                             mask_camera="front_facing"),
        teleop=TeleopConfig(tick_hz=tick_hz, preview_width=16, preview_height=12,
                            timeout_s=timeout_s, start_position=(0.0, 0.0, 1.0)),
    )


def make_server(tmp_path, **kw):
    return TeleopServer(quad_scene(), server_config(**kw), out_dir=tmp_path / "sessions")


class FakeConn:
    """Stands in for a connected client in direct tick tests."""

    closed = False

    def send_text(self, s):
        pass


class TestTickDirect:
    def test_no_client_state_holds(self, tmp_path):
        srv = make_server(tmp_path)
        p0 = srv.state.position.copy()
        for _ in range(5):
            state, frame = srv.tick()
        assert np.array_equal(state.position, p0)
        assert state.t == pytest.approx(5 * srv.dt)
        assert srv.recorder.records == []

    def test_sim_time_advances_exactly_dt(self, tmp_path):
        srv = make_server(tmp_path)
        for k in range(1, 8):
            state, _ = srv.tick()
            assert state.t == pytest.approx(k * srv.dt, abs=1e-12)

    def test_recording_zero_command_labels(self, tmp_path):
        srv = make_server(tmp_path)
        srv.recorder.recording = True
        for _ in range(10):
            srv.tick()
        assert len(srv.recorder.records) == 10
        for _fid, _pose, _cmd, label in srv.recorder.records:
            assert (label.pitch_class, label.yaw_class) == (3, 3)

    def test_alternating_max_yaw_labels(self, tmp_path):
        srv = make_server(tmp_path)
        srv.recorder.recording = True
        srv._conn = FakeConn()
        for k in range(6):
            with srv._cmd_lock:
                srv._latest_cmd = ControlCommand(yaw_rate=0.5 if k % 2 == 0 else -0.5)
                srv._last_rx = time.monotonic()
            srv.tick()
        classes = [label.yaw_class for _f, _p, _c, label in srv.recorder.records]
        assert classes == [6, 0, 6, 0, 6, 0]

    def test_stale_command_resets_to_zero(self, tmp_path):
        srv = make_server(tmp_path, timeout_s=0.05)
        srv._conn = FakeConn()
        with srv._cmd_lock:
            srv._latest_cmd = ControlCommand(forward_speed=1.0)
            srv._last_rx = time.monotonic()
        srv.tick()
        moved = srv.state.position.copy()
        assert np.linalg.norm(moved) > 0
        time.sleep(0.1)  # let the hold go stale
        srv.tick()
        assert np.array_equal(srv.state.position, moved)

    def test_render_failure_drops_frame_not_state(self, tmp_path, monkeypatch):
        srv = make_server(tmp_path)
        monkeypatch.setattr("reefsim.teleop.render_frame",
                            lambda *a, **k: (_ for _ in ()).throw(RuntimeError("boom")))
        state, frame = srv.tick()
        assert frame is None
        assert state.t == pytest.approx(srv.dt)

    def test_flush_writes_session_layout(self, tmp_path):
        srv = make_server(tmp_path)
        srv.recorder.recording = True
        srv._conn = FakeConn()
        for _ in range(4):
            with srv._cmd_lock:
                srv._latest_cmd = ControlCommand(yaw_rate=0.5, forward_speed=0.5)
                srv._last_rx = time.monotonic()
            srv.tick()
        srv.recorder.recording = False
        root = srv.flush_recording()
        assert root is not None
        frames = sorted((root / "frames/front_facing").glob("*.ppm"))
        assert len(frames) == 4
        labels = (root / "labels.csv").read_text().splitlines()
        assert len(labels) == 5
        assert all(line.endswith(",6") for line in labels[1:])  # held max yaw
        assert (root / "poses_gt.tum").exists()
        assert json.loads((root / "manifest.json").read_text())["complete"] is True

    def test_flush_without_records_is_noop(self, tmp_path):
        srv = make_server(tmp_path)
        assert srv.flush_recording() is None


class NdjsonClient:
    def __init__(self, port):
        self.sock = socket.create_connection(("127.0.0.1", port), timeout=5.0)
        self.buf = b""
        self.seq = 0

    def send(self, doc):
        self.seq += 1
        doc = {**doc, "seq": self.seq}
        self.sock.sendall((json.dumps(doc) + "\n").encode())

    def recv(self, timeout=5.0):
        self.sock.settimeout(timeout)
        while b"\n" not in self.buf:
            chunk = self.sock.recv(65536)
            if not chunk:
                return None
            self.buf += chunk
        line, self.buf = self.buf.split(b"\n", 1)
        return json.loads(line)

    def recv_until(self, kind, limit=200):
        for _ in range(limit):
            doc = self.recv()
            if doc is None:
                return None
            if doc["type"] == kind:
                return doc
        raise AssertionError(f"no {kind!r} message within {limit} messages")

    def close(self):
        self.sock.close()


@pytest.fixture
def running_server(tmp_path):
    srv = make_server(tmp_path, tick_hz=50.0)
    ready = threading.Event()
    thread = threading.Thread(target=srv.serve, kwargs={"port": 0, "ready": ready}, daemon=True)
    thread.start()
    assert ready.wait(5.0)
    yield srv
    srv.stop()
    thread.join(timeout=5.0)


class TestServerSocket:
    def test_hello_then_states_and_frames(self, running_server):
        client = NdjsonClient(running_server.port)
        hello = client.recv()
        assert hello["type"] == "hello"
        assert hello["tick_hz"] == 50.0
        assert hello["camera"]["width"] == 16
        state = client.recv_until("state")
        assert "position" in state and "last_label" in state
        frame = client.recv_until("frame")
        assert frame["encoding"] == "ppm.base64"
        payload = base64.b64decode(frame["payload"])
        assert payload.startswith(b"P6\n16 12\n255\n")
        client.close()

    def test_record_session_counts_match(self, running_server, tmp_path):
        client = NdjsonClient(running_server.port)
        client.recv()  # hello
        client.send({"type": "control", "pitch_rate": 0.0, "yaw_rate": 0.5,
                     "forward_speed": 0.2})
        client.recv_until("state")
        client.send({"type": "record", "on": True})
        time.sleep(0.5)
        client.send({"type": "record", "on": False})
        deadline = time.monotonic() + 10.0
        session = tmp_path / "sessions" / "teleop_000"
        manifest = session / "manifest.json"

        def flushed():
            return manifest.exists() and json.loads(manifest.read_text())["complete"]

        while time.monotonic() < deadline and not flushed():
            try:
                client.recv(timeout=0.5)  # keep draining so the server never blocks
            except TimeoutError:
                pass
        assert flushed()
        # flush happened: frames count equals labels rows, all at held yaw max
        frames = list((session / "frames/front_facing").glob("*.ppm"))
        labels = (session / "labels.csv").read_text().splitlines()[1:]
        assert len(frames) == len(labels)
        assert len(labels) > 0
        assert all(line.split(",")[2] == "6" for line in labels)
        client.send({"type": "bye"})
        client.close()

    def test_malformed_message_keeps_session_alive(self, running_server):
        client = NdjsonClient(running_server.port)
        client.recv()  # hello
        client.sock.sendall(b"this is not json\n")
        err = client.recv_until("error")
        assert "malformed" in err["message"]
        client.send({"type": "control", "forward_speed": 1.0})
        # the server must still be applying commands after the bad line
        deadline = time.monotonic() + 5.0
        moved = False
        while time.monotonic() < deadline and not moved:
            state = client.recv_until("state")
            moved = abs(np.linalg.norm(state["velocity"])) > 0
        assert moved
        client.close()

    def test_silence_timeout_fail_safe(self, tmp_path):
        srv = make_server(tmp_path, tick_hz=50.0, timeout_s=0.15)
        ready = threading.Event()
        thread = threading.Thread(target=srv.serve, kwargs={"port": 0, "ready": ready},
                                  daemon=True)
        thread.start()
        assert ready.wait(5.0)
        try:
            client = NdjsonClient(srv.port)
            client.recv()  # hello
            client.send({"type": "control", "forward_speed": 1.0})
            state = client.recv_until("state")
            deadline = time.monotonic() + 5.0
            saw_motion = False
            while time.monotonic() < deadline:
                state = client.recv_until("state")
                speed = float(np.linalg.norm(state["velocity"]))
                saw_motion = saw_motion or speed > 0
                if saw_motion and speed == 0.0:
                    break
            assert saw_motion
            assert float(np.linalg.norm(state["velocity"])) == 0.0
            client.close()
        finally:
            srv.stop()
            thread.join(timeout=5.0)

    def test_second_client_rejected_while_first_connected(self, running_server):
        first = NdjsonClient(running_server.port)
        assert first.recv()["type"] == "hello"
        second = socket.create_connection(("127.0.0.1", running_server.port), timeout=5.0)
        second.settimeout(2.0)
        assert second.recv(1024) == b""  # closed immediately
        second.close()
        first.close()


class WsClient:
    """Minimal RFC 6455 client; buffers so header and frame bytes never mix."""

    def __init__(self, port):
        self.sock = socket.create_connection(("127.0.0.1", port), timeout=5.0)
        self.buf = b""
        key = base64.b64encode(os.urandom(16)).decode()
        self.sock.sendall(
            (
                f"GET / HTTP/1.1\r\nHost: localhost:{port}\r\nUpgrade: websocket\r\n"
                f"Connection: Upgrade\r\nSec-WebSocket-Key: {key}\r\n"
                "Sec-WebSocket-Version: 13\r\n\r\n"
            ).encode()
        )
        while b"\r\n\r\n" not in self.buf:
            self.buf += self.sock.recv(4096)
        header, self.buf = self.buf.split(b"\r\n\r\n", 1)
        assert b"101" in header.split(b"\r\n")[0]

    def _exact(self, n):
        while len(self.buf) < n:
            chunk = self.sock.recv(65536)
            if not chunk:
                raise ConnectionError
            self.buf += chunk
        out, self.buf = self.buf[:n], self.buf[n:]
        return out

    def recv_text(self):
        while True:
            b0, b1 = self._exact(2)
            n = b1 & 0x7F
            if n == 126:
                n = int.from_bytes(self._exact(2), "big")
            elif n == 127:
                n = int.from_bytes(self._exact(8), "big")
            data = self._exact(n)
            if (b0 & 0x0F) == 0x1:
                return data.decode()

    def send_text(self, text):
        data = text.encode()
        mask = os.urandom(4)
        masked = bytes(c ^ mask[i % 4] for i, c in enumerate(data))
        n = len(data)
        if n < 126:
            head = bytes([0x81, 0x80 | n])
        else:
            head = bytes([0x81, 0x80 | 126]) + n.to_bytes(2, "big")
        self.sock.sendall(head + mask + masked)

    def close(self):
        self.sock.close()


class TestWebSocket:
    def test_ws_handshake_and_hello(self, running_server):
        client = WsClient(running_server.port)
        hello = json.loads(client.recv_text())
        assert hello["type"] == "hello"
        client.send_text(json.dumps({"type": "bye", "seq": 1}))
        client.close()

    def test_ws_control_round_trip(self, running_server):
        client = WsClient(running_server.port)
        json.loads(client.recv_text())  # hello
        client.send_text(json.dumps({"type": "control", "forward_speed": 1.0, "seq": 1}))
        deadline = time.monotonic() + 5.0
        moved = False
        while time.monotonic() < deadline and not moved:
            doc = json.loads(client.recv_text())
            if doc["type"] == "state":
                moved = np.linalg.norm(doc["velocity"]) > 0
        assert moved
        client.close()

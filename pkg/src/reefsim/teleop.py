"""Live teleoperation server.

One authoritative simulation loop steps the point-object vehicle at a fixed
tick, renders a reduced-resolution preview from the front camera, and
exchanges newline-delimited JSON messages with a single console client.
Commands are zero-order-hold with a fail-safe: silence beyond the timeout
resets the held command to zero. While recording, (frame, pose, command,
label) tuples are buffered; on record-off or disconnect they are flushed as
a standard session directory with the frames re-rendered at full resolution.

The same port also accepts WebSocket clients (RFC 6455 text frames carrying
the identical JSON payloads), which is what the browser console uses.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import socket
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imageio
from .config import RunConfig
from .dataset import SessionWriter
from .render import build_accel, cameras_by_role, mount_cameras, render_frame
from .rotations import RigidTransform, quat_to_matrix
from .trajectory import ControlCommand, PoseSample, quantize_control, step_kinematics

_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


@dataclass
class SessionRecorder:
    recording: bool = False
    records: list = field(default_factory=list)  # (frame_id, PoseSample, cmd, label)
    next_frame_id: int = 0

    def append(self, pose, cmd, label) -> None:
        if self.recording:
            self.records.append((self.next_frame_id, pose, cmd, label))
            self.next_frame_id += 1

    def drain(self) -> list:
        out = self.records
        self.records = []
        self.next_frame_id = 0
        return out


class _Conn:
    """One connected console, over raw NDJSON-TCP or WebSocket frames."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.send_lock = threading.Lock()
        self.websocket = False
        self._buf = b""
        self.closed = False

    def upgrade_if_websocket(self) -> None:
        # browsers send their GET immediately; NDJSON clients may say nothing
        # until they hear hello, so a quiet peek means raw NDJSON
        self.sock.settimeout(0.3)
        try:
            first = self.sock.recv(4, socket.MSG_PEEK)
        except (TimeoutError, socket.timeout):
            return
        finally:
            self.sock.settimeout(None)
        if first != b"GET ":
            return
        header = b""
        while b"\r\n\r\n" not in header:
            chunk = self.sock.recv(4096)
            if not chunk:
                raise ConnectionError("client left during websocket handshake")
            header += chunk
        key = None
        for line in header.split(b"\r\n"):
            if line.lower().startswith(b"sec-websocket-key:"):
                key = line.split(b":", 1)[1].strip().decode()
        if key is None:
            raise ConnectionError("websocket handshake without a key")
        accept = base64.b64encode(hashlib.sha1((key + _WS_GUID).encode()).digest()).decode()
        self.sock.sendall(
            (
                "HTTP/1.1 101 Switching Protocols\r\n"
                "Upgrade: websocket\r\nConnection: Upgrade\r\n"
                f"Sec-WebSocket-Accept: {accept}\r\n\r\n"
            ).encode()
        )
        self.websocket = True

    # -- sending -----------------------------------------------------------
    def send_text(self, text: str) -> None:
        data = text.encode("utf-8")
        if self.websocket:
            n = len(data)
            if n < 126:
                head = bytes([0x81, n])
            elif n < 65536:
                head = bytes([0x81, 126]) + n.to_bytes(2, "big")
            else:
                head = bytes([0x81, 127]) + n.to_bytes(8, "big")
            payload = head + data
        else:
            payload = data + b"\n"
        with self.send_lock:
            self.sock.sendall(payload)

    # -- receiving ---------------------------------------------------------
    def _recv_exact(self, n: int) -> bytes:
        while len(self._buf) < n:
            chunk = self.sock.recv(65536)
            if not chunk:
                raise ConnectionError("client closed")
            self._buf += chunk
        out, self._buf = self._buf[:n], self._buf[n:]
        return out

    def recv_text(self):
        """Next text message, or None when the client is gone."""
        try:
            if self.websocket:
                while True:
                    b0, b1 = self._recv_exact(2)
                    opcode = b0 & 0x0F
                    masked = b1 & 0x80
                    n = b1 & 0x7F
                    if n == 126:
                        n = int.from_bytes(self._recv_exact(2), "big")
                    elif n == 127:
                        n = int.from_bytes(self._recv_exact(8), "big")
                    mask = self._recv_exact(4) if masked else b"\x00" * 4
                    data = self._recv_exact(n)
                    if masked:
                        data = bytes(c ^ mask[i % 4] for i, c in enumerate(data))
                    if opcode == 0x8:  # close
                        return None
                    if opcode == 0x9:  # ping -> pong
                        with self.send_lock:
                            self.sock.sendall(bytes([0x8A, len(data)]) + data)
                        continue
                    if opcode in (0x1, 0x2):
                        return data.decode("utf-8", errors="replace")
            else:
                while b"\n" not in self._buf:
                    chunk = self.sock.recv(65536)
                    if not chunk:
                        return None
                    self._buf += chunk
                line, self._buf = self._buf.split(b"\n", 1)
                return line.decode("utf-8", errors="replace")
        except (ConnectionError, OSError):
            return None

    def close(self) -> None:
        self.closed = True
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class TeleopServer:
    def __init__(self, scene, cfg: RunConfig, out_dir="teleop_sessions"):
        self.scene = scene
        self.cfg = cfg
        self.limits = cfg.controls
        self.tick_hz = cfg.teleop.tick_hz
        self.dt = 1.0 / self.tick_hz
        self.timeout_s = cfg.teleop.timeout_s
        self.out_dir = Path(out_dir)
        self.accel = build_accel(scene)

        start = np.asarray(cfg.teleop.start_position, dtype=float)
        self.state = PoseSample(t=0.0, position=start,
                                orientation=np.array([0.0, 0.0, 0.0, 1.0]))
        self.tick_count = 0
        self.last_label = quantize_control(
            ControlCommand(), self.limits.max_pitch_rate, self.limits.max_yaw_rate
        )
        self.recorder = SessionRecorder()
        self.session_count = 0

        self._cmd_lock = threading.Lock()
        # numba's workqueue threading layer is not re-entrant, so preview
        # renders (tick loop) and flush re-renders (reader thread) serialize
        self._render_lock = threading.Lock()
        self._latest_cmd = ControlCommand()
        self._last_rx = None  # wall-clock time of the last client message
        self._conn = None
        self._seq = 0
        self._stop = threading.Event()
        self.port = None

    # ------------------------------------------------------------------
    # simulation

    def held_command(self) -> ControlCommand:
        """Zero-order-hold command with the silence fail-safe applied."""
        with self._cmd_lock:
            cmd, last_rx = self._latest_cmd, self._last_rx
        if self._conn is None or last_rx is None:
            return ControlCommand()
        if time.monotonic() - last_rx > self.timeout_s:
            return ControlCommand()
        return cmd

    def tick(self):
        """Advance simulated time by exactly dt; returns (state, preview|None)."""
        cmd = self.held_command().clamped(self.limits)
        self.state = step_kinematics(self.state, cmd, self.dt)
        self.tick_count += 1
        self.state.t = self.tick_count * self.dt  # sim time never skips
        self.last_label = quantize_control(
            cmd, self.limits.max_pitch_rate, self.limits.max_yaw_rate
        )
        frame = None
        try:
            cam = self._camera_for(self.state, preview=True)
            with self._render_lock:
                frame = render_frame(self.scene, self.accel, cam, timestamp=self.state.t)
        except Exception:
            frame = None  # a dropped preview must never drop the state update
        self.recorder.append(self.state, cmd, self.last_label)
        return self.state, frame

    def _camera_for(self, pose: PoseSample, preview: bool):
        rig_pose = RigidTransform(
            rotation=quat_to_matrix(pose.orientation), translation=pose.position
        )
        if preview:
            w, h = self.cfg.teleop.preview_width, self.cfg.teleop.preview_height
        else:
            w, h = self.cfg.cameras.width, self.cfg.cameras.height
        return cameras_by_role(
            mount_cameras(rig_pose, width=w, height=h, fov_deg=self.cfg.cameras.fov_deg)
        )["front_facing"]

    def flush_recording(self) -> Path:
        """Re-render the buffered frames at full resolution and write a session."""
        records = self.recorder.drain()
        if not records:
            return None
        session_id = f"teleop_{self.session_count:03d}"
        self.session_count += 1
        root = self.out_dir / session_id
        writer = SessionWriter(
            root, session_id, self.cfg.seed, self.scene,
            cameras_meta=[{
                "role": "front_facing", "width": self.cfg.cameras.width,
                "height": self.cfg.cameras.height, "fov_deg": self.cfg.cameras.fov_deg,
            }],
            sensors_meta={},
        )
        poses, labels = [], []
        for frame_id, pose, _cmd, label in records:
            cam = self._camera_for(pose, preview=False)
            with self._render_lock:
                frame = render_frame(self.scene, self.accel, cam, timestamp=pose.t)
            writer.add_frame(pose.t, {"front_facing": frame}, mask_role="front_facing")
            poses.append(pose)
            labels.append((frame_id, label))
        writer.write_poses(poses)
        writer.write_labels(labels)
        writer.write_annotations()
        writer.finalize()
        return root

    # ------------------------------------------------------------------
    # networking

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def _send(self, doc: dict, conn: _Conn = None) -> None:
        conn = self._conn if conn is None else conn
        if conn is None or conn.closed:
            return
        doc["seq"] = self._next_seq()
        try:
            conn.send_text(json.dumps(doc))
        except OSError:
            self._drop_client()

    def _send_hello(self, conn: _Conn) -> None:
        self._send(conn=conn, doc={
            "type": "hello",
            "session_id": f"teleop_{self.session_count:03d}",
            "tick_hz": self.tick_hz,
            "camera": {
                "width": self.cfg.teleop.preview_width,
                "height": self.cfg.teleop.preview_height,
                "fov_deg": self.cfg.cameras.fov_deg,
            },
            "limits": {
                "max_pitch_rate": self.limits.max_pitch_rate,
                "max_yaw_rate": self.limits.max_yaw_rate,
                "max_speed": self.limits.max_speed,
            },
        })

    def _send_state(self, state: PoseSample) -> None:
        self._send({
            "type": "state",
            "t": state.t,
            "position": [float(v) for v in state.position],
            "orientation_xyzw": [float(v) for v in state.orientation],
            "velocity": [float(v) for v in state.velocity],
            "last_label": {
                "pitch_class": self.last_label.pitch_class,
                "yaw_class": self.last_label.yaw_class,
            },
            "recording": self.recorder.recording,
        })

    def _send_frame(self, frame) -> None:
        buf = io.BytesIO()
        data = np.rint(np.clip(frame.rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
        h, w, _ = data.shape
        buf.write(f"P6\n{w} {h}\n255\n".encode())
        buf.write(data.tobytes())
        self._send({
            "type": "frame",
            "t": frame.timestamp,
            "width": w,
            "height": h,
            "encoding": "ppm.base64",
            "payload": base64.b64encode(buf.getvalue()).decode("ascii"),
        })

    def _handle_message(self, text: str) -> bool:
        """Apply one client message; False means the client said goodbye."""
        try:
            doc = json.loads(text)
            kind = doc["type"]
        except (json.JSONDecodeError, KeyError, TypeError):
            self._send({"type": "error", "message": "malformed message dropped"})
            return True
        now = time.monotonic()
        if kind == "control":
            try:
                cmd = ControlCommand(
                    pitch_rate=float(doc.get("pitch_rate", 0.0)),
                    yaw_rate=float(doc.get("yaw_rate", 0.0)),
                    forward_speed=float(doc.get("forward_speed", 0.0)),
                ).clamped(self.limits)
            except (TypeError, ValueError):
                self._send({"type": "error", "message": "bad control values"})
                return True
            with self._cmd_lock:
                self._latest_cmd = cmd
                self._last_rx = now
        elif kind == "record":
            with self._cmd_lock:
                self._last_rx = now
            want = bool(doc.get("on", False))
            if self.recorder.recording and not want:
                self.recorder.recording = False
                self.flush_recording()
            else:
                self.recorder.recording = want
        elif kind == "bye":
            return False
        else:
            self._send({"type": "error", "message": f"unknown message type {kind!r}"})
            with self._cmd_lock:
                self._last_rx = now
        return True

    def _drop_client(self) -> None:
        conn, self._conn = self._conn, None
        with self._cmd_lock:
            self._latest_cmd = ControlCommand()
            self._last_rx = None
        if self.recorder.recording:
            self.recorder.recording = False
            self.flush_recording()
        if conn is not None:
            conn.close()

    def _reader_loop(self, conn: _Conn) -> None:
        while not self._stop.is_set() and self._conn is conn:
            text = conn.recv_text()
            if text is None or not self._handle_message(text):
                break
        if self._conn is conn:
            self._drop_client()

    def _accept_loop(self, server_sock: socket.socket) -> None:
        while not self._stop.is_set():
            try:
                sock, _addr = server_sock.accept()
            except OSError:
                return
            if self._conn is not None:  # one console at a time
                sock.close()
                continue
            conn = _Conn(sock)
            try:
                conn.upgrade_if_websocket()
            except (ConnectionError, OSError):
                conn.close()
                continue
            self._send_hello(conn)  # hello goes out before the tick loop can speak
            self._conn = conn
            threading.Thread(target=self._reader_loop, args=(conn,), daemon=True).start()

    def serve(self, port: int = 8765, ready: threading.Event = None,
              max_ticks: int = None) -> None:
        """Run the tick loop; blocks until stop() or max_ticks."""
        server_sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        server_sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        server_sock.bind(("127.0.0.1", port))
        server_sock.listen(1)
        self.port = server_sock.getsockname()[1]
        threading.Thread(target=self._accept_loop, args=(server_sock,), daemon=True).start()
        if ready is not None:
            ready.set()

        next_tick = time.monotonic()
        try:
            while not self._stop.is_set():
                if max_ticks is not None and self.tick_count >= max_ticks:
                    break
                state, frame = self.tick()
                if self._conn is not None:
                    self._send_state(state)
                    if frame is not None:
                        self._send_frame(frame)
                next_tick += self.dt
                delay = next_tick - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
                else:
                    next_tick = time.monotonic()  # lagging: never skip, just run on
        finally:
            self._stop.set()
            if self.recorder.recording:
                self.recorder.recording = False
                self.flush_recording()
            if self._conn is not None:
                self._drop_client()
            server_sock.close()

    def stop(self) -> None:
        self._stop.set()

"""Drive an environment living in another process over a byte stream.

Every message is ``u32 length | u8 type | payload`` where ``length`` counts the
type byte plus the payload. All integers are little-endian.

  HELLO  {version u32, action_count u32, width u32, height u32}
  RESET  {seed u64}
  STEP   {action u32}
  FRAME  {reward f64, done u8, rgb bytes, row-major [height, width, 3]}
  BYE    {}

The client opens with HELLO (its version, zeros elsewhere); the peer answers
with HELLO describing its environment, then every RESET or STEP is answered
by one FRAME. Either side may send BYE to finish.
"""

from __future__ import annotations

import socket
import struct
import threading
from typing import Callable

import numpy as np

from .base import Environment

PROTOCOL_VERSION = 1

HELLO, RESET, STEP, FRAME, BYE = 1, 2, 3, 4, 5
_NAMES = {HELLO: "HELLO", RESET: "RESET", STEP: "STEP", FRAME: "FRAME", BYE: "BYE"}
_HELLO = struct.Struct("<IIII")
_RESET = struct.Struct("<Q")
_STEP = struct.Struct("<I")
_FRAME_HEAD = struct.Struct("<dB")
_LEN = struct.Struct("<I")
MAX_MESSAGE = 64 * 1024 * 1024


class ExternalEnvError(ConnectionError):
    """The peer misbehaved, went away, or timed out."""


# ---------------------------------------------------------------- framing


def send_message(sock: socket.socket, kind: int, payload: bytes = b"") -> None:
    sock.sendall(_LEN.pack(len(payload) + 1) + bytes([kind]) + payload)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ExternalEnvError(f"peer closed the connection ({len(buf)} of {n} bytes received)")
        buf += chunk
    return bytes(buf)


def recv_message(sock: socket.socket) -> tuple[int, bytes]:
    (length,) = _LEN.unpack(_recv_exact(sock, _LEN.size))
    if not 1 <= length <= MAX_MESSAGE:
        raise ExternalEnvError(f"malformed message: length {length}")
    body = _recv_exact(sock, length)
    kind = body[0]
    if kind not in _NAMES:
        raise ExternalEnvError(f"malformed message: unknown type {kind}")
    return kind, body[1:]


def encode_frame(reward: float, done: bool, rgb: np.ndarray) -> bytes:
    return _FRAME_HEAD.pack(float(reward), 1 if done else 0) + np.ascontiguousarray(rgb, dtype=np.uint8).tobytes()


# ---------------------------------------------------------------- endpoints


def connect(endpoint: str, timeout: float = 10.0) -> socket.socket:
    """Open ``host:port`` (TCP) or ``unix:/path`` (Unix domain socket)."""
    try:
        if endpoint.startswith("unix:"):
            sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
            sock.settimeout(timeout)
            sock.connect(endpoint[5:])
            return sock
        host, sep, port = endpoint.rpartition(":")
        if not sep or not port.isdigit():
            raise ExternalEnvError(f"bad endpoint {endpoint!r}; expected host:port or unix:/path")
        sock = socket.create_connection((host or "127.0.0.1", int(port)), timeout=timeout)
        sock.settimeout(timeout)
        return sock
    except OSError as e:
        raise ExternalEnvError(f"cannot connect to {endpoint}: {e}") from e


# ---------------------------------------------------------------- client


class ExternalEnv(Environment):
    """Environment proxy; any transport failure marks it dead for good."""

    def __init__(self, sock: socket.socket, timeout: float | None = 10.0):
        super().__init__()
        self.sock = sock
        self.dead = False
        if timeout is not None:
            sock.settimeout(timeout)
        version, actions, width, height = self._handshake()
        if version != PROTOCOL_VERSION:
            self._fail(f"protocol version mismatch: peer speaks {version}, we speak {PROTOCOL_VERSION}")
        if actions < 1 or width < 1 or height < 1:
            self._fail(f"peer announced an unusable environment ({actions} actions, {width}x{height})")
        self.action_count = actions
        self.width, self.height = width, height

    @classmethod
    def open(cls, endpoint: str, timeout: float = 10.0) -> "ExternalEnv":
        return cls(connect(endpoint, timeout), timeout)

    def _fail(self, why: str):
        self.dead = True
        self._live = False
        try:
            self.sock.close()
        except OSError:
            pass
        raise ExternalEnvError(why)

    def _exchange(self, kind: int, payload: bytes) -> tuple[int, bytes]:
        if self.dead:
            raise ExternalEnvError("external environment is dead")
        try:
            send_message(self.sock, kind, payload)
            return recv_message(self.sock)
        except ExternalEnvError as e:
            self._fail(str(e))
        except socket.timeout:
            self._fail(f"timed out waiting for a reply to {_NAMES[kind]}")
        except OSError as e:
            self._fail(f"transport error: {e}")

    def _handshake(self) -> tuple[int, int, int, int]:
        kind, payload = self._exchange(HELLO, _HELLO.pack(PROTOCOL_VERSION, 0, 0, 0))
        if kind != HELLO or len(payload) != _HELLO.size:
            self._fail(f"expected HELLO, got {_NAMES.get(kind)} with {len(payload)} payload bytes")
        return _HELLO.unpack(payload)

    def _frame(self, kind: int, payload: bytes) -> tuple[np.ndarray, float, bool]:
        kind, body = self._exchange(kind, payload)
        if kind == BYE:
            self._fail("peer said BYE mid-episode")
        expected = _FRAME_HEAD.size + self.width * self.height * 3
        if kind != FRAME or len(body) != expected:
            self._fail(f"malformed FRAME: type {_NAMES.get(kind)}, {len(body)} bytes (expected {expected})")
        reward, done = _FRAME_HEAD.unpack_from(body)
        rgb = np.frombuffer(body, dtype=np.uint8, offset=_FRAME_HEAD.size).reshape(self.height, self.width, 3)
        return rgb.copy(), reward, bool(done)

    def _reset(self, seed: int) -> np.ndarray:
        frame, _, _ = self._frame(RESET, _RESET.pack(seed & 0xFFFF_FFFF_FFFF_FFFF))
        return frame

    def _step(self, action: int) -> tuple[np.ndarray, float, bool]:
        return self._frame(STEP, _STEP.pack(action))

    def close(self) -> None:
        if self.dead:
            return
        try:
            send_message(self.sock, BYE)
        except OSError:
            pass
        self.dead = True
        self.sock.close()


# ---------------------------------------------------------------- peer


def serve_connection(sock: socket.socket, env: Environment, version: int = PROTOCOL_VERSION) -> None:
    """Answer one client until BYE or disconnect."""
    height, width = None, None
    try:
        while True:
            try:
                kind, payload = recv_message(sock)
            except ExternalEnvError:
                return
            if kind == BYE:
                return
            if kind == HELLO:
                probe = env.reset(0)
                height, width = probe.shape[:2]
                send_message(sock, HELLO, _HELLO.pack(version, env.action_count, width, height))
            elif kind == RESET:
                (seed,) = _RESET.unpack(payload)
                send_message(sock, FRAME, encode_frame(0.0, False, env.reset(seed)))
            elif kind == STEP:
                (action,) = _STEP.unpack(payload)
                frame, reward, done = env.step(action)
                send_message(sock, FRAME, encode_frame(reward, done, frame))
            else:
                send_message(sock, BYE)
                return
    finally:
        sock.close()


class EnvServer:
    """Serve fresh environments over TCP, one thread per client."""

    def __init__(self, env_factory: Callable[[], Environment], host: str = "127.0.0.1", port: int = 0):
        self.env_factory = env_factory
        self.listener = socket.create_server((host, port))
        self.address = self.listener.getsockname()
        self._thread: threading.Thread | None = None

    @property
    def endpoint(self) -> str:
        return f"{self.address[0]}:{self.address[1]}"

    def serve_forever(self) -> None:
        while True:
            try:
                conn, _ = self.listener.accept()
            except OSError:
                return
            threading.Thread(target=serve_connection, args=(conn, self.env_factory()), daemon=True).start()

    def start(self) -> "EnvServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def close(self) -> None:
        self.listener.close()

    def __enter__(self) -> "EnvServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.close()

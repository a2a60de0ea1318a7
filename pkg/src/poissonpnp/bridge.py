"""Binary protocol for denoisers served by an external process.

Frames are little-endian. A request is::

    b"PNPD" | version u32 | epsilon f64 | c u32 | h u32 | w u32 | c*h*w f32

and a response is::

    b"PNPR" | status u32 | c u32 | h u32 | w u32 | c*h*w f32

The server announces itself with an empty response frame (status 0, shape
0x0x0) before reading its first request. One request is in flight at a time.
Run a reference server with ``python -m poissonpnp.bridge --mode identity``.
"""

from __future__ import annotations

import argparse
import os
import select
import shlex
import struct
import subprocess
import sys
import time

import numpy as np

from .priors import Denoiser

REQUEST_MAGIC = b"PNPD"
RESPONSE_MAGIC = b"PNPR"
PROTOCOL_VERSION = 1
_REQ = struct.Struct("<4sIdIII")
_RESP = struct.Struct("<4sIIII")
STATUS_OK = 0
STATUS_BAD_REQUEST = 1
STATUS_DENOISER_FAILED = 2


class BridgeError(RuntimeError):
    """Protocol violation, timeout, or failure reported by the bridge process."""


def encode_request(epsilon: float, x: np.ndarray) -> bytes:
    c, h, w = x.shape
    return _REQ.pack(REQUEST_MAGIC, PROTOCOL_VERSION, float(epsilon), c, h, w) + x.astype("<f4").tobytes()


def encode_response(status: int, x: np.ndarray | None) -> bytes:
    if x is None:
        return _RESP.pack(RESPONSE_MAGIC, status, 0, 0, 0)
    c, h, w = x.shape
    return _RESP.pack(RESPONSE_MAGIC, status, c, h, w) + np.asarray(x).astype("<f4").tobytes()


def _payload(buf: bytes, shape) -> np.ndarray:
    return np.frombuffer(buf, dtype="<f4").reshape(shape).astype(np.float64)


def _payload_size(shape) -> int:
    return 4 * int(np.prod(shape, dtype=np.int64))


# ---------------------------------------------------------------- client


def _read_exact(fd: int, n: int, deadline: float) -> bytes:
    chunks = []
    while n > 0:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise BridgeError("timed out waiting for the bridge process")
        ready, _, _ = select.select([fd], [], [], remaining)
        if not ready:
            raise BridgeError("timed out waiting for the bridge process")
        chunk = os.read(fd, min(n, 1 << 20))
        if not chunk:
            raise BridgeError("bridge process closed its output")
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def read_response(fd: int, timeout: float) -> tuple[int, np.ndarray | None]:
    deadline = time.monotonic() + timeout
    header = _read_exact(fd, _RESP.size, deadline)
    magic, status, c, h, w = _RESP.unpack(header)
    if magic != RESPONSE_MAGIC:
        raise BridgeError(f"bad response magic {magic!r} (expected {RESPONSE_MAGIC!r})")
    shape = (c, h, w)
    if c * h * w == 0:
        return status, None
    return status, _payload(_read_exact(fd, _payload_size(shape), deadline), shape)


class BridgeDenoiser(Denoiser):
    """Denoiser whose evaluations are delegated to a subprocess over stdin/stdout.

    Pass ``epsilon`` for a Euclidean denoiser or ``gamma`` for a Bregman one
    (the frame then carries 1/gamma).
    """

    kind = "external-bridge"

    def __init__(self, command, epsilon=None, gamma=None, timeout: float = 60.0, lipschitz: float = 1.0):
        if (epsilon is None) == (gamma is None):
            raise ValueError("give exactly one of epsilon or gamma")
        self.epsilon = None if epsilon is None else float(epsilon)
        self.gamma = None if gamma is None else float(gamma)
        self.timeout = float(timeout)
        self.lipschitz = lipschitz
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.calls = 0
        self.proc = subprocess.Popen(self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        try:
            status, payload = read_response(self.proc.stdout.fileno(), self.timeout)
        except BridgeError:
            self.close()
            raise
        if status != STATUS_OK or payload is not None:
            self.close()
            raise BridgeError(f"bad handshake from bridge (status {status})")

    @property
    def noise_param(self) -> float:
        return self.epsilon if self.epsilon is not None else 1.0 / self.gamma

    def denoise(self, x):
        x = np.asarray(x, dtype=np.float64)
        shape = x.shape
        x3 = x if x.ndim == 3 else x.reshape(1, 1, -1)
        if self.proc.poll() is not None:
            raise BridgeError(f"bridge process exited with code {self.proc.returncode}")
        try:
            self.proc.stdin.write(encode_request(self.noise_param, x3))
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise BridgeError(f"cannot write to bridge process: {exc}") from exc
        status, out = read_response(self.proc.stdout.fileno(), self.timeout)
        self.calls += 1
        if status != STATUS_OK:
            raise BridgeError(f"bridge reported status {status}")
        if out is None or out.shape != x3.shape:
            got = None if out is None else out.shape
            raise BridgeError(f"bridge returned shape {got}, expected {x3.shape}")
        return out.reshape(shape)

    def close(self):
        if self.proc.poll() is None:
            try:
                self.proc.stdin.close()
            except OSError:
                pass
            try:
                self.proc.wait(timeout=2)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()
        for stream in (self.proc.stdin, self.proc.stdout):
            if stream is not None and not stream.closed:
                stream.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def bridge_denoise(bridge: BridgeDenoiser, x) -> np.ndarray:
    return bridge.denoise(x)


# ---------------------------------------------------------------- server


def _read_stream(stream, n: int) -> bytes | None:
    buf = stream.read(n)
    if not buf:
        return None
    if len(buf) != n:
        raise BridgeError(f"truncated frame: wanted {n} bytes, got {len(buf)}")
    return buf


def serve(handler, stdin=None, stdout=None) -> int:
    """Answer requests with ``handler(epsilon, x)`` until stdin closes.

    Returns 0 on clean shutdown, 4 after a protocol violation.
    """
    stdin = stdin or sys.stdin.buffer
    stdout = stdout or sys.stdout.buffer
    stdout.write(encode_response(STATUS_OK, None))
    stdout.flush()
    while True:
        header = _read_stream(stdin, _REQ.size)
        if header is None:
            return 0
        magic, version, eps, c, h, w = _REQ.unpack(header)
        if magic != REQUEST_MAGIC or version != PROTOCOL_VERSION:
            stdout.write(encode_response(STATUS_BAD_REQUEST, None))
            stdout.flush()
            return 4
        shape = (c, h, w)
        x = _payload(_read_stream(stdin, _payload_size(shape)) or b"", shape)
        try:
            out = np.asarray(handler(eps, x), dtype=np.float64)
        except Exception:
            stdout.write(encode_response(STATUS_DENOISER_FAILED, None))
        else:
            stdout.write(encode_response(STATUS_OK, out))
        stdout.flush()


def gaussian_handler(mean: float, var: float):
    def handler(eps, x):
        return (var * x + eps * mean) / (var + eps)

    return handler


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description="reference denoiser bridge server")
    p.add_argument("--mode", choices=["identity", "gaussian"], default="identity")
    p.add_argument("--mean", type=float, default=0.0)
    p.add_argument("--var", type=float, default=1.0)
    args = p.parse_args(argv)
    handler = (lambda eps, x: x) if args.mode == "identity" else gaussian_handler(args.mean, args.var)
    return serve(handler)


if __name__ == "__main__":
    sys.exit(main())

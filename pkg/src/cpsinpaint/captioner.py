"""Captioner backends that name the objects in a clip and describe the scene without one of them.

Wire protocol: one JSON object per line, UTF-8, in both directions.

Request fields::

    id      int                       echoed back in the response
    role    "detect" | "describe_excluding"
    frames  list of sampled frames, each
            {"index": int, "height": int, "width": int, "channels": int,
             "data": base64 of float32 little-endian pixels in (H, W, C) order}
    object  str or null               object to leave out (describe_excluding only)

Response fields::

    id            int                 copied from the request
    ok            bool
    text          str                 scene description ("" for detect)
    object_names  list of str         objects seen in the frames
    error         str                 only when ok is false

Backends are picked by the ``CPSINPAINT_CAPTIONER`` environment variable:
unset or ``mock`` for the in-process mock, ``tcp://HOST:PORT`` for a socket
server, or ``exec:COMMAND ...`` for a subprocess speaking the protocol on stdio.
``python -m cpsinpaint.captioner --serve`` runs the mock as a stdio server and
``--tcp PORT`` as a socket server.
"""
from __future__ import annotations

import argparse
import base64
import hashlib
import json
import os
import shlex
import socket
import socketserver
import subprocess
import sys
from typing import IO, Protocol

import numpy as np

from cpsinpaint.errors import BackendError

ENV_VAR = "CPSINPAINT_CAPTIONER"
ROLES = ("detect", "describe_excluding")

# scene -> (objects present, description that names none of them)
CANNED_SCENES = {
    "beach": (["person", "umbrella", "dog"], "a sandy beach with waves"),
    "street": (["car", "person", "bicycle"], "a quiet street lined with trees"),
    "park": (["dog", "kite", "bench"], "a green park with a winding path"),
    "studio": (["ball", "box"], "a softly lit studio backdrop"),
}


def frame_payload(frame: np.ndarray, index: int) -> dict:
    f = np.asarray(frame, dtype="<f4")
    if f.ndim == 2:
        f = f[..., None]
    H, W, C = f.shape
    return {"index": int(index), "height": H, "width": W, "channels": C,
            "data": base64.b64encode(np.ascontiguousarray(f).tobytes()).decode("ascii")}


def frame_from_payload(item: dict) -> np.ndarray:
    raw = base64.b64decode(item["data"])
    shape = (item["height"], item["width"], item["channels"])
    if len(raw) != 4 * int(np.prod(shape)):
        raise BackendError(f"frame {item.get('index')}: {len(raw)} bytes do not fit shape {shape}")
    return np.frombuffer(raw, dtype="<f4").reshape(shape)


class Backend(Protocol):
    def request(self, message: dict) -> dict: ...


class MockCaptioner:
    """Deterministic canned captioner.

    With ``scene`` unset, the scene is chosen by hashing the rounded mean colour
    of the frames, so the same frames always map to the same scene.
    """

    def __init__(self, scene: str | None = None, scenes: dict | None = None):
        self.scenes = dict(CANNED_SCENES if scenes is None else scenes)
        if scene is not None and scene not in self.scenes:
            raise ValueError(f"unknown scene {scene!r}; known: {sorted(self.scenes)}")
        self.scene = scene

    def _pick_scene(self, frames: list[dict]) -> str:
        if self.scene is not None:
            return self.scene
        means = np.round([frame_from_payload(f).mean() for f in frames], 2)
        digest = hashlib.blake2b(means.tobytes(), digest_size=4).digest()
        names = sorted(self.scenes)
        return names[int.from_bytes(digest, "little") % len(names)]

    def request(self, message: dict) -> dict:
        rid = message.get("id", 0)
        role = message.get("role")
        frames = message.get("frames") or []
        if role not in ROLES:
            return {"id": rid, "ok": False, "error": f"unknown role {role!r}"}
        if not frames:
            return {"id": rid, "ok": False, "error": "no frames in request"}
        objects, description = self.scenes[self._pick_scene(frames)]
        text = "" if role == "detect" else description
        return {"id": rid, "ok": True, "text": text, "object_names": list(objects)}


class _LineBackend:
    """Shared request/response bookkeeping for the out-of-process transports."""

    def __init__(self):
        self._next_id = 0

    def _exchange(self, line: str) -> str:
        raise NotImplementedError

    def request(self, message: dict) -> dict:
        message = dict(message, id=self._next_id)
        self._next_id += 1
        try:
            reply = self._exchange(json.dumps(message))
        except OSError as exc:
            raise BackendError(f"captioner transport failed: {exc}") from exc
        if not reply:
            raise BackendError("captioner closed the connection")
        try:
            resp = json.loads(reply)
        except json.JSONDecodeError as exc:
            raise BackendError(f"captioner sent malformed JSON: {reply[:80]!r}") from exc
        if resp.get("id") != message["id"]:
            raise BackendError(f"response id {resp.get('id')} does not match request {message['id']}")
        return resp


class SubprocessCaptioner(_LineBackend):
    def __init__(self, argv: list[str]):
        super().__init__()
        try:
            self.proc = subprocess.Popen(
                argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1
            )
        except OSError as exc:
            raise BackendError(f"cannot start captioner {argv}: {exc}") from exc

    def _exchange(self, line: str) -> str:
        self.proc.stdin.write(line + "\n")
        self.proc.stdin.flush()
        return self.proc.stdout.readline()

    def close(self) -> None:
        if self.proc.poll() is None:
            self.proc.stdin.close()
            self.proc.wait(timeout=5)


class TcpCaptioner(_LineBackend):
    def __init__(self, host: str, port: int, timeout: float = 30.0):
        super().__init__()
        try:
            self.sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise BackendError(f"cannot reach captioner at {host}:{port}: {exc}") from exc
        self.reader = self.sock.makefile("r", encoding="utf-8")

    def _exchange(self, line: str) -> str:
        self.sock.sendall((line + "\n").encode())
        return self.reader.readline()

    def close(self) -> None:
        self.reader.close()
        self.sock.close()


def backend_from_env(env: dict | None = None) -> Backend:
    spec = (os.environ if env is None else env).get(ENV_VAR, "").strip()
    if spec in ("", "mock"):
        return MockCaptioner()
    if spec.startswith("tcp://"):
        host, _, port = spec[len("tcp://"):].rpartition(":")
        if not host or not port.isdigit():
            raise BackendError(f"{ENV_VAR}={spec!r}: expected tcp://HOST:PORT")
        return TcpCaptioner(host, int(port))
    if spec.startswith("exec:"):
        return SubprocessCaptioner(shlex.split(spec[len("exec:"):]))
    raise BackendError(f"{ENV_VAR}={spec!r}: expected 'mock', 'tcp://HOST:PORT' or 'exec:COMMAND'")


def handle_line(backend: Backend, line: str) -> str:
    try:
        message = json.loads(line)
    except json.JSONDecodeError as exc:
        return json.dumps({"id": None, "ok": False, "error": f"malformed request: {exc}"})
    try:
        resp = backend.request(message)
    except (BackendError, ValueError, KeyError) as exc:
        resp = {"id": message.get("id"), "ok": False, "error": str(exc)}
    return json.dumps(resp)


def serve_stdio(backend: Backend, stdin: IO[str], stdout: IO[str]) -> None:
    for line in stdin:
        if line.strip():
            stdout.write(handle_line(backend, line) + "\n")
            stdout.flush()


def make_tcp_server(backend: Backend, host: str = "127.0.0.1", port: int = 0) -> socketserver.TCPServer:
    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            for raw in self.rfile:
                line = raw.decode("utf-8")
                if line.strip():
                    self.wfile.write((handle_line(backend, line) + "\n").encode())

    return socketserver.ThreadingTCPServer((host, port), Handler)


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description="Serve the mock captioner over stdio or TCP.")
    ap.add_argument("--scene", choices=sorted(CANNED_SCENES), default=None)
    mode = ap.add_mutually_exclusive_group(required=True)
    mode.add_argument("--serve", action="store_true", help="answer requests on stdin/stdout")
    mode.add_argument("--tcp", type=int, metavar="PORT", help="listen on 127.0.0.1:PORT")
    args = ap.parse_args(argv)
    backend = MockCaptioner(args.scene)
    if args.serve:
        serve_stdio(backend, sys.stdin, sys.stdout)
    else:
        with make_tcp_server(backend, port=args.tcp) as srv:
            srv.serve_forever()
    return 0


if __name__ == "__main__":
    sys.exit(main())

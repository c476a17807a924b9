"""Minimal WebSocket transport for the live bridge.

Covers exactly the subset a localhost console needs: the HTTP/1.1 upgrade
handshake, text frames (fragmented or not), client-side masking, ping/pong
and clean close. Binary frames are rejected; payloads are UTF-8 text.
"""
from __future__ import annotations

import base64
import hashlib
import os
import select
import socket
import struct

_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"
_MAX_HEADER = 64 * 1024
_MAX_PAYLOAD = 16 * 1024 * 1024

_OP_CONT, _OP_TEXT, _OP_BINARY = 0x0, 0x1, 0x2
_OP_CLOSE, _OP_PING, _OP_PONG = 0x8, 0x9, 0xA


class WsError(RuntimeError):
    """Violated handshake or framing expectations."""


def _accept_key(key: str) -> str:
    digest = hashlib.sha1((key + _GUID).encode("ascii")).digest()
    return base64.b64encode(digest).decode("ascii")


def _read_http_head(sock: socket.socket) -> tuple[str, bytes]:
    """Header text plus whatever trailed it in the same segments.

    Frames may arrive coalesced with the handshake response; the leftover
    bytes must seed the connection's read buffer, never be dropped.
    """
    buf = bytearray()
    while b"\r\n\r\n" not in buf:
        if len(buf) > _MAX_HEADER:
            raise WsError("oversized HTTP header")
        chunk = sock.recv(4096)
        if not chunk:
            raise WsError("connection closed during handshake")
        buf.extend(chunk)
    head, leftover = buf.split(b"\r\n\r\n", 1)
    return head.decode("latin-1"), bytes(leftover)


def _header_map(head: str) -> dict:
    out = {}
    for line in head.split("\r\n")[1:]:
        if ":" in line:
            name, value = line.split(":", 1)
            out[name.strip().lower()] = value.strip()
    return out


def server_handshake(sock: socket.socket) -> bytes:
    head, leftover = _read_http_head(sock)
    headers = _header_map(head)
    key = headers.get("sec-websocket-key")
    if (not head.startswith("GET ")
            or headers.get("upgrade", "").lower() != "websocket" or not key):
        sock.sendall(b"HTTP/1.1 400 Bad Request\r\n\r\n")
        raise WsError("not a WebSocket upgrade request")
    sock.sendall(("HTTP/1.1 101 Switching Protocols\r\n"
                  "Upgrade: websocket\r\n"
                  "Connection: Upgrade\r\n"
                  f"Sec-WebSocket-Accept: {_accept_key(key)}\r\n"
                  "\r\n").encode("ascii"))
    return leftover


def client_handshake(sock: socket.socket, host: str, port: int,
                     path: str = "/") -> bytes:
    key = base64.b64encode(os.urandom(16)).decode("ascii")
    sock.sendall((f"GET {path} HTTP/1.1\r\n"
                  f"Host: {host}:{port}\r\n"
                  "Upgrade: websocket\r\n"
                  "Connection: Upgrade\r\n"
                  f"Sec-WebSocket-Key: {key}\r\n"
                  "Sec-WebSocket-Version: 13\r\n"
                  "\r\n").encode("ascii"))
    head, leftover = _read_http_head(sock)
    if " 101 " not in head.split("\r\n", 1)[0] + " ":
        raise WsError(f"handshake refused: {head.splitlines()[0]!r}")
    if _header_map(head).get("sec-websocket-accept") != _accept_key(key):
        raise WsError("handshake accept key mismatch")
    return leftover


def _mask_bytes(payload: bytes, key: bytes) -> bytes:
    reps = len(payload) // 4 + 1
    pad = (key * reps)[:len(payload)]
    return (int.from_bytes(payload, "big")
            ^ int.from_bytes(pad, "big")).to_bytes(len(payload), "big")


class WsConnection:
    """One open WebSocket; client connections mask outgoing frames."""

    def __init__(self, sock: socket.socket, is_client: bool,
                 initial: bytes = b""):
        self.sock = sock
        self._mask_out = is_client
        self._closed = False
        self._buf = bytearray(initial)

    def fileno(self) -> int:
        return self.sock.fileno()

    def poll(self, timeout: float) -> bool:
        """True when a frame can start to be read within ``timeout`` seconds."""
        if self._closed:
            return False
        if self._buf:
            return True
        ready, _, _ = select.select([self.sock], [], [], timeout)
        return bool(ready)

    def _recv_exact(self, n: int) -> bytes:
        while len(self._buf) < n:
            chunk = self.sock.recv(max(n - len(self._buf), 4096))
            if not chunk:
                raise WsError("connection closed mid-frame")
            self._buf.extend(chunk)
        out = bytes(self._buf[:n])
        del self._buf[:n]
        return out

    def _send_frame(self, opcode: int, payload: bytes) -> None:
        if self._closed and opcode != _OP_CLOSE:
            raise WsError("send on closed connection")
        head = bytearray([0x80 | opcode])
        mask_bit = 0x80 if self._mask_out else 0
        n = len(payload)
        if n < 126:
            head.append(mask_bit | n)
        elif n < 1 << 16:
            head.append(mask_bit | 126)
            head.extend(struct.pack(">H", n))
        else:
            head.append(mask_bit | 127)
            head.extend(struct.pack(">Q", n))
        if self._mask_out:
            key = os.urandom(4)
            head.extend(key)
            payload = _mask_bytes(payload, key)
        self.sock.sendall(bytes(head) + payload)

    def send_text(self, text: str) -> None:
        self._send_frame(_OP_TEXT, text.encode("utf-8"))

    def _recv_frame(self):
        b0, b1 = self._recv_exact(2)
        fin, opcode = bool(b0 & 0x80), b0 & 0x0F
        masked, n = bool(b1 & 0x80), b1 & 0x7F
        if n == 126:
            n = struct.unpack(">H", self._recv_exact(2))[0]
        elif n == 127:
            n = struct.unpack(">Q", self._recv_exact(8))[0]
        if n > _MAX_PAYLOAD:
            raise WsError(f"frame of {n} bytes exceeds limit")
        key = self._recv_exact(4) if masked else None
        payload = self._recv_exact(n) if n else b""
        if key:
            payload = _mask_bytes(payload, key)
        return fin, opcode, payload

    def recv_text(self) -> str | None:
        """Next text message, or None once the peer has closed."""
        if self._closed:
            return None
        parts: list[bytes] = []
        while True:
            fin, opcode, payload = self._recv_frame()
            if opcode == _OP_PING:
                self._send_frame(_OP_PONG, payload)
            elif opcode == _OP_PONG:
                pass
            elif opcode == _OP_CLOSE:
                try:
                    self._send_frame(_OP_CLOSE, b"")
                except OSError:
                    pass
                self._closed = True
                return None
            elif opcode == _OP_BINARY:
                raise WsError("binary frames unsupported")
            elif opcode == _OP_TEXT or (opcode == _OP_CONT and parts):
                parts.append(payload)
                if fin:
                    return b"".join(parts).decode("utf-8")
            else:
                raise WsError(f"unexpected opcode {opcode:#x}")

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            try:
                self._send_frame(_OP_CLOSE, b"")
            except OSError:
                pass
        try:
            self.sock.close()
        except OSError:
            pass


def connect(host: str, port: int, timeout: float = 10.0) -> WsConnection:
    sock = socket.create_connection((host, port), timeout=timeout)
    leftover = client_handshake(sock, host, port)
    return WsConnection(sock, is_client=True, initial=leftover)


def accept(server_sock: socket.socket) -> WsConnection:
    sock, _ = server_sock.accept()
    leftover = server_handshake(sock)
    return WsConnection(sock, is_client=False, initial=leftover)

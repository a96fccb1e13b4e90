"""Gateway socket transport: a WebSocket bridge for phone emulators.

Listens on the gateway port and serves ``/bridge``. Each text frame carries
one BridgeMessage document: ``{"direction": "TO_GATEWAY"|"TO_PHONE", "pdu":
{session_id, msisdn, kind, text}}`` — the pdu schema is bit-exact the
gateway transport format, nothing added. The server relays PDUs into the
gateway and answers with the gateway's response PDU, unchanged.

Hand-rolled RFC 6455 subset: unfragmented text frames, close, ping/pong.
"""

from __future__ import annotations

import base64
import hashlib
import json
import socketserver
import struct
import threading
from typing import Callable

from .errors import EhrError
from .ussd.gateway import UssdGateway, UssdPdu

_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"

OP_TEXT = 0x1
OP_CLOSE = 0x8
OP_PING = 0x9
OP_PONG = 0xA


class BridgeHandler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        if not self._handshake():
            return
        while True:
            frame = self._read_frame()
            if frame is None:
                return
            opcode, payload = frame
            if opcode == OP_CLOSE:
                self._send_frame(OP_CLOSE, b"")
                return
            if opcode == OP_PING:
                self._send_frame(OP_PONG, payload)
                continue
            if opcode != OP_TEXT:
                continue
            reply = self._handle_message(payload)
            if reply is None:
                self._send_frame(OP_CLOSE, b"")
                return
            self._send_frame(OP_TEXT, reply)

    def _handle_message(self, payload: bytes) -> bytes | None:
        gateway: UssdGateway = self.server.gateway  # type: ignore[attr-defined]
        clock: Callable[[], int] = self.server.clock  # type: ignore[attr-defined]
        try:
            doc = json.loads(payload.decode("utf-8"))
            if doc.get("direction") != "TO_GATEWAY":
                return None
            pdu = UssdPdu.from_dict(doc.get("pdu"))
        except (json.JSONDecodeError, UnicodeDecodeError, EhrError):
            return None
        response = gateway.handle_pdu(pdu, now=clock())
        return json.dumps({"direction": "TO_PHONE", "pdu": response.to_dict()}).encode("utf-8")

    # -- websocket plumbing ---------------------------------------------------

    def _handshake(self) -> bool:
        request_line = self.rfile.readline(4096).decode("latin-1").strip()
        headers: dict[str, str] = {}
        while True:
            line = self.rfile.readline(4096).decode("latin-1")
            if line in ("\r\n", "\n", ""):
                break
            name, _, value = line.partition(":")
            headers[name.strip().lower()] = value.strip()
        parts = request_line.split()
        key = headers.get("sec-websocket-key")
        if len(parts) != 3 or parts[0] != "GET" or parts[1] != "/bridge" or not key:
            self.wfile.write(b"HTTP/1.1 400 Bad Request\r\nContent-Length: 0\r\n\r\n")
            return False
        accept = base64.b64encode(hashlib.sha1((key + _GUID).encode("ascii")).digest()).decode("ascii")
        self.wfile.write(
            (
                "HTTP/1.1 101 Switching Protocols\r\n"
                "Upgrade: websocket\r\n"
                "Connection: Upgrade\r\n"
                f"Sec-WebSocket-Accept: {accept}\r\n"
                "\r\n"
            ).encode("ascii")
        )
        return True

    def _read_exact(self, count: int) -> bytes | None:
        data = b""
        while len(data) < count:
            chunk = self.rfile.read(count - len(data))
            if not chunk:
                return None
            data += chunk
        return data

    def _read_frame(self) -> tuple[int, bytes] | None:
        header = self._read_exact(2)
        if header is None:
            return None
        first, second = header[0], header[1]
        if not first & 0x80:  # fragmented frames are not worth supporting here
            return None
        opcode = first & 0x0F
        masked = bool(second & 0x80)
        length = second & 0x7F
        if length == 126:
            raw = self._read_exact(2)
            if raw is None:
                return None
            length = struct.unpack(">H", raw)[0]
        elif length == 127:
            raw = self._read_exact(8)
            if raw is None:
                return None
            length = struct.unpack(">Q", raw)[0]
        mask = b""
        if masked:
            mask = self._read_exact(4) or b""
            if len(mask) < 4:
                return None
        payload = self._read_exact(length) if length else b""
        if payload is None:
            return None
        if masked:
            payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
        return opcode, payload

    def _send_frame(self, opcode: int, payload: bytes) -> None:
        first = 0x80 | opcode
        length = len(payload)
        if length < 126:
            header = struct.pack(">BB", first, length)
        elif length < 1 << 16:
            header = struct.pack(">BBH", first, 126, length)
        else:
            header = struct.pack(">BBQ", first, 127, length)
        self.wfile.write(header + payload)


class BridgeServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address: tuple[str, int], gateway: UssdGateway, clock: Callable[[], int]):
        super().__init__(address, BridgeHandler)
        self.gateway = gateway
        self.clock = clock


def serve_bridge(
    gateway: UssdGateway, clock: Callable[[], int], host: str = "127.0.0.1", port: int = 0
) -> tuple[BridgeServer, threading.Thread]:
    server = BridgeServer((host, port), gateway, clock)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, thread

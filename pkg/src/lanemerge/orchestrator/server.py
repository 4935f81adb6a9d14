"""NDJSON-over-TCP front end for :class:`~.service.Orchestrator`."""

from __future__ import annotations

import logging
import socket
import socketserver
import threading

from .messages import MAX_LINE_BYTES, LineTooLong, encode, subscription_request
from .service import Orchestrator

log = logging.getLogger(__name__)


class LineConnection:
    """Serialised writer plus bounded line reader over one socket."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.rfile = sock.makefile("rb")
        self._wlock = threading.Lock()

    def send(self, line: str) -> None:
        with self._wlock:
            self.sock.sendall(line.encode("utf-8"))

    def read_line(self) -> bytes | None:
        """Next line without its terminator, None at EOF; :class:`LineTooLong` past the frame limit."""
        raw = self.rfile.readline(MAX_LINE_BYTES + 2)
        if not raw:
            return None
        if not raw.endswith(b"\n"):
            if len(raw) > MAX_LINE_BYTES:
                raise LineTooLong(f"line exceeds {MAX_LINE_BYTES} bytes")
            return raw  # final unterminated line before EOF
        raw = raw[:-1]
        if raw.endswith(b"\r"):
            raw = raw[:-1]
        if len(raw) > MAX_LINE_BYTES:
            raise LineTooLong(f"line exceeds {MAX_LINE_BYTES} bytes")
        return raw

    def close(self) -> None:
        try:
            self.rfile.close()
        finally:
            try:
                self.sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self.sock.close()


def serve_connection(orch: Orchestrator, conn: LineConnection) -> None:
    """Announce the subscription, then process lines until EOF or a framing error."""
    orch.add_sink(conn.send)
    orch.counters["connections"] += 1
    try:
        conn.send(encode(subscription_request(orch.road.boundary)))
        while True:
            try:
                raw = conn.read_line()
            except LineTooLong as exc:
                orch.counters["connection_errors"] += 1
                log.warning("closing connection: %s", exc)
                break
            if raw is None:
                break
            if not raw.strip():
                continue
            for reply in orch.handle_line(raw):
                conn.send(encode(reply))
    except OSError as exc:
        log.info("connection ended: %s", exc)
    finally:
        orch.remove_sink(conn.send)


class _Handler(socketserver.BaseRequestHandler):
    def handle(self) -> None:
        conn = LineConnection(self.request)
        try:
            serve_connection(self.server.orchestrator, conn)
        finally:
            conn.rfile.close()


class OrchestratorServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address: tuple[str, int], orchestrator: Orchestrator):
        super().__init__(address, _Handler)
        self.orchestrator = orchestrator

    @property
    def port(self) -> int:
        return self.server_address[1]

    def start(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, name="orchestrator-server", daemon=True)
        t.start()
        return t


def connect_gateway(orch: Orchestrator, address: tuple[str, int]) -> threading.Thread:
    """Dial out to a gateway and treat the link like any ingest connection."""
    sock = socket.create_connection(address)
    conn = LineConnection(sock)

    def run():
        try:
            serve_connection(orch, conn)
        finally:
            conn.close()

    t = threading.Thread(target=run, name="gateway-link", daemon=True)
    t.start()
    return t


def parse_address(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"expected host:port, got {text!r}")
    return host, int(port)

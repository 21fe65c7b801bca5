"""TCP front end speaking the Memcached text protocol.

One handler thread per connection; a semaphore bounds how many commands
execute in the cache simultaneously (--workers), so the core sees up to that
many concurrent operations while every connection still makes progress.
"""

from __future__ import annotations

import argparse
import logging
import os
import signal
import socket
import sys
import threading

from .cache import Cache, CacheConfig
from .protocol import Parser, QuitCmd, execute

log = logging.getLogger("fleec.server")

DEFAULT_PORT = 11211
_ACCEPT_POLL_S = 0.2
_CONN_POLL_S = 0.5
_RECV_SIZE = 1 << 16


class CacheServer:
    def __init__(self, cache: Cache, bind: str = "127.0.0.1",
                 port: int = DEFAULT_PORT, workers: int = 64):
        self.cache = cache
        self._workers = threading.BoundedSemaphore(max(1, workers))
        self._stop = threading.Event()
        self._conn_threads: list = []
        self._lock = threading.Lock()
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((bind, port))
        self._sock.listen(128)
        self._sock.settimeout(_ACCEPT_POLL_S)
        self.host, self.port = self._sock.getsockname()[:2]
        self._accept_thread = None

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> None:
        """Spawn the accept loop; returns immediately."""
        t = threading.Thread(target=self.serve_forever, name="fleec-accept",
                             daemon=True)
        self._accept_thread = t
        t.start()

    def serve_forever(self) -> None:
        log.info("listening on %s:%d", self.host, self.port)
        try:
            while not self._stop.is_set():
                try:
                    conn, addr = self._sock.accept()
                except socket.timeout:
                    continue
                except OSError:
                    break
                t = threading.Thread(target=self._handle, args=(conn, addr),
                                     name=f"fleec-conn-{addr[1]}", daemon=True)
                with self._lock:
                    self._conn_threads = [
                        x for x in self._conn_threads if x.is_alive()
                    ]
                    self._conn_threads.append(t)
                t.start()
        finally:
            self._sock.close()

    def shutdown(self, timeout: float = 10.0) -> None:
        """Stop accepting, let in-flight commands finish, close connections."""
        self._stop.set()
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=timeout)
        with self._lock:
            threads = list(self._conn_threads)
        for t in threads:
            t.join(timeout=timeout)

    # -- per-connection ------------------------------------------------------

    def _handle(self, conn: socket.socket, addr) -> None:
        parser = Parser(value_cap=self.cache.config.value_cap)
        conn.settimeout(_CONN_POLL_S)
        try:
            with conn:
                out = bytearray()
                while not self._stop.is_set():
                    try:
                        data = conn.recv(_RECV_SIZE)
                    except socket.timeout:
                        continue
                    except (ConnectionResetError, BrokenPipeError):
                        return
                    if not data:
                        return
                    parser.feed(data)
                    out.clear()
                    close = False
                    while True:
                        cmd = parser.next_command()
                        if cmd is None:
                            break
                        if isinstance(cmd, QuitCmd):
                            close = True
                            break
                        with self._workers:
                            resp, close = execute(cmd, self.cache)
                        out += resp
                        if close:
                            break
                    if out:
                        conn.sendall(out)
                    if close:
                        return
        except (ConnectionResetError, BrokenPipeError, OSError):
            pass
        except Exception:
            log.exception("connection %s died", addr)
        finally:
            self.cache.detach_thread()


def _env(name: str, cast, fallback):
    raw = os.environ.get(f"FLEEC_{name}")
    if raw is None or raw == "":
        return fallback
    return cast(raw)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="fleec-server",
        description="lock-free cache server (Memcached text protocol subset)",
    )
    p.add_argument("--bind", default=_env("BIND", str, "127.0.0.1"))
    p.add_argument("--port", type=int, default=_env("PORT", int, DEFAULT_PORT))
    p.add_argument("--memory-mb", type=int,
                   default=_env("MEMORY_MB", int, 64),
                   help="cache budget in MiB")
    p.add_argument("--clock-max", type=int, default=_env("CLOCK_MAX", int, 3),
                   help="per-bucket recency counter ceiling K")
    p.add_argument("--initial-buckets", type=int,
                   default=_env("INITIAL_BUCKETS", int, 1024),
                   help="starting hash-table width (power of two)")
    p.add_argument("--workers", type=int, default=_env("WORKERS", int, 64),
                   help="max commands executing in the cache at once")
    p.add_argument("--verbose", "-v", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    config = CacheConfig(
        max_bytes=args.memory_mb * 1024 * 1024,
        clock_max=args.clock_max,
        initial_buckets=args.initial_buckets,
    )
    server = CacheServer(Cache(config), bind=args.bind, port=args.port,
                         workers=args.workers)

    def _on_signal(signum, frame):
        log.info("signal %d, shutting down", signum)
        server._stop.set()

    signal.signal(signal.SIGINT, _on_signal)
    signal.signal(signal.SIGTERM, _on_signal)
    server.serve_forever()
    server.shutdown()
    return 0


if __name__ == "__main__":
    sys.exit(main())

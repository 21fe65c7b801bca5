"""Memcached text protocol subset: incremental parsing and execution.

Supported verbs: get (multi-key), set, delete, stats, version, quit.  The
parser is push-style so a session can feed arbitrary TCP segment boundaries:
feed() appends bytes, next_command() yields complete commands (or None when
the buffer holds only a partial frame).

Framing rules:
  - command lines end with CRLF (a lone LF is tolerated, as real servers do);
  - a set's data block is exactly nbytes followed by CRLF; a wrong terminator
    consumes nbytes+2 and reports "bad data chunk";
  - a set whose nbytes exceeds the value cap has its data swallowed without
    buffering, then reports the oversize error.

noreply on set/delete suppresses the response, including error responses.
"""

from __future__ import annotations

from dataclasses import dataclass

VERSION = "0.1.0"

MAX_KEY_LEN = 250
_THIRTY_DAYS = 30 * 24 * 60 * 60

CRLF = b"\r\n"
RESP_ERROR = b"ERROR\r\n"
RESP_STORED = b"STORED\r\n"
RESP_DELETED = b"DELETED\r\n"
RESP_NOT_FOUND = b"NOT_FOUND\r\n"
RESP_END = b"END\r\n"
RESP_OOM = b"SERVER_ERROR out of memory storing object\r\n"
RESP_TOO_LARGE = b"SERVER_ERROR object too large for cache\r\n"


@dataclass
class GetCmd:
    keys: list


@dataclass
class SetCmd:
    key: bytes
    flags: int
    exptime: int
    data: bytes
    noreply: bool = False


@dataclass
class DeleteCmd:
    key: bytes
    noreply: bool = False


@dataclass
class StatsCmd:
    pass


@dataclass
class VersionCmd:
    pass


@dataclass
class QuitCmd:
    pass


@dataclass
class BadCmd:
    """Unknown verb; answered with ERROR."""
    verb: bytes = b""


@dataclass
class ClientErrorCmd:
    msg: str
    noreply: bool = False


@dataclass
class ServerErrorCmd:
    msg: str
    noreply: bool = False


def _valid_key(key: bytes) -> bool:
    # no spaces or control bytes; length capped
    if not 0 < len(key) <= MAX_KEY_LEN:
        return False
    return all(b > 32 for b in key)


class Parser:
    """Incremental command parser for one connection."""

    def __init__(self, value_cap: int = 1 << 20):
        self._buf = bytearray()
        self._value_cap = value_cap
        self._pending_set = None        # header waiting for its data block
        self._discard = 0               # oversized data bytes left to drop
        self._after_discard = None      # command to emit once drained

    def feed(self, data: bytes) -> None:
        if self._discard:
            n = min(self._discard, len(data))
            self._discard -= n
            data = data[n:]
            if self._discard:
                return
        self._buf.extend(data)

    def next_command(self):
        """One parsed command, or None until a complete frame arrives."""
        if self._discard:
            return None
        if self._after_discard is not None:
            cmd, self._after_discard = self._after_discard, None
            return cmd
        if self._pending_set is not None:
            return self._finish_set()
        idx = self._buf.find(b"\n")
        if idx < 0:
            return None
        line = bytes(self._buf[:idx])
        del self._buf[: idx + 1]
        if line.endswith(b"\r"):
            line = line[:-1]
        return self._parse_line(line)

    # -- internals -------------------------------------------------------

    def _parse_line(self, line: bytes):
        parts = line.split()
        if not parts:
            return BadCmd(b"")
        verb = parts[0]
        if verb == b"get":
            if len(parts) < 2:
                return BadCmd(verb)
            keys = parts[1:]
            if not all(_valid_key(k) for k in keys):
                return ClientErrorCmd("bad command line format")
            return GetCmd(keys)
        if verb == b"set":
            return self._parse_set(parts)
        if verb == b"delete":
            if len(parts) not in (2, 3):
                return ClientErrorCmd("bad command line format")
            noreply = len(parts) == 3 and parts[2] == b"noreply"
            if len(parts) == 3 and not noreply:
                return ClientErrorCmd("bad command line format")
            if not _valid_key(parts[1]):
                return ClientErrorCmd("bad command line format", noreply)
            return DeleteCmd(parts[1], noreply)
        if verb == b"stats":
            return StatsCmd()
        if verb == b"version":
            return VersionCmd()
        if verb == b"quit":
            return QuitCmd()
        return BadCmd(verb)

    def _parse_set(self, parts):
        noreply = len(parts) == 6 and parts[5] == b"noreply"
        if len(parts) not in (5, 6) or (len(parts) == 6 and not noreply):
            return ClientErrorCmd("bad command line format")
        key = parts[1]
        try:
            flags = int(parts[2])
            exptime = int(parts[3])
            nbytes = int(parts[4])
        except ValueError:
            return ClientErrorCmd("bad command line format")
        if not _valid_key(key) or not 0 <= flags < 2 ** 32 or nbytes < 0:
            return ClientErrorCmd("bad command line format")
        if nbytes > self._value_cap:
            # swallow nbytes+2 without buffering (memcached does the same)
            have = len(self._buf)
            todo = nbytes + 2
            err = ServerErrorCmd("object too large for cache", noreply)
            if have >= todo:
                del self._buf[:todo]
                return err
            self._buf.clear()
            self._discard = todo - have
            self._after_discard = err
            return None
        self._pending_set = (key, flags, exptime, nbytes, noreply)
        return self._finish_set()

    def _finish_set(self):
        key, flags, exptime, nbytes, noreply = self._pending_set
        if len(self._buf) < nbytes + 2:
            return None
        data = bytes(self._buf[:nbytes])
        trailer = bytes(self._buf[nbytes: nbytes + 2])
        del self._buf[: nbytes + 2]
        self._pending_set = None
        if trailer != CRLF:
            return ClientErrorCmd("bad data chunk", noreply)
        return SetCmd(key, flags, exptime, data, noreply)


def resolve_exptime(exptime: int, now: float) -> int:
    """Wire exptime to stored absolute expiry (0 keeps meaning never)."""
    if exptime == 0:
        return 0
    if exptime < 0:
        return -1
    if exptime <= _THIRTY_DAYS:
        return int(now) + exptime
    return exptime


def execute(cmd, cache) -> tuple[bytes, bool]:
    """Run one command against the cache.

    Returns (response_bytes, close_connection).  noreply commands return
    empty responses."""
    if isinstance(cmd, GetCmd):
        out = bytearray()
        for key in cmd.keys:
            item = cache.get(key)
            if item is not None:
                out += b"VALUE %s %d %d\r\n" % (key, item.flags, len(item.value))
                out += item.value
                out += CRLF
        out += RESP_END
        return bytes(out), False
    if isinstance(cmd, SetCmd):
        expiry = resolve_exptime(cmd.exptime, cache.now())
        try:
            cache.set(cmd.key, cmd.data, cmd.flags, expiry)
        except Exception as exc:
            resp = _set_failure(exc)
            return (b"" if cmd.noreply else resp), False
        return (b"" if cmd.noreply else RESP_STORED), False
    if isinstance(cmd, DeleteCmd):
        found = cache.delete(cmd.key)
        if cmd.noreply:
            return b"", False
        return (RESP_DELETED if found else RESP_NOT_FOUND), False
    if isinstance(cmd, StatsCmd):
        out = bytearray()
        for name, value in cache.stats().as_dict().items():
            out += b"STAT %s %s\r\n" % (name.encode(), str(value).encode())
        out += RESP_END
        return bytes(out), False
    if isinstance(cmd, VersionCmd):
        return b"VERSION %s\r\n" % VERSION.encode(), False
    if isinstance(cmd, QuitCmd):
        return b"", True
    if isinstance(cmd, ClientErrorCmd):
        resp = b"" if cmd.noreply else b"CLIENT_ERROR %s\r\n" % cmd.msg.encode()
        return resp, False
    if isinstance(cmd, ServerErrorCmd):
        resp = b"" if cmd.noreply else b"SERVER_ERROR %s\r\n" % cmd.msg.encode()
        return resp, False
    return RESP_ERROR, False


def _set_failure(exc: Exception) -> bytes:
    from .cache import OutOfMemory

    if isinstance(exc, OutOfMemory):
        return RESP_OOM
    if isinstance(exc, ValueError) and "value exceeds cap" in str(exc):
        return RESP_TOO_LARGE
    raise exc

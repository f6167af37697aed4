"""NTRIP 1.0: caster (asyncio), publishing server session and client session.

Wire dialect: ``SOURCE <password> /<mount>`` for publishers,
``GET /<mount> HTTP/1.0`` for subscribers, ``ICY 200 OK`` on success and a
``SOURCETABLE 200 OK`` directory for the root path or unknown mounts.
"""
from __future__ import annotations

import asyncio
import base64
import configparser
import hashlib
import hmac
import logging
import os
import socket
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Union

log = logging.getLogger(__name__)

DEFAULT_PORT = 2101
BUFFER_LIMIT = 256 * 1024
IDLE_TIMEOUT = 30.0
REQUEST_CAP = 4096
HASH_ITERATIONS = 20_000
AGENT = "NTRIP phonertk/0.1"

OK = b"ICY 200 OK\r\n\r\n"
BAD_PASSWORD = b"ERROR - Bad Password\r\n"
MOUNT_TAKEN = b"ERROR - Mount Point Taken or Invalid\r\n"
UNAUTHORIZED = b'HTTP/1.0 401 Unauthorized\r\nWWW-Authenticate: Basic realm="%s"\r\n\r\n'
BAD_REQUEST = b"HTTP/1.0 400 Bad Request\r\n\r\n"


class NtripError(Exception):
    pass


class NtripConnectionError(NtripError):
    pass


class MountpointUnknown(NtripError):
    def __init__(self, mount: str, sourcetable: str):
        super().__init__(f"mountpoint {mount!r} unknown to caster")
        self.sourcetable = sourcetable


class AuthError(NtripError):
    pass


# credentials

def hash_password(password: str, salt: Optional[bytes] = None, iterations: int = HASH_ITERATIONS) -> str:
    salt = os.urandom(16) if salt is None else salt
    dk = hashlib.pbkdf2_hmac("sha256", password.encode(), salt, iterations)
    return f"pbkdf2_sha256${iterations}${salt.hex()}${dk.hex()}"


def verify_password(password: str, stored: str) -> bool:
    try:
        algo, iters, salt, digest = stored.split("$")
    except ValueError:
        return False
    if algo != "pbkdf2_sha256":
        return False
    dk = hashlib.pbkdf2_hmac("sha256", password.encode(), bytes.fromhex(salt), int(iters))
    return hmac.compare_digest(dk.hex(), digest)


def basic_auth(user: str, password: str) -> str:
    return "Basic " + base64.b64encode(f"{user}:{password}".encode()).decode()


# sourcetable

@dataclass(frozen=True)
class SourcetableEntry:
    mountpoint: str
    identifier: str = ""
    format: str = "RTCM 3.2"
    nav_system: str = "GPS+GLO+GAL+BDS"
    carrier: int = 2
    country: str = ""
    latitude: float = 0.0
    longitude: float = 0.0
    auth_required: bool = False

    def __post_init__(self):
        m = self.mountpoint
        if not m or any(c.isspace() for c in m) or "/" in m:
            raise ValueError(f"invalid mountpoint {m!r}")
        for v in (m, self.identifier, self.format, self.nav_system, self.country):
            if ";" in v:
                raise ValueError(f"';' not allowed in sourcetable field {v!r}")

    def str_line(self) -> str:
        return (f"STR;{self.mountpoint};{self.identifier};{self.format};;{self.carrier};"
                f"{self.nav_system};;{self.country};{self.latitude:.2f};{self.longitude:.2f};"
                f"0;0;;;{'B' if self.auth_required else 'N'};N;0;;")


def sourcetable_text(entries) -> str:
    return "".join(e.str_line() + "\r\n" for e in entries) + "ENDSOURCETABLE\r\n"


def sourcetable_response(entries) -> bytes:
    body = sourcetable_text(entries).encode()
    head = (f"SOURCETABLE 200 OK\r\nServer: {AGENT}\r\nContent-Type: text/plain\r\n"
            f"Content-Length: {len(body)}\r\n\r\n").encode()
    return head + body


# requests

@dataclass(frozen=True)
class ClientSubscribe:
    mount: str
    credential: Optional[tuple[str, str]] = None


@dataclass(frozen=True)
class ServerPublish:
    mount: str
    password: str


@dataclass(frozen=True)
class SourcetableRequest:
    pass


@dataclass(frozen=True)
class Malformed:
    reason: str


Request = Union[ClientSubscribe, ServerPublish, SourcetableRequest, Malformed]


def parse_request(block: bytes, known_mounts=None) -> Request:
    """Classify the header block a connection opens with.

    ``known_mounts``, when given, turns a GET for anything else into a
    sourcetable request.
    """
    end = block.find(b"\r\n\r\n")
    if end < 0:
        if len(block) >= REQUEST_CAP:
            return Malformed("request header too long")
        return Malformed("request header not terminated")
    if end > REQUEST_CAP:
        return Malformed("request header too long")
    try:
        lines = block[:end].decode("latin-1").split("\r\n")
    except UnicodeDecodeError:  # pragma: no cover - latin-1 decodes anything
        return Malformed("undecodable request")
    first = lines[0].split()
    headers = {}
    for line in lines[1:]:
        k, sep, v = line.partition(":")
        if sep:
            headers[k.strip().lower()] = v.strip()

    if len(first) == 3 and first[0] == "GET" and first[2].startswith("HTTP/1."):
        path = first[1]
        if not path.startswith("/"):
            return Malformed(f"bad path {path!r}")
        mount = path[1:]
        if not mount or (known_mounts is not None and mount not in known_mounts):
            return SourcetableRequest()
        cred = None
        auth = headers.get("authorization", "")
        if auth:
            scheme, _, token = auth.partition(" ")
            if scheme.lower() != "basic":
                return Malformed("unsupported authorization scheme")
            try:
                user, sep, pw = base64.b64decode(token.strip(), validate=True).decode().partition(":")
            except (ValueError, UnicodeDecodeError):
                return Malformed("bad basic credentials")
            if not sep:
                return Malformed("bad basic credentials")
            cred = (user, pw)
        return ClientSubscribe(mount, cred)

    if len(first) == 3 and first[0] == "SOURCE":
        mount = first[2].lstrip("/")
        if not mount:
            return Malformed("SOURCE without mountpoint")
        return ServerPublish(mount, first[1])
    return Malformed(f"unrecognized request line {lines[0][:80]!r}")


# caster configuration

@dataclass
class MountConfig:
    entry: SourcetableEntry
    source_password: str  # salted hash
    users: Optional[frozenset] = None  # None: every configured user


@dataclass
class CasterConfig:
    host: str = "127.0.0.1"
    port: int = DEFAULT_PORT
    buffer_limit: int = BUFFER_LIMIT
    idle_timeout: float = IDLE_TIMEOUT
    mounts: dict = field(default_factory=dict)
    users: dict = field(default_factory=dict)  # name -> salted hash

    @classmethod
    def from_string(cls, text: str) -> "CasterConfig":
        cp = configparser.ConfigParser(interpolation=None)
        cp.read_string(text)
        c = cp["caster"] if cp.has_section("caster") else {}
        cfg = cls(
            host=c.get("host", "127.0.0.1"),
            port=int(c.get("port", DEFAULT_PORT)),
            buffer_limit=int(c.get("buffer_limit", BUFFER_LIMIT)),
            idle_timeout=float(c.get("idle_timeout", IDLE_TIMEOUT)),
        )
        if cp.has_section("users"):
            cfg.users = dict(cp["users"])
        for name in cp.sections():
            if not name.startswith("mount:"):
                continue
            s = cp[name]
            mount = name[len("mount:"):]
            auth = s.getboolean("auth", fallback=False)
            entry = SourcetableEntry(
                mountpoint=mount,
                identifier=s.get("identifier", ""),
                country=s.get("country", ""),
                latitude=s.getfloat("latitude", fallback=0.0),
                longitude=s.getfloat("longitude", fallback=0.0),
                auth_required=auth,
            )
            if "source_password" not in s:
                raise ValueError(f"[{name}] needs source_password")
            users = s.get("users")
            users = None if users is None else frozenset(u.strip() for u in users.split(",") if u.strip())
            if auth and not (users if users is not None else cfg.users):
                raise ValueError(f"[{name}] requires auth but no users are configured")
            cfg.mounts[mount] = MountConfig(entry, s["source_password"], users)
        return cfg

    @classmethod
    def load(cls, path) -> "CasterConfig":
        with open(path) as f:
            return cls.from_string(f.read())


def config_text(mounts: dict, port: int = DEFAULT_PORT, users: Optional[dict] = None,
                host: str = "127.0.0.1", **caster) -> str:
    """Render a caster config. ``mounts`` maps name -> dict of mount keys
    with plaintext ``password``; passwords are stored hashed."""
    out = ["[caster]", f"host = {host}", f"port = {port}"]
    out += [f"{k} = {v}" for k, v in caster.items()]
    for name, m in mounts.items():
        out += ["", f"[mount:{name}]", f"source_password = {hash_password(m['password'])}"]
        out += [f"{k} = {v}" for k, v in m.items() if k != "password"]
    if users:
        out += ["", "[users]"] + [f"{u} = {hash_password(p)}" for u, p in users.items()]
    return "\n".join(out) + "\n"


# caster

_EOF = None


class _Subscriber:
    def __init__(self, writer: asyncio.StreamWriter, limit: int):
        self.writer = writer
        self.limit = limit
        self.queue: asyncio.Queue = asyncio.Queue()
        self.buffered = 0
        self.closed = False
        self.overflowed = False

    def push(self, chunk) -> bool:
        if self.closed:
            return False
        if chunk is not _EOF:
            if self.buffered + len(chunk) > self.limit:
                self.overflowed = True
                self.close()
                return False
            self.buffered += len(chunk)
        self.queue.put_nowait(chunk)
        return True

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            self.queue.put_nowait(_EOF)
            if self.overflowed:
                # drop now; do not wait for the backlog to drain
                self.writer.transport.abort()


@dataclass
class MountpointState:
    config: MountConfig
    publisher: Optional[asyncio.StreamWriter] = None
    subscribers: set = field(default_factory=set)
    bytes_relayed: int = 0

    @property
    def entry(self) -> SourcetableEntry:
        return self.config.entry


class Caster:
    """Asyncio NTRIP caster. All state lives on the event loop thread."""

    def __init__(self, config: CasterConfig):
        self.config = config
        self.mounts = {m: MountpointState(c) for m, c in config.mounts.items()}
        self.server: Optional[asyncio.base_events.Server] = None
        self.rejected = 0

    @property
    def port(self) -> int:
        return self.server.sockets[0].getsockname()[1]

    async def start(self) -> None:
        self.server = await asyncio.start_server(self._handle, self.config.host, self.config.port)
        log.info("caster listening on %s:%d", self.config.host, self.port)

    async def serve_forever(self) -> None:
        if self.server is None:
            await self.start()
        async with self.server:
            await self.server.serve_forever()

    async def close(self) -> None:
        if self.server is not None:
            self.server.close()
            await self.server.wait_closed()
        for st in self.mounts.values():
            for sub in list(st.subscribers):
                sub.close()
            if st.publisher is not None:
                st.publisher.close()

    def disconnect_subscribers(self, mount: str) -> int:
        st = self.mounts[mount]
        subs = list(st.subscribers)
        for s in subs:
            s.writer.transport.abort()
            s.close()
        st.subscribers.clear()
        return len(subs)

    async def _read_request(self, reader) -> tuple[bytes, bytes]:
        buf = b""
        while b"\r\n\r\n" not in buf:
            if len(buf) >= REQUEST_CAP:
                return buf, b""
            chunk = await asyncio.wait_for(reader.read(REQUEST_CAP), self.config.idle_timeout)
            if not chunk:
                break
            buf += chunk
        end = buf.find(b"\r\n\r\n")
        if end < 0:
            return buf, b""
        return buf[:end + 4], buf[end + 4:]

    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        try:
            try:
                block, rest = await self._read_request(reader)
            except (asyncio.TimeoutError, ConnectionError):
                return
            req = parse_request(block, known_mounts=self.mounts)
            if isinstance(req, Malformed):
                log.info("malformed request: %s", req.reason)
                self.rejected += 1
                writer.write(BAD_REQUEST)
            elif isinstance(req, SourcetableRequest):
                writer.write(sourcetable_response(st.entry for st in self.mounts.values()))
            elif isinstance(req, ServerPublish):
                await self._publish(req, reader, writer, rest)
            else:
                await self._subscribe(req, reader, writer)
            await writer.drain()
        except (ConnectionError, asyncio.TimeoutError):
            pass
        finally:
            if not writer.is_closing():
                writer.close()

    async def _publish(self, req: ServerPublish, reader, writer, rest: bytes) -> None:
        st = self.mounts.get(req.mount)
        if st is None:
            self.rejected += 1
            writer.write(MOUNT_TAKEN)
            return
        ok = await asyncio.to_thread(verify_password, req.password, st.config.source_password)
        if not ok:
            self.rejected += 1
            writer.write(BAD_PASSWORD)
            return
        if st.publisher is not None:
            self.rejected += 1
            writer.write(MOUNT_TAKEN)
            return
        st.publisher = writer
        log.info("publisher on /%s", req.mount)
        writer.write(OK)
        try:
            await writer.drain()
            if rest:
                self._fan_out(st, rest)
            while True:
                chunk = await asyncio.wait_for(reader.read(65536), self.config.idle_timeout)
                if not chunk:
                    break
                self._fan_out(st, chunk)
        except (asyncio.TimeoutError, ConnectionError):
            pass
        finally:
            st.publisher = None
            for sub in list(st.subscribers):
                sub.push(_EOF)
            st.subscribers.clear()
            log.info("publisher left /%s after %d bytes", req.mount, st.bytes_relayed)

    def _fan_out(self, st: MountpointState, chunk: bytes) -> None:
        st.bytes_relayed += len(chunk)
        for sub in list(st.subscribers):
            if not sub.push(chunk):
                st.subscribers.discard(sub)
                log.warning("subscriber on /%s dropped (buffer overflow)", st.entry.mountpoint)

    async def _authorized(self, st: MountpointState, cred) -> bool:
        if not st.entry.auth_required:
            return True
        if cred is None:
            return False
        user, pw = cred
        allowed = st.config.users
        if allowed is not None and user not in allowed:
            return False
        stored = self.config.users.get(user)
        if stored is None:
            return False
        return await asyncio.to_thread(verify_password, pw, stored)

    async def _subscribe(self, req: ClientSubscribe, reader, writer) -> None:
        st = self.mounts[req.mount]
        if not await self._authorized(st, req.credential):
            self.rejected += 1
            writer.write(UNAUTHORIZED % f"/{req.mount}".encode())
            return
        sub = _Subscriber(writer, self.config.buffer_limit)
        st.subscribers.add(sub)
        writer.write(OK)
        watcher = asyncio.ensure_future(self._watch_client(reader, sub))
        try:
            while True:
                try:
                    chunk = await asyncio.wait_for(sub.queue.get(), self.config.idle_timeout)
                except asyncio.TimeoutError:
                    break
                if chunk is _EOF:
                    break
                writer.write(chunk)
                await writer.drain()
                sub.buffered -= len(chunk)
        finally:
            sub.closed = True
            st.subscribers.discard(sub)
            watcher.cancel()

    async def _watch_client(self, reader, sub: _Subscriber) -> None:
        # clients may upload GGA; we ignore it but notice the disconnect
        try:
            while await reader.read(4096):
                pass
        except ConnectionError:
            pass
        sub.close()


class CasterThread:
    """Run a caster on a private event loop in a daemon thread."""

    def __init__(self, config: CasterConfig):
        self.caster = Caster(config)
        self.loop = asyncio.new_event_loop()
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._ready = threading.Event()
        self._error: Optional[BaseException] = None

    def _run(self) -> None:
        asyncio.set_event_loop(self.loop)
        try:
            self.loop.run_until_complete(self.caster.start())
        except BaseException as e:  # surfaced in start()
            self._error = e
            self._ready.set()
            return
        self._ready.set()
        self.loop.run_forever()

    def start(self) -> "CasterThread":
        self._thread.start()
        self._ready.wait()
        if self._error is not None:
            raise self._error
        return self

    @property
    def port(self) -> int:
        return self.caster.port

    def call(self, fn: Callable, *args):
        """Run ``fn(*args)`` on the caster loop and return its result."""
        async def run():
            return fn(*args)
        return asyncio.run_coroutine_threadsafe(run(), self.loop).result()

    def stop(self) -> None:
        if self.loop.is_running():
            asyncio.run_coroutine_threadsafe(self.caster.close(), self.loop).result(5)
            self.loop.call_soon_threadsafe(self.loop.stop)
        self._thread.join(5)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


# sessions

def _read_header(sock: socket.socket, buf: bytes = b"") -> tuple[bytes, bytes]:
    """Read up to the end of the first line; returns (line, remaining bytes)."""
    while b"\r\n" not in buf:
        chunk = sock.recv(4096)
        if not chunk:
            break
        buf += chunk
        if len(buf) > REQUEST_CAP:
            break
    line, _, rest = buf.partition(b"\r\n")
    return line, rest


def _connect(host: str, port: int, timeout: float) -> socket.socket:
    try:
        return socket.create_connection((host, port), timeout=timeout)
    except OSError as e:
        raise NtripConnectionError(f"cannot connect to caster {host}:{port}: {e}") from e


class NtripServer:
    """Publishing session: SOURCE handshake then raw byte upload."""

    def __init__(self, host: str, port: int, mount: str, password: str, timeout: float = 10.0):
        self.host, self.port, self.mount = host, port, mount
        self.password = password
        self.timeout = timeout
        self.sock: Optional[socket.socket] = None
        self.sent = 0

    def connect(self) -> "NtripServer":
        sock = _connect(self.host, self.port, self.timeout)
        sock.sendall(f"SOURCE {self.password} /{self.mount}\r\nSource-Agent: {AGENT}\r\n\r\n".encode())
        line, _ = _read_header(sock)
        if not line.startswith(b"ICY 200 OK"):
            sock.close()
            status = line.decode("latin-1").strip() or "connection closed"
            if b"Bad Password" in line:
                raise AuthError(status)
            raise NtripError(status)
        self.sock = sock
        return self

    def send(self, data: bytes) -> None:
        if self.sock is None:
            raise NtripError("not connected")
        self.sock.sendall(data)
        self.sent += len(data)

    def close(self) -> None:
        if self.sock is not None:
            try:
                self.sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self.sock.close()
            self.sock = None

    def __enter__(self):
        return self.connect()

    def __exit__(self, *exc):
        self.close()


@dataclass
class Backoff:
    base: float = 1.0
    factor: float = 2.0
    cap: float = 60.0

    def delays(self) -> Iterator[float]:
        d = self.base
        while True:
            yield d
            d = min(d * self.factor, self.cap)


def _handshake(sock: socket.socket, mount: str, credential) -> bytes:
    req = f"GET /{mount} HTTP/1.0\r\nUser-Agent: {AGENT}\r\n"
    if credential is not None:
        req += f"Authorization: {basic_auth(*credential)}\r\n"
    sock.sendall((req + "\r\n").encode())
    line, rest = _read_header(sock)
    if line.startswith(b"ICY 200 OK"):
        while len(rest) < 2:
            chunk = sock.recv(4096)
            if not chunk:
                break
            rest += chunk
        return rest[2:] if rest.startswith(b"\r\n") else rest
    if line.startswith(b"SOURCETABLE 200 OK"):
        data = rest
        while b"ENDSOURCETABLE" not in data:
            chunk = sock.recv(4096)
            if not chunk:
                break
            data += chunk
        _, _, body = data.partition(b"\r\n\r\n")
        raise MountpointUnknown(mount, body.decode("latin-1"))
    status = line.decode("latin-1").strip() or "connection closed during handshake"
    if b" 401" in line:
        raise AuthError(status)
    raise NtripError(status)


def client_session(host: str, port: int, mount: str, credential: Optional[tuple[str, str]] = None,
                   reconnect: bool = False, timeout: float = 10.0, backoff: Optional[Backoff] = None,
                   sleep: Callable[[float], None] = time.sleep,
                   on_connect: Optional[Callable[[], None]] = None) -> Iterator[bytes]:
    """Subscribe to ``mount`` and yield relayed bytes.

    Rejections (unknown mount, bad credentials) are terminal. With
    ``reconnect`` a dropped or refused connection is retried after
    exponentially growing pauses; otherwise it ends the stream or raises.
    """
    backoff = backoff or Backoff()
    delays = backoff.delays()
    while True:
        try:
            sock = _connect(host, port, timeout)
            try:
                first = _handshake(sock, mount, credential)
            except OSError as e:
                sock.close()
                raise NtripConnectionError(f"handshake with {host}:{port} failed: {e}") from e
        except NtripConnectionError:
            if not reconnect:
                raise
            d = next(delays)
            log.warning("caster unreachable, retrying in %.0f s", d)
            sleep(d)
            continue
        delays = backoff.delays()
        if on_connect is not None:
            on_connect()
        try:
            if first:
                yield first
            sock.settimeout(None)
            while True:
                try:
                    chunk = sock.recv(65536)
                except OSError:
                    chunk = b""
                if not chunk:
                    break
                yield chunk
        finally:
            sock.close()
        if not reconnect:
            return
        d = next(delays)
        log.warning("stream dropped, reconnecting in %.0f s", d)
        sleep(d)

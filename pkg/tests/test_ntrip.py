import base64
import socket
import threading
import time

import numpy as np
import pytest

from phonertk import ntrip
from phonertk.ntrip import (AuthError, CasterThread, ClientSubscribe, Malformed, MountpointUnknown,
                            NtripConnectionError, NtripError, NtripServer, ServerPublish, SourcetableRequest,
                            parse_request)
from phonertk.rtcm import FrameScanner

from factories import frame_stream
from ntrip_harness import PASSWORD, Subscriber, caster_config, subscriber_count, wait_for


# request grammar

def test_parse_examples():
    assert parse_request(b"GET /SIM0 HTTP/1.0\r\nUser-Agent: NTRIP test\r\n\r\n") == ClientSubscribe("SIM0", None)
    assert parse_request(b"SOURCE letmein /SIM0\r\nSource-Agent: NTRIP base\r\n\r\n") == ServerPublish("SIM0", "letmein")
    assert parse_request(b"GET / HTTP/1.0\r\n\r\n") == SourcetableRequest()


def test_parse_credentials_and_unknown_mount():
    tok = base64.b64encode(b"alice:pw:with:colons").decode()
    req = parse_request(f"GET /SIM0 HTTP/1.1\r\nAuthorization: Basic {tok}\r\n\r\n".encode())
    assert req == ClientSubscribe("SIM0", ("alice", "pw:with:colons"))
    assert parse_request(b"GET /NOPE HTTP/1.0\r\n\r\n", known_mounts={"SIM0"}) == SourcetableRequest()


@pytest.mark.parametrize("block", [
    b"GET /SIM0 HTTP/1.0\r\n",  # unterminated
    b"POST /SIM0 HTTP/1.0\r\n\r\n",
    b"SOURCE pw /\r\n\r\n",
    b"GET /SIM0 HTTP/1.0\r\nAuthorization: Digest abc\r\n\r\n",
    b"GET /SIM0 HTTP/1.0\r\nAuthorization: Basic !!!\r\n\r\n",
    b"GET /SIM0 HTTP/1.0\r\nX: " + b"a" * 5000 + b"\r\n\r\n",
])
def test_parse_malformed(block):
    assert isinstance(parse_request(block), Malformed)


# credentials and configuration

def test_password_hashing():
    h = ntrip.hash_password("secret")
    assert h.startswith("pbkdf2_sha256$") and "secret" not in h
    assert ntrip.verify_password("secret", h)
    assert not ntrip.verify_password("Secret", h)
    assert not ntrip.verify_password("secret", "garbage")
    assert ntrip.hash_password("secret") != h  # salted


def test_config_round_trip():
    cfg = caster_config(auth=True, idle_timeout=3.0)
    assert cfg.port == 0 and cfg.idle_timeout == 3.0
    m = cfg.mounts["SIM0"]
    assert m.entry.auth_required and ntrip.verify_password(PASSWORD, m.source_password)
    assert ntrip.verify_password("wonderland", cfg.users["alice"])


def test_config_auth_without_users():
    text = f"[mount:X]\nsource_password = {ntrip.hash_password('p')}\nauth = true\n"
    with pytest.raises(ValueError, match="no users"):
        ntrip.CasterConfig.from_string(text)
    with pytest.raises(ValueError, match="source_password"):
        ntrip.CasterConfig.from_string("[mount:X]\nauth = false\n")


def test_sourcetable_format():
    e = ntrip.SourcetableEntry("SIM0", "test", latitude=40.0, longitude=116.3)
    text = ntrip.sourcetable_text([e])
    assert text.startswith("STR;SIM0;test;RTCM 3.2;") and text.endswith("ENDSOURCETABLE\r\n")
    with pytest.raises(ValueError):
        ntrip.SourcetableEntry("bad mount")


# loopback

@pytest.fixture
def caster():
    with CasterThread(caster_config(idle_timeout=3.0)) as ct:
        yield ct


@pytest.fixture
def auth_caster():
    with CasterThread(caster_config(auth=True, idle_timeout=3.0)) as ct:
        yield ct


def _frames(n, seed=0):
    rng = np.random.default_rng(seed)
    return [bytes(f) for f in _split(frame_stream(rng, n, garbage=0)[0])]


def _split(data):
    out, i = [], 0
    while i < len(data):
        n = ((data[i + 1] & 3) << 8) | data[i + 2]
        out.append(data[i:i + n + 6])
        i += n + 6
    return out


def test_unknown_mount_returns_sourcetable(caster):
    with pytest.raises(MountpointUnknown) as exc:
        next(ntrip.client_session("127.0.0.1", caster.port, "NOPE"))
    assert "STR;SIM0;" in exc.value.sourcetable


def test_fan_out_byte_equality(caster):
    subs = [Subscriber(caster.port) for _ in range(3)]
    for s in subs:
        s.start()
    assert all(s.connected.wait(5) for s in subs)
    assert wait_for(lambda: subscriber_count(caster) == 3)
    frames = _frames(100)
    with NtripServer("127.0.0.1", caster.port, "SIM0", PASSWORD) as srv:
        for f in frames:
            srv.send(f)
    for s in subs:
        s.join(5)
        assert not s.is_alive() and s.error is None
        assert bytes(s.data) == b"".join(frames)


def test_second_source_rejected(caster):
    frames = _frames(20, seed=1)
    sub = Subscriber(caster.port)
    sub.start()
    sub.connected.wait(5)
    assert wait_for(lambda: subscriber_count(caster) == 1)
    with NtripServer("127.0.0.1", caster.port, "SIM0", PASSWORD) as first:
        first.send(b"".join(frames[:10]))
        with pytest.raises(NtripError, match="Taken"):
            NtripServer("127.0.0.1", caster.port, "SIM0", PASSWORD).connect()
        first.send(b"".join(frames[10:]))
    sub.join(5)
    assert bytes(sub.data) == b"".join(frames)


def test_bad_source_password(caster):
    with pytest.raises(AuthError):
        NtripServer("127.0.0.1", caster.port, "SIM0", "wrong").connect()
    with pytest.raises(NtripError):
        NtripServer("127.0.0.1", caster.port, "NOPE", PASSWORD).connect()


def test_auth_required(auth_caster):
    with pytest.raises(AuthError):
        next(ntrip.client_session("127.0.0.1", auth_caster.port, "SIM0", ("alice", "nope")))
    with pytest.raises(AuthError):
        next(ntrip.client_session("127.0.0.1", auth_caster.port, "SIM0"))
    sub = Subscriber(auth_caster.port, credential=("alice", "wonderland"))
    sub.start()
    assert sub.connected.wait(5) and sub.error is None
    with NtripServer("127.0.0.1", auth_caster.port, "SIM0", PASSWORD) as srv:
        srv.send(b"hello")
    sub.join(5)
    assert bytes(sub.data) == b"hello"


def test_mid_stream_join_gets_suffix(caster):
    frames = _frames(60, seed=2)
    with NtripServer("127.0.0.1", caster.port, "SIM0", PASSWORD) as srv:
        for f in frames[:30]:
            srv.send(f)
        time.sleep(0.2)
        late = Subscriber(caster.port)
        late.start()
        late.connected.wait(5)
        assert wait_for(lambda: subscriber_count(caster) == 1)
        for f in frames[30:]:
            srv.send(f)
    late.join(5)
    whole = b"".join(frames)
    assert whole.endswith(bytes(late.data)) and len(late.data) >= len(b"".join(frames[30:]))
    got = FrameScanner().feed(bytes(late.data))
    assert [frame_payload(f) for f in frames[30:]] == got[-30:]


def frame_payload(f):
    return f[3:-3]


def test_publisher_leaving_ends_subscriptions(caster):
    sub = Subscriber(caster.port)
    sub.start()
    sub.connected.wait(5)
    srv = NtripServer("127.0.0.1", caster.port, "SIM0", PASSWORD).connect()
    srv.send(b"abc")
    t0 = time.monotonic()
    srv.close()
    sub.join(5)
    assert not sub.is_alive() and time.monotonic() - t0 < 3.0


def test_reconnect_resumes_stream(caster):
    stop = threading.Event()

    def sleep(d):
        if stop.is_set():
            raise RuntimeError("test over")
        time.sleep(0.05)

    sub = Subscriber(caster.port, reconnect=True, sleep=sleep)
    sub.start()
    sub.connected.wait(5)
    assert wait_for(lambda: subscriber_count(caster) == 1)
    frames = _frames(40, seed=3)
    srv = NtripServer("127.0.0.1", caster.port, "SIM0", PASSWORD).connect()
    for f in frames[:20]:
        srv.send(f)
    assert wait_for(lambda: len(sub.data) == len(b"".join(frames[:20])))
    assert caster.call(caster.caster.disconnect_subscribers, "SIM0") == 1
    assert wait_for(lambda: sub.connects == 2 and subscriber_count(caster) == 1)
    # a partial frame in front of the resumed data must not confuse the scanner
    srv.send(frames[20][:7])
    for f in frames[21:]:
        srv.send(f)
    srv.close()
    assert wait_for(lambda: len(sub.data) >= len(b"".join(frames[:20] + frames[21:])) + 7)
    stop.set()
    got = FrameScanner().feed(bytes(sub.data))
    assert got == [frame_payload(f) for f in frames[:20] + frames[21:]]


def test_dead_caster():
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    with pytest.raises(NtripConnectionError):
        next(ntrip.client_session("127.0.0.1", port, "SIM0", timeout=1))


def test_malformed_request_gets_400(caster):
    with socket.create_connection(("127.0.0.1", caster.port), timeout=3) as s:
        s.sendall(b"HELLO\r\n\r\n")
        assert s.recv(100).startswith(b"HTTP/1.0 400")


def test_slow_subscriber_is_dropped():
    class Transport:
        aborted = False

        def abort(self):
            self.aborted = True

    class Writer:
        transport = Transport()

    sub = ntrip._Subscriber(Writer(), limit=10)
    assert sub.push(b"12345") and sub.push(b"67890")
    assert not sub.push(b"x")
    assert sub.overflowed and Writer.transport.aborted


def test_backoff_grows_and_caps():
    d = ntrip.Backoff(1, 2, 10).delays()
    assert [next(d) for _ in range(6)] == [1, 2, 4, 8, 10, 10]

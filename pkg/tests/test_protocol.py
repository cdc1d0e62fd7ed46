import socket
import struct
import threading

import numpy as np
import pytest

from sensorprint.errors import CorruptFingerprint, DuplicateDevice, ProtocolError, TransportError
from sensorprint.fingerprint import FrequencyGrid, bootstrap, save_fingerprint, schedule_challenges
from sensorprint.protocol import (
    AuthAttempt,
    AuthOutcome,
    AuthStatus,
    DeviceAgent,
    Registry,
    Verifier,
    VerifierClient,
    VerifierServer,
    run_auth_session,
    verify,
)
from sensorprint.protocol import wire
from sensorprint.protocol.agent import parse_address
from sensorprint.sensors import Environment, Responder, default_challenge, get_preset, instantiate

GRID = FrequencyGrid(1000, 20_000, 1000)
STILL = Environment(temp_jitter_std=0.0)
NOW = 1_700_000_000


def genuine(device_id, seed=0, model="LM61", noiseless=True):
    m = get_preset(model)
    if noiseless:
        m = m.noiseless()
    inst = instantiate(m, seed)
    fp = bootstrap(Responder(inst, (seed, 0)), GRID, 3, default_challenge(m), STILL, device_id)
    agent = DeviceAgent(device_id, Responder(inst, (seed, 1)), default_challenge(m), STILL, 10, GRID)
    return fp, agent


@pytest.fixture
def registry(tmp_path):
    with Registry(tmp_path / "reg") as reg:
        yield reg


class TestWire:
    MESSAGES = [
        wire.EnrollRequest("dev-1", 0.01, 10, 2, "version=1\n"),
        wire.EnrollResponse(wire.EnrollCode.DUPLICATE_DEVICE, 1234, "already there"),
        AuthAttempt("dev-1", -3, ((1000.0, 0.25), (5000.0, 1e-300)), 2),
        AuthOutcome(AuthStatus.RETRY, 0.0125, 1),
        AuthOutcome(AuthStatus.UNKNOWN_DEVICE, None, 1),
        wire.ErrorMessage(wire.ErrorCode.MALFORMED_FRAME, "bad"),
    ]

    @pytest.mark.parametrize("msg", MESSAGES)
    def test_round_trip(self, msg):
        assert wire.decode_frame(wire.encode_frame(msg)) == msg

    def test_auth_resp_bytes(self):
        # hand-assembled frame: length covers type byte + payload
        payload = b"\x00\x01" + struct.pack(">d", 0.5) + b"\x00\x00\x00\x01"
        expected = struct.pack(">I", 1 + len(payload)) + b"\x04" + payload
        assert wire.encode_frame(AuthOutcome(AuthStatus.ACCEPTED, 0.5, 1)) == expected

    def test_auth_req_bytes(self):
        payload = (b"\x00\x01d" + struct.pack(">q", 7) + struct.pack(">I", 1) + struct.pack(">I", 1)
                   + struct.pack(">dd", 1000.0, 0.75))
        expected = struct.pack(">I", 1 + len(payload)) + b"\x03" + payload
        assert wire.encode_frame(AuthAttempt("d", 7, ((1000.0, 0.75),), 1)) == expected

    @pytest.mark.parametrize(
        "frame",
        [
            b"",
            b"\x00\x00\x00\x01",
            b"\x00\x00\x00\x01\x55",
            b"\x00\x00\x00\x05\x04\x00",
            wire.encode_frame(AuthOutcome(AuthStatus.ACCEPTED, 0.5, 1)) + b"\x00",
            b"\x00\x00\x00\x02\x04\x09",
        ],
    )
    def test_malformed(self, frame):
        with pytest.raises(ProtocolError):
            wire.decode_frame(frame)

    def test_trailing_bytes(self):
        frame = bytearray(wire.encode_frame(AuthOutcome(AuthStatus.ACCEPTED, 0.5, 1)) + b"\x00")
        frame[:4] = struct.pack(">I", len(frame) - 4)
        with pytest.raises(ProtocolError):
            wire.decode_frame(bytes(frame))

    def test_parse_address(self):
        assert parse_address("127.0.0.1:80") == ("127.0.0.1", 80)
        assert parse_address(":9") == ("127.0.0.1", 9)
        with pytest.raises(ValueError):
            parse_address("localhost")


class TestRegistry:
    def test_enroll_and_lookup(self, registry):
        fp, _ = genuine("dev-1")
        rec = registry.enroll("dev-1", fp, 0.01, 10, 2)
        got = registry.get("dev-1")
        assert (got.theta, got.P, got.max_retries) == (0.01, 10, 2)
        assert rec == got
        assert registry.fingerprint("dev-1") == fp

    def test_duplicate(self, registry):
        fp, _ = genuine("dev-1")
        registry.enroll("dev-1", fp)
        with pytest.raises(DuplicateDevice):
            registry.enroll("dev-1", fp)

    def test_enroll_from_file(self, registry, tmp_path):
        fp, _ = genuine("dev-1")
        save_fingerprint(tmp_path / "dev.fp", fp)
        registry.enroll("dev-1", tmp_path / "dev.fp")
        assert registry.fingerprint("dev-1") == fp

    def test_corrupt_file(self, registry, tmp_path):
        (tmp_path / "bad.fp").write_text("version=1\ndevice_id=x\n")
        with pytest.raises(CorruptFingerprint):
            registry.enroll("dev-1", tmp_path / "bad.fp")
        assert "dev-1" not in registry

    @pytest.mark.parametrize("bad", ["", "../x", "a b", "-lead", "x" * 200])
    def test_bad_device_id(self, registry, bad):
        fp, _ = genuine("dev-1")
        with pytest.raises(ValueError):
            registry.enroll(bad, fp)

    def test_P_larger_than_grid(self, registry):
        fp, _ = genuine("dev-1")
        with pytest.raises(CorruptFingerprint):
            registry.enroll("dev-1", fp, P=21)

    def test_survives_restart(self, tmp_path):
        fp, _ = genuine("dev-1")
        with Registry(tmp_path / "r") as reg:
            reg.enroll("dev-1", fp, 0.02, 5, 3, enrolled_at=99)
            reg.consume("dev-1", 42)
        with Registry(tmp_path / "r") as reg:
            rec = reg.get("dev-1")
            assert (rec.theta, rec.P, rec.max_retries, rec.enrolled_at) == (0.02, 5, 3, 99)
            assert reg.fingerprint("dev-1") == fp
            assert reg.is_consumed("dev-1", 42)
            assert not reg.consume("dev-1", 42)

    def test_torn_log_line_ignored(self, tmp_path):
        with Registry(tmp_path / "r") as reg:
            reg.consume("dev-1", 1)
        with open(tmp_path / "r" / "consumed.log", "a") as fh:
            fh.write("dev-1 12")
        with Registry(tmp_path / "r") as reg:
            assert reg.is_consumed("dev-1", 1)
            assert not reg.is_consumed("dev-1", 12)
            reg.consume("dev-1", 5)
        with Registry(tmp_path / "r") as reg:
            assert reg.is_consumed("dev-1", 5)


class TestVerify:
    def enrolled(self, registry, device_id="dev-1", **kw):
        fp, agent = genuine(device_id, **kw)
        registry.enroll(device_id, fp, 0.01, 10, 2)
        return fp, agent

    def test_genuine_noiseless_accepted(self, registry):
        _, agent = self.enrolled(registry)
        out = verify(registry, agent.attempt(NOW), NOW)
        assert out.status is AuthStatus.ACCEPTED and out.epsilon == 0.0

    def test_unknown_device(self, registry):
        _, agent = genuine("ghost")
        assert verify(registry, agent.attempt(NOW), NOW).status is AuthStatus.UNKNOWN_DEVICE

    def test_replay(self, registry):
        _, agent = self.enrolled(registry)
        att = agent.attempt(NOW)
        assert verify(registry, att, NOW).accepted
        assert verify(registry, att, NOW).status is AuthStatus.REPLAY_REJECTED

    def test_stale_and_future(self, registry):
        _, agent = self.enrolled(registry)
        assert verify(registry, agent.attempt(NOW - 31), NOW).status is AuthStatus.REPLAY_REJECTED
        assert verify(registry, agent.attempt(NOW + 31), NOW).status is AuthStatus.REPLAY_REJECTED
        assert verify(registry, agent.attempt(NOW - 30), NOW).accepted

    def test_replay_across_restart(self, tmp_path):
        fp, agent = genuine("dev-1")
        att = agent.attempt(NOW)
        with Registry(tmp_path / "r") as reg:
            reg.enroll("dev-1", fp)
            assert verify(reg, att, NOW).accepted
        with Registry(tmp_path / "r") as reg:
            assert verify(reg, att, NOW).status is AuthStatus.REPLAY_REJECTED
            assert verify(reg, agent.attempt(NOW + 1), NOW).accepted

    def test_single_frequency_tampering(self, registry):
        _, agent = self.enrolled(registry)
        att = agent.attempt(NOW)
        scheduled = {f for f, _ in att.points}
        for i in range(len(att.points)):
            spare = next(f for f in GRID.frequencies() if f not in scheduled)
            pts = list(att.points)
            pts[i] = (float(spare), pts[i][1])
            bad = AuthAttempt(att.device_id, att.timestamp, tuple(pts), 1)
            assert verify(registry, bad, NOW).status is AuthStatus.MALFORMED_CHALLENGE_SET
        # malformed submissions did not consume the timestamp
        assert verify(registry, att, NOW).accepted

    def test_reordered_or_truncated_set(self, registry):
        _, agent = self.enrolled(registry)
        att = agent.attempt(NOW)
        for pts in (att.points[::-1], att.points[:-1], att.points + ((20_000.0, 0.0),)):
            bad = AuthAttempt(att.device_id, att.timestamp, pts, 1)
            assert verify(registry, bad, NOW).status is AuthStatus.MALFORMED_CHALLENGE_SET

    def test_non_finite_rms(self, registry):
        _, agent = self.enrolled(registry)
        att = agent.attempt(NOW)
        pts = ((att.points[0][0], float("nan")),) + att.points[1:]
        assert verify(registry, AuthAttempt("dev-1", NOW, pts), NOW).status is AuthStatus.MALFORMED_CHALLENGE_SET

    def test_retry_then_reject(self, registry):
        self.enrolled(registry)
        freqs = schedule_challenges(NOW, "dev-1", 10, GRID)
        zeros = tuple((f, 0.0) for f in freqs)
        assert verify(registry, AuthAttempt("dev-1", NOW, zeros, 1), NOW).status is AuthStatus.RETRY
        freqs = schedule_challenges(NOW + 1, "dev-1", 10, GRID)
        zeros = tuple((f, 0.0) for f in freqs)
        out = verify(registry, AuthAttempt("dev-1", NOW + 1, zeros, 2), NOW)
        assert out.status is AuthStatus.REJECTED and out.epsilon > 0.01

    def test_safety_and_liveness(self, registry):
        fp, agent = self.enrolled(registry, noiseless=False)
        for k in range(20):
            att = agent.attempt(NOW + k)
            out = verify(registry, att, NOW + k)
            expected = fp.rms_at([f for f, _ in att.points])
            eps = float(np.sqrt(np.mean((expected - [x for _, x in att.points]) ** 2)))
            assert out.epsilon == pytest.approx(eps, rel=1e-12)
            assert out.accepted == (eps <= 0.01)


class ZeroAgent(DeviceAgent):
    def attempt(self, timestamp, attempt_index=1):
        freqs = schedule_challenges(timestamp, self.device_id, self.P, self.grid)
        return AuthAttempt(self.device_id, timestamp, tuple((f, 0.0) for f in freqs), attempt_index)


class TestSession:
    def test_genuine_first_attempt(self, registry):
        fp, agent = genuine("dev-1")
        registry.enroll("dev-1", fp)
        out = run_auth_session(agent, Verifier(registry), "dev-1", NOW)
        assert out.status is AuthStatus.ACCEPTED and out.attempts_used == 1

    def test_zero_agent_exhausts_retries(self, registry):
        fp, agent = genuine("dev-1")
        registry.enroll("dev-1", fp, max_retries=3)
        zero = ZeroAgent("dev-1", agent.respond_fn, agent.challenge_template, STILL, 10, GRID)
        out = run_auth_session(zero, Verifier(registry), "dev-1", NOW)
        assert out.status is AuthStatus.REJECTED and out.attempts_used == 3

    def test_impostor_other_model_rejected(self, registry):
        fp, _ = genuine("dev-1", model="LM61", noiseless=False)
        registry.enroll("dev-1", fp)
        _, imp = genuine("dev-1", seed=8, model="MCP9700", noiseless=False)
        out = run_auth_session(imp, Verifier(registry), "dev-1", NOW)
        assert out.status is AuthStatus.REJECTED and out.attempts_used == 2

    def test_transport_error_keeps_count(self):
        class Flaky:
            calls = 0

            def submit(self, attempt, now):
                self.calls += 1
                if self.calls == 2:
                    raise TransportError("link down")
                return AuthOutcome(AuthStatus.RETRY, 1.0, attempt.attempt_index)

        _, agent = genuine("dev-1")
        with pytest.raises(TransportError) as info:
            run_auth_session(agent, Flaky(), "dev-1", NOW)
        assert info.value.attempts_used == 1

    def test_wrong_device(self):
        _, agent = genuine("dev-1")
        with pytest.raises(ValueError):
            run_auth_session(agent, None, "dev-2", NOW)


@pytest.fixture
def server(tmp_path):
    reg = Registry(tmp_path / "srv", durable=False)
    srv = VerifierServer(reg, clock=lambda: NOW)
    srv.start_background()
    yield srv
    srv.shutdown()
    srv.server_close()
    reg.close()


class TestServer:
    def test_enroll_and_authenticate(self, server):
        fp, agent = genuine("dev-1")
        with VerifierClient(server.address) as client:
            assert client.enroll("dev-1", fp, 0.01, 10, 2).code == wire.EnrollCode.OK
            assert client.enroll("dev-1", fp, 0.01, 10, 2).code == wire.EnrollCode.DUPLICATE_DEVICE
            out = run_auth_session(agent, client, "dev-1", NOW)
        assert out.accepted and out.epsilon == 0.0

    def test_enroll_rejects_bad_text(self, server):
        with VerifierClient(server.address) as client:
            reply = client._request(wire.EnrollRequest("dev-1", 0.01, 10, 2, "/etc/passwd"))
        assert reply.code == wire.EnrollCode.CORRUPT_FINGERPRINT

    def test_garbage_frame(self, server):
        host, port = parse_address(server.address)
        with socket.create_connection((host, port), timeout=5) as s:
            s.sendall(b"\x00\x00\x00\x02\x55\x00")
            reply = wire.read_frame(s)
        assert isinstance(reply, wire.ErrorMessage)

    def test_unexpected_type(self, server):
        host, port = parse_address(server.address)
        with socket.create_connection((host, port), timeout=5) as s:
            wire.write_frame(s, AuthOutcome(AuthStatus.ACCEPTED, 0.0, 1))
            reply = wire.read_frame(s)
        assert reply.code == wire.ErrorCode.UNSUPPORTED_TYPE

    def test_hundred_concurrent_devices(self, server):
        agents = {}
        for i in range(100):
            fp, agent = genuine(f"dev-{i}", seed=i)
            server.registry.enroll(f"dev-{i}", fp)
            agents[f"dev-{i}"] = agent
        results, errors = {}, []
        barrier = threading.Barrier(100)

        def run(dev):
            try:
                with VerifierClient(server.address) as client:
                    barrier.wait()
                    results[dev] = run_auth_session(agents[dev], client, dev, NOW)
            except Exception as exc:  # surfaced below
                errors.append(exc)

        threads = [threading.Thread(target=run, args=(d,)) for d in agents]
        for t in threads:
            t.start()
        for t in threads:
            t.join(30)
        assert not errors
        assert len(results) == 100
        assert all(o.accepted and o.epsilon == 0.0 for o in results.values())
        assert all(server.registry.is_consumed(d, NOW) for d in agents)

    def test_unreachable_verifier(self):
        s = socket.socket()
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
        s.close()
        _, agent = genuine("dev-1")
        with pytest.raises(TransportError) as info:
            with VerifierClient(("127.0.0.1", port), timeout=1) as client:
                run_auth_session(agent, client, "dev-1", NOW)
        assert info.value.attempts_used == 0

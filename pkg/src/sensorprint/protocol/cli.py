"""``verifier`` and ``agent`` command-line programs."""

from __future__ import annotations

import argparse
import logging
import sys
import time

from ..errors import SensorprintError
from ..fingerprint import DEFAULT_P, DEFAULT_THETA, FrequencyGrid, bootstrap, load_fingerprint, save_fingerprint
from ..sensors import Environment, Responder, builtin_presets, default_challenge, instantiate, load_models
from .agent import DeviceAgent, VerifierClient, parse_address, run_auth_session
from .registry import DEFAULT_MAX_RETRIES, Registry
from .server import VerifierServer
from .verifier import DEFAULT_FRESHNESS


def _fail(exc: BaseException) -> int:
    msg = str(exc).replace("\n", " ")
    print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
    return 1


def _matching_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--theta", type=float, default=DEFAULT_THETA)
    p.add_argument("--P", type=int, default=DEFAULT_P)
    p.add_argument("--max-retries", type=int, default=DEFAULT_MAX_RETRIES)


def verifier_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="verifier", description="Sensor fingerprint verifier.")
    sub = parser.add_subparsers(dest="cmd", required=True)

    serve = sub.add_parser("serve", help="accept enrollments and authentication attempts over TCP")
    serve.add_argument("--registry", required=True, help="registry directory (created if missing)")
    serve.add_argument("--listen", default="127.0.0.1:7420", help="HOST:PORT to bind")
    serve.add_argument("--freshness", type=int, default=DEFAULT_FRESHNESS, help="accepted clock skew in seconds")
    serve.add_argument("--no-fsync", action="store_true", help="skip fsync on registry writes")

    enroll = sub.add_parser("enroll", help="enroll a device from a fingerprint file, offline")
    enroll.add_argument("--registry", required=True)
    enroll.add_argument("--device", required=True)
    enroll.add_argument("--fingerprint", required=True)
    _matching_args(enroll)

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s")
    try:
        if args.cmd == "enroll":
            with Registry(args.registry) as reg:
                rec = reg.enroll(args.device, args.fingerprint, args.theta, args.P, args.max_retries)
            print(f"enrolled {rec.device_id} theta={rec.theta} P={rec.P} max_retries={rec.max_retries}")
            return 0
        reg = Registry(args.registry, durable=not args.no_fsync)
        server = VerifierServer(reg, parse_address(args.listen), args.freshness)
        logging.info("verifier listening on %s (%d devices enrolled)", server.address, len(reg))
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass
        finally:
            server.server_close()
            reg.close()
        return 0
    except (SensorprintError, OSError, ValueError) as exc:
        return _fail(exc)


def _sim_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", default=builtin_presets()[0].name, help="sensor preset or model-file entry")
    p.add_argument("--model-file", help="plain-text model file with custom models")
    p.add_argument("--seed", type=int, required=True, help="instance seed of the simulated sensor")
    p.add_argument("--temperature", type=float, default=25.0)
    p.add_argument("--grid", type=FrequencyGrid.parse, default=FrequencyGrid(), help="F_MIN:F_MAX:STEP in Hz")


def _instance(args):
    models = {m.name.lower(): m for m in builtin_presets()}
    if args.model_file:
        models.update({m.name.lower(): m for m in load_models(args.model_file)})
    try:
        model = models[args.model.lower()]
    except KeyError:
        raise ValueError(f"unknown model {args.model!r}") from None
    return instantiate(model, args.seed)


def agent_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="agent", description="Simulated sensor device agent.")
    sub = parser.add_subparsers(dest="cmd", required=True)

    auth = sub.add_parser("authenticate", help="run an authentication session against a verifier")
    auth.add_argument("--device", required=True)
    auth.add_argument("--verifier", required=True, help="verifier HOST:PORT")
    auth.add_argument("--P", type=int, default=DEFAULT_P)
    _sim_args(auth)

    enroll = sub.add_parser("enroll", help="bootstrap the simulated sensor and enroll it remotely")
    enroll.add_argument("--device", required=True)
    enroll.add_argument("--verifier", required=True)
    enroll.add_argument("--repeats", type=int, default=3)
    _matching_args(enroll)
    _sim_args(enroll)

    boot = sub.add_parser("bootstrap", help="write the simulated sensor's full fingerprint to a file")
    boot.add_argument("--device", required=True)
    boot.add_argument("--out", required=True)
    boot.add_argument("--repeats", type=int, default=3)
    _sim_args(boot)

    args = parser.parse_args(argv)
    try:
        inst = _instance(args)
        env = Environment(temperature=args.temperature)
        template = default_challenge(inst.model, args.grid.f_min)
        if args.cmd in ("enroll", "bootstrap"):
            fp = bootstrap(Responder(inst, (args.seed, 0)), args.grid, args.repeats, template, env, args.device)
            if args.cmd == "bootstrap":
                save_fingerprint(args.out, fp)
                print(f"wrote {args.out} ({fp.grid.size} frequencies)")
                return 0
            with VerifierClient(args.verifier) as client:
                reply = client.enroll(args.device, fp, args.theta, args.P, args.max_retries)
            print(f"enroll {reply.code.name.lower()} {reply.message}".rstrip())
            return 0 if reply.code == 0 else 1
        now = int(time.time())
        agent = DeviceAgent(args.device, Responder(inst, (args.seed, now)), template, env, args.P, args.grid)
        with VerifierClient(args.verifier) as client:
            outcome = run_auth_session(agent, client, args.device, now)
        eps = "-" if outcome.epsilon is None else f"{outcome.epsilon:.6g}"
        print(f"status={outcome.status.name.lower()} epsilon={eps} attempts={outcome.attempts_used}")
        return 0 if outcome.accepted else 3
    except (SensorprintError, OSError, ValueError) as exc:
        return _fail(exc)


if __name__ == "__main__":
    sys.exit(verifier_main())

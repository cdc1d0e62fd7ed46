"""Enroll a sensor, authenticate it, and watch an impostor and a replay fail.

Everything runs in-process against a throwaway registry directory.
"""

import tempfile

from sensorprint import Environment, FrequencyGrid, Responder, bootstrap, default_challenge, get_preset, instantiate
from sensorprint.protocol import DeviceAgent, Registry, Verifier, run_auth_session

grid = FrequencyGrid()
env = Environment()
now = 1_700_000_000

model = get_preset("LM61")
genuine = instantiate(model, 11)
template = default_challenge(model, grid.f_min)

with tempfile.TemporaryDirectory() as tmp, Registry(tmp) as registry:
    print("Bootstrapping the full fingerprint (1000 frequencies, 3 repeats)...")
    fp = bootstrap(Responder(genuine, (11, 0)), grid, 3, template, env, "lm61-11")
    registry.enroll("lm61-11", fp, theta=0.01, P=10, max_retries=2)
    verifier = Verifier(registry)

    agent = DeviceAgent("lm61-11", Responder(genuine, (11, 1)), template, env, 10, grid)
    out = run_auth_session(agent, verifier, now=now)
    print(f"genuine device: {out.status.name}, epsilon={out.epsilon:.5f}, attempts={out.attempts_used}")

    other = get_preset("TMP36")
    stranger = instantiate(other, 5)
    impostor = DeviceAgent("lm61-11", Responder(stranger, (5, 1)), default_challenge(other, grid.f_min), env, 10, grid)
    out = run_auth_session(impostor, verifier, now=now + 10)
    print(f"a TMP36 claiming the id: {out.status.name}, epsilon={out.epsilon:.5f}, attempts={out.attempts_used}")

    # same-model siblings sit close to the genuine part and can slip under theta
    sibling = instantiate(model, 12)
    twin = DeviceAgent("lm61-11", Responder(sibling, (12, 1)), template, env, 10, grid)
    out = run_auth_session(twin, verifier, now=now + 20)
    print(f"another LM61 claiming the id: {out.status.name}, epsilon={out.epsilon:.5f}")

    replay = agent.attempt(now)
    print(f"replaying the first accepted attempt: {verifier.submit(replay, now + 5).status.name}")

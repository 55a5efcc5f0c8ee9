import numpy as np
import pytest

from satrl.attitude import quat_from_axis_angle
from satrl.dynamics import FailureMode, SatelliteState
from satrl.env import Align, AttitudeEnv, EpisodeConfig, TaskSpec
from satrl.harness import (
    CommandMessage, ExperimentPlan, FixedLatency, InProcessTransport, PolicyResponder,
    ProtocolError, ReplayLatency, ResponderError, SocketTransport, TelemetryMessage,
    UniformLatency, Verdict, decode, encode, make_latency, run_experiment, serve_policy,
)
from satrl.nn import MlpActorCritic, policy_forward


def trained_like_net(seed=0):
    net = MlpActorCritic(seed=seed)
    net["actor.W3"][...] *= 100.0
    net.touch()
    return net


def hello(responder, obs_dim=13):
    return decode(responder.handle(encode({"type": "hello", "version": 1, "obs_dim": obs_dim,
                                           "act_dim": 3})))


def telemetry(seq, q=(1.0, 0, 0, 0)):
    return TelemetryMessage(seq, 0.5 * seq, list(q), [0.01, -0.02, 0.005], [10.0, -4.0, 0.0],
                            [0.001, 0.0, -0.002])


class ZeroResponder:
    def handle(self, payload):
        msg = decode(payload)
        if isinstance(msg, dict):
            return encode({"type": "ready", "version": 1, "n_params": 0})
        return encode(CommandMessage(msg.seq, [0.0, 0.0, 0.0]))


def test_round_trip_bit_exact():
    rng = np.random.default_rng(0)
    for _ in range(200):
        m = TelemetryMessage(int(rng.integers(1 << 40)), float(rng.random() * 1e3),
                             list(rng.normal(size=4)), list(rng.normal(size=3) * 1e-7),
                             list(rng.normal(size=3) * 700), list(rng.normal(size=3) * 1e-3))
        assert decode(encode(m)) == m
        c = CommandMessage(m.seq, list(rng.normal(size=3)))
        assert decode(encode(c)) == c


def test_decode_errors():
    with pytest.raises(ProtocolError) as e:
        decode(b"{not json")
    assert e.value.code == "malformed"
    with pytest.raises(ProtocolError) as e:
        decode(encode({"type": "command", "version": 9, "seq": 0, "torque": [0, 0, 0]}))
    assert e.value.code == "version"
    with pytest.raises(ProtocolError):
        decode(encode({"type": "telemetry", "version": 1, "seq": 1, "t": 0, "q": [1, 0, 0]}))


def test_responder_matches_policy_forward():
    net = trained_like_net()
    r = PolicyResponder(net)
    assert hello(r)["type"] == "ready"
    m = telemetry(1, quat_from_axis_angle([0, 1.0, 0], 2.0))
    cmd = decode(r.handle(encode(m)))
    obs = np.concatenate([m.q, m.omega, m.rw, m.last_torque])
    np.testing.assert_allclose(cmd.torque, policy_forward(net, obs).mean * 0.002, atol=1e-9)
    r2 = PolicyResponder(net)
    hello(r2)
    assert decode(r2.handle(encode(m))).torque == cmd.torque


def test_responder_error_replies_keep_session():
    r = PolicyResponder(trained_like_net())
    hello(r)
    bad = decode(r.handle(encode(telemetry(1, (0.5, 0, 0, 0)))))
    assert bad["type"] == "error" and bad["code"] == "bad_quaternion"
    assert decode(r.handle(b"\xff\x00")) ["code"] == "malformed"
    assert isinstance(decode(r.handle(encode(telemetry(2)))), CommandMessage)
    stale = decode(r.handle(encode(telemetry(2))))
    assert stale["code"] == "out_of_order"
    assert isinstance(decode(r.handle(encode(telemetry(3)))), CommandMessage)


def test_shape_mismatch_refuses_session():
    r = PolicyResponder(trained_like_net())
    assert hello(r, obs_dim=12)["code"] == "refused"
    assert decode(r.handle(encode(telemetry(1))))["code"] == "refused"


def test_latency_models():
    assert FixedLatency(0.5).next() == 0.5
    u1, u2 = UniformLatency(seed=3), UniformLatency(seed=3)
    a = [u1.next() for _ in range(50)]
    assert a == [u2.next() for _ in range(50)] and 0.5 <= min(a) and max(a) <= 1.0
    rep = ReplayLatency([0.5, 0.7])
    assert [rep.next() for _ in range(3)] == [0.5, 0.7, 0.5]
    with pytest.raises(ValueError):
        make_latency("gaussian")


def test_start_at_target_with_no_dwell():
    plan = ExperimentPlan(np.array([1.0, 0, 0, 0]), dwell=0.0)
    res = run_experiment(plan, InProcessTransport(PolicyResponder(trained_like_net())))
    assert res.verdict is Verdict.TARGET_REACHED and res.trace.time[-1] == 0.0


def test_zero_torque_never_arrives():
    plan = ExperimentPlan(quat_from_axis_angle([0, 0, 1.0], np.radians(170)), time_limit=60.0)
    res = run_experiment(plan, InProcessTransport(ZeroResponder()))
    assert res.verdict is Verdict.TIME_LIMIT and res.trace.time[-1] == 60.0


def test_failed_axis_plan_applies_no_x_torque():
    task = TaskSpec(FailureMode.FAILED_X, Align.X)
    plan = ExperimentPlan(quat_from_axis_angle([0, 1.0, 0], 1.5), task, time_limit=40.0)
    res = run_experiment(plan, InProcessTransport(PolicyResponder(trained_like_net(2))))
    assert np.all(res.trace.torque_applied[:, 0] == 0.0)
    assert np.any(res.trace.torque_applied[:, 1:] != 0.0)


def test_target_frame_change():
    target = quat_from_axis_angle([1.0, 0, 0], 0.7)
    plan = ExperimentPlan(target, target_attitude=target, dwell=0.0)
    res = run_experiment(plan, InProcessTransport(PolicyResponder(trained_like_net())))
    assert res.verdict is Verdict.TARGET_REACHED


def test_replayed_fixed_latency_is_reproducible():
    net = trained_like_net(4)
    plan = ExperimentPlan(quat_from_axis_angle([0, 0, 1.0], 2.5), time_limit=30.0)
    a = run_experiment(plan, InProcessTransport(PolicyResponder(net)), ReplayLatency([0.5, 0.8]))
    b = run_experiment(plan, InProcessTransport(PolicyResponder(net)), ReplayLatency([0.5, 0.8]))
    np.testing.assert_array_equal(a.trace.attitude, b.trace.attitude)


def env_trajectory(net, start, steps, task=TaskSpec()):
    env = AttitudeEnv(task, episode=EpisodeConfig(horizon=steps, delays=False, curriculum=False))
    obs = env.reset(state=SatelliteState(start))
    rows = [env.state.as_vector()]
    done = False
    while not done:
        obs, _, done, _ = env.step(policy_forward(net, obs).mean)
        rows.append(env.state.as_vector())
    return np.array(rows)


def harness_trajectory(net, start, steps, transport=None, task=TaskSpec()):
    plan = ExperimentPlan(start, task, time_limit=0.5 * steps, dwell=1e9)
    res = run_experiment(plan, transport or InProcessTransport(PolicyResponder(net)),
                         FixedLatency(0.5))
    t = res.trace
    return np.hstack([t.attitude, t.omega, t.rw_speed])


def test_harness_reproduces_environment():
    net = trained_like_net(5)
    start = quat_from_axis_angle(np.array([1.0, 2.0, -2.0]) / 3.0, np.radians(150))
    a = env_trajectory(net, start, 60)
    b = harness_trajectory(net, start, 60)
    assert a.shape == b.shape
    assert np.max(np.abs(a - b)) <= 1e-9


def test_socket_transport_equivalent():
    net = trained_like_net(6)
    srv = serve_policy(net)
    try:
        tr = SocketTransport.connect(*srv.address)
        start = quat_from_axis_angle([0, 1.0, 0], 2.0)
        a = harness_trajectory(net, start, 20, tr)
        tr.close()
    finally:
        srv.stop()
    b = harness_trajectory(net, start, 20)
    np.testing.assert_array_equal(a, b)


def test_refused_handshake_raises():
    class Refuser:
        def handle(self, payload):
            return encode({"type": "error", "version": 1, "seq": None, "code": "refused",
                           "message": "no"})
    with pytest.raises(ResponderError):
        run_experiment(ExperimentPlan(np.array([1.0, 0, 0, 0])), InProcessTransport(Refuser()))


def test_plan_from_dict():
    plan = ExperimentPlan.from_dict({
        "start": {"axis": [0, 0, 2], "angle_deg": 90}, "mode": "y",
        "target": {"align": "x"}, "time_limit_s": 100,
        "exit": {"rate_limit_rad_s": 0.08, "dwell_s": 2}})
    assert plan.task.key == "y/x" and plan.accuracy == 0.05
    assert plan.time_limit == 100.0 and plan.rate_limit == 0.08 and plan.dwell == 2.0
    np.testing.assert_allclose(plan.start_attitude, [np.sqrt(0.5), 0, 0, np.sqrt(0.5)])

"""Closed-loop emulation of the on-board setup.

A :class:`PolicyResponder` owns the network and answers telemetry with torque
commands; :func:`run_experiment` owns the dynamics and plays the role of the
dynamics processor, applying each command for one control interval and
coasting for the rest of a latency drawn from a :class:`LatencyModel`.

Wire format: every message is a JSON object, framed on byte streams by a
4-byte big-endian length prefix. Schema version 1::

    hello     {"type", "version", "obs_dim", "act_dim"}
    ready     {"type", "version", "n_params"}
    telemetry {"type", "version", "seq", "t", "q"[4], "omega"[3], "rw"[3], "last_torque"[3]}
    command   {"type", "version", "seq", "torque"[3]}
    error     {"type", "version", "seq", "code", "message"}

Units: seconds, rad/s, N*m; ``q`` is scalar-first and expressed relative to
the target frame.
"""

import enum
import json
import socket
import struct
import threading
from dataclasses import dataclass, field

import numpy as np

from .attitude import (
    IDENTITY, canonical, normalize, quat_conjugate, quat_from_axis_angle, quat_multiply,
)
from .dynamics import TORQUE_LIMIT, FailureMode, SatelliteParams, SatelliteState, apply_failure
from .env import (
    ACT_DIM, OBS_DIM, Align, RewardConfig, TaskSpec, compute_reward,
    pointing_error, propagate_cycle,
)
from .evaluation import TraceRecorder
from .nn import policy_forward

PROTOCOL_VERSION = 1
QUAT_TOL = 1e-6
_LEN = struct.Struct(">I")


class ProtocolError(ValueError):
    def __init__(self, code, message):
        super().__init__(f"{code}: {message}")
        self.code = code


class ResponderError(RuntimeError):
    pass


class ResponderTimeout(ResponderError):
    pass


@dataclass
class TelemetryMessage:
    seq: int
    t: float
    q: list
    omega: list
    rw: list
    last_torque: list

    def to_dict(self):
        return {"type": "telemetry", "version": PROTOCOL_VERSION, "seq": self.seq, "t": self.t,
                "q": list(map(float, self.q)), "omega": list(map(float, self.omega)),
                "rw": list(map(float, self.rw)), "last_torque": list(map(float, self.last_torque))}


@dataclass
class CommandMessage:
    seq: int
    torque: list

    def to_dict(self):
        return {"type": "command", "version": PROTOCOL_VERSION, "seq": self.seq,
                "torque": list(map(float, self.torque))}


def encode(msg):
    d = msg.to_dict() if hasattr(msg, "to_dict") else msg
    return json.dumps(d, allow_nan=False).encode()


def _vector(d, key, n):
    v = d.get(key)
    if not isinstance(v, list) or len(v) != n:
        raise ProtocolError("malformed", f"{key} must be a list of {n} numbers")
    if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        raise ProtocolError("malformed", f"{key} must contain numbers")
    if not all(np.isfinite(v)):
        raise ProtocolError("malformed", f"{key} has non-finite values")
    return [float(x) for x in v]


def decode(payload):
    """Parse a message body into a message object (or a plain dict for control messages)."""
    try:
        d = json.loads(payload)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError("malformed", f"invalid JSON: {exc}") from None
    if not isinstance(d, dict) or "type" not in d:
        raise ProtocolError("malformed", "message must be an object with a type")
    if d.get("version") != PROTOCOL_VERSION:
        raise ProtocolError("version", f"unsupported protocol version {d.get('version')}")
    kind = d["type"]
    if kind == "telemetry":
        seq = d.get("seq")
        if not isinstance(seq, int) or isinstance(seq, bool):
            raise ProtocolError("malformed", "seq must be an integer")
        t = d.get("t")
        if not isinstance(t, (int, float)) or not np.isfinite(t):
            raise ProtocolError("malformed", "t must be a finite number")
        return TelemetryMessage(seq, float(t), _vector(d, "q", 4), _vector(d, "omega", 3),
                                _vector(d, "rw", 3), _vector(d, "last_torque", 3))
    if kind == "command":
        return CommandMessage(int(d.get("seq", -1)), _vector(d, "torque", 3))
    if kind in ("hello", "ready", "error"):
        return d
    raise ProtocolError("malformed", f"unknown message type {kind!r}")


class PolicyResponder:
    """Answers telemetry with the deterministic actor's torque command."""

    def __init__(self, net):
        self.net = net
        self.last_seq = None
        self.refused = False

    def _error(self, seq, code, message):
        return {"type": "error", "version": PROTOCOL_VERSION, "seq": seq, "code": code,
                "message": message}

    def handle(self, payload):
        try:
            msg = decode(payload)
        except ProtocolError as exc:
            return encode(self._error(None, exc.code, str(exc)))
        if isinstance(msg, dict):
            if msg["type"] != "hello":
                return encode(self._error(None, "unexpected", f"cannot handle {msg['type']}"))
            if msg.get("obs_dim") != self.net.obs_dim or msg.get("act_dim") != self.net.act_dim:
                self.refused = True
                return encode(self._error(None, "refused", "observation/action shape mismatch"))
            self.last_seq = None
            return encode({"type": "ready", "version": PROTOCOL_VERSION,
                           "n_params": self.net.n_params})
        if self.refused:
            return encode(self._error(None, "refused", "session refused"))
        if not isinstance(msg, TelemetryMessage):
            return encode(self._error(None, "unexpected", "expected telemetry"))
        if abs(np.linalg.norm(msg.q) - 1.0) > QUAT_TOL:
            return encode(self._error(msg.seq, "bad_quaternion", "quaternion is not unit norm"))
        if self.last_seq is not None and msg.seq <= self.last_seq:
            return encode(self._error(msg.seq, "out_of_order",
                                      f"sequence {msg.seq} after {self.last_seq}"))
        self.last_seq = msg.seq
        return encode(CommandMessage(msg.seq, self.command(msg)))

    def command(self, msg):
        # no renormalisation: the observation must match the simulator's bit for bit
        obs = np.concatenate([canonical(np.array(msg.q)), msg.omega, msg.rw, msg.last_torque])
        return policy_forward(self.net, obs).mean * TORQUE_LIMIT


# -- transports --------------------------------------------------------------

class InProcessTransport:
    """Direct calls into a responder, still going through the byte encoding."""

    def __init__(self, responder):
        self.responder = responder

    def request(self, payload):
        return self.responder.handle(payload)

    def close(self):
        pass


def send_frame(sock, payload):
    sock.sendall(_LEN.pack(len(payload)) + payload)


def _recv_exact(sock, n):
    chunks = bytearray()
    while len(chunks) < n:
        chunk = sock.recv(n - len(chunks))
        if not chunk:
            return None
        chunks += chunk
    return bytes(chunks)


def recv_frame(sock):
    head = _recv_exact(sock, _LEN.size)
    if head is None:
        return None
    return _recv_exact(sock, _LEN.unpack(head)[0])


class SocketTransport:
    def __init__(self, sock, timeout=5.0):
        self.sock = sock
        self.sock.settimeout(timeout)

    @classmethod
    def connect(cls, host, port, timeout=5.0):
        return cls(socket.create_connection((host, port), timeout=timeout), timeout)

    def request(self, payload):
        try:
            send_frame(self.sock, payload)
            reply = recv_frame(self.sock)
        except socket.timeout:
            raise ResponderTimeout("responder did not answer in time") from None
        if reply is None:
            raise ResponderError("responder closed the connection")
        return reply

    def close(self):
        self.sock.close()


def serve_connection(responder, sock):
    """Answer framed requests on ``sock`` until the peer disconnects."""
    with sock:
        while True:
            payload = recv_frame(sock)
            if payload is None:
                return
            send_frame(sock, responder.handle(payload))


@dataclass
class PolicyServer:
    address: tuple
    _sock: socket.socket = field(repr=False)
    _thread: threading.Thread = field(repr=False)

    def stop(self):
        self._sock.close()
        self._thread.join(timeout=2.0)


def serve_policy(net, host="127.0.0.1", port=0):
    """Serve ``net`` over TCP in a background thread, one session at a time."""
    srv = socket.create_server((host, port))

    def loop():
        while True:
            try:
                conn, _ = srv.accept()
            except OSError:
                return
            serve_connection(PolicyResponder(net), conn)

    th = threading.Thread(target=loop, daemon=True)
    th.start()
    return PolicyServer(srv.getsockname(), srv, th)


# -- latency models ------------------------------------------------------------

class FixedLatency:
    def __init__(self, value=0.5):
        self.value = float(value)

    def next(self):
        return self.value


class UniformLatency:
    def __init__(self, low=0.5, high=1.0, seed=0):
        self.low, self.high = float(low), float(high)
        self.rng = np.random.default_rng(seed)

    def next(self):
        return float(self.rng.uniform(self.low, self.high))


class ReplayLatency:
    """Replays recorded cycle times, wrapping around at the end."""

    def __init__(self, values):
        self.values = [float(v) for v in values]
        if not self.values:
            raise ValueError("replay latency needs at least one value")
        self.i = 0

    def next(self):
        v = self.values[self.i % len(self.values)]
        self.i += 1
        return v


def make_latency(kind, seed=0, value=0.5, low=0.5, high=1.0, values=None):
    if kind == "fixed":
        return FixedLatency(value)
    if kind == "uniform":
        return UniformLatency(low, high, seed)
    if kind == "replay":
        return ReplayLatency(values or [])
    raise ValueError(f"unknown latency model {kind!r}")


# -- experiments -------------------------------------------------------------

class Verdict(enum.Enum):
    TARGET_REACHED = "TargetReached"
    RATE_VIOLATION = "RateViolation"
    TIME_LIMIT = "TimeLimit"


@dataclass
class ExperimentPlan:
    start_attitude: np.ndarray
    task: TaskSpec = field(default_factory=TaskSpec)
    target_attitude: np.ndarray = field(default_factory=lambda: IDENTITY.copy())
    time_limit: float = 800.0
    accuracy: float = None
    rate_limit: float = 0.1
    dwell: float = 5.0
    control_dt: float = 0.5
    substeps: int = 100

    def __post_init__(self):
        self.start_attitude = normalize(self.start_attitude)
        self.target_attitude = normalize(self.target_attitude)
        if self.accuracy is None:
            self.accuracy = self.task.threshold
        if not (self.time_limit > 0 and self.accuracy > 0 and self.rate_limit > 0
                and self.dwell >= 0):
            raise ValueError("invalid experiment plan")

    @classmethod
    def from_dict(cls, d):
        start = d["start"]
        if "quaternion" in start:
            q0 = np.array(start["quaternion"], dtype=float)
        else:
            axis = np.array(start["axis"], dtype=float)
            q0 = quat_from_axis_angle(axis / np.linalg.norm(axis), np.deg2rad(start["angle_deg"]))
        target = d.get("target", {})
        mode = FailureMode.parse(d.get("mode", "nominal"))
        align = Align.parse(target.get("align", "full" if mode is FailureMode.NOMINAL
                                       else mode.value))
        exit_ = d.get("exit", {})
        task = TaskSpec(mode, align, exit_.get("accuracy_rad"))
        return cls(q0, task, np.array(target.get("quaternion", IDENTITY), dtype=float),
                   float(d.get("time_limit_s", 800.0)), exit_.get("accuracy_rad"),
                   float(exit_.get("rate_limit_rad_s", 0.1)), float(exit_.get("dwell_s", 5.0)))

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class ExperimentResult:
    trace: object
    verdict: Verdict
    diagnostic: str = ""


def handshake(transport):
    reply = decode(transport.request(encode({"type": "hello", "version": PROTOCOL_VERSION,
                                             "obs_dim": OBS_DIM, "act_dim": ACT_DIM})))
    if reply.get("type") != "ready":
        raise ResponderError(f"session refused: {reply.get('message')}")


def run_experiment(plan, transport, latency=None, params=None, reward_cfg=None):
    """Close the loop between the responder and the emulated dynamics.

    Stops on sustained accuracy (``plan.dwell`` seconds inside the band), on a
    rate violation, or at the time limit.
    """
    params = params or SatelliteParams()
    latency = latency or FixedLatency(plan.control_dt)
    reward_cfg = reward_cfg or RewardConfig(threshold=plan.task.threshold)
    to_target = quat_conjugate(plan.target_attitude)
    state = SatelliteState(quat_multiply(to_target, plan.start_attitude))
    rec = TraceRecorder(plan.task.key)
    handshake(transport)
    t, seq = 0.0, 0
    last_cmd = np.zeros(3)
    applied = np.zeros(3)
    reward = 0.0
    band_entry = None
    while True:
        theta = pointing_error(state, plan.task)
        rec.record(t, theta, state, last_cmd, applied, reward)
        if np.max(np.abs(state.omega)) > plan.rate_limit:
            return ExperimentResult(rec.finish("rate_violation"), Verdict.RATE_VIOLATION)
        if theta < plan.accuracy:
            band_entry = t if band_entry is None else band_entry
            if t - band_entry >= plan.dwell - 1e-12:
                return ExperimentResult(rec.finish("target_reached"), Verdict.TARGET_REACHED)
        else:
            band_entry = None
        if t >= plan.time_limit - 1e-9:
            return ExperimentResult(rec.finish("horizon"), Verdict.TIME_LIMIT)
        tm = TelemetryMessage(seq, t, list(state.attitude), list(state.omega),
                              list(state.rw_speed), list(last_cmd))
        try:
            reply = decode(transport.request(encode(tm)))
        except ResponderTimeout as exc:
            return ExperimentResult(rec.finish("timeout"), Verdict.TIME_LIMIT, str(exc))
        if not isinstance(reply, CommandMessage):
            raise ResponderError(f"responder error: {reply.get('code')}: {reply.get('message')}")
        if reply.seq != seq:
            raise ResponderError(f"command echoes sequence {reply.seq}, expected {seq}")
        cmd = np.clip(np.array(reply.torque), -TORQUE_LIMIT, TORQUE_LIMIT)
        cycle = latency.next()
        state, applied = propagate_cycle(state, cmd, max(cycle, plan.control_dt), params,
                                         plan.task.mode, plan.control_dt, plan.substeps)
        t += max(cycle, plan.control_dt)
        seq += 1
        last_cmd = cmd
        reward = compute_reward(pointing_error(state, plan.task), state.omega,
                                apply_failure(cmd, plan.task.mode), reward_cfg)

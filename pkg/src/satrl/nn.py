"""Dense actor-critic networks with hand-written reverse mode.

All trainable parameters live in a single flat float64 vector; each layer is a
view into it, so gradients, the optimiser state and checkpoints share one
layout. Declaration order (also the on-disk order)::

    actor.W1 actor.b1 actor.W2 actor.b2 actor.W3 actor.b3 actor.log_std
    critic.W1 critic.b1 critic.W2 critic.b2 critic.W3 critic.b3
"""

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

LOG_STD_MIN = -5.0
LOG_STD_MAX = 1.0
LOG_2PI = np.log(2.0 * np.pi)
FORMAT_VERSION = 1
MAGIC = b"SATRLNN\x00"
ACTIVATION = "tanh"


class FormatError(ValueError):
    """Checkpoint file is corrupt, truncated or incompatible."""


class StaleTapeError(RuntimeError):
    """Backward pass requested after the parameters changed."""


def layer_layout(obs_dim=13, act_dim=3, hidden=(64, 64)):
    """Ordered ``(name, shape)`` list of every trainable array."""
    layout = []
    for net, out_dim in (("actor", act_dim), ("critic", 1)):
        sizes = [obs_dim, *hidden, out_dim]
        for i in range(len(sizes) - 1):
            layout.append((f"{net}.W{i + 1}", (sizes[i + 1], sizes[i])))
            layout.append((f"{net}.b{i + 1}", (sizes[i + 1],)))
        if net == "actor":
            layout.append(("actor.log_std", (act_dim,)))
    return layout


def _orthogonal(rng, shape, gain):
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


class MlpActorCritic:
    def __init__(self, obs_dim=13, act_dim=3, hidden=(64, 64), obs_scale=None,
                 params=None, seed=0, init_log_std=np.log(0.5)):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.hidden = tuple(int(h) for h in hidden)
        self.layout = layer_layout(obs_dim, act_dim, self.hidden)
        self.n_params = sum(int(np.prod(s)) for _, s in self.layout)
        self.obs_scale = (np.ones(obs_dim) if obs_scale is None
                          else np.array(obs_scale, dtype=np.float64))
        self.version = 0
        self.meta = {}
        if params is None:
            self.params = np.zeros(self.n_params)
            self._bind()
            self._init(np.random.default_rng(seed), init_log_std)
        else:
            params = np.array(params, dtype=np.float64)
            if params.shape != (self.n_params,):
                raise ValueError(f"expected {self.n_params} parameters, got {params.shape}")
            self.params = params
            self._bind()

    def _bind(self):
        self.views = {}
        offset = 0
        for name, shape in self.layout:
            size = int(np.prod(shape))
            self.views[name] = self.params[offset:offset + size].reshape(shape)
            offset += size

    def _init(self, rng, init_log_std):
        n_layers = len(self.hidden) + 1
        for net in ("actor", "critic"):
            for i in range(1, n_layers + 1):
                w = self.views[f"{net}.W{i}"]
                gain = 0.01 if i == n_layers else np.sqrt(2.0)
                w[...] = _orthogonal(rng, w.shape, gain)
        self.views["actor.log_std"][...] = init_log_std

    def __getitem__(self, name):
        return self.views[name]

    def set_params(self, flat):
        self.params[...] = flat
        self.touch()

    def touch(self):
        """Mark parameters as modified (invalidates recorded tapes)."""
        np.clip(self.views["actor.log_std"], LOG_STD_MIN, LOG_STD_MAX,
                out=self.views["actor.log_std"])
        self.version += 1

    def copy(self):
        net = MlpActorCritic(self.obs_dim, self.act_dim, self.hidden, self.obs_scale,
                             params=self.params.copy())
        net.meta = dict(self.meta)
        return net

    def param_hash(self):
        return hashlib.sha256(self.params.astype("<f8").tobytes()).hexdigest()


@dataclass
class GaussianPolicyOutput:
    mean: np.ndarray
    std: np.ndarray


@dataclass
class Tape:
    version: int
    x: np.ndarray
    actor_acts: list
    critic_acts: list
    mean: np.ndarray
    value: np.ndarray


def _check_obs(net, obs):
    x = np.asarray(obs, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != net.obs_dim:
        raise ValueError(f"observation must have {net.obs_dim} components")
    if not np.all(np.isfinite(x)):
        raise ValueError("observation contains non-finite values")
    return x * net.obs_scale, single


def _mlp(net, prefix, x):
    acts = [x]
    n_layers = len(net.hidden) + 1
    h = x
    for i in range(1, n_layers + 1):
        z = h @ net[f"{prefix}.W{i}"].T + net[f"{prefix}.b{i}"]
        h = np.tanh(z) if i < n_layers else z
        acts.append(h)
    return acts


def forward(net, obs):
    """Run both heads over a batch and record a tape for :func:`backward`."""
    x, _ = _check_obs(net, obs)
    a_acts = _mlp(net, "actor", x)
    c_acts = _mlp(net, "critic", x)
    mean = np.tanh(a_acts[-1])
    return Tape(net.version, x, a_acts, c_acts, mean, c_acts[-1][:, 0])


def policy_forward(net, obs):
    x, single = _check_obs(net, obs)
    mean = np.tanh(_mlp(net, "actor", x)[-1])
    std = np.exp(net["actor.log_std"]).copy()
    return GaussianPolicyOutput(mean[0] if single else mean, std)


def value_forward(net, obs):
    x, single = _check_obs(net, obs)
    v = _mlp(net, "critic", x)[-1][:, 0]
    return float(v[0]) if single else v


def log_prob(out, action):
    """Diagonal Gaussian log density, summed over action components."""
    z = (np.asarray(action) - out.mean) / out.std
    return np.sum(-0.5 * z * z - np.log(out.std) - 0.5 * LOG_2PI, axis=-1)


def _mlp_backward(net, prefix, acts, d_out, grads):
    n_layers = len(net.hidden) + 1
    delta = d_out
    for i in range(n_layers, 0, -1):
        h_prev = acts[i - 1]
        grads[f"{prefix}.W{i}"] += delta.T @ h_prev
        grads[f"{prefix}.b{i}"] += delta.sum(axis=0)
        if i > 1:
            delta = (delta @ net[f"{prefix}.W{i}"]) * (1.0 - h_prev * h_prev)


def backward(net, tape, d_mean=None, d_log_std=None, d_value=None):
    """Gradient of a scalar loss given its adjoints w.r.t. the network outputs.

    ``d_mean`` has shape (N, act_dim) and refers to the tanh-squashed means,
    ``d_log_std`` shape (act_dim,), ``d_value`` shape (N,). Missing adjoints
    are zero. Returns a flat gradient aligned with ``net.params``.
    """
    if tape.version != net.version:
        raise StaleTapeError("parameters changed since the forward pass")
    flat = np.zeros(net.n_params)
    grads = {}
    offset = 0
    for name, shape in net.layout:
        size = int(np.prod(shape))
        grads[name] = flat[offset:offset + size].reshape(shape)
        offset += size
    if d_mean is not None:
        d_pre = np.asarray(d_mean) * (1.0 - tape.mean * tape.mean)
        _mlp_backward(net, "actor", tape.actor_acts, d_pre, grads)
    if d_log_std is not None:
        grads["actor.log_std"] += d_log_std
    if d_value is not None:
        _mlp_backward(net, "critic", tape.critic_acts, np.asarray(d_value)[:, None], grads)
    return flat


class AdamState:
    def __init__(self, n, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps


def adam_update(params, grads, state, lr):
    """In-place bias-corrected Adam step; returns ``params``."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grads
    state.v *= b2
    state.v += (1.0 - b2) * grads * grads
    m_hat = state.m / (1.0 - b1 ** state.t)
    v_hat = state.v / (1.0 - b2 ** state.t)
    params -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


# -- checkpoints -----------------------------------------------------------

def _header(net, meta):
    return {
        "format": "satrl-mlp-actor-critic",
        "format_version": FORMAT_VERSION,
        "activation": ACTIVATION,
        "obs_dim": net.obs_dim,
        "act_dim": net.act_dim,
        "hidden": list(net.hidden),
        "layers": [[name, list(shape)] for name, shape in net.layout],
        "obs_scale": [float(v) for v in net.obs_scale],
        "n_params": net.n_params,
        "meta": meta or {},
    }


def _net_from_header(header, params):
    if header.get("format") != "satrl-mlp-actor-critic":
        raise FormatError("not a satrl network checkpoint")
    if header.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {header.get('format_version')}")
    if header.get("activation") != ACTIVATION:
        raise FormatError("unsupported activation")
    try:
        obs_dim, act_dim = int(header["obs_dim"]), int(header["act_dim"])
        hidden = tuple(int(h) for h in header["hidden"])
        layout = [(n, tuple(s)) for n, s in header["layers"]]
        obs_scale = np.array(header["obs_scale"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed header: {exc}") from None
    if layout != layer_layout(obs_dim, act_dim, hidden):
        raise FormatError("layer shapes do not match the declared topology")
    if obs_scale.shape != (obs_dim,):
        raise FormatError("obs_scale length mismatch")
    params = np.asarray(params, dtype=np.float64)
    expected = sum(int(np.prod(s)) for _, s in layout)
    if params.shape != (expected,) or header.get("n_params") != expected:
        raise FormatError("parameter count mismatch")
    net = MlpActorCritic(obs_dim, act_dim, hidden, obs_scale, params=params.copy())
    net.meta = header.get("meta", {})
    return net


def checkpoint_bytes(net, meta=None):
    header = json.dumps(_header(net, meta), sort_keys=True).encode()
    return (MAGIC + struct.pack("<II", FORMAT_VERSION, len(header)) + header
            + net.params.astype("<f8").tobytes())


def checkpoint_save(net, path, meta=None):
    """Write the binary checkpoint, or the JSON variant for ``*.json`` paths."""
    path = str(path)
    if path.endswith(".json"):
        doc = _header(net, meta)
        doc["params"] = [float(v) for v in net.params]
        with open(path, "w") as fh:
            json.dump(doc, fh, sort_keys=True)
    else:
        with open(path, "wb") as fh:
            fh.write(checkpoint_bytes(net, meta))


def checkpoint_from_bytes(blob):
    if blob[:len(MAGIC)] != MAGIC:
        raise FormatError("bad magic")
    try:
        version, hlen = struct.unpack_from("<II", blob, len(MAGIC))
    except struct.error:
        raise FormatError("truncated header") from None
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    start = len(MAGIC) + 8
    try:
        header = json.loads(blob[start:start + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise FormatError("corrupt header") from None
    if not isinstance(header, dict):
        raise FormatError("corrupt header")
    body = blob[start + hlen:]
    if len(body) % 8:
        raise FormatError("truncated parameter block")
    return _net_from_header(header, np.frombuffer(body, dtype="<f8"))


def checkpoint_load(path):
    path = str(path)
    if path.endswith(".json"):
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"corrupt JSON checkpoint: {exc}") from None
        if not isinstance(doc, dict) or "params" not in doc:
            raise FormatError("JSON checkpoint has no parameter block")
        return _net_from_header(doc, doc["params"])
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())

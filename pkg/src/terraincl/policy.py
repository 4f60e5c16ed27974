"""Actor-critic MLP with a diagonal-Gaussian head and manual backprop.

Two separate fully connected stacks (actor and critic) share nothing but the
observation. Hidden layers use ELU; gradients are computed by hand so the
learner has no framework dependency. Training runs in float32; float64 is
supported for numeric test oracles.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

HIDDEN_SIZES = (512, 256, 128)
LOG_STD_MIN = -4.0
LOG_STD_MAX = 1.0
LOG_STD_INIT = -1.0

CHECKPOINT_MAGIC = b"CLQW"
CHECKPOINT_VERSION = 1

_LOG_2PI = float(np.log(2.0 * np.pi))


def _elu_inplace(z, scratch):
    # elu(z) = max(z, 0) + exp(min(z, 0)) - 1, branch-free and overflow-safe.
    np.minimum(z, 0.0, out=scratch)
    np.exp(scratch, out=scratch)
    scratch -= 1.0
    np.maximum(z, 0.0, out=z)
    z += scratch
    return z


def _mul_elu_grad_inplace(delta, a):
    # For a = elu(z): elu'(z) = 1 where z > 0 (a > 0) else exp(z) = a + 1.
    # Multiplies delta by the gradient in place, consuming `a` as scratch.
    np.minimum(a, 0.0, out=a)
    a += 1.0
    delta *= a
    return delta


def _orthogonal(rng, n_in, n_out, gain, dtype):
    a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if n_in < n_out:
        q = q.T
    return np.ascontiguousarray((gain * q[:n_in, :n_out]).astype(dtype))


class Mlp:
    """Affine stack with ELU hidden activations and a linear output."""

    def __init__(self, sizes, dtype=np.float32):
        self.sizes = tuple(int(s) for s in sizes)
        self.dtype = dtype
        self.weights = [
            np.zeros((a, b), dtype=dtype) for a, b in zip(self.sizes, self.sizes[1:])
        ]
        self.biases = [np.zeros(b, dtype=dtype) for b in self.sizes[1:]]
        self._pool: dict[tuple[int, int], np.ndarray] = {}

    def _scratch(self, shape) -> np.ndarray:
        """Reusable per-shape workspace; valid until requested again."""
        buf = self._pool.get(shape)
        if buf is None:
            buf = np.empty(shape, dtype=self.dtype)
            self._pool[shape] = buf
        return buf

    def initialize(self, rng, output_gain=0.01):
        last = len(self.weights) - 1
        for i, (a, b) in enumerate(zip(self.sizes, self.sizes[1:])):
            gain = output_gain if i == last else np.sqrt(2.0)
            self.weights[i] = _orthogonal(rng, a, b, gain, self.dtype)
            self.biases[i] = np.zeros(b, dtype=self.dtype)

    def forward(self, x, cache=None):
        """Run the stack on a (B, in) batch; optionally record layer inputs."""
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if cache is not None:
                cache.append(h)
            z = h @ w
            z += b
            h = _elu_inplace(z, self._scratch(z.shape)) if i < last else z
        return h

    def backward(self, cache, grad_out):
        """Exact gradients of sum(grad_out * output) w.r.t. every parameter.

        `cache` holds the input of each layer, recorded by forward() on the
        same parameters; it is consumed (one backward pass per forward).
        Returns (weight grads, bias grads).
        """
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        delta = grad_out
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            inp = cache[i]
            if inp.shape[0] != delta.shape[0]:
                raise ValueError(
                    f"cache batch {inp.shape[0]} != grad batch {delta.shape[0]}"
                )
            grads_w[i] = inp.T @ delta
            grads_b[i] = delta.sum(axis=0)
            if i > 0:
                # Hidden inputs are ELU outputs; the activation gradient is
                # recoverable from them in place, after dW consumed them.
                new_delta = self._scratch((delta.shape[0], self.sizes[i]))
                np.matmul(delta, self.weights[i].T, out=new_delta)
                delta = _mul_elu_grad_inplace(new_delta, inp)
        return grads_w, grads_b

    def copy(self) -> "Mlp":
        other = Mlp(self.sizes, self.dtype)
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other


class ActorCritic:
    """Policy parameters: actor stack, critic stack, and action log-std."""

    def __init__(self, obs_dim, act_dim, hidden=HIDDEN_SIZES, dtype=np.float32):
        self.obs_dim = int(obs_dim)
        self.act_dim = int(act_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.dtype = dtype
        self.actor = Mlp((obs_dim, *self.hidden, act_dim), dtype)
        self.critic = Mlp((obs_dim, *self.hidden, 1), dtype)
        self.log_std = np.full(act_dim, LOG_STD_INIT, dtype=dtype)

    def initialize(self, rng) -> "ActorCritic":
        self.actor.initialize(rng)
        self.critic.initialize(rng)
        self.log_std = np.full(self.act_dim, LOG_STD_INIT, dtype=self.dtype)
        return self

    def forward(self, obs):
        """(B, obs_dim) -> action mean (B, act_dim) and value (B,)."""
        mean = self.actor.forward(obs)
        value = self.critic.forward(obs)[:, 0]
        return mean, value

    def forward_cached(self, obs):
        actor_cache, critic_cache = [], []
        mean = self.actor.forward(obs, actor_cache)
        value = self.critic.forward(obs, critic_cache)[:, 0]
        return mean, value, (actor_cache, critic_cache)

    def actor_mean(self, obs):
        return self.actor.forward(obs)

    def backward(self, caches, d_mean, d_value):
        """Backprop head gradients through both stacks.

        Returns gradients as a flat list aligned with parameters(), with the
        log_std slot zeroed (the loss adds its log_std gradient directly).
        """
        actor_cache, critic_cache = caches
        aw, ab = self.actor.backward(actor_cache, d_mean)
        cw, cb = self.critic.backward(critic_cache, d_value[:, None])
        grads = []
        for w, b in zip(aw, ab):
            grads.extend((w, b))
        for w, b in zip(cw, cb):
            grads.extend((w, b))
        grads.append(np.zeros_like(self.log_std))
        return grads

    def parameters(self):
        """Live parameter arrays in declared order (actor, critic, log_std)."""
        params = []
        for w, b in zip(self.actor.weights, self.actor.biases):
            params.extend((w, b))
        for w, b in zip(self.critic.weights, self.critic.biases):
            params.extend((w, b))
        params.append(self.log_std)
        return params

    def set_parameters(self, arrays):
        n_actor = 2 * len(self.actor.weights)
        n_critic = 2 * len(self.critic.weights)
        if len(arrays) != n_actor + n_critic + 1:
            raise ValueError("parameter list length mismatch")
        for i in range(len(self.actor.weights)):
            self.actor.weights[i] = arrays[2 * i]
            self.actor.biases[i] = arrays[2 * i + 1]
        for i in range(len(self.critic.weights)):
            self.critic.weights[i] = arrays[n_actor + 2 * i]
            self.critic.biases[i] = arrays[n_actor + 2 * i + 1]
        self.log_std = arrays[-1]

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def expected_parameter_count(self) -> int:
        """Closed-form parameter count from the layer dimensions."""
        total = 0
        for sizes in (self.actor.sizes, self.critic.sizes):
            total += sum(a * b + b for a, b in zip(sizes, sizes[1:]))
        return total + self.act_dim

    def copy(self) -> "ActorCritic":
        other = ActorCritic(self.obs_dim, self.act_dim, self.hidden, self.dtype)
        other.actor = self.actor.copy()
        other.critic = self.critic.copy()
        other.log_std = self.log_std.copy()
        return other

    def astype(self, dtype) -> "ActorCritic":
        other = ActorCritic(self.obs_dim, self.act_dim, self.hidden, dtype)
        other.set_parameters([p.astype(dtype) for p in self.parameters()])
        return other


# Diagonal-Gaussian distribution ops. A distribution is the (mean, log_std)
# pair; log_std is shared across the batch.


def sample_actions(mean, log_std, rng):
    std = np.exp(log_std).astype(mean.dtype)
    noise = rng.standard_normal(mean.shape).astype(mean.dtype)
    return mean + std * noise


def log_prob(mean, log_std, actions):
    """Log density per sample: sum over action dimensions."""
    log_std = np.asarray(log_std)
    inv_var = np.exp(-2.0 * log_std)
    q = (actions - mean) ** 2 * inv_var
    return -0.5 * q.sum(axis=-1) - log_std.sum() - 0.5 * _LOG_2PI * mean.shape[-1]


def entropy(log_std) -> float:
    """Differential entropy of the diagonal Gaussian (mean-independent)."""
    log_std = np.asarray(log_std)
    return float(log_std.size * 0.5 * (1.0 + _LOG_2PI) + log_std.sum())


@dataclass
class CheckpointMeta:
    iteration: int = 0
    seed: int = 0
    scenario: str = ""
    extra: dict | None = None


def save_checkpoint(path, policy: ActorCritic, meta: CheckpointMeta) -> None:
    """Write magic, version, text header, then raw little-endian float32."""
    if policy.dtype != np.float32:
        raise ValueError("checkpoints store float32 parameters")
    header_lines = [
        f"obs_dim={policy.obs_dim}",
        f"act_dim={policy.act_dim}",
        "hidden=" + ",".join(str(h) for h in policy.hidden),
        f"iteration={meta.iteration}",
        f"seed={meta.seed}",
        f"scenario={meta.scenario}",
    ]
    for key, value in (meta.extra or {}).items():
        header_lines.append(f"{key}={value}")
    header = ("\n".join(header_lines) + "\n").encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(bytes([CHECKPOINT_VERSION]))
    buf.write(len(header).to_bytes(4, "little"))
    buf.write(header)
    for p in policy.parameters():
        buf.write(np.ascontiguousarray(p, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> tuple[ActorCritic, CheckpointMeta]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"not a checkpoint file (bad magic): {path}")
    if raw[4] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {raw[4]}")
    header_len = int.from_bytes(raw[5:9], "little")
    header = raw[9 : 9 + header_len].decode("utf-8")
    fields = {}
    for line in header.splitlines():
        if line:
            key, _, value = line.partition("=")
            fields[key] = value
    hidden = tuple(int(h) for h in fields["hidden"].split(","))
    policy = ActorCritic(int(fields["obs_dim"]), int(fields["act_dim"]), hidden)
    data = np.frombuffer(raw[9 + header_len :], dtype="<f4")
    expected = policy.expected_parameter_count()
    if data.size != expected:
        raise ValueError(
            f"checkpoint holds {data.size} parameters, expected {expected}"
        )
    offset = 0
    arrays = []
    for p in policy.parameters():
        arrays.append(data[offset : offset + p.size].reshape(p.shape).copy())
        offset += p.size
    policy.set_parameters(arrays)
    known = {"obs_dim", "act_dim", "hidden", "iteration", "seed", "scenario"}
    meta = CheckpointMeta(
        iteration=int(fields.get("iteration", 0)),
        seed=int(fields.get("seed", 0)),
        scenario=fields.get("scenario", ""),
        extra={k: v for k, v in fields.items() if k not in known} or None,
    )
    return policy, meta

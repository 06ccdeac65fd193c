"""Q-learning machinery: networks, replay, schedules, and state construction.

The three cascade agents share one implementation: a fully-connected network
(input -> 512 -> 256 -> 128 -> actions by default) with ReLU activations,
batch normalization on the first hidden layer, dropout during training, and
Adam updates on a Huber TD loss against a periodically hard-copied target
network. Everything is plain numpy with explicit seeding so runs are
bit-reproducible.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

BN_EPS = 1e-5
HUBER_DELTA = 1.0
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

PRIMARY_DIM = 24
OPERATOR_DIM = 27
SECONDARY_DIM = 43
GROUP_COUNT = 3

EPS_START = 0.95
EPS_END = 0.1
EPS_DECAY_STEPS = 1000


def epsilon_schedule(step: int, start: float = EPS_START, end: float = EPS_END,
                     decay_steps: int = EPS_DECAY_STEPS) -> float:
    """Linear interpolation start -> end over [0, decay_steps], constant after."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if step >= decay_steps:
        return end
    return start + (end - start) * step / decay_steps


def default_buffer_capacity(d: int, ceiling: int = 50_000) -> int:
    return min(min(10_000, 100 * d), ceiling)


class QNetwork:
    """Feed-forward action-value network with manual forward/backward."""

    def __init__(self, in_dim: int, out_dim: int, hidden: tuple[int, ...] = (512, 256, 128),
                 dropout: float = 0.1, bn_momentum: float = 0.9, seed: int = 0):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.hidden = tuple(hidden)
        self.dropout = dropout
        self.bn_momentum = bn_momentum
        ss = np.random.SeedSequence(seed)
        init_rng = np.random.default_rng(ss)
        self._drop_rng = np.random.default_rng(ss.spawn(1)[0])
        dims = [in_dim, *hidden, out_dim]
        self.params: dict[str, np.ndarray] = {}
        for i in range(len(dims) - 1):
            limit = math.sqrt(6.0 / (dims[i] + dims[i + 1]))
            self.params[f"W{i}"] = init_rng.uniform(-limit, limit, size=(dims[i], dims[i + 1]))
            self.params[f"b{i}"] = np.zeros(dims[i + 1])
        self.params["bn_gamma"] = np.ones(hidden[0])
        self.params["bn_beta"] = np.zeros(hidden[0])
        self.run_mean = np.zeros(hidden[0])
        self.run_var = np.ones(hidden[0])
        self._adam_m = {k: np.zeros_like(v) for k, v in self.params.items()}
        self._adam_v = {k: np.zeros_like(v) for k, v in self.params.items()}
        self._adam_t = 0

    @property
    def n_layers(self) -> int:
        return len(self.hidden) + 1

    def forward(self, X: np.ndarray, training: bool = False):
        """Returns (Q-values, cache). Eval mode is deterministic: running batch
        statistics, no dropout."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        cache = {"inputs": [], "z": [], "masks": {}, "training": training}
        a = X
        for i in range(self.n_layers):
            cache["inputs"].append(a)
            z = a @ self.params[f"W{i}"] + self.params[f"b{i}"]
            if i == 0:
                z, bn_cache = self._batch_norm(z, training)
                cache["bn"] = bn_cache
            cache["z"].append(z)
            if i < self.n_layers - 1:
                a = np.maximum(z, 0.0)
                if training and self.dropout > 0.0:
                    mask = (self._drop_rng.random(a.shape) >= self.dropout) / (1.0 - self.dropout)
                    cache["masks"][i] = mask
                    a = a * mask
            else:
                a = z
        return a, cache

    def _batch_norm(self, z: np.ndarray, training: bool):
        if training:
            mu = z.mean(axis=0)
            var = z.var(axis=0)
            m = self.bn_momentum
            self.run_mean = m * self.run_mean + (1 - m) * mu
            self.run_var = m * self.run_var + (1 - m) * var
        else:
            mu, var = self.run_mean, self.run_var
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (z - mu) * inv_std
        out = self.params["bn_gamma"] * xhat + self.params["bn_beta"]
        return out, {"xhat": xhat, "inv_std": inv_std, "z_mu": z - mu, "training": training}

    def backward(self, cache, dout: np.ndarray) -> dict[str, np.ndarray]:
        grads = {}
        da = dout
        for i in reversed(range(self.n_layers)):
            if i < self.n_layers - 1:
                if i in cache["masks"]:
                    da = da * cache["masks"][i]
                da = da * (cache["z"][i] > 0)
            if i == 0:
                da = self._batch_norm_backward(cache["bn"], da, grads)
            a_in = cache["inputs"][i]
            grads[f"W{i}"] = a_in.T @ da
            grads[f"b{i}"] = da.sum(axis=0)
            if i > 0:
                da = da @ self.params[f"W{i}"].T
        return grads

    def _batch_norm_backward(self, bn, dy, grads):
        grads["bn_gamma"] = (dy * bn["xhat"]).sum(axis=0)
        grads["bn_beta"] = dy.sum(axis=0)
        dxhat = dy * self.params["bn_gamma"]
        if not bn["training"]:
            return dxhat * bn["inv_std"]
        B = dy.shape[0]
        dvar = (dxhat * bn["z_mu"]).sum(axis=0) * -0.5 * bn["inv_std"] ** 3
        dmu = -(dxhat.sum(axis=0)) * bn["inv_std"] + dvar * (-2.0 / B) * bn["z_mu"].sum(axis=0)
        return dxhat * bn["inv_std"] + dvar * 2.0 * bn["z_mu"] / B + dmu / B

    def adam_step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        self._adam_t += 1
        t = self._adam_t
        for k, g in grads.items():
            m = self._adam_m[k] = ADAM_BETA1 * self._adam_m[k] + (1 - ADAM_BETA1) * g
            v = self._adam_v[k] = ADAM_BETA2 * self._adam_v[k] + (1 - ADAM_BETA2) * g * g
            m_hat = m / (1 - ADAM_BETA1 ** t)
            v_hat = v / (1 - ADAM_BETA2 ** t)
            self.params[k] = self.params[k] - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)

    def copy_from(self, other: "QNetwork") -> None:
        for k, v in other.params.items():
            self.params[k] = v.copy()
        self.run_mean = other.run_mean.copy()
        self.run_var = other.run_var.copy()

    # -- checkpointing: versioned header + flat float64 arrays ---------------

    _MAGIC = b"QVN1"

    def _state_arrays(self) -> dict[str, np.ndarray]:
        out = dict(self.params)
        out["run_mean"] = self.run_mean
        out["run_var"] = self.run_var
        for k in self.params:
            out[f"adam_m.{k}"] = self._adam_m[k]
            out[f"adam_v.{k}"] = self._adam_v[k]
        out["adam_t"] = np.array([float(self._adam_t)])
        return out

    def save(self, path: str) -> None:
        arrays = self._state_arrays()
        with open(path, "wb") as fh:
            fh.write(self._MAGIC)
            fh.write(struct.pack("<I", len(arrays)))
            for name in sorted(arrays):
                arr = np.ascontiguousarray(arrays[name], dtype=np.float64)
                nb = name.encode()
                fh.write(struct.pack("<H", len(nb)))
                fh.write(nb)
                fh.write(struct.pack("<B", arr.ndim))
                for dim in arr.shape:
                    fh.write(struct.pack("<Q", dim))
                fh.write(arr.tobytes())

    def load(self, path: str) -> None:
        with open(path, "rb") as fh:
            if fh.read(4) != self._MAGIC:
                raise ValueError(f"{path}: not a v1 agent checkpoint")
            (count,) = struct.unpack("<I", fh.read(4))
            arrays = {}
            for _ in range(count):
                (nlen,) = struct.unpack("<H", fh.read(2))
                name = fh.read(nlen).decode()
                (ndim,) = struct.unpack("<B", fh.read(1))
                shape = tuple(struct.unpack("<Q", fh.read(8))[0] for _ in range(ndim))
                size = int(np.prod(shape)) if shape else 1
                arrays[name] = np.frombuffer(fh.read(8 * size)).reshape(shape).copy()
        for k in self.params:
            self.params[k] = arrays[k]
            self._adam_m[k] = arrays[f"adam_m.{k}"]
            self._adam_v[k] = arrays[f"adam_v.{k}"]
        self.run_mean = arrays["run_mean"]
        self.run_var = arrays["run_var"]
        self._adam_t = int(arrays["adam_t"][0])


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions."""

    def __init__(self, state_dim: int, capacity: int):
        self.capacity = capacity
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros(capacity, dtype=int)
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, state_dim))
        self.done = np.zeros(capacity)
        self.size = 0
        self.pos = 0

    def add(self, s, a, r, s2, done) -> None:
        i = self.pos
        self.s[i] = s
        self.a[i] = a
        self.r[i] = r
        self.s2[i] = s2
        self.done[i] = float(done)
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def __len__(self) -> int:
        return self.size

    def sample(self, batch: int, rng: np.random.Generator):
        idx = rng.choice(self.size, size=batch, replace=False)
        return self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.done[idx]


def select_action(net: QNetwork, state: np.ndarray, eps: float,
                  rng: np.random.Generator) -> int:
    """Epsilon-greedy; greedy ties break toward the lowest action id."""
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must lie in [0, 1]")
    if rng.random() < eps:
        return int(rng.integers(net.out_dim))
    q, _ = net.forward(state, training=False)
    return int(np.argmax(q[0]))


def td_loss_and_grads(net: QNetwork, states, actions, targets, training: bool = True):
    """Huber TD loss (delta = 1) and parameter gradients for a batch."""
    q, cache = net.forward(states, training=training)
    rows = np.arange(len(actions))
    err = q[rows, actions] - targets
    abs_err = np.abs(err)
    loss = float(np.where(abs_err <= HUBER_DELTA, 0.5 * err ** 2,
                          HUBER_DELTA * (abs_err - 0.5 * HUBER_DELTA)).mean())
    dout = np.zeros_like(q)
    dout[rows, actions] = np.clip(err, -HUBER_DELTA, HUBER_DELTA) / len(actions)
    return loss, net.backward(cache, dout)


def train_step(net: QNetwork, target: QNetwork, batch, gamma: float, lr: float) -> float:
    """One TD update: targets r + gamma max_a' Q_target(s', a'), Adam step."""
    s, a, r, s2, done = batch
    q2, _ = target.forward(s2, training=False)
    tgt = r + gamma * q2.max(axis=1) * (1.0 - done)
    loss, grads = td_loss_and_grads(net, s, a, tgt, training=True)
    net.adam_step(grads, lr)
    return loss


class Agent:
    """One cascade member: online net, target net, replay buffer, schedules."""

    def __init__(self, state_dim: int, n_actions: int, capacity: int, seed: int = 0,
                 hidden: tuple[int, ...] = (512, 256, 128), dropout: float = 0.1,
                 lr: float = 1e-3, gamma: float = 0.99, batch_size: int = 256,
                 target_update: int = 1000):
        ss = np.random.SeedSequence(seed)
        net_seed, tgt_seed, act_seed, samp_seed = [int(c.generate_state(1)[0]) for c in ss.spawn(4)]
        self.net = QNetwork(state_dim, n_actions, hidden, dropout, seed=net_seed)
        self.target = QNetwork(state_dim, n_actions, hidden, dropout, seed=tgt_seed)
        self.target.copy_from(self.net)
        self.buffer = ReplayBuffer(state_dim, capacity)
        self.action_rng = np.random.default_rng(act_seed)
        self.sample_rng = np.random.default_rng(samp_seed)
        self.lr = lr
        self.gamma = gamma
        self.batch_size = batch_size
        self.target_update = target_update
        self.action_steps = 0
        self.train_steps = 0

    def act(self, state: np.ndarray, greedy: bool = False) -> int:
        eps = 0.0 if greedy else epsilon_schedule(self.action_steps)
        self.action_steps += 1
        return select_action(self.net, state, eps, self.action_rng)

    def observe(self, s, a, r, s2, done) -> None:
        self.buffer.add(s, a, r, s2, done)

    def learn(self) -> float | None:
        """One training step, or None while the buffer is under-full."""
        if len(self.buffer) < self.batch_size:
            return None
        batch = self.buffer.sample(self.batch_size, self.sample_rng)
        loss = train_step(self.net, self.target, batch, self.gamma, self.lr)
        self.train_steps += 1
        if self.train_steps % self.target_update == 0:
            self.target.copy_from(self.net)
        return loss


# -- state construction ------------------------------------------------------


@dataclass
class StateContext:
    """Everything the state builders read; static stats plus loop bookkeeping."""

    # dataset block (fixed per run)
    n: int
    d: int
    task_bit: float
    missing_rate: float
    class_imbalance: float
    mean_abs_corr: float
    mean_target_corr: float
    noise_estimate: float
    binary_task_bit: float
    # loop caps
    episode_cap: int = 1
    step_cap: int = 1
    # performance block
    train_score: float = 0.0
    val_score: float = 0.0
    deltas: tuple[float, float, float] = (0.0, 0.0, 0.0)
    step: int = 0
    episode: int = 0
    best_score: float = 0.0
    val_history: list[float] = field(default_factory=list)
    # feature block
    n_original: int = 0
    n_generated: int = 0
    n_selected: int = 0
    mean_importance: float = 0.0
    mean_variance: float = 0.0
    std_variance: float = 0.0
    group_sizes: tuple[int, int, int] = (0, 0, 0)


def dataset_block(X: np.ndarray, y: np.ndarray, task: str, class_count: int,
                  missing_rate: float) -> dict:
    """Static dataset descriptors for StateContext."""
    n, d = X.shape
    sd = X.std(axis=0)
    Xn = (X - X.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    corr = np.abs(Xn.T @ Xn / n)
    off = corr[np.triu_indices(d, k=1)]
    mean_abs_corr = float(off.mean()) if off.size else 0.0
    ys = y.std()
    yn = (y - y.mean()) / (ys if ys > 0 else 1.0)
    target_corr = np.abs(Xn.T @ yn / n)
    mean_target_corr = float(target_corr.mean())
    r2 = target_corr ** 2
    noise = float(np.clip(1.0 - np.median(r2), 0.0, 1.0))
    if task == "classification":
        counts = np.bincount(y.astype(int), minlength=class_count)
        counts = counts[counts > 0]
        imbalance = float(counts.min() / counts.max())
        binary_bit = 1.0 if class_count == 2 else 0.0
        task_bit = 1.0
    else:
        imbalance = 1.0
        binary_bit = 0.0
        task_bit = 0.0
    return {"n": n, "d": d, "task_bit": task_bit, "missing_rate": missing_rate,
            "class_imbalance": imbalance, "mean_abs_corr": mean_abs_corr,
            "mean_target_corr": mean_target_corr, "noise_estimate": noise,
            "binary_task_bit": binary_bit}


def _clip01(v: float) -> float:
    return float(min(max(v, 0.0), 1.0))


def state_primary(ctx: StateContext) -> np.ndarray:
    """24-dim group-agent state: data(8) + performance(6) + features(7) + aux(3).

    The performance block carries train/val scores, the last three score
    deltas, and step progress; best-so-far lives in the aux rolling-variance
    slot until there is enough history to compute a variance. The screened
    group sizes are constant within a run and are not part of the vector.
    """
    s_data = [math.log(ctx.n), math.log(ctx.d), ctx.task_bit, ctx.missing_rate,
              ctx.class_imbalance, ctx.mean_abs_corr, ctx.mean_target_corr,
              ctx.noise_estimate]
    s_perf = [_clip01(ctx.train_score), _clip01(ctx.val_score), *ctx.deltas,
              ctx.step / max(ctx.step_cap, 1)]
    density = ctx.n_selected / max(ctx.n_generated, 1)
    s_feat = [float(ctx.n_original), float(ctx.n_generated), float(ctx.n_selected),
              density, ctx.mean_importance, ctx.mean_variance, ctx.std_variance]
    if len(ctx.val_history) < 2:
        rolling = _clip01(ctx.best_score)
    else:
        rolling = float(np.var(ctx.val_history[-5:]))
    s_aux = [ctx.episode / max(ctx.episode_cap, 1), rolling, ctx.binary_task_bit]
    vec = np.array(s_data + s_perf + s_feat + s_aux)
    assert vec.shape == (PRIMARY_DIM,) and np.isfinite(vec).all()
    return vec


def state_operator(base: np.ndarray, group: int) -> np.ndarray:
    """27-dim operator-agent state: primary state + one-hot group."""
    if not 0 <= group < GROUP_COUNT:
        raise ValueError("group id out of range")
    onehot = np.zeros(GROUP_COUNT)
    onehot[group] = 1.0
    vec = np.concatenate([base, onehot])
    assert vec.shape == (OPERATOR_DIM,)
    return vec


def state_secondary(base: np.ndarray, op_id: int, op_count: int = 15,
                    binary_cutoff: int = 11) -> np.ndarray:
    """43-dim secondary-agent state: operator state + one-hot op + arity bit."""
    if not 0 <= op_id < op_count:
        raise ValueError("operator id out of range")
    onehot = np.zeros(op_count)
    onehot[op_id] = 1.0
    arity = 1.0 if op_id >= binary_cutoff else 0.0
    vec = np.concatenate([base, onehot, [arity]])
    assert vec.shape == (SECONDARY_DIM,)
    return vec

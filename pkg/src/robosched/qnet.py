"""Random-PGM structure2vec Q-function with hand-written gradients.

Pipeline for one state and a batch of candidate matchings:

1. presence probabilities ``p[i, j]`` between alive tasks, from a small
   two-layer net averaged over sampled task-to-task completion times and a
   row-wise softmax (diagonal excluded);
2. distance embedding: fixed-point sweeps ``mu_i <- relu(E3 l_i + E4 x_i + b1)``
   with messages ``l_i = sum_j p[j, i] mu_j`` and ``x_i`` the sampled
   completion time of the robot assigned to task ``i`` (0 if unassigned);
3. value embedding: the same update on ``concat(mu_i, age_i)`` with
   ``E5``/``E6``;
4. ``Q = E7 . sum_i gamma_i + b7``, averaged over ``N`` completion-time draws.

All arrays are float64.  Sampled completion times and the presence draws
are fixed within one evaluation, so the gradients are exact derivatives of
the sampled estimate.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

WEIGHT_NAMES = ("P2", "bp", "P1", "E3", "E4", "b1", "E5", "E6", "b2", "E7", "b7")
PRESENCE_NAMES = ("P2", "bp", "P1")
BIAS_NAMES = ("bp", "b1", "b2", "b7")
CHECKPOINT_VERSION = 1


class NonFiniteError(FloatingPointError):
    pass


@dataclass(frozen=True, eq=False)
class QNetParams:
    P2: np.ndarray  # (h, 3) presence hidden layer
    bp: np.ndarray  # (h,)
    P1: np.ndarray  # (1, h) presence score
    E3: np.ndarray  # (d, d) distance-embedding messages
    E4: np.ndarray  # (d, in_dim) distance-embedding inputs
    b1: np.ndarray  # (d,)
    E5: np.ndarray  # (d, d) value-embedding messages
    E6: np.ndarray  # (d, d + 1), or (d, in_dim + 1) when two_step is off
    b2: np.ndarray  # (d,)
    E7: np.ndarray  # (1, d)
    b7: np.ndarray  # (1,)
    tau: float = 1.0
    T1: int = 3
    T2: int = 3
    M: int = 20
    N: int = 8
    time_scale: float = 10.0
    two_step: bool = True
    frozen: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if min(self.T1, self.T2, self.M, self.N) < 1:
            raise ValueError("T1, T2, M and N must all be >= 1")
        d = self.d
        shapes = {
            "P2": (self.hidden, 3), "bp": (self.hidden,), "P1": (1, self.hidden),
            "E3": (d, d), "E4": (d, self.in_dim), "b1": (d,),
            "E5": (d, d), "E6": (d, (d if self.two_step else self.in_dim) + 1), "b2": (d,),
            "E7": (1, d), "b7": (1,),
        }
        for name, shape in shapes.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise NonFiniteError(f"{name} contains non-finite values")
        unknown = set(self.frozen) - set(WEIGHT_NAMES)
        if unknown:
            raise ValueError(f"unknown frozen weights {sorted(unknown)}")

    @property
    def d(self) -> int:
        return self.E3.shape[0]

    @property
    def hidden(self) -> int:
        return self.P2.shape[0]

    @property
    def in_dim(self) -> int:
        return self.E4.shape[1]

    @property
    def trainable(self) -> tuple[str, ...]:
        return tuple(n for n in WEIGHT_NAMES if n not in self.frozen)

    @property
    def presence_trainable(self) -> bool:
        return any(n not in self.frozen for n in PRESENCE_NAMES)

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in WEIGHT_NAMES}

    def with_arrays(self, arrays: dict[str, np.ndarray]) -> "QNetParams":
        return replace(self, **arrays)

    def settings(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name not in WEIGHT_NAMES}


def init_params(rng: np.random.Generator, d: int = 64, in_dim: int = 1, hidden: int | None = None,
                tau: float = 1.0, T1: int = 3, T2: int = 3, M: int = 20, N: int = 8,
                time_scale: float = 10.0, two_step: bool = True, bias: bool = True,
                uniform_presence: bool = False) -> QNetParams:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases.

    ``bias=False`` freezes all biases at zero.  ``uniform_presence`` zeroes
    and freezes the presence net, so every row of ``p`` is uniform.
    """
    hidden = d if hidden is None else hidden

    def unif(shape):
        bound = 1.0 / np.sqrt(shape[1])
        return rng.uniform(-bound, bound, size=shape)

    w = {
        "P2": unif((hidden, 3)), "bp": np.zeros(hidden), "P1": unif((1, hidden)),
        "E3": unif((d, d)), "E4": unif((d, in_dim)), "b1": np.zeros(d),
        "E5": unif((d, d)), "E6": unif((d, (d if two_step else in_dim) + 1)), "b2": np.zeros(d),
        "E7": unif((1, d)), "b7": np.zeros(1),
    }
    frozen = set()
    if not bias:
        frozen.update(BIAS_NAMES)
    if uniform_presence:
        w["P1"] = np.zeros((1, hidden))
        frozen.update(PRESENCE_NAMES)
    return QNetParams(**w, tau=tau, T1=T1, T2=T2, M=M, N=N, time_scale=time_scale,
                      two_step=two_step, frozen=tuple(sorted(frozen)))


def relu(x):
    return np.maximum(x, 0.0)


@dataclass(frozen=True)
class PresenceMatrix:
    p: np.ndarray  # (n, n), rows sum to 1 over j != i
    g: np.ndarray  # (n, n) raw scores


@dataclass(frozen=True)
class QEstimate:
    value: float
    per_sample: np.ndarray


# ---------------------------------------------------------------------------
# presence inference

def _presence_forward(params: QNetParams, node_scalar, tt, idx):
    n = len(node_scalar)
    if n < 2:
        return PresenceMatrix(np.zeros((n, n)), np.zeros((n, n))), None
    e = tt[:, :, idx] / params.time_scale  # (n, n, M)
    u = np.empty(e.shape + (3,))
    u[..., 0] = e
    u[..., 1] = node_scalar[:, None, None]
    u[..., 2] = node_scalar[None, :, None]
    hpre = u @ params.P2.T + params.bp  # (n, n, M, h)
    h = relu(hpre)
    hbar = h.mean(axis=2)  # (n, n, h)
    g = hbar @ params.P1[0]
    p = _masked_softmax(g / params.tau)
    return PresenceMatrix(p, g), (u, hpre, hbar)


def _masked_softmax(logits):
    n = logits.shape[0]
    z = logits.copy()
    np.fill_diagonal(z, -np.inf)
    z -= z.max(axis=1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=1, keepdims=True)


def _presence_backward(params: QNetParams, p, dp, cache, grads):
    u, hpre, hbar = cache
    dg = p * (dp - (p * dp).sum(axis=1, keepdims=True)) / params.tau
    grads["P1"] += np.einsum("ij,ijh->h", dg, hbar)[None, :]
    m = u.shape[2]
    dhpre = (dg[:, :, None, None] / m) * params.P1[0] * (hpre > 0)
    grads["P2"] += np.einsum("ijkh,ijkc->hc", dhpre, u)
    grads["bp"] += dhpre.sum(axis=(0, 1, 2))


def infer_presence(state, params: QNetParams, rng: np.random.Generator | None = None,
                   sample_idx=None) -> PresenceMatrix:
    """Presence probabilities between the alive tasks of ``state`` (node order = ``task_ids``)."""
    gi = state.graph_inputs()
    if sample_idx is None:
        sample_idx = _draw(rng, gi.n_samples, params.M)
    return _presence_forward(params, gi.node_scalar, gi.tt, sample_idx)[0]


def _draw(rng, n_stored: int, count: int) -> np.ndarray:
    """Indices into the stored samples; a single stored sample collapses to one draw."""
    if n_stored == 1:
        return np.zeros(1, dtype=np.int64)
    return rng.integers(n_stored, size=count)


# ---------------------------------------------------------------------------
# structure2vec layers

def _s2v_forward(x, p, w_in, w_msg, b, iters):
    base = x @ w_in.T + b
    mu = np.zeros_like(base)
    mus, ls, zs = [], [], []
    pt = p.T
    for t in range(iters):
        mus.append(mu)
        l = np.matmul(pt, mu)
        z = l @ w_msg.T + base
        mu = relu(z)
        if not np.all(np.isfinite(mu)):
            raise NonFiniteError(f"non-finite embedding at sweep {t + 1}")
        ls.append(l)
        zs.append(z)
    return mu, (x, mus, ls, zs)


def _s2v_backward(dmu, cache, p, w_in, w_msg, need_dp):
    x, mus, ls, zs = cache
    dbase = np.zeros_like(dmu)
    dw_msg = np.zeros_like(w_msg)
    dp = np.zeros_like(p) if need_dp else None
    d = w_msg.shape[0]
    for t in reversed(range(len(zs))):
        dz = dmu * (zs[t] > 0)
        dbase += dz
        if t == 0:
            break  # messages are zero on the first sweep
        dw_msg += dz.reshape(-1, d).T @ ls[t].reshape(-1, d)
        dl = dz @ w_msg
        if need_dp:
            dp += np.tensordot(mus[t], dl, axes=([0, 2], [0, 2]))
        dmu = np.matmul(p, dl)
    dw_in = dbase.reshape(-1, d).T @ x.reshape(-1, x.shape[-1])
    db = dbase.sum(axis=(0, 1))
    dx = dbase @ w_in
    return dx, dw_in, dw_msg, db, dp


def s2v_layer(features, p, w_in, w_msg, iters: int, bias=None):
    """Run ``iters`` synchronous sweeps of ``mu_i = relu(w_msg l_i + w_in x_i + b)``.

    ``features`` is ``(n, k)`` or batched ``(B, n, k)``; embeddings start at zero.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    x = np.asarray(features, dtype=float)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.shape[-1] != w_in.shape[1]:
        raise ValueError(f"feature dimension {x.shape[-1]} does not match w_in {w_in.shape}")
    b = np.zeros(w_in.shape[0]) if bias is None else bias
    mu, _ = _s2v_forward(x, np.asarray(p, dtype=float), w_in, w_msg, b, iters)
    return mu[0] if squeeze else mu


# ---------------------------------------------------------------------------
# Q evaluation

class QEvaluator:
    """Q-values of many candidate matchings for one state.

    Completion-time draws (presence and outer samples) are made once at
    construction and shared by every evaluated action, so actions are ranked
    under common random numbers.
    """

    def __init__(self, params: QNetParams, state, rng: np.random.Generator | None = None,
                 common_random_numbers: bool = True):
        self.params = params
        self.state = state
        self.gi = state.graph_inputs()
        self.rng = rng
        self.crn = common_random_numbers
        self.task_ids = state.task_ids
        self.pos = {t: i for i, t in enumerate(self.task_ids)}
        self.presence, self._pcache = self._presence()
        self.outer_idx = _draw(rng, self.gi.n_samples, params.N)
        self.n_evals = 0

    def _presence(self):
        idx = _draw(self.rng, self.gi.n_samples, self.params.M)
        return _presence_forward(self.params, self.gi.node_scalar, self.gi.tt, idx)

    def _inputs(self, actions, outer_idx):
        gi, params = self.gi, self.params
        n, k = len(self.task_ids), gi.node_extra.shape[1]
        x = np.zeros((len(actions), len(outer_idx), n, 1 + k))
        if k:
            x[..., 1:] = gi.node_extra
        for a, action in enumerate(actions):
            for r, t in action:
                try:
                    i = self.pos[t]
                except KeyError:
                    raise ValueError(f"action references dead task {t}") from None
                x[a, :, i, 0] = gi.rt[r, i, outer_idx] / params.time_scale
        return x

    def forward(self, actions, keep=False):
        params, gi = self.params, self.gi
        if self.crn:
            outer, presence, pcache = self.outer_idx, self.presence, self._pcache
        else:
            presence, pcache = self._presence()
            outer = _draw(self.rng, gi.n_samples, params.N)
        n_act, n_out = len(actions), len(outer)
        x = self._inputs(actions, outer).reshape(n_act * n_out, len(self.task_ids), -1)
        p = presence.p
        scalar = np.broadcast_to(gi.node_scalar[None, :, None], x.shape[:2] + (1,))
        if params.two_step:
            mu, c1 = _s2v_forward(x, p, params.E4, params.E3, params.b1, params.T1)
            xv = np.concatenate([mu, scalar], axis=2)
        else:
            c1 = None
            xv = np.concatenate([x, scalar], axis=2)
        gamma, c2 = _s2v_forward(xv, p, params.E6, params.E5, params.b2, params.T2)
        pooled = gamma.sum(axis=1)
        q = pooled @ params.E7[0] + params.b7[0]
        q = q.reshape(n_act, n_out)
        if not np.all(np.isfinite(q)):
            raise NonFiniteError("non-finite Q value")
        self.n_evals += n_act
        cache = (presence, pcache, c1, c2, pooled, n_act, n_out) if keep else None
        return q, cache

    def evaluate(self, actions) -> np.ndarray:
        return self.forward(list(actions))[0].mean(axis=1)

    def estimate(self, action) -> QEstimate:
        q, _ = self.forward([action])
        return QEstimate(float(q[0].mean()), q[0].copy())

    def backward(self, dq, cache, grads):
        """Accumulate into ``grads`` the gradient of ``sum_a dq[a] * Q(a)``."""
        params = self.params
        presence, pcache, c1, c2, pooled, n_act, n_out = cache
        dqs = np.repeat(np.asarray(dq, dtype=float) / n_out, n_out)  # per flattened sample
        grads["E7"] += (dqs @ pooled)[None, :]
        grads["b7"] += dqs.sum()
        dgamma = np.broadcast_to(dqs[:, None, None] * params.E7[0], c2[3][0].shape)
        need_dp = presence.p.shape[0] > 1 and params.presence_trainable
        dxv, dE6, dE5, db2, dp2 = _s2v_backward(dgamma, c2, presence.p, params.E6, params.E5, need_dp)
        grads["E6"] += dE6
        grads["E5"] += dE5
        grads["b2"] += db2
        dp = dp2
        if params.two_step:
            dmu = dxv[..., :params.d]
            _, dE4, dE3, db1, dp1 = _s2v_backward(dmu, c1, presence.p, params.E4, params.E3, need_dp)
            grads["E4"] += dE4
            grads["E3"] += dE3
            grads["b1"] += db1
            if need_dp:
                dp = dp + dp1
        if need_dp:
            _presence_backward(params, presence.p, dp, pcache, grads)


def q_value(state, action, params: QNetParams, rng: np.random.Generator | None = None) -> QEstimate:
    return QEvaluator(params, state, rng).estimate(action)


def zero_grads(params: QNetParams) -> dict[str, np.ndarray]:
    return {n: np.zeros_like(a) for n, a in params.arrays().items()}


def loss_and_gradients(batch, params: QNetParams, rng: np.random.Generator | None = None):
    """Mean squared error between Q(s, a) and fixed targets, with exact gradients.

    ``batch`` holds ``(state, action, target)`` triples.  Frozen weights get
    zero gradient.
    """
    if not batch:
        raise ValueError("empty batch")
    grads = zero_grads(params)
    total = 0.0
    scale = 2.0 / len(batch)
    for state, action, target in batch:
        if not np.isfinite(target):
            raise NonFiniteError("non-finite target")
        ev = QEvaluator(params, state, rng)
        q, cache = ev.forward([action], keep=True)
        err = q[0].mean() - target
        total += err * err
        ev.backward([scale * err], cache, grads)
    loss = total / len(batch)
    if not np.isfinite(loss):
        raise NonFiniteError("non-finite loss")
    for name in params.frozen:
        grads[name][...] = 0.0
    return float(loss), grads


# ---------------------------------------------------------------------------
# parameter utilities

def perturb(params: QNetParams, rel_sigma: float, rng: np.random.Generator) -> QNetParams:
    """Copy of ``params`` with Gaussian noise scaled by each weight's RMS."""
    if rel_sigma == 0:
        return params
    new = {}
    for name in params.trainable:
        arr = getattr(params, name)
        rms = float(np.sqrt(np.mean(arr * arr)))
        new[name] = arr + rng.normal(0.0, rel_sigma * rms, size=arr.shape)
    return params.with_arrays(new)


def save_checkpoint(params: QNetParams, path) -> None:
    meta = dict(params.settings(), version=CHECKPOINT_VERSION)
    meta["frozen"] = list(meta["frozen"])
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **params.arrays())


def load_checkpoint(path) -> QNetParams:
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        version = meta.pop("version", None)
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        meta["frozen"] = tuple(meta["frozen"])
        arrays = {n: data[n].copy() for n in WEIGHT_NAMES}
    return QNetParams(**arrays, **meta)


def flatten(params: QNetParams, names=None) -> np.ndarray:
    names = params.trainable if names is None else names
    return np.concatenate([getattr(params, n).ravel() for n in names])

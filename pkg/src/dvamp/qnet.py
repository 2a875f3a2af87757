"""Dueling Q-networks in plain numpy.

``SpaneNet`` is the symmetry-preserving network: one PM encoder shared by all
machines, a mean-pooled cluster embedding, an invariant value head and a
per-PM advantage head producing the two NUMA advantages of each PM. Its
parameter shapes do not depend on the number of PMs.

``MlpNet`` is the flat baseline whose input width binds it to one ``m``.

Both expose ``forward``, ``backward`` (exact gradients of a batch loss),
``q_values`` for a single observation, and round-trip through JSON
checkpoints.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, asdict
from typing import NamedTuple

import numpy as np

from .errors import NumericError, ShapeError


class ObsBatch(NamedTuple):
    util: np.ndarray   # (B, m, 2, D), normalized
    vm: np.ndarray     # (B, D), normalized
    div: np.ndarray    # (B,)
    wait: np.ndarray   # (B,)

    @property
    def size(self):
        return self.util.shape[0]

    @property
    def m(self):
        return self.util.shape[1]


def stack_obs(observations):
    return ObsBatch(util=np.stack([o.numa_util for o in observations]).astype(float),
                    vm=np.stack([o.vm_resources for o in observations]).astype(float),
                    div=np.array([o.div for o in observations], dtype=float),
                    wait=np.array([o.wait_so_far for o in observations], dtype=float))


@dataclass(frozen=True)
class FeatureConfig:
    """Which request features reach the networks."""

    use_div: bool = True
    use_wait: bool = True
    vm_into_embed: bool = True

    def width(self, D):
        return D + int(self.use_div) + int(self.use_wait)


def vm_features(batch, features):
    cols = [batch.vm]
    if features.use_div:
        cols.append(batch.div[:, None])
    if features.use_wait:
        cols.append(np.log1p(np.maximum(batch.wait, 0.0))[:, None])
    return np.concatenate(cols, axis=1)


class QOutput(NamedTuple):
    v: np.ndarray     # (B,)
    adv: np.ndarray   # (B, 2m)
    q: np.ndarray     # (B, 2m)


def _relu(x):
    return np.maximum(x, 0.0)


def _linear(x, w, b):
    return x @ w.T + b


def _linear_grads(x, dy, grads, wname, bname):
    """Accumulate dL/dW, dL/db for y = x W^T + b with arbitrary leading dims."""
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    grads[wname] = dy2.T @ x2
    grads[bname] = dy2.sum(axis=0)


def he_uniform(rng, out_dim, in_dim):
    bound = np.sqrt(6.0 / in_dim)
    return rng.uniform(-bound, bound, size=(out_dim, in_dim))


def _compose(v, adv, centered):
    q = v[:, None] + adv
    if centered:
        q = q - adv.mean(axis=1, keepdims=True)
    return q


def _split_dq(dq, centered):
    """Gradients w.r.t. v and adv given dL/dq."""
    dv = dq.sum(axis=1)
    dadv = dq - dq.mean(axis=1, keepdims=True) if centered else dq
    return dv, dadv


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericError("non-finite activation in Q-network forward pass")


class QNetwork:
    arch = "base"

    def __init__(self, params, centered=False):
        self.params = params
        self.centered = centered

    def forward(self, batch, return_cache=False):
        raise NotImplementedError

    def backward(self, cache, dq):
        raise NotImplementedError

    def q_values(self, obs):
        return self.forward(stack_obs([obs])).q[0]

    def loss_grads(self, batch, actions, targets):
        """Mean squared TD error and its gradient w.r.t. every parameter."""
        out, cache = self.forward(batch, return_cache=True)
        rows = np.arange(batch.size)
        diff = out.q[rows, actions] - targets
        loss = float(np.mean(diff ** 2))
        dq = np.zeros_like(out.q)
        dq[rows, actions] = 2.0 * diff / batch.size
        return loss, self.backward(cache, dq)

    def copy(self):
        return copy.deepcopy(self)

    def load_params(self, other):
        for k, v in other.params.items():
            self.params[k][...] = v

    def config(self):
        raise NotImplementedError

    def config_hash(self):
        blob = json.dumps(self.config(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class SpaneNet(QNetwork):
    arch = "spane"

    def __init__(self, D, features=FeatureConfig(), embed_hidden=8, embed_dim=8,
                 value_hidden=8, adv_hidden=16, centered=False, seed=0, params=None):
        self.D = D
        self.features = features
        self.embed_hidden = embed_hidden
        self.embed_dim = embed_dim
        self.value_hidden = value_hidden
        self.adv_hidden = adv_hidden
        F = features.width(D)
        pm_in = 2 * D + (F if features.vm_into_embed else 0)
        shapes = {
            "embed.w1": (embed_hidden, pm_in), "embed.w2": (embed_dim, embed_hidden),
            "value.w1": (value_hidden, embed_dim + F), "value.w2": (1, value_hidden),
            "adv.w1": (adv_hidden, 2 * embed_dim + F), "adv.w2": (2, adv_hidden),
        }
        if params is None:
            rng = np.random.default_rng(seed)
            params = {}
            for name, shape in shapes.items():
                params[name] = he_uniform(rng, *shape)
                params[name.replace(".w", ".b")] = np.zeros(shape[0])
        super().__init__(params, centered)

    def config(self):
        return {"arch": self.arch, "D": self.D, "features": asdict(self.features),
                "embed_hidden": self.embed_hidden, "embed_dim": self.embed_dim,
                "value_hidden": self.value_hidden, "adv_hidden": self.adv_hidden,
                "centered": self.centered}

    def forward(self, batch, return_cache=False):
        p = self.params
        B, m = batch.size, batch.m
        f = vm_features(batch, self.features)
        u = batch.util.reshape(B, m, -1)
        if self.features.vm_into_embed:
            x_pm = np.concatenate([u, np.broadcast_to(f[:, None, :], (B, m, f.shape[1]))], axis=2)
        else:
            x_pm = u
        z1 = _linear(x_pm, p["embed.w1"], p["embed.b1"])
        h1 = _relu(z1)
        e = _linear(h1, p["embed.w2"], p["embed.b2"])             # (B, m, E)
        c = e.mean(axis=1)                                         # (B, E)

        x_v = np.concatenate([c, f], axis=1)
        h_v = _relu(_linear(x_v, p["value.w1"], p["value.b1"]))
        v = _linear(h_v, p["value.w2"], p["value.b2"])[:, 0]

        E = e.shape[2]
        x_a = np.concatenate([e, np.broadcast_to(c[:, None, :], (B, m, E)),
                              np.broadcast_to(f[:, None, :], (B, m, f.shape[1]))], axis=2)
        h_a = _relu(_linear(x_a, p["adv.w1"], p["adv.b1"]))
        adv = _linear(h_a, p["adv.w2"], p["adv.b2"]).reshape(B, 2 * m)
        q = _compose(v, adv, self.centered)
        _check_finite(q)
        out = QOutput(v, adv, q)
        if not return_cache:
            return out
        cache = dict(x_pm=x_pm, h1=h1, x_v=x_v, h_v=h_v, x_a=x_a, h_a=h_a, m=m, E=E)
        return out, cache

    def backward(self, cache, dq):
        p = self.params
        grads = {}
        m, E = cache["m"], cache["E"]
        B = dq.shape[0]
        dv, dadv = _split_dq(dq, self.centered)

        # advantage head
        da = dadv.reshape(B, m, 2)
        _linear_grads(cache["h_a"], da, grads, "adv.w2", "adv.b2")
        dh_a = (da @ p["adv.w2"]) * (cache["h_a"] > 0)
        _linear_grads(cache["x_a"], dh_a, grads, "adv.w1", "adv.b1")
        dx_a = dh_a @ p["adv.w1"]
        de = dx_a[:, :, :E].copy()
        dc = dx_a[:, :, E:2 * E].sum(axis=1)

        # value head
        dv2 = dv[:, None]
        _linear_grads(cache["h_v"], dv2, grads, "value.w2", "value.b2")
        dh_v = (dv2 @ p["value.w2"]) * (cache["h_v"] > 0)
        _linear_grads(cache["x_v"], dh_v, grads, "value.w1", "value.b1")
        dc += (dh_v @ p["value.w1"])[:, :E]

        # mean pooling spreads the cluster gradient evenly over the m PM branches
        de += dc[:, None, :] / m
        _linear_grads(cache["h1"], de, grads, "embed.w2", "embed.b2")
        dh1 = (de @ p["embed.w2"]) * (cache["h1"] > 0)
        _linear_grads(cache["x_pm"], dh1, grads, "embed.w1", "embed.b1")
        return grads


class MlpNet(QNetwork):
    arch = "mlp"

    def __init__(self, m, D, features=FeatureConfig(), hidden=32, centered=False, seed=0,
                 params=None):
        self.m = m
        self.D = D
        self.features = features
        self.hidden = hidden
        in_dim = m * 2 * D + features.width(D)
        shapes = {"trunk.w1": (hidden, in_dim), "trunk.w2": (hidden, hidden),
                  "value.w": (1, hidden), "adv.w": (2 * m, hidden)}
        if params is None:
            rng = np.random.default_rng(seed)
            params = {}
            for name, shape in shapes.items():
                params[name] = he_uniform(rng, *shape)
                params[name.replace(".w", ".b")] = np.zeros(shape[0])
        super().__init__(params, centered)

    def config(self):
        return {"arch": self.arch, "m": self.m, "D": self.D, "features": asdict(self.features),
                "hidden": self.hidden, "centered": self.centered}

    def forward(self, batch, return_cache=False):
        if batch.m != self.m:
            raise ShapeError(f"architecture bound to m={self.m}, got an observation with m={batch.m}")
        p = self.params
        B = batch.size
        x = np.concatenate([batch.util.reshape(B, -1), vm_features(batch, self.features)], axis=1)
        h1 = _relu(_linear(x, p["trunk.w1"], p["trunk.b1"]))
        h2 = _relu(_linear(h1, p["trunk.w2"], p["trunk.b2"]))
        v = _linear(h2, p["value.w"], p["value.b"])[:, 0]
        adv = _linear(h2, p["adv.w"], p["adv.b"])
        q = _compose(v, adv, self.centered)
        _check_finite(q)
        out = QOutput(v, adv, q)
        if not return_cache:
            return out
        return out, dict(x=x, h1=h1, h2=h2)

    def backward(self, cache, dq):
        p = self.params
        grads = {}
        dv, dadv = _split_dq(dq, self.centered)
        h2 = cache["h2"]
        _linear_grads(h2, dv[:, None], grads, "value.w", "value.b")
        _linear_grads(h2, dadv, grads, "adv.w", "adv.b")
        dh2 = (dv[:, None] @ p["value.w"] + dadv @ p["adv.w"]) * (h2 > 0)
        _linear_grads(cache["h1"], dh2, grads, "trunk.w2", "trunk.b2")
        dh1 = (dh2 @ p["trunk.w2"]) * (cache["h1"] > 0)
        _linear_grads(cache["x"], dh1, grads, "trunk.w1", "trunk.b1")
        return grads


def make_network(arch, m, D, seed=0, centered=False, features=FeatureConfig()):
    if arch == "spane":
        return SpaneNet(D, features=features, centered=centered, seed=seed)
    if arch in ("mlp", "mlp_aug"):
        return MlpNet(m, D, features=features, centered=centered, seed=seed)
    raise ValueError(f"unknown architecture {arch!r}")


# -- permutations ------------------------------------------------------------
#
# A permutation ``sigma`` is a 0-based integer array; ``sigma[k]`` is the
# original PM whose state is moved to position k.

def _check_perm(sigma, m):
    sigma = np.asarray(sigma, dtype=int)
    if sigma.shape != (m,) or not np.array_equal(np.sort(sigma), np.arange(m)):
        raise ValueError(f"{sigma.tolist()} is not a permutation of range({m})")
    return sigma


def permute_obs(obs, sigma):
    """Reorder PM blocks: position k receives PM ``sigma[k]``."""
    sigma = _check_perm(sigma, obs.m)
    return type(obs)(numa_util=obs.numa_util[sigma], vm_resources=obs.vm_resources,
                     div=obs.div, wait_so_far=obs.wait_so_far, pending=obs.pending)


def permute_action_vector(vec, sigma):
    """Apply the matching reordering to a length-2m per-action vector."""
    vec = np.asarray(vec)
    m = vec.shape[-1] // 2
    if vec.shape[-1] != 2 * m:
        raise ShapeError("action vectors have even length 2m")
    sigma = _check_perm(sigma, m)
    lead = vec.shape[:-1]
    return vec.reshape(*lead, m, 2)[..., sigma, :].reshape(*lead, 2 * m)


def inverse_permutation(sigma):
    sigma = np.asarray(sigma, dtype=int)
    inv = np.empty_like(sigma)
    inv[sigma] = np.arange(len(sigma))
    return inv


# -- optimizer ---------------------------------------------------------------

class Adam:
    """Adam with an L2 penalty folded into the gradient."""

    def __init__(self, params, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        for k, w in params.items():
            g = grads[k] + self.weight_decay * w
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            w -= self.lr * (self.m[k] / corr1) / (np.sqrt(self.v[k] / corr2) + self.eps)


# -- checkpoints -------------------------------------------------------------

def checkpoint_dict(net, extra=None):
    return {
        "config": net.config(),
        "config_hash": net.config_hash(),
        "tensors": [{"name": k, "shape": list(v.shape), "values": v.ravel().tolist()}
                    for k, v in net.params.items()],
        "extra": extra or {},
    }


def network_from_dict(d):
    cfg = d["config"]
    params = {t["name"]: np.asarray(t["values"], dtype=float).reshape(t["shape"])
              for t in d["tensors"]}
    features = FeatureConfig(**cfg["features"])
    if cfg["arch"] == "spane":
        net = SpaneNet(cfg["D"], features=features, embed_hidden=cfg["embed_hidden"],
                       embed_dim=cfg["embed_dim"], value_hidden=cfg["value_hidden"],
                       adv_hidden=cfg["adv_hidden"], centered=cfg["centered"], params=params)
    elif cfg["arch"] == "mlp":
        net = MlpNet(cfg["m"], cfg["D"], features=features, hidden=cfg["hidden"],
                     centered=cfg["centered"], params=params)
    else:
        raise ValueError(f"unknown architecture {cfg['arch']!r} in checkpoint")
    if net.config_hash() != d["config_hash"]:
        raise ValueError("checkpoint config hash mismatch")
    return net


def save_checkpoint(net, path, extra=None):
    with open(path, "w") as f:
        json.dump(checkpoint_dict(net, extra), f)


def load_checkpoint(path):
    with open(path) as f:
        d = json.load(f)
    return network_from_dict(d), d.get("extra", {})

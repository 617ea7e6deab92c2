"""Self-contained differentiable Q-network: numpy forward/backward, no framework.

Shared two-hidden-layer trunk over the state, splitting into a value head V(s)
and an advantage head A(s, a) fed the trunk output concatenated with the
action embedding. Q over a candidate set combines as V + A - mean(A).
Plain SGD on mean-squared error against externally supplied targets.
"""

from __future__ import annotations

import json

import numpy as np


def _relu(x):
    return np.maximum(x, 0.0)


class MLPQNet:
    def __init__(
        self,
        state_dim: int,
        action_dim: int,
        width: int = 128,
        adv_width: int = 128,
        lr: float = 1e-3,
        seed: int = 0,
    ):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.width = width
        self.adv_width = adv_width
        self.lr = lr
        rng = np.random.default_rng(seed)

        def init(fan_out, fan_in):
            return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))

        self.params = {
            "t1_W": init(width, state_dim), "t1_b": np.zeros(width),
            "t2_W": init(width, width), "t2_b": np.zeros(width),
            "v_W": init(1, width), "v_b": np.zeros(1),
            "a1_W": init(adv_width, width + action_dim), "a1_b": np.zeros(adv_width),
            "a2_W": init(1, adv_width), "a2_b": np.zeros(1),
        }

    # -- forward ------------------------------------------------------------ #

    def _trunk(self, s: np.ndarray):
        p = self.params
        z1 = p["t1_W"] @ s + p["t1_b"]
        h1 = _relu(z1)
        z2 = p["t2_W"] @ h1 + p["t2_b"]
        h2 = _relu(z2)
        return z1, h1, z2, h2

    def forward(self, s: np.ndarray, actions: np.ndarray):
        """Returns (V, A, Q, cache) for one state and its candidate actions."""
        p = self.params
        actions = np.atleast_2d(actions)
        z1, h1, z2, h2 = self._trunk(s)
        V = float((p["v_W"] @ h2 + p["v_b"])[0])
        n = actions.shape[0]
        X = np.concatenate([np.repeat(h2[None, :], n, axis=0), actions], axis=1)
        Za = X @ p["a1_W"].T + p["a1_b"]
        Ha = _relu(Za)
        A = (Ha @ p["a2_W"].T + p["a2_b"]).ravel()
        Q = V + A - A.mean()
        cache = (s, actions, z1, h1, z2, h2, X, Za, Ha, A)
        return V, A, Q, cache

    def q_values(self, s: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return self.forward(s, actions)[2]

    # -- backward ------------------------------------------------------------ #

    def backward(self, cache, dQ: np.ndarray, grads: dict[str, np.ndarray]):
        """Accumulate parameter gradients for dLoss/dQ over the candidate set."""
        p = self.params
        s, actions, z1, h1, z2, h2, X, Za, Ha, A = cache
        n = actions.shape[0]
        dV = float(dQ.sum())
        dA = dQ - dQ.sum() / n

        # advantage head
        dHa = dA[:, None] * p["a2_W"]          # (n, adv_width)
        grads["a2_W"] += dA[None, :] @ Ha
        grads["a2_b"] += np.array([dA.sum()])
        dZa = dHa * (Za > 0)
        grads["a1_W"] += dZa.T @ X
        grads["a1_b"] += dZa.sum(axis=0)
        dX = dZa @ p["a1_W"]
        dh2 = dX[:, : self.width].sum(axis=0)

        # value head
        grads["v_W"] += dV * h2[None, :]
        grads["v_b"] += np.array([dV])
        dh2 = dh2 + dV * p["v_W"].ravel()

        # trunk
        dz2 = dh2 * (z2 > 0)
        grads["t2_W"] += np.outer(dz2, h1)
        grads["t2_b"] += dz2
        dh1 = p["t2_W"].T @ dz2
        dz1 = dh1 * (z1 > 0)
        grads["t1_W"] += np.outer(dz1, s)
        grads["t1_b"] += dz1

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def sgd_step(self, grads: dict[str, np.ndarray], scale: float = 1.0,
                 clip_norm: float | None = 5.0):
        if clip_norm is not None:
            total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if total > clip_norm:
                scale *= clip_norm / total
        for k, g in grads.items():
            self.params[k] -= self.lr * scale * g

    # -- loss ----------------------------------------------------------------- #

    def loss_and_grads(self, batch) -> tuple[float, dict[str, np.ndarray]]:
        """batch: iterable of (state, candidate actions, taken index, target)."""
        grads = self.zero_grads()
        total = 0.0
        count = 0
        for s, actions, taken, target in batch:
            V, A, Q, cache = self.forward(s, actions)
            err = Q[taken] - target
            total += 0.5 * err * err
            dQ = np.zeros_like(Q)
            dQ[taken] = err
            self.backward(cache, dQ, grads)
            count += 1
        if count:
            total /= count
            for k in grads:
                grads[k] /= count
        return float(total), grads

    def train_step(self, batch) -> float:
        loss, grads = self.loss_and_grads(batch)
        self.sgd_step(grads)
        return loss

    # -- parameter management -------------------------------------------------- #

    def clone(self) -> "MLPQNet":
        other = MLPQNet(self.state_dim, self.action_dim, self.width, self.adv_width, self.lr)
        other.set_params(self.get_params())
        return other

    def get_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def set_params(self, params: dict[str, np.ndarray]):
        for k in self.params:
            self.params[k] = params[k].copy()

    def params_equal(self, other: "MLPQNet") -> bool:
        return all(np.array_equal(self.params[k], other.params[k]) for k in self.params)

    # -- checkpoint (versioned layout: meta json + one array per parameter) ---- #

    CHECKPOINT_VERSION = "qnet-v1"

    def save(self, path: str):
        meta = json.dumps({
            "version": self.CHECKPOINT_VERSION, "state_dim": self.state_dim,
            "action_dim": self.action_dim, "width": self.width,
            "adv_width": self.adv_width, "lr": self.lr,
        })
        np.savez(path, __meta__=np.frombuffer(meta.encode(), dtype=np.uint8), **self.params)

    @staticmethod
    def load(path: str) -> "MLPQNet":
        data = np.load(path)
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta["version"] != MLPQNet.CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta['version']}")
        net = MLPQNet(meta["state_dim"], meta["action_dim"], meta["width"],
                      meta["adv_width"], meta["lr"])
        net.set_params({k: data[k] for k in net.params})
        return net

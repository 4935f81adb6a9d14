"""Dueling Q-network in plain numpy with hand-written backpropagation."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1
PARAM_ORDER = ("W1", "b1", "W2", "b2", "Wv", "bv", "Wa", "ba")


class NetworkFault(RuntimeError):
    """Weights or loss went non-finite."""


@dataclass
class ForwardCache:
    x: np.ndarray
    z1: np.ndarray
    h1: np.ndarray
    z2: np.ndarray
    h2: np.ndarray
    v: np.ndarray
    a: np.ndarray


class DuelingNetwork:
    """Trunk of two ReLU layers feeding a scalar value head and an advantage head.

    Q(s, a) = V(s) + A(s, a) - mean_a' A(s, a').
    """

    def __init__(self, state_dim: int = 8, n_actions: int = 15, hidden: tuple[int, int] = (64, 64), seed: int = 0):
        self.state_dim = state_dim
        self.n_actions = n_actions
        self.hidden = tuple(hidden)
        rng = np.random.default_rng(seed)
        h1, h2 = self.hidden

        def he(fan_in, fan_out):
            lim = np.sqrt(6.0 / fan_in)
            return rng.uniform(-lim, lim, size=(fan_in, fan_out))

        self.params = {
            "W1": he(state_dim, h1), "b1": np.zeros(h1),
            "W2": he(h1, h2), "b2": np.zeros(h2),
            "Wv": he(h2, 1) * 0.1, "bv": np.zeros(1),
            "Wa": he(h2, n_actions) * 0.1, "ba": np.zeros(n_actions),
        }

    def copy(self) -> "DuelingNetwork":
        other = DuelingNetwork.__new__(DuelingNetwork)
        other.state_dim, other.n_actions, other.hidden = self.state_dim, self.n_actions, self.hidden
        other.params = {k: v.copy() for k, v in self.params.items()}
        return other

    def load_state(self, other: "DuelingNetwork") -> None:
        for k in PARAM_ORDER:
            self.params[k][...] = other.params[k]

    def check_finite(self) -> None:
        for k, v in self.params.items():
            if not np.all(np.isfinite(v)):
                raise NetworkFault(f"non-finite weights in {k}")

    def forward(self, states: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
        p = self.params
        x = np.atleast_2d(np.asarray(states, dtype=float))
        z1 = x @ p["W1"] + p["b1"]
        h1 = np.maximum(z1, 0.0)
        z2 = h1 @ p["W2"] + p["b2"]
        h2 = np.maximum(z2, 0.0)
        v = h2 @ p["Wv"] + p["bv"]
        a = h2 @ p["Wa"] + p["ba"]
        q = v + a - a.mean(axis=1, keepdims=True)
        return q, ForwardCache(x, z1, h1, z2, h2, v, a)

    def q_values(self, states: np.ndarray) -> np.ndarray:
        return self.forward(states)[0]

    def value_and_advantage(self, states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        _, c = self.forward(states)
        return c.v[:, 0], c.a

    def backward(self, cache: ForwardCache, dq: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss given dL/dQ for every (row, action)."""
        p = self.params
        dv = dq.sum(axis=1, keepdims=True)
        da = dq - dq.mean(axis=1, keepdims=True)
        g = {
            "Wv": cache.h2.T @ dv, "bv": dv.sum(axis=0),
            "Wa": cache.h2.T @ da, "ba": da.sum(axis=0),
        }
        dh2 = dv @ p["Wv"].T + da @ p["Wa"].T
        dz2 = dh2 * (cache.z2 > 0)
        g["W2"] = cache.h1.T @ dz2
        g["b2"] = dz2.sum(axis=0)
        dh1 = dz2 @ p["W2"].T
        dz1 = dh1 * (cache.z1 > 0)
        g["W1"] = cache.x.T @ dz1
        g["b1"] = dz1.sum(axis=0)
        return g

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "state_dim": self.state_dim,
            "n_actions": self.n_actions,
            "hidden": list(self.hidden),
            "layers": {k: {"shape": list(self.params[k].shape), "data": self.params[k].ravel().tolist()} for k in PARAM_ORDER},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "DuelingNetwork":
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported network schema {doc.get('schema_version')!r}")
        net = cls.__new__(cls)
        net.state_dim, net.n_actions, net.hidden = doc["state_dim"], doc["n_actions"], tuple(doc["hidden"])
        net.params = {
            k: np.array(doc["layers"][k]["data"], dtype=float).reshape(doc["layers"][k]["shape"]) for k in PARAM_ORDER
        }
        return net

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "DuelingNetwork":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float = 1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for k in PARAM_ORDER:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


class SGD:
    def __init__(self, params=None, lr: float = 1e-3):
        self.lr = lr

    def step(self, params, grads, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        for k in PARAM_ORDER:
            params[k] -= lr * grads[k]

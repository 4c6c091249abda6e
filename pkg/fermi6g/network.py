"""Recurrent Q-network: input projection, one LSTM cell, three linear heads.

Parameters live in one flat float64 vector, in this order:

    W_in (H, 8), b_in (H),
    W_x (4H, H), W_h (4H, H), b (4H)      gate rows ordered i, f, g, o
    W_app (2, H), b_app (2),
    W_mac (k, H), b_mac (k),
    W_cpu (3, H), b_cpu (3)

Checkpoints store the same vector behind a small versioned header.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

from .domain import APP_ACTIONS, CPU_ACTIONS, OBS_DIM
from .errors import ShapeError

logger = logging.getLogger(__name__)

HEADS = ("app", "mac", "cpu")
CHECKPOINT_MAGIC = b"F6GM"
CHECKPOINT_VERSION = 1
CHECKPOINT_HEADER = struct.Struct("<4sBIIQ")


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class ForwardCache:
    x: np.ndarray
    u: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c: np.ndarray
    h: np.ndarray
    c_prev: np.ndarray
    h_prev: np.ndarray


class QNetwork:
    """Shape bookkeeping and the math of the recurrent Q-network.

    The object itself holds no parameters; every method takes the flat
    vector explicitly so that online and target weights share one network.
    """

    def __init__(self, hidden_size: int, num_channels: int):
        if hidden_size < 1 or num_channels < 1:
            raise ShapeError(f"bad network dims H={hidden_size} k={num_channels}")
        self.hidden_size = H = hidden_size
        self.num_channels = k = num_channels
        self.head_sizes = {"app": APP_ACTIONS, "mac": k, "cpu": CPU_ACTIONS}
        shapes = [
            ("W_in", (H, OBS_DIM)), ("b_in", (H,)),
            ("W_x", (4 * H, H)), ("W_h", (4 * H, H)), ("b", (4 * H,)),
            ("W_app", (APP_ACTIONS, H)), ("b_app", (APP_ACTIONS,)),
            ("W_mac", (k, H)), ("b_mac", (k,)),
            ("W_cpu", (CPU_ACTIONS, H)), ("b_cpu", (CPU_ACTIONS,)),
        ]
        self.layout = {}
        offset = 0
        for name, shape in shapes:
            n = int(np.prod(shape))
            self.layout[name] = (offset, shape)
            offset += n
        self.size = offset

    def unpack(self, params: np.ndarray) -> Dict[str, np.ndarray]:
        """Named views into ``params`` (writes go through to the flat vector)."""
        params = np.asarray(params)
        if params.shape != (self.size,):
            raise ShapeError(f"expected {self.size} parameters, got shape {params.shape}")
        return {name: params[off:off + int(np.prod(shape))].reshape(shape)
                for name, (off, shape) in self.layout.items()}

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        """Uniform(+-1/sqrt(H)) weights, zero biases, forget-gate bias 1."""
        H = self.hidden_size
        bound = 1.0 / np.sqrt(H)
        params = np.zeros(self.size)
        p = self.unpack(params)
        for name in ("W_in", "W_x", "W_h", "W_app", "W_mac", "W_cpu"):
            p[name][...] = rng.uniform(-bound, bound, size=p[name].shape)
        p["b"][H:2 * H] = 1.0
        return params

    def zero_state(self, batch: int = 1):
        return np.zeros((batch, self.hidden_size)), np.zeros((batch, self.hidden_size))

    def _as_batch(self, obs_seq):
        obs = np.asarray(obs_seq, dtype=np.float64)
        squeeze = obs.ndim == 2
        if squeeze:
            obs = obs[None]
        if obs.ndim != 3 or obs.shape[-1] != OBS_DIM:
            raise ShapeError(f"observation sequences must be (batch, time, {OBS_DIM}), got {np.shape(obs_seq)}")
        return obs, squeeze

    def forward(self, params, obs_seq, hidden=None, cache=False):
        """Run a (batch, time, 8) or (time, 8) sequence.

        Returns ``(q_app, q_mac, q_cpu, (h, c))`` and, with ``cache=True``,
        the activations ``backward`` needs.
        """
        p = self.unpack(params)
        obs, squeeze = self._as_batch(obs_seq)
        B, T, _ = obs.shape
        H = self.hidden_size
        h, c = self.zero_state(B) if hidden is None else (np.asarray(hidden[0], dtype=np.float64),
                                                           np.asarray(hidden[1], dtype=np.float64))
        if h.shape != (B, H) or c.shape != (B, H):
            raise ShapeError(f"hidden state must be ({B}, {H})")

        store = {name: np.zeros((B, T, H)) for name in ("u", "i", "f", "g", "o", "c", "h", "c_prev", "h_prev")}
        for t in range(T):
            u = np.tanh(obs[:, t] @ p["W_in"].T + p["b_in"])
            z = u @ p["W_x"].T + h @ p["W_h"].T + p["b"]
            i = sigmoid(z[:, :H])
            f = sigmoid(z[:, H:2 * H])
            g = np.tanh(z[:, 2 * H:3 * H])
            o = sigmoid(z[:, 3 * H:])
            store["c_prev"][:, t] = c
            store["h_prev"][:, t] = h
            c = f * c + i * g
            h = o * np.tanh(c)
            for name, value in (("u", u), ("i", i), ("f", f), ("g", g), ("o", o), ("c", c), ("h", h)):
                store[name][:, t] = value

        hs = store["h"]
        q_app = hs @ p["W_app"].T + p["b_app"]
        q_mac = hs @ p["W_mac"].T + p["b_mac"]
        q_cpu = hs @ p["W_cpu"].T + p["b_cpu"]
        if squeeze:
            q_app, q_mac, q_cpu = q_app[0], q_mac[0], q_cpu[0]
        out = (q_app, q_mac, q_cpu, (h, c))
        if cache:
            return out + (ForwardCache(x=obs, **store),)
        return out

    def backward(self, params, cache: ForwardCache, d_app, d_mac, d_cpu) -> np.ndarray:
        """Gradient of a scalar loss w.r.t. ``params``, given dLoss/dQ for
        every head at every step. Backpropagates through the whole sequence;
        the initial hidden state is treated as a constant."""
        p = self.unpack(params)
        grad = np.zeros(self.size)
        gp = self.unpack(grad)
        H = self.hidden_size
        B, T, _ = cache.x.shape

        dh_heads = np.zeros((B, T, H))
        for name, dq in (("app", d_app), ("mac", d_mac), ("cpu", d_cpu)):
            dq = np.asarray(dq, dtype=np.float64).reshape(B, T, -1)
            gp[f"W_{name}"][...] = np.einsum("bta,bth->ah", dq, cache.h)
            gp[f"b_{name}"][...] = dq.sum(axis=(0, 1))
            dh_heads += dq @ p[f"W_{name}"]

        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for t in reversed(range(T)):
            i, f, g, o = cache.i[:, t], cache.f[:, t], cache.g[:, t], cache.o[:, t]
            dh = dh_heads[:, t] + dh_next
            tc = np.tanh(cache.c[:, t])
            do = dh * tc
            dc = dh * o * (1.0 - tc ** 2) + dc_next
            di = dc * g
            dg = dc * i
            df = dc * cache.c_prev[:, t]
            dc_next = dc * f
            dz = np.concatenate([di * i * (1 - i), df * f * (1 - f), dg * (1 - g ** 2), do * o * (1 - o)], axis=1)
            u = cache.u[:, t]
            gp["W_x"] += dz.T @ u
            gp["W_h"] += dz.T @ cache.h_prev[:, t]
            gp["b"] += dz.sum(axis=0)
            dh_next = dz @ p["W_h"]
            da = (dz @ p["W_x"]) * (1.0 - u ** 2)
            gp["W_in"] += da.T @ cache.x[:, t]
            gp["b_in"] += da.sum(axis=0)
        return grad


def forward(network: QNetwork, params, obs_seq, hidden=None):
    return network.forward(params, obs_seq, hidden)


def encode_checkpoint(params, hidden_size: int, num_channels: int) -> bytes:
    params = np.asarray(params, dtype=np.float64)
    expected = QNetwork(hidden_size, num_channels).size
    if params.shape != (expected,):
        raise ShapeError(f"checkpoint for H={hidden_size} k={num_channels} needs {expected} parameters")
    if not np.all(np.isfinite(params)):
        raise ShapeError("refusing to checkpoint non-finite parameters")
    header = CHECKPOINT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, hidden_size, num_channels, expected)
    return header + params.astype("<f8").tobytes()


def decode_checkpoint(blob: bytes) -> Tuple[np.ndarray, int, int]:
    """Inverse of ``encode_checkpoint``: returns ``(params, H, k)``."""
    if len(blob) < CHECKPOINT_HEADER.size:
        raise ShapeError("checkpoint truncated before header end")
    magic, version, H, k, count = CHECKPOINT_HEADER.unpack_from(blob)
    if magic != CHECKPOINT_MAGIC:
        raise ShapeError(f"not a model checkpoint (magic {magic!r})")
    if version != CHECKPOINT_VERSION:
        raise ShapeError(f"unsupported checkpoint version {version}")
    if count != QNetwork(H, k).size:
        raise ShapeError(f"checkpoint declares {count} parameters, H={H} k={k} needs {QNetwork(H, k).size}")
    body = blob[CHECKPOINT_HEADER.size:]
    if len(body) != 8 * count:
        raise ShapeError(f"checkpoint body has {len(body)} bytes, expected {8 * count}")
    return np.frombuffer(body, dtype="<f8").astype(np.float64), H, k


def save_checkpoint(path, params, hidden_size: int, num_channels: int) -> Path:
    path = Path(path)
    path.write_bytes(encode_checkpoint(params, hidden_size, num_channels))
    logger.debug("wrote checkpoint %s", path)
    return path


def load_checkpoint(path) -> Tuple[np.ndarray, int, int]:
    return decode_checkpoint(Path(path).read_bytes())

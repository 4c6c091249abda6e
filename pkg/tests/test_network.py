import math

import numpy as np
import pytest

from fermi6g.errors import ShapeError
from fermi6g.network import (CHECKPOINT_HEADER, QNetwork, decode_checkpoint, encode_checkpoint, forward,
                             load_checkpoint, save_checkpoint)


def straight_line_forward(net, params, seq):
    """Scalar-loop reference implementation for a single (T, 8) sequence."""
    p = net.unpack(params)
    H = net.hidden_size
    h = [0.0] * H
    c = [0.0] * H
    outs = []

    def sig(v):
        return 1.0 / (1.0 + math.exp(-v))

    for x in seq:
        u = [math.tanh(sum(p["W_in"][r, j] * x[j] for j in range(8)) + p["b_in"][r]) for r in range(H)]
        z = [sum(p["W_x"][r, j] * u[j] for j in range(H)) + sum(p["W_h"][r, j] * h[j] for j in range(H)) + p["b"][r]
             for r in range(4 * H)]
        new_c, new_h = [], []
        for r in range(H):
            i, f, g, o = sig(z[r]), sig(z[H + r]), math.tanh(z[2 * H + r]), sig(z[3 * H + r])
            cr = f * c[r] + i * g
            new_c.append(cr)
            new_h.append(o * math.tanh(cr))
        h, c = new_h, new_c
        heads = []
        for name in ("app", "mac", "cpu"):
            W, b = p[f"W_{name}"], p[f"b_{name}"]
            heads.append([sum(W[a, j] * h[j] for j in range(H)) + b[a] for a in range(W.shape[0])])
        outs.append(heads)
    return outs, h, c


class TestLayout:
    def test_size(self) -> None:
        net = QNetwork(32, 3)
        H, k = 32, 3
        assert net.size == H * 8 + H + 2 * 4 * H * H + 4 * H + 2 * H + 2 + k * H + k + 3 * H + 3

    def test_init(self, rng) -> None:
        net = QNetwork(16, 3)
        p = net.unpack(net.init_params(rng))
        bound = 1 / 4
        assert np.all(np.abs(p["W_h"]) <= bound)
        assert np.all(p["b"][16:32] == 1.0)
        assert np.all(p["b"][:16] == 0.0) and np.all(p["b_app"] == 0.0)

    def test_wrong_length(self, tiny_network) -> None:
        with pytest.raises(ShapeError):
            tiny_network.unpack(np.zeros(tiny_network.size + 1))


class TestForward:
    def test_zero_network(self, tiny_network) -> None:
        q_app, q_mac, q_cpu, (h, c) = tiny_network.forward(np.zeros(tiny_network.size), np.ones((4, 8)))
        assert q_app.shape == (4, 2) and q_mac.shape == (4, 2) and q_cpu.shape == (4, 3)
        assert np.all(q_app == 0) and np.all(q_mac == 0) and np.all(q_cpu == 0)
        assert np.all(h == 0)
        assert np.all(c == 0)

    def test_bad_observation_width(self, tiny_network, rng) -> None:
        with pytest.raises(ShapeError):
            tiny_network.forward(tiny_network.init_params(rng), np.zeros((3, 7)))

    def test_batch_order_independent(self, tiny_network, rng) -> None:
        params = tiny_network.init_params(rng)
        obs = rng.normal(size=(5, 4, 8))
        perm = np.array([3, 0, 4, 1, 2])
        a = tiny_network.forward(params, obs)
        b = tiny_network.forward(params, obs[perm])
        for x, y in zip(a[:3], b[:3]):
            np.testing.assert_array_equal(x[perm], y)

    def test_matches_straight_line_reference(self, tiny_network, rng) -> None:
        params = tiny_network.init_params(rng) + rng.normal(scale=0.3, size=tiny_network.size)
        seq = rng.normal(size=(4, 8))
        q_app, q_mac, q_cpu, (h, c) = tiny_network.forward(params, seq)
        ref, ref_h, ref_c = straight_line_forward(tiny_network, params, seq)
        for t in range(4):
            np.testing.assert_allclose(q_app[t], ref[t][0], rtol=0, atol=1e-12)
            np.testing.assert_allclose(q_mac[t], ref[t][1], rtol=0, atol=1e-12)
            np.testing.assert_allclose(q_cpu[t], ref[t][2], rtol=0, atol=1e-12)
        np.testing.assert_allclose(h[0], ref_h, atol=1e-12)
        np.testing.assert_allclose(c[0], ref_c, atol=1e-12)

    def test_module_forward(self, tiny_network, rng) -> None:
        params = tiny_network.init_params(rng)
        seq = rng.normal(size=(3, 8))
        for a, b in zip(forward(tiny_network, params, seq)[:3], tiny_network.forward(params, seq)[:3]):
            np.testing.assert_array_equal(a, b)

    def test_hidden_carries_prefix(self, tiny_network, rng) -> None:
        params = tiny_network.init_params(rng)
        seq = rng.normal(size=(6, 8))
        full = tiny_network.forward(params, seq)
        first = tiny_network.forward(params, seq[:3])
        rest = tiny_network.forward(params, seq[3:], hidden=first[3])
        np.testing.assert_allclose(rest[0], full[0][3:], atol=1e-14)
        np.testing.assert_allclose(rest[3][0], full[3][0], atol=1e-14)


class TestBackward:
    @pytest.mark.parametrize("H,T", [(1, 1), (2, 3), (4, 3)])
    def test_matches_finite_differences(self, H, T) -> None:
        rng = np.random.default_rng(100 + H * 10 + T)
        net = QNetwork(H, 2)
        params = net.init_params(rng) + rng.normal(scale=0.2, size=net.size)
        obs = rng.normal(size=(2, T, 8))
        coeffs = [rng.normal(size=(2, T, n)) for n in (2, 2, 3)]

        def loss(p):
            q = net.forward(p, obs)
            return sum(float(np.sum(c * qh)) for c, qh in zip(coeffs, q[:3]))

        *_, cache = net.forward(params, obs, cache=True)
        grad = net.backward(params, cache, *coeffs)
        numeric = np.zeros_like(params)
        eps = 1e-6
        for j in range(net.size):
            step = np.zeros_like(params)
            step[j] = eps
            numeric[j] = (loss(params + step) - loss(params - step)) / (2 * eps)
        np.testing.assert_allclose(grad, numeric, rtol=1e-4, atol=1e-8)

    @pytest.mark.slow
    def test_fifty_random_tiny_networks(self) -> None:
        rng = np.random.default_rng(2024)
        for _ in range(50):
            H, T, k = int(rng.integers(1, 5)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
            net = QNetwork(H, k)
            params = net.init_params(rng) + rng.normal(scale=0.2, size=net.size)
            obs = rng.normal(size=(2, T, 8))
            coeffs = [rng.normal(size=(2, T, n)) for n in (2, k, 3)]
            *_, cache = net.forward(params, obs, cache=True)
            grad = net.backward(params, cache, *coeffs)
            numeric = np.zeros_like(params)
            for j in range(net.size):
                step = np.zeros_like(params)
                step[j] = 1e-6
                up = sum(float(np.sum(c * q)) for c, q in zip(coeffs, net.forward(params + step, obs)[:3]))
                down = sum(float(np.sum(c * q)) for c, q in zip(coeffs, net.forward(params - step, obs)[:3]))
                numeric[j] = (up - down) / 2e-6
            np.testing.assert_allclose(grad, numeric, rtol=1e-4, atol=1e-8)


class TestCheckpoint:
    def test_roundtrip(self, tiny_network, rng, tmp_path) -> None:
        params = tiny_network.init_params(rng)
        path = save_checkpoint(tmp_path / "m.f6gm", params, 3, 2)
        loaded, H, k = load_checkpoint(path)
        assert (H, k) == (3, 2)
        np.testing.assert_array_equal(loaded, params)

    def test_header_layout(self, tiny_network) -> None:
        blob = encode_checkpoint(np.zeros(tiny_network.size), 3, 2)
        assert blob[:4] == b"F6GM"
        assert blob[4] == 1
        assert int.from_bytes(blob[5:9], "little") == 3
        assert int.from_bytes(blob[9:13], "little") == 2
        assert len(blob) == CHECKPOINT_HEADER.size + 8 * tiny_network.size

    def test_rejects_bad_magic(self, tiny_network) -> None:
        blob = bytearray(encode_checkpoint(np.zeros(tiny_network.size), 3, 2))
        blob[0:4] = b"XXXX"
        with pytest.raises(ShapeError, match="magic"):
            decode_checkpoint(bytes(blob))

    def test_rejects_truncation(self, tiny_network) -> None:
        blob = encode_checkpoint(np.zeros(tiny_network.size), 3, 2)
        with pytest.raises(ShapeError):
            decode_checkpoint(blob[:-8])

    def test_rejects_non_finite(self, tiny_network) -> None:
        params = np.zeros(tiny_network.size)
        params[0] = np.nan
        with pytest.raises(ShapeError):
            encode_checkpoint(params, 3, 2)

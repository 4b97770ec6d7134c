"""Denoiser forward pass, conditioning semantics, and checkpoints."""

import numpy as np
import pytest

from mdmp import autodiff as ad
from mdmp.autodiff import Tensor
from mdmp.denoiser import (
    Conditioning,
    DenoiserConfig,
    detach_params,
    forward,
    forward_batch,
    gcn_layer_forward,
    init_params,
    load_checkpoint,
    parameter_count,
    save_checkpoint,
    sinusoidal_embedding,
)
from mdmp.errors import FormatError

TINY = DenoiserConfig(
    feature_width=6,
    latent=16,
    layers=1,
    heads=4,
    variance_learning=True,
    dropout=0.0,
)


def tiny_inputs(seed=0, n_prefix=3, frames=8):
    rng = np.random.default_rng(seed)
    x_t = rng.standard_normal((frames, TINY.feature_width))
    cond = Conditioning(
        prefix=rng.standard_normal((n_prefix, TINY.feature_width)),
        text_embedding=rng.standard_normal(TINY.text_dim),
    )
    return x_t, cond


class TestGcnLayer:
    def test_identity(self):
        H = np.random.default_rng(0).standard_normal((4, 3))
        out = gcn_layer_forward(H, np.eye(4), np.eye(3))
        np.testing.assert_allclose(out.data, H, atol=1e-15)

    def test_zero_adjacency(self):
        rng = np.random.default_rng(1)
        H = rng.standard_normal((4, 3))
        W = rng.standard_normal((3, 5))
        out = gcn_layer_forward(H, np.zeros((4, 4)), W)
        np.testing.assert_array_equal(out.data, np.zeros((4, 5)))

    def test_triple_loop_oracle(self):
        rng = np.random.default_rng(2)
        A = rng.standard_normal((2, 2))
        H = rng.standard_normal((2, 2))
        W = rng.standard_normal((2, 2))
        want = np.zeros((2, 2))
        for i in range(2):
            for j in range(2):
                for k in range(2):
                    for l in range(2):
                        want[i, j] += A[i, k] * H[k, l] * W[l, j]
        got = gcn_layer_forward(H, A, W)
        np.testing.assert_allclose(got.data, want, rtol=1e-12)

    def test_shape_mismatches_rejected(self):
        with pytest.raises(ValueError):
            gcn_layer_forward(np.zeros((4, 3)), np.zeros((5, 5)), np.zeros((3, 2)))
        with pytest.raises(ValueError):
            gcn_layer_forward(np.zeros((4, 3)), np.zeros((4, 4)), np.zeros((2, 2)))

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(3)
        H = rng.standard_normal((4, 3))
        A = Tensor(np.eye(4), requires_grad=True)
        W = Tensor(np.eye(3), requires_grad=True)
        weights = rng.standard_normal((4, 3))
        (gcn_layer_forward(H, A, W) * weights).sum().backward()

        def loss_at():
            return float(
                (gcn_layer_forward(H, Tensor(A.data), Tensor(W.data)).data * weights).sum()
            )

        eps = 1e-5
        for param in (A, W):
            flat = param.data.reshape(-1)
            gflat = param.grad.reshape(-1)
            for idx in range(flat.size):
                orig = flat[idx]
                flat[idx] = orig + eps
                hi = loss_at()
                flat[idx] = orig - eps
                lo = loss_at()
                flat[idx] = orig
                fd = (hi - lo) / (2 * eps)
                assert abs(fd - gflat[idx]) < 1e-6 * max(1.0, abs(fd))


class TestForward:
    def test_output_shapes_and_finiteness(self):
        params = init_params(TINY, seed=0)
        x_t, cond = tiny_inputs()
        out = forward(x_t, 5, cond, params, TINY)
        assert out.x0_hat.shape == (8, 6)
        assert out.v0.shape == (8, 6)
        assert np.all(np.isfinite(out.x0_hat.data))
        assert np.all(out.v0.data >= 0.0) and np.all(out.v0.data <= 1.0)

    def test_without_variance_head(self):
        cfg = DenoiserConfig(
            feature_width=6, latent=16, layers=1, heads=4, dropout=0.0
        )
        params = init_params(cfg, seed=0)
        x_t, cond = tiny_inputs()
        out = forward(x_t, 5, cond, params, cfg)
        assert out.v0 is None
        assert out.x0_hat.shape == (8, 6)

    def test_deterministic_without_dropout(self):
        params = init_params(TINY, seed=1)
        x_t, cond = tiny_inputs(seed=4)
        a = forward(x_t, 3, cond, params, TINY)
        b = forward(x_t, 3, cond, params, TINY)
        assert a.x0_hat.data.tobytes() == b.x0_hat.data.tobytes()
        assert a.v0.data.tobytes() == b.v0.data.tobytes()

    def test_text_masking_equals_zero_embedding(self):
        params = init_params(TINY, seed=2)
        x_t, cond = tiny_inputs(seed=5)
        masked = Conditioning(
            prefix=cond.prefix,
            text_embedding=cond.text_embedding,
            text_masked=True,
        )
        zeroed = Conditioning(
            prefix=cond.prefix,
            text_embedding=np.zeros(TINY.text_dim),
            text_masked=False,
        )
        a = forward(x_t, 2, masked, params, TINY)
        b = forward(x_t, 2, zeroed, params, TINY)
        assert a.x0_hat.data.tobytes() == b.x0_hat.data.tobytes()

    def test_prefix_overwrites_noisy_frames(self):
        params = init_params(TINY, seed=3)
        x_t, cond = tiny_inputs(seed=6)
        altered = x_t.copy()
        altered[: cond.prefix_len] = 999.0
        a = forward(x_t, 7, cond, params, TINY)
        b = forward(altered, 7, cond, params, TINY)
        assert a.x0_hat.data.tobytes() == b.x0_hat.data.tobytes()

    def test_suffix_changes_do_matter(self):
        params = init_params(TINY, seed=3)
        x_t, cond = tiny_inputs(seed=7)
        altered = x_t.copy()
        altered[-1] += 1.0
        a = forward(x_t, 7, cond, params, TINY)
        b = forward(altered, 7, cond, params, TINY)
        assert not np.array_equal(a.x0_hat.data, b.x0_hat.data)

    def test_step_index_changes_output(self):
        params = init_params(TINY, seed=3)
        x_t, cond = tiny_inputs(seed=8)
        a = forward(x_t, 1, cond, params, TINY)
        b = forward(x_t, 40, cond, params, TINY)
        assert not np.array_equal(a.x0_hat.data, b.x0_hat.data)

    def test_prefix_must_fit(self):
        params = init_params(TINY, seed=0)
        x_t, _ = tiny_inputs()
        cond = Conditioning(
            prefix=np.zeros((8, 6)), text_embedding=np.zeros(TINY.text_dim)
        )
        with pytest.raises(ValueError):
            forward(x_t, 1, cond, params, TINY)

    def test_width_mismatch_rejected(self):
        params = init_params(TINY, seed=0)
        cond = Conditioning(
            prefix=np.zeros((0, 7)), text_embedding=np.zeros(TINY.text_dim)
        )
        with pytest.raises(ValueError):
            forward(np.zeros((8, 7)), 1, cond, params, TINY)

    def test_dropout_perturbs_and_is_seeded(self):
        cfg = DenoiserConfig(
            feature_width=6,
            latent=16,
            layers=1,
            heads=4,
            variance_learning=True,
            dropout=0.5,
        )
        params = init_params(cfg, seed=0)
        x_t, cond = tiny_inputs(seed=9)
        plain = forward(x_t, 2, cond, params, cfg)
        d1 = forward(x_t, 2, cond, params, cfg, rng=np.random.default_rng(0), train=True)
        d2 = forward(x_t, 2, cond, params, cfg, rng=np.random.default_rng(0), train=True)
        assert not np.array_equal(plain.x0_hat.data, d1.x0_hat.data)
        assert d1.x0_hat.data.tobytes() == d2.x0_hat.data.tobytes()

    def test_batched_matches_single(self):
        params = init_params(TINY, seed=11)
        xa, conda = tiny_inputs(seed=10)
        xb, condb = tiny_inputs(seed=11)
        batched = forward_batch(
            np.stack([xa, xb]),
            np.array([4, 9]),
            np.stack([conda.prefix, condb.prefix]),
            np.stack([conda.text_embedding, condb.text_embedding]),
            params,
            TINY,
        )
        a = forward(xa, 4, conda, params, TINY)
        b = forward(xb, 9, condb, params, TINY)
        np.testing.assert_allclose(batched.x0_hat.data[0], a.x0_hat.data, atol=1e-12)
        np.testing.assert_allclose(batched.x0_hat.data[1], b.x0_hat.data, atol=1e-12)


class TestGradients:
    def test_masked_text_gives_zero_text_gradients(self):
        params = init_params(TINY, seed=0)
        x_t, cond = tiny_inputs(seed=12)
        cond.text_masked = True
        out = forward(x_t, 4, cond, params, TINY)
        (ad.square(out.x0_hat).sum() + ad.square(out.v0).sum()).backward()
        np.testing.assert_array_equal(params["text.W1"].grad, 0.0)
        np.testing.assert_array_equal(params["text.W2"].grad, 0.0)
        assert np.any(params["gcn0.A"].grad != 0.0)

    def test_unmasked_text_gives_nonzero_text_gradients(self):
        params = init_params(TINY, seed=0)
        x_t, cond = tiny_inputs(seed=13)
        out = forward(x_t, 4, cond, params, TINY)
        ad.square(out.x0_hat).sum().backward()
        assert np.any(params["text.W1"].grad != 0.0)

    def test_forward_gradients_vs_finite_differences(self):
        # spot-check a quadratic readout of the full tiny model,
        # including adjacency coordinates
        params = init_params(TINY, seed=5)
        x_t, cond = tiny_inputs(seed=14)

        def loss_value():
            out = forward(x_t, 6, cond, detach_params(params), TINY)
            return float((out.x0_hat.data ** 2).sum())

        out = forward(x_t, 6, cond, params, TINY)
        ad.square(out.x0_hat).sum().backward()
        rng = np.random.default_rng(99)
        eps = 1e-5
        for name in ("gcn0.A", "enc.W", "layer0.attn.Wq", "out_x.W", "time.W1"):
            p = params[name]
            flat = p.data.reshape(-1)
            gflat = p.grad.reshape(-1)
            for idx in rng.choice(flat.size, size=5, replace=False):
                orig = flat[idx]
                flat[idx] = orig + eps
                hi = loss_value()
                flat[idx] = orig - eps
                lo = loss_value()
                flat[idx] = orig
                fd = (hi - lo) / (2 * eps)
                denom = max(abs(fd), abs(gflat[idx]), 1e-8)
                assert abs(fd - gflat[idx]) / denom < 1e-4, name


class TestInitAndCheckpoint:
    def test_init_is_deterministic(self):
        a = init_params(TINY, seed=7)
        b = init_params(TINY, seed=7)
        for name in a:
            assert a[name].data.tobytes() == b[name].data.tobytes()
        c = init_params(TINY, seed=8)
        assert any(
            not np.array_equal(a[n].data, c[n].data) for n in a
        )

    def test_adjacency_starts_near_identity(self):
        params = init_params(TINY, seed=0)
        A = params["gcn0.A"].data
        assert np.all(np.abs(A - np.eye(TINY.feature_width)) <= 1e-3)

    def test_parameter_count_matches_spec_arithmetic(self):
        cfg = TINY
        params = init_params(cfg, seed=0)
        d, K, F = cfg.latent, cfg.feature_width, cfg.gcn_hidden
        expected = (
            2 * K * K + 1 * F + F * F  # gcn
            + K * F * d + d  # encoder projection
            + 2 * (d * d + d)  # time mlp
            + cfg.text_dim * d + d * d  # text mlp
            + cfg.layers
            * (4 * (d * d + d) + 2 * d + 2 * d + d * 4 * d + 4 * d + 4 * d * d + d)
            + 2 * d  # final layernorm
            + 2 * ((d // 2) * K + K)  # two output heads
        )
        assert parameter_count(params) == expected

    def test_checkpoint_round_trip_bit_exact(self, tmp_path):
        params = init_params(TINY, seed=3)
        extra = {"T": 50, "prefix_len": 3, "fps": 20.0}
        p1 = tmp_path / "a.ckpt"
        p2 = tmp_path / "b.ckpt"
        save_checkpoint(p1, params, TINY, extra)
        loaded, cfg, meta = load_checkpoint(p1)
        assert cfg == TINY
        assert meta == extra
        save_checkpoint(p2, loaded, cfg, meta)
        assert p1.read_bytes() == p2.read_bytes()

    def test_loaded_forward_matches_saved_model(self, tmp_path):
        params = init_params(TINY, seed=4)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, params, TINY)
        loaded, cfg, _ = load_checkpoint(path)
        x_t, cond = tiny_inputs(seed=15)
        a = forward(x_t, 3, cond, {k: Tensor(v.data.astype(np.float32).astype(np.float64)) for k, v in params.items()}, TINY)
        b = forward(x_t, 3, cond, loaded, cfg)
        np.testing.assert_array_equal(a.x0_hat.data, b.x0_hat.data)

    def test_corrupt_files_rejected(self, tmp_path):
        params = init_params(TINY, seed=0)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, params, TINY)
        blob = path.read_bytes()

        bad_magic = tmp_path / "magic.ckpt"
        bad_magic.write_bytes(b"XXXX" + blob[4:])
        with pytest.raises(FormatError):
            load_checkpoint(bad_magic)

        truncated = tmp_path / "trunc.ckpt"
        truncated.write_bytes(blob[:-10])
        with pytest.raises(FormatError):
            load_checkpoint(truncated)

        trailing = tmp_path / "trail.ckpt"
        trailing.write_bytes(blob + b"\x00" * 8)
        with pytest.raises(FormatError):
            load_checkpoint(trailing)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            DenoiserConfig(feature_width=6, latent=15, heads=4)
        with pytest.raises(ValueError):
            DenoiserConfig(
                feature_width=6, latent=21, heads=7, variance_learning=True
            )
        with pytest.raises(ValueError):
            DenoiserConfig(feature_width=6, latent=16, encoder="mlp")


class TestLinearEncoder:
    CFG = DenoiserConfig(
        feature_width=6,
        latent=16,
        layers=1,
        heads=4,
        variance_learning=True,
        dropout=0.0,
        encoder="linear",
    )

    def test_has_no_graph_parameters(self):
        params = init_params(self.CFG, seed=0)
        assert not any(name.startswith("gcn") for name in params)
        assert params["enc.W"].shape == (6, 16)

    def test_forward_runs(self):
        params = init_params(self.CFG, seed=0)
        rng = np.random.default_rng(1)
        x_t = rng.standard_normal((8, 6))
        cond = Conditioning(
            prefix=x_t[:3], text_embedding=rng.standard_normal(512)
        )
        out = forward(x_t, 4, cond, params, self.CFG)
        assert out.x0_hat.shape == (8, 6)
        assert np.all(np.isfinite(out.x0_hat.data))

    def test_checkpoint_round_trip(self, tmp_path):
        params = init_params(self.CFG, seed=3)
        path = tmp_path / "lin.ckpt"
        save_checkpoint(path, params, self.CFG)
        loaded, cfg, _ = load_checkpoint(path)
        assert cfg == self.CFG
        assert set(loaded) == set(params)


def test_sinusoidal_embedding_properties():
    emb = sinusoidal_embedding(np.arange(5), 8)
    assert emb.shape == (5, 8)
    np.testing.assert_allclose(emb[0, 0::2], 0.0, atol=1e-15)
    np.testing.assert_allclose(emb[0, 1::2], 1.0, atol=1e-15)
    # frequencies fall off with channel index
    assert abs(emb[1, 0]) > abs(emb[1, 6])

import numpy as np
import pytest

from avfuse import autodiff as ad
from avfuse import transformer as tfm
from avfuse.autodiff import Tensor
from avfuse.nn import Linear, Module
from avfuse.streams import FeatureStream
from avfuse.vocab import SOS_ID

from gradcheck import module_grad_check


def cfg(**kw):
    base = dict(d_att=8, heads=2, encoder_blocks=1, decoder_blocks=1,
                ff_dim=16, vocab_size=6)
    base.update(kw)
    return tfm.ModelConfig(**base)


def rng(seed=0):
    return np.random.default_rng(seed)


class TestConfig:
    def test_divisibility(self):
        with pytest.raises(ValueError):
            cfg(d_att=10, heads=4)

    def test_d_k(self):
        assert cfg(d_att=32, heads=4).d_k == 8

    def test_blocks_positive(self):
        with pytest.raises(ValueError):
            cfg(encoder_blocks=0)


class TestAttentionTransform:
    def make_proj(self, d_in, d_k, seed=1):
        return Linear(d_in, d_k, rng(seed), bias=False)

    def test_single_key_all_ones(self):
        q = Tensor(rng(2).normal(size=(5, 8)))
        k = Tensor(rng(3).normal(size=(1, 8)))
        t = tfm.attention_transform(q, k, self.make_proj(8, 4), self.make_proj(8, 4, 4))
        np.testing.assert_allclose(t.data, np.ones((5, 1)))

    def test_zero_projection_uniform(self):
        wq = self.make_proj(8, 4)
        wq.weight.data[:] = 0.0
        q = Tensor(rng(5).normal(size=(3, 8)))
        k = Tensor(rng(6).normal(size=(7, 8)))
        t = tfm.attention_transform(q, k, wq, self.make_proj(8, 4, 7))
        np.testing.assert_allclose(t.data, np.full((3, 7), 1.0 / 7.0), atol=1e-15)

    def test_matches_explicit_oracle(self):
        wq, wk = self.make_proj(4, 2, 8), self.make_proj(4, 2, 9)
        q = rng(10).normal(size=(3, 4))
        k = rng(11).normal(size=(4, 4))
        t = tfm.attention_transform(Tensor(q), Tensor(k), wq, wk).data
        logits = (q @ wq.weight.data) @ (k @ wk.weight.data).T / np.sqrt(2.0)
        e = np.exp(logits)
        oracle = e / e.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(t, oracle, atol=1e-12, rtol=1e-12)

    def test_rows_stochastic(self):
        t = tfm.attention_transform(
            Tensor(rng(12).normal(size=(6, 8)) * 3),
            Tensor(rng(13).normal(size=(9, 8)) * 3),
            self.make_proj(8, 4, 14), self.make_proj(8, 4, 15))
        assert np.all(t.data >= 0)
        np.testing.assert_allclose(t.data.sum(axis=1), np.ones(6), atol=1e-6)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            tfm.attention_transform(
                Tensor(np.ones((2, 5))), Tensor(np.ones((2, 8))),
                self.make_proj(8, 4), self.make_proj(8, 4))


class TestAttentionApply:
    def test_identity_transform(self):
        wv = Linear(6, 3, rng(16), bias=False)
        v = Tensor(rng(17).normal(size=(4, 6)))
        out = tfm.attention_apply(Tensor(np.eye(4)), v, wv)
        np.testing.assert_allclose(out.data, v.data @ wv.weight.data, atol=1e-12)

    def test_uniform_transform_means(self):
        wv = Linear(6, 3, rng(18), bias=False)
        v = Tensor(rng(19).normal(size=(5, 6)))
        out = tfm.attention_apply(Tensor(np.full((2, 5), 0.2)), v, wv)
        mean_row = (v.data @ wv.weight.data).mean(axis=0)
        np.testing.assert_allclose(out.data, np.tile(mean_row, (2, 1)), atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            tfm.attention_apply(Tensor(np.eye(3)), Tensor(np.ones((4, 6))),
                                Linear(6, 3, rng(20)))


class TestMultiHead:
    def test_transform_count_matches_heads(self):
        c = cfg(heads=4, d_att=8)
        mha = tfm.MultiHeadAttention(c, rng(21))
        x = Tensor(rng(22).normal(size=(5, 8)))
        out, transforms = mha(x, x, x)
        assert out.shape == (5, 8)
        assert len(transforms) == 4
        for t in transforms:
            np.testing.assert_allclose(t.matrix.data.sum(axis=1), np.ones(5), atol=1e-6)

    def test_single_head(self):
        c = cfg(heads=1, d_att=8)
        mha = tfm.MultiHeadAttention(c, rng(23))
        x = Tensor(rng(24).normal(size=(3, 8)))
        out, transforms = mha(x, x, x)
        manual = tfm.attention_transform(x, x, mha.wq[0], mha.wk[0])
        applied = tfm.attention_apply(manual, x, mha.wv[0])
        np.testing.assert_allclose(out.data, mha.wo(applied).data, atol=1e-12)
        assert len(transforms) == 1

    def test_causal_mask_blocks_future(self):
        c = cfg(heads=2, d_att=8)
        mha = tfm.MultiHeadAttention(c, rng(25))
        x = rng(26).normal(size=(6, 8))
        mask = tfm.causal_mask(6)
        base, _ = mha(Tensor(x), Tensor(x), Tensor(x), mask=mask)
        bumped = x.copy()
        bumped[4] += 10.0  # only rows >= 4 may move
        pert, _ = mha(Tensor(bumped), Tensor(bumped), Tensor(bumped), mask=mask)
        np.testing.assert_allclose(pert.data[:4], base.data[:4], atol=1e-12)
        assert not np.allclose(pert.data[4:], base.data[4:])


class TestEncoder:
    def test_length_8_to_2(self):
        enc = tfm.Encoder(5, cfg(), rng(27))
        out = enc(FeatureStream(rng(28).normal(size=(8, 5)), 0.01, "audio"))
        assert out.shape == (2, 8)

    def test_output_dim_any_input_dim(self):
        for d_in in (3, 9, 20):
            enc = tfm.Encoder(d_in, cfg(d_att=16, heads=2), rng(29))
            out = enc(rng(30).normal(size=(12, d_in)))
            assert out.shape == (3, 16)

    def test_deterministic(self):
        enc = tfm.Encoder(4, cfg(), rng(31))
        x = rng(32).normal(size=(16, 4))
        a = enc(x).data
        b = enc(x).data
        assert np.array_equal(a, b)

    def test_too_short(self):
        enc = tfm.Encoder(4, cfg(), rng(33))
        with pytest.raises(ValueError):
            enc(np.ones((3, 4)))

    def test_all_transforms_row_stochastic(self):
        enc = tfm.Encoder(4, cfg(encoder_blocks=2), rng(34))
        collected = []
        enc(rng(35).normal(size=(20, 4)), collect_transforms=collected)
        assert len(collected) == 2 * 2  # blocks * heads
        for t in collected:
            assert np.all(t.matrix.data >= 0)
            np.testing.assert_allclose(t.matrix.data.sum(axis=1),
                                       np.ones(t.matrix.shape[0]), atol=1e-6)


class TestReliabilityEncoder:
    def test_length_contract(self):
        renc = tfm.ReliabilityEncoder(9, cfg(), rng(36))
        out = renc(rng(37).normal(size=(100, 9)))
        assert out.shape == (25, 8)

    def test_constant_input_constant_rows(self):
        renc = tfm.ReliabilityEncoder(7, cfg(), rng(38))
        out = renc(np.full((16, 7), 0.5)).data
        np.testing.assert_allclose(out, np.tile(out[0], (4, 1)), atol=1e-12)

    def test_gradients_flow(self):
        renc = tfm.ReliabilityEncoder(3, cfg(d_att=4, heads=1, ff_dim=8), rng(39))
        x = rng(40).normal(size=(8, 3))
        module_grad_check(renc, lambda: (renc(x) ** 2).sum(), max_entries=4)


class TestS2sDecoder:
    def make(self, seed=41, **kw):
        c = cfg(**kw)
        dec = tfm.S2sDecoder(c, rng(seed))
        memory = Tensor(rng(seed + 1).normal(size=(5, c.d_att)))
        return dec, memory

    def test_rows_log_normalized(self):
        dec, memory = self.make()
        logp, _ = dec([SOS_ID, 3, 4], memory)
        assert logp.shape == (3, 6)
        lse = np.log(np.exp(logp.data).sum(axis=1))
        np.testing.assert_allclose(lse, np.zeros(3), atol=1e-9)

    def test_transform_shape(self):
        dec, memory = self.make()
        _, transforms = dec([SOS_ID, 3, 4, 5], memory)
        assert len(transforms) == 2  # heads
        for t in transforms:
            assert t.matrix.shape == (4, 5)

    def test_causality(self):
        dec, memory = self.make()
        a, _ = dec([SOS_ID, 3, 4, 5], memory)
        b, _ = dec([SOS_ID, 3, 5, 5], memory)  # changed position 2
        np.testing.assert_allclose(a.data[:2], b.data[:2], atol=1e-12)
        assert not np.allclose(a.data[2:], b.data[2:])

    def test_empty_rejected(self):
        dec, memory = self.make()
        with pytest.raises(ValueError):
            dec([], memory)

    def test_must_start_with_sos(self):
        dec, memory = self.make()
        with pytest.raises(ValueError):
            dec([3, 4], memory)

    def test_final_block_transforms_returned(self):
        dec, memory = self.make(decoder_blocks=2)
        _, transforms = dec([SOS_ID, 3], memory)
        assert all(t.block == 1 for t in transforms)


class TestCtcDecoder:
    def test_grid_contract(self):
        c = cfg()
        dec = tfm.CtcDecoder(c, rng(50))
        memory = Tensor(rng(51).normal(size=(7, 8)))
        grid = dec(memory)
        assert grid.shape == (7, 6)
        lse = np.log(np.exp(grid.data).sum(axis=1))
        np.testing.assert_allclose(lse, np.zeros(7), atol=1e-9)

    def test_linear_readout_mode(self):
        c = cfg(ctc_linear_readout=True)
        dec = tfm.CtcDecoder(c, rng(52))
        assert dec.blocks == []
        memory = Tensor(rng(53).normal(size=(4, 8)))
        assert dec(memory).shape == (4, 6)

    def test_deterministic(self):
        dec = tfm.CtcDecoder(cfg(), rng(54))
        memory = Tensor(rng(55).normal(size=(6, 8)))
        assert np.array_equal(dec(memory).data, dec(memory).data)


class TestEndToEndGradients:
    def test_encoder_decoder_grad_check(self):
        c = tfm.ModelConfig(d_att=8, heads=1, encoder_blocks=1, decoder_blocks=1,
                            ff_dim=8, vocab_size=5)

        class Pipe(Module):
            def __init__(self):
                self.enc = tfm.Encoder(3, c, rng(60))
                self.dec = tfm.S2sDecoder(c, rng(61))

        pipe = Pipe()
        x = rng(62).normal(size=(8, 3))
        tokens = [SOS_ID, 3, 4]
        targets = np.array([3, 4, 2])

        def loss():
            memory = pipe.enc(x)
            logp, _ = pipe.dec(tokens, memory)
            return -logp[np.arange(3), targets].sum()

        module_grad_check(pipe, loss, max_entries=3, seed=1)

    def test_ctc_decoder_grad_check(self):
        c = tfm.ModelConfig(d_att=4, heads=1, encoder_blocks=1, decoder_blocks=1,
                            ff_dim=6, vocab_size=5)
        dec = tfm.CtcDecoder(c, rng(63))
        memory = rng(64).normal(size=(5, 4))

        def loss():
            grid = dec(Tensor(memory))
            return -(grid[:, 3]).sum()

        module_grad_check(dec, loss, max_entries=4, seed=2)

import numpy as np
import pytest

from avfuse import autodiff as ad
from avfuse import nn
from avfuse.autodiff import Tensor

from gradcheck import module_grad_check


def make_rng(seed=0):
    return np.random.default_rng(seed)


class TestLinear:
    def test_forward_shape(self):
        lin = nn.Linear(5, 3, make_rng())
        out = lin(Tensor(np.ones((4, 5))))
        assert out.shape == (4, 3)

    def test_grads(self):
        lin = nn.Linear(4, 3, make_rng(1))
        x = Tensor(make_rng(2).normal(size=(6, 4)))
        module_grad_check(lin, lambda: (lin(x) ** 2).sum())


class TestLayerNorm:
    def test_normalises_rows(self):
        ln = nn.LayerNorm(8)
        x = Tensor(make_rng(3).normal(size=(5, 8)) * 7 + 2)
        out = ln(x).data
        np.testing.assert_allclose(out.mean(axis=-1), np.zeros(5), atol=1e-12)
        np.testing.assert_allclose(out.std(axis=-1), np.ones(5), atol=1e-4)

    def test_grads(self):
        ln = nn.LayerNorm(6)
        # non-trivial gamma/beta so their grads are exercised
        ln.gamma.data = make_rng(4).normal(size=6)
        ln.beta.data = make_rng(5).normal(size=6)
        x = Tensor(make_rng(6).normal(size=(4, 6)))
        w = Tensor(make_rng(7).normal(size=(4, 6)))
        module_grad_check(ln, lambda: (ln(x) * w).sum())

    def test_grad_flows_to_input(self):
        ln = nn.LayerNorm(5)
        x = ad.parameter(make_rng(8).normal(size=(3, 5)))
        (ln(x) ** 2).sum().backward()
        assert x.grad is not None and np.all(np.isfinite(x.grad))


class TestEmbedding:
    def test_lookup(self):
        emb = nn.Embedding(10, 4, make_rng(9))
        out = emb([3, 3, 7])
        np.testing.assert_array_equal(out.data[0], out.data[1])
        assert out.shape == (3, 4)

    def test_repeated_ids_accumulate_grad(self):
        emb = nn.Embedding(6, 3, make_rng(10))
        out = emb([2, 2, 2])
        out.sum().backward()
        np.testing.assert_allclose(emb.table.grad[2], 3.0 * np.ones(3))
        np.testing.assert_allclose(emb.table.grad[0], np.zeros(3))


class TestLstm:
    def test_output_shape(self):
        lstm = nn.LstmLayer(3, 5, make_rng(11))
        out = lstm(Tensor(np.ones((7, 3))))
        assert out.shape == (7, 5)

    def test_reverse_equals_flipped_forward(self):
        lstm = nn.LstmLayer(2, 3, make_rng(12))
        x = make_rng(13).normal(size=(6, 2))
        rev = lstm(Tensor(x), reverse=True).data
        fwd_on_flipped = lstm(Tensor(x[::-1].copy())).data
        np.testing.assert_allclose(rev, fwd_on_flipped[::-1], atol=1e-12)

    def test_grads(self):
        lstm = nn.LstmLayer(3, 2, make_rng(14))
        x = Tensor(make_rng(15).normal(size=(5, 3)))
        module_grad_check(lstm, lambda: (lstm(x) ** 2).sum(), max_entries=6)

    def test_blstm_concat_halves(self):
        bl = nn.Blstm(2, 3, make_rng(16))
        x = Tensor(make_rng(17).normal(size=(4, 2)))
        out = bl(x)
        assert out.shape == (4, 6)
        np.testing.assert_allclose(out.data[:, :3], bl.fwd(x).data, atol=1e-12)

    def test_blstm_grads(self):
        bl = nn.Blstm(2, 2, make_rng(18))
        x = Tensor(make_rng(19).normal(size=(4, 2)))
        module_grad_check(bl, lambda: ad.tanh(bl(x)).sum(), max_entries=4)


class TestFcBlock:
    def test_grads_inference_mode(self):
        blk = nn.FcBlock(4, 3, make_rng(20))
        x = Tensor(make_rng(21).normal(size=(5, 4)))
        module_grad_check(blk, lambda: (blk(x, rng=None) ** 2).sum())

    def test_dropout_active_in_train_mode(self):
        blk = nn.FcBlock(10, 64, make_rng(22), drop_rate=0.5)
        x = Tensor(make_rng(23).normal(size=(8, 10)))
        out = blk(x, rng=ad.CounterRng(0)).data
        ref = blk(x, rng=None).data
        # some positive activations must have been zeroed
        assert ((ref > 0) & (out == 0)).any()


class TestModulePlumbing:
    def test_named_parameters_sorted_and_stable(self):
        bl = nn.Blstm(2, 2, make_rng(24))
        names = [n for n, _ in bl.named_parameters()]
        assert names == sorted(names)
        assert names == [n for n, _ in bl.named_parameters()]

    def test_state_round_trip(self):
        a = nn.FcBlock(3, 4, make_rng(25))
        b = nn.FcBlock(3, 4, make_rng(26))
        b.load_state_arrays(a.state_arrays())
        x = Tensor(make_rng(27).normal(size=(2, 3)))
        np.testing.assert_array_equal(a(x).data, b(x).data)

    def test_state_mismatch_raises(self):
        a = nn.Linear(2, 2, make_rng(28))
        with pytest.raises(KeyError):
            a.load_state_arrays({"weight": np.zeros((2, 2))})  # bias missing

    def test_freeze_unfreeze(self):
        lin = nn.Linear(2, 2, make_rng(29))
        lin.set_requires_grad(False)
        assert list(lin.named_parameters()) == []
        lin.set_requires_grad(True)
        assert len(list(lin.named_parameters())) == 2

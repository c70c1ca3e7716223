import numpy as np
import pytest

from avfuse.config import ConfigError
from avfuse.corpus import CorpusSpec, Utterance, gen_corpus, load_split
from avfuse.model import AvModel, AvModelSpec, load_model
from avfuse.training import (PHASES, TrainConfig, TrainingDivergedError,
                             phase_mode, train_phase)

SMALL = dict(d_att=16, heads=2, ff_dim=24, dfn_widths="24,16,8", dfn_blstm=4,
             dfn_s2s_widths="24,16,8", weight_hidden="8,4", lm_units=8)


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    gen_corpus(CorpusSpec(seed=11, n_units=4, train_utts=8, dev_utts=2,
                          test_utts=2, min_len=2, max_len=3), d)
    return d


@pytest.fixture(scope="module")
def train_utts(corpus_dir):
    return load_split(corpus_dir, "train")


def fresh_model(utt):
    spec = AvModelSpec(vocab_size=7, audio_dim=utt.audio.dim, video_dim=utt.video.dim,
                       rel_audio_dim=utt.rel_audio.frames.shape[1],
                       rel_video_dim=utt.rel_video.frames.shape[1], **SMALL)
    return AvModel(spec)


class TestConfig:
    def test_defaults_valid(self):
        TrainConfig()

    @pytest.mark.parametrize("kw", [dict(epochs=0), dict(alpha=-0.1), dict(alpha=1.5),
                                    dict(warmup=0), dict(lr_factor=0.0), dict(batch=0)])
    def test_rejects(self, kw):
        with pytest.raises(ConfigError):
            TrainConfig(**kw)

    def test_phase_mode_map(self):
        assert phase_mode("ao") == "ao"
        assert phase_mode("fusion_dfn") == "dfn"
        assert phase_mode("fusion_stream_weight") == "stream_weight"


class TestTrainPhase:
    def test_unknown_phase(self, train_utts):
        model = fresh_model(train_utts[0])
        with pytest.raises(ConfigError, match="phase"):
            train_phase(model, train_utts, "warmup", TrainConfig(epochs=1))

    def test_empty_utterances(self, train_utts):
        model = fresh_model(train_utts[0])
        with pytest.raises(ConfigError):
            train_phase(model, [], "ao", TrainConfig(epochs=1))

    def test_loss_decreases(self, train_utts):
        model = fresh_model(train_utts[0])
        hist = train_phase(model, train_utts, "ao",
                           TrainConfig(epochs=6, warmup=20, lr_factor=2.0, batch=4))
        assert len(hist) == 6
        assert hist[-1] < 0.8 * hist[0]

    def test_phase_only_touches_its_parameters(self, train_utts):
        model = fresh_model(train_utts[0])
        before = {k: v.copy() for k, v in model.state_arrays().items()}
        train_phase(model, train_utts, "vo", TrainConfig(epochs=1, batch=4))
        after = model.state_arrays()
        changed = {k for k in before if not np.array_equal(before[k], after[k])}
        assert changed, "vo phase trained nothing"
        touched_prefixes = ("encoder.video.", "decoder.s2s.v.", "decoder.ctc.v.")
        for k in changed:
            assert k.startswith(touched_prefixes), f"{k} changed outside the vo phase"

    def test_frozen_streams_byte_identical_through_fusion(self, train_utts):
        model = fresh_model(train_utts[0])
        train_phase(model, train_utts, "ao", TrainConfig(epochs=1, batch=4))
        train_phase(model, train_utts, "vo", TrainConfig(epochs=1, batch=4))
        stream_keys = [k for k in model.state_arrays()
                       if k.startswith(("encoder.audio.", "encoder.video.",
                                        "decoder.s2s.a.", "decoder.s2s.v.",
                                        "decoder.ctc.a.", "decoder.ctc.v."))]
        before = {k: model.state_arrays()[k].copy() for k in stream_keys}
        train_phase(model, train_utts, "fusion_dfn", TrainConfig(epochs=1, batch=4))
        after = model.state_arrays()
        for k in stream_keys:
            np.testing.assert_array_equal(before[k], after[k])

    def test_joint_finetune_unfreezes_streams(self, train_utts):
        model = fresh_model(train_utts[0])
        before = {k: v.copy() for k, v in model.state_arrays().items()
                  if k.startswith("encoder.audio.")}
        train_phase(model, train_utts, "fusion_dfn",
                    TrainConfig(epochs=1, batch=4, joint_finetune=True))
        after = model.state_arrays()
        assert any(not np.array_equal(before[k], after[k]) for k in before)

    def test_lm_phase_trains_lm_only(self, train_utts):
        model = fresh_model(train_utts[0])
        before = {k: v.copy() for k, v in model.state_arrays().items()}
        hist = train_phase(model, train_utts, "lm",
                           TrainConfig(epochs=4, warmup=10, lr_factor=1.0, batch=4))
        assert hist[-1] < hist[0]
        after = model.state_arrays()
        changed = {k for k in before if not np.array_equal(before[k], after[k])}
        assert changed and all(k.startswith("lm.") for k in changed)

    def test_requires_grad_restored(self, train_utts):
        model = fresh_model(train_utts[0])
        train_phase(model, train_utts, "ao", TrainConfig(epochs=1, batch=4))
        flags = {t.requires_grad for _, t in
                 [(n, p) for n, p in model_named(model)]}
        assert flags == {True}

    def test_same_seed_same_history(self, train_utts):
        h1 = train_phase(fresh_model(train_utts[0]), train_utts, "ao",
                         TrainConfig(epochs=2, batch=4, seed=3))
        h2 = train_phase(fresh_model(train_utts[0]), train_utts, "ao",
                         TrainConfig(epochs=2, batch=4, seed=3))
        assert h1 == h2


def model_named(model):
    for name, mod in model.sections().items():
        yield from mod.named_parameters(prefix=name + ".")


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
class TestDivergence:
    def test_nan_loss_dumps_and_raises(self, train_utts, tmp_path):
        model = fresh_model(train_utts[0])
        # poison one readout weight so the first forward pass goes non-finite
        model.ctc_a.readout.weight.data[0, 0] = np.nan
        dump = tmp_path / "diverged"
        with pytest.raises(TrainingDivergedError, match="dumped"):
            train_phase(model, train_utts, "ao", TrainConfig(epochs=1, batch=2),
                        dump_path=dump)
        recovered = load_model(dump)
        assert np.isnan(recovered.ctc_a.readout.weight.data[0, 0])

    def test_no_dump_path_still_raises(self, train_utts):
        model = fresh_model(train_utts[0])
        model.ctc_a.readout.weight.data[0, 0] = np.inf
        with pytest.raises(TrainingDivergedError):
            train_phase(model, train_utts, "ao", TrainConfig(epochs=1, batch=2))

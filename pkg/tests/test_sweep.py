import numpy as np
import pytest

from avfuse import sweep as sw
from avfuse.config import ConfigError
from avfuse.corpus import CorpusSpec, gen_corpus, load_split
from avfuse.model import AvModel, AvModelSpec, save_model
from avfuse.sweep import (SNR_POINTS, SweepConfig, SweepResult, load_sweep_tsv,
                          run_sweep, save_sweep_tsv)

SMALL = dict(d_att=16, heads=2, ff_dim=24, dfn_widths="24,16,8", dfn_blstm=4,
             dfn_s2s_widths="24,16,8", weight_hidden="8,4", lm_units=8)


class TestConfig:
    def test_defaults(self):
        cfg = SweepConfig()
        assert cfg.noise == "music"
        assert cfg.visual == "clean"

    def test_modes_string_split(self):
        cfg = SweepConfig(modes="ao, vo")
        assert cfg.modes == ("ao", "vo")

    def test_unknown_mode(self):
        with pytest.raises(ConfigError, match="mode"):
            SweepConfig(modes=("ao", "dfnn"))

    def test_unknown_visual(self):
        with pytest.raises(ConfigError, match="visual"):
            SweepConfig(visual="fog")

    def test_bad_beam(self):
        with pytest.raises(ConfigError):
            SweepConfig(beam=0)


class TestColumns:
    def test_snr_points_then_clean(self):
        cols = sw.condition_columns()
        assert cols == ["-12", "-9", "-6", "-3", "0", "3", "6", "9", "12", "clean"]
        assert len(cols) == len(SNR_POINTS) + 1


def make_result():
    r = SweepResult(noise="music", visual="clean", visual_strength=0.0)
    rng = np.random.default_rng(0)
    r.rows["ao"] = {c: float(rng.uniform(0, 90)) for c in r.columns}
    r.rows["ao"]["avg."] = float(np.mean([r.rows["ao"][c] for c in r.columns]))
    r.rows["vo"] = {c: None for c in r.columns}
    r.rows["vo"]["avg."] = None
    return r


class TestTsv:
    def test_round_trip_lossless(self, tmp_path):
        r = make_result()
        p = tmp_path / "sweep.tsv"
        save_sweep_tsv(p, r)
        back = load_sweep_tsv(p)
        assert back.noise == r.noise and back.visual == r.visual
        assert back.columns == r.columns
        for mode in r.rows:
            for col in r.columns + ["avg."]:
                a, b = r.rows[mode][col], back.rows[mode][col]
                assert (a is None and b is None) or a == b

    def test_failed_cells_survive(self, tmp_path):
        r = make_result()
        p = tmp_path / "sweep.tsv"
        save_sweep_tsv(p, r)
        text = p.read_text()
        assert "failed" in text
        back = load_sweep_tsv(p)
        assert back.rows["vo"]["-12"] is None
        assert back.rows["vo"]["avg."] is None

    def test_float_repr_exact(self, tmp_path):
        r = SweepResult(noise="ambient", visual="clean", visual_strength=0.3)
        value = 100.0 / 3.0
        r.rows["ao"] = {c: value for c in r.columns}
        r.rows["ao"]["avg."] = value
        p = tmp_path / "sweep.tsv"
        save_sweep_tsv(p, r)
        back = load_sweep_tsv(p)
        assert back.rows["ao"]["clean"] == value
        assert back.visual_strength == 0.3

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_sweep_tsv(tmp_path / "nope.tsv")

    def test_bad_header(self, tmp_path):
        p = tmp_path / "bad.tsv"
        p.write_text("snr\t-12\tavg.\nao\t1.0\t1.0\n")
        with pytest.raises(ConfigError, match="header"):
            load_sweep_tsv(p)

    def test_ragged_row(self, tmp_path):
        p = tmp_path / "bad.tsv"
        p.write_text("mode\t-12\tclean\tavg.\nao\t1.0\t2.0\n")
        with pytest.raises(ConfigError, match="cells"):
            load_sweep_tsv(p)

    def test_empty_table(self, tmp_path):
        p = tmp_path / "empty.tsv"
        p.write_text("# comment only\n")
        with pytest.raises(ConfigError, match="table"):
            load_sweep_tsv(p)


class TestAverage:
    def test_mean_matches_oracle(self, tmp_path):
        r = make_result()
        cells = [r.rows["ao"][c] for c in r.columns]
        # independent mean: pairwise summation ordering must not matter at
        # this scale, so a plain Python sum is a valid oracle
        assert r.rows["ao"]["avg."] == pytest.approx(sum(cells) / len(cells), abs=1e-12)

    def test_none_propagates(self):
        r = make_result()
        assert r.rows["vo"]["avg."] is None


@pytest.fixture(scope="module")
def tiny_setup(tmp_path_factory):
    d = tmp_path_factory.mktemp("sweepcorpus")
    gen_corpus(CorpusSpec(seed=13, n_units=3, train_utts=2, dev_utts=1,
                          test_utts=3, min_len=2, max_len=2), d)
    utt = load_split(d, "train")[0]
    spec = AvModelSpec(vocab_size=6, audio_dim=utt.audio.dim, video_dim=utt.video.dim,
                       rel_audio_dim=utt.rel_audio.frames.shape[1],
                       rel_video_dim=utt.rel_video.frames.shape[1], **SMALL)
    model = AvModel(spec)
    ckpt = tmp_path_factory.mktemp("ckpt") / "model"
    save_model(ckpt, model)
    return d, ckpt


class TestRunSweep:
    def test_untrained_model_produces_full_grid(self, tiny_setup):
        corpus_dir, ckpt = tiny_setup
        cfg = SweepConfig(modes=("ao",), beam=1, max_len=3)
        result = run_sweep({"ao": ckpt}, corpus_dir, cfg)
        row = result.rows["ao"]
        for col in result.columns + ["avg."]:
            assert row[col] is not None
            assert 0.0 <= row[col] <= 300.0

    def test_missing_checkpoint_fails_row_only(self, tiny_setup, tmp_path):
        corpus_dir, ckpt = tiny_setup
        cfg = SweepConfig(modes=("ao", "vo"), beam=1, max_len=3)
        msgs = []
        result = run_sweep({"ao": ckpt, "vo": tmp_path / "missing"},
                           corpus_dir, cfg, log=msgs.append)
        assert result.rows["vo"]["clean"] is None
        assert result.rows["vo"]["avg."] is None
        assert result.rows["ao"]["clean"] is not None
        assert any("failed" in m for m in msgs)

    def test_determinism(self, tiny_setup):
        corpus_dir, ckpt = tiny_setup
        cfg = SweepConfig(modes=("ao",), beam=1, max_len=3, seed=4)
        r1 = run_sweep({"ao": ckpt}, corpus_dir, cfg)
        r2 = run_sweep({"ao": ckpt}, corpus_dir, cfg)
        assert r1.rows == r2.rows

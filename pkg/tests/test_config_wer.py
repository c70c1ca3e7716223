import numpy as np
import pytest

from avfuse.config import (ConfigError, format_value, load_config, parse_value,
                           save_config)
from avfuse.wer import edit_distance, wer_percent


class TestParseValue:
    def test_int(self):
        assert parse_value("42") == 42 and isinstance(parse_value("42"), int)

    def test_float(self):
        assert parse_value("0.3") == 0.3 and isinstance(parse_value("0.3"), float)

    def test_scientific(self):
        assert parse_value("1e-3") == 1e-3

    def test_bool(self):
        assert parse_value("true") is True
        assert parse_value("False") is False

    def test_string_fallback(self):
        assert parse_value("music") == "music"

    def test_whitespace_stripped(self):
        assert parse_value("  7 ") == 7


class TestFormatValue:
    def test_float_repr_survives_reparse(self):
        for x in (0.1, 1 / 3, 2e-17, -12.0):
            assert parse_value(format_value(x)) == x

    def test_bool_lowercase(self):
        assert format_value(True) == "true"
        assert format_value(False) == "false"

    def test_newline_rejected(self):
        with pytest.raises(ConfigError):
            format_value("a\nb")

    def test_hash_rejected(self):
        with pytest.raises(ConfigError):
            format_value("x # y")


class TestConfigFiles:
    def test_round_trip(self, tmp_path):
        cfg = {"alpha": 0.3, "epochs": 12, "noise": "ambient", "use_lm": False,
               "lr_factor": 1 / 7}
        p = tmp_path / "run.cfg"
        save_config(p, cfg)
        assert load_config(p) == cfg

    def test_comments_and_blanks(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("# header\n\nalpha = 0.5  # inline\n\n")
        assert load_config(p) == {"alpha": 0.5}

    def test_sorted_keys(self, tmp_path):
        p = tmp_path / "s.cfg"
        save_config(p, {"zeta": 1, "alpha": 2})
        lines = p.read_text().splitlines()
        assert lines[0].startswith("alpha") and lines[1].startswith("zeta")

    def test_duplicate_key(self, tmp_path):
        p = tmp_path / "d.cfg"
        p.write_text("a = 1\na = 2\n")
        with pytest.raises(ConfigError, match="duplicate"):
            load_config(p)

    def test_malformed_line_reports_position(self, tmp_path):
        p = tmp_path / "m.cfg"
        p.write_text("a = 1\nnonsense\n")
        with pytest.raises(ConfigError, match=r":2:"):
            load_config(p)

    def test_empty_key(self, tmp_path):
        p = tmp_path / "e.cfg"
        p.write_text("= 3\n")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_config(tmp_path / "absent.cfg")


def levenshtein_oracle(a, b):
    """Plain full-matrix reference implementation."""
    n, m = len(a), len(b)
    dp = np.zeros((n + 1, m + 1), dtype=int)
    dp[:, 0] = np.arange(n + 1)
    dp[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            dp[i, j] = min(dp[i - 1, j - 1] + (a[i - 1] != b[j - 1]),
                           dp[i - 1, j] + 1, dp[i, j - 1] + 1)
    return int(dp[n, m])


class TestEditDistance:
    def test_identical(self):
        assert edit_distance(["a", "b"], ["a", "b"]) == 0

    def test_empty_sides(self):
        assert edit_distance([], ["x", "y", "z"]) == 3
        assert edit_distance(["x"], []) == 1

    def test_single_substitution(self):
        assert edit_distance(["red", "cat"], ["red", "dog"]) == 1

    def test_shift_is_two_ops(self):
        assert edit_distance(["a", "b", "c"], ["b", "c", "d"]) == 2

    def test_matches_oracle_on_random_corpora(self):
        rng = np.random.default_rng(0)
        words = ["ash", "bell", "code", "dawn"]
        for _ in range(60):
            h = [words[i] for i in rng.integers(0, 4, size=rng.integers(0, 8))]
            r = [words[i] for i in rng.integers(0, 4, size=rng.integers(0, 8))]
            assert edit_distance(h, r) == levenshtein_oracle(h, r)


class TestWerPercent:
    def test_perfect(self):
        assert wer_percent([["a", "b"]], [["a", "b"]]) == 0.0

    def test_all_deleted(self):
        assert wer_percent([[]], [["a", "b", "c", "d"]]) == 100.0

    def test_insertions_can_exceed_100(self):
        assert wer_percent([["a", "b", "c"]], [["x"]]) == 300.0

    def test_corpus_pooled_not_averaged(self):
        # 1 error over 1 word and 0 errors over 9 words: pooled 10%, not 50%
        got = wer_percent([["x"], ["a"] * 9], [["y"], ["a"] * 9])
        assert got == pytest.approx(10.0)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            wer_percent([["a"]], [["a"], ["b"]])

    def test_empty_reference_corpus(self):
        with pytest.raises(ValueError):
            wer_percent([[]], [[]])

import numpy as np
import pytest

from storystream.domain import (
    Article,
    DuplicateId,
    EmptyArticle,
    EngineConfig,
    ConfigError,
    NonChronological,
    SentenceMatrix,
    day_index,
    validate_stream,
)


def art(i, ts, n=3, label=None):
    return Article(id=f"a{i}", published_at=ts, sentence_count=n, true_story_label=label)


class TestValidateStream:
    def test_ascending_ok(self):
        validate_stream([art(1, 100), art(2, 200)])

    def test_equal_timestamps_ok(self):
        validate_stream([art(1, 100), art(2, 100)])

    def test_duplicate_id(self):
        with pytest.raises(DuplicateId) as err:
            validate_stream([art(1, 100), Article("a1", 200, 3)])
        assert err.value.article_id == "a1"

    def test_one_second_earlier(self):
        with pytest.raises(NonChronological) as err:
            validate_stream([art(1, 100), art(2, 99)])
        assert err.value.article_id == "a2"

    def test_zero_sentences(self):
        with pytest.raises(EmptyArticle):
            validate_stream([Article("a1", 100, 0)])


class TestDayIndex:
    def test_floor(self):
        assert day_index(0) == 0
        assert day_index(86399) == 0
        assert day_index(86400) == 1
        assert day_index(-1) == -1


class TestSentenceMatrix:
    def test_pad(self):
        sm = SentenceMatrix.from_rows(np.ones((3, 4)), 5, "x")
        sm.validate()
        assert sm.n_real == 3
        assert sm.mask.tolist() == [True, True, True, False, False]
        assert np.all(sm.rows[3:] == 0)

    def test_truncate_keeps_first(self):
        rows = np.arange(12, dtype=float).reshape(6, 2)
        sm = SentenceMatrix.from_rows(rows, 4, "x")
        sm.validate()
        assert np.array_equal(sm.rows, rows[:4])

    def test_mask_prefix_validation(self):
        sm = SentenceMatrix.from_rows(np.ones((2, 3)), 4, "x")
        sm.mask = np.array([True, False, True, False])
        with pytest.raises(ValueError):
            sm.validate()

    def test_nonzero_padding_rejected(self):
        sm = SentenceMatrix.from_rows(np.ones((2, 3)), 4, "x")
        sm.rows[3, 0] = 1.0
        with pytest.raises(ValueError):
            sm.validate()


class TestEngineConfig:
    def test_defaults(self):
        cfg = EngineConfig(h_e=64)
        assert cfg.h_c == 64
        assert cfg.delta == 0.5
        assert cfg.tau == 0.2
        assert cfg.window_days == 7 and cfg.slide_days == 1
        assert cfg.batch_size == 256
        assert cfg.learning_rate == 1e-5

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"delta": 0.0},
            {"delta": 1.0},
            {"tau": 0.0},
            {"h_e": 10, "n_heads": 4},
            {"batch_size": 3},
            {"epochs": 0},
        ],
    )
    def test_invalid(self, kwargs):
        base = {"h_e": 64}
        base.update(kwargs)
        with pytest.raises(ConfigError):
            EngineConfig(**base)

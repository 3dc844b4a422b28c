import json

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from conftest import DATA
from muvac.core import (BOS, EOS, DetectionOutput, ExplanationSequence, LatentGaussian,
                        ModelConfig, MultimodalSample, Vocabulary, check_config, load_config,
                        save_config, seeded_rng, split_rng, validate_config)


def test_golden_first_draw():
    golden = json.loads((DATA / "golden_rng.json").read_text())
    u = torch.rand(1, generator=seeded_rng(golden["seed"]), dtype=torch.float64).item()
    assert repr(u) == golden["first_uniform_float64"]
    normals = torch.randn(3, generator=seeded_rng(golden["seed"])).tolist()
    assert normals == golden["first_normals_float32"]


def test_same_seed_same_stream_different_seed_differs():
    a, b, c = seeded_rng(0), seeded_rng(0), seeded_rng(1)
    x, y, z = (torch.randn(16, generator=g) for g in (a, b, c))
    assert torch.equal(x, y)
    assert not torch.equal(x, z)


def test_split_rng_streams_are_distinct_and_reproducible():
    first = [torch.rand(4, generator=g) for g in split_rng(seeded_rng(3), 3)]
    again = [torch.rand(4, generator=g) for g in split_rng(seeded_rng(3), 3)]
    assert all(torch.equal(a, b) for a, b in zip(first, again))
    assert not torch.equal(first[0], first[1])


class TestValidateConfig:
    def test_ok(self):
        assert validate_config(ModelConfig(d=64, n_heads=4, epsilon=0.1, H=1)) == []

    def test_epsilon_out_of_range(self):
        errors = validate_config(ModelConfig(epsilon=1.5))
        assert any("epsilon out of range" in e for e in errors)

    def test_d_not_divisible(self):
        errors = validate_config(ModelConfig(d=10, n_heads=4))
        assert any("d not divisible" in e for e in errors)

    def test_reports_every_violation(self):
        errors = validate_config(ModelConfig(d=10, n_heads=4, epsilon=-0.1, H=0))
        assert len(errors) == 3

    def test_check_config_raises(self):
        with pytest.raises(ValueError, match="H must be"):
            check_config(ModelConfig(H=0))

    @given(d=st.integers(1, 64), heads=st.integers(1, 8), eps=st.floats(-1, 2), H=st.integers(-2, 4))
    def test_agrees_with_the_invariants(self, d, heads, eps, H):
        errors = validate_config(ModelConfig(d=d, n_heads=heads, epsilon=eps, H=H))
        expected = (d % heads != 0) + (not 0 <= eps <= 1) + (H < 1)
        assert len(errors) == expected


class TestConfigFile:
    def test_round_trip(self, tmp_path):
        cfg = ModelConfig(d=32, epsilon=0.25, d_c=16)
        save_config(cfg, tmp_path / "c.yaml")
        assert load_config(tmp_path / "c.yaml") == cfg

    def test_overrides_win(self, tmp_path):
        (tmp_path / "c.yaml").write_text("d: 32\nepsilon: 0.2\n")
        cfg = load_config(tmp_path / "c.yaml", ["epsilon=0.5", "decode_mode=beam"])
        assert (cfg.d, cfg.epsilon, cfg.decode_mode) == (32, 0.5, "beam")

    def test_unknown_key(self, tmp_path):
        (tmp_path / "c.yaml").write_text("dim: 32\n")
        with pytest.raises(ValueError, match="unknown config keys: dim"):
            load_config(tmp_path / "c.yaml")

    def test_exponent_floats_without_dot(self, tmp_path):
        (tmp_path / "c.yaml").write_text("lr_base: 1e-4\nepsilon: 1\n")
        cfg = load_config(tmp_path / "c.yaml", ["lr_new=5e-3"])
        assert (cfg.lr_base, cfg.lr_new, cfg.epsilon) == (1e-4, 5e-3, 1.0)
        assert isinstance(cfg.epsilon, float)
        with pytest.raises(ValueError, match="lr_new must be a number"):
            load_config(None, ["lr_new=fast"])

    def test_invalid_values_rejected(self):
        with pytest.raises(ValueError, match="epsilon"):
            load_config(None, ["epsilon=3"])


def _sample(**kw):
    base = dict(text_tokens=(5, 6, 7), visual=np.zeros((2, 4)), acoustic=np.zeros((1, 4)),
                label=1, gt_explanation=(BOS, 9, EOS))
    base.update(kw)
    return MultimodalSample(**base)


class TestMultimodalSample:
    def test_valid(self):
        assert _sample().validate(vocab_size=16) == []

    @pytest.mark.parametrize("kw, message", [
        (dict(text_tokens=()), "empty text"),
        (dict(label=2), "label"),
        (dict(acoustic=np.zeros((2, 4))), "acoustic"),
        (dict(gt_explanation=(9, EOS)), "explanation"),
    ])
    def test_invalid(self, kw, message):
        with pytest.raises(ValueError, match=message):
            _sample(**kw)

    def test_token_outside_vocabulary(self):
        assert "token id outside vocabulary" in _sample(text_tokens=(5, 99)).validate(vocab_size=16)


def test_explanation_content():
    assert ExplanationSequence((BOS, 7, 8, EOS)).content == (7, 8)
    with pytest.raises(ValueError):
        ExplanationSequence((7, EOS))


class TestLatentGaussian:
    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            LatentGaussian(torch.zeros(3), torch.zeros(4))

    @given(st.lists(st.floats(-20, 20), min_size=1, max_size=8))
    def test_variance_positive(self, lv):
        g = LatentGaussian(torch.zeros(len(lv)), torch.tensor(lv))
        assert bool((g.var > 0).all())
        assert g.validate() == []

    def test_non_finite_reported(self):
        g = LatentGaussian(torch.tensor([float("nan")]), torch.tensor([float("inf")]))
        assert len(g.validate()) == 2

    def test_select_rows(self):
        a = LatentGaussian(torch.zeros(3, 2), torch.zeros(3, 2))
        b = LatentGaussian(torch.ones(3, 2), torch.ones(3, 2))
        s = a.select(torch.tensor([True, False, True]), b)
        assert s.mu[:, 0].tolist() == [0.0, 1.0, 0.0]


class TestDetectionOutput:
    def test_predicted_label(self):
        assert DetectionOutput((0.3, 0.7), None).predicted_label == 1

    @pytest.mark.parametrize("probs", [(0.5, 0.6), (-0.1, 1.1)])
    def test_rejects_non_distributions(self, probs):
        with pytest.raises(ValueError):
            DetectionOutput(probs, None)

    def test_unknown_source(self):
        with pytest.raises(ValueError):
            DetectionOutput((0.5, 0.5), None, source="oracle")


def test_vocabulary_file_round_trip(tmp_path):
    vocab = Vocabulary(["<pad>", "<bos>", "<eos>", "<cls>", "mocks", "asks"])
    vocab.save(tmp_path / "v.txt")
    loaded = Vocabulary.load(tmp_path / "v.txt")
    assert loaded.tokens == vocab.tokens
    assert loaded.id("asks") == 5
    assert loaded.decode([4, 5]) == "mocks asks"

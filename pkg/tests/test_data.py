import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from muvac.core import BOS, EOS, seeded_rng
from muvac.data import (FeatureIngestError, SyntheticCorpusSpec, build_vocabulary,
                        export_features, generate_synthetic_dataset, ingest_features,
                        load_dataset, read_matrix, save_dataset, write_matrix)
from muvac.latent import InterventionPolicy
from muvac.model import MuVaC, collate
from muvac.train import train


class TestSynthetic:
    def test_label_counts_within_three_sigma(self):
        data = generate_synthetic_dataset(SyntheticCorpusSpec(num_samples=1000, seed=3))
        assert 450 <= sum(s.label for s in data) <= 550

    @given(seed=st.integers(0, 10_000), rate=st.floats(0.05, 0.95))
    @settings(max_examples=20)
    def test_marker_rule(self, seed, rate):
        spec = SyntheticCorpusSpec(num_samples=30, sarcasm_rate=rate, seed=seed)
        for s in generate_synthetic_dataset(spec):
            assert (spec.marker_token_id in s.text_tokens) == (s.label == 1)

    def test_explanations_follow_class_templates(self, train_set):
        spec = SyntheticCorpusSpec()
        vocab = build_vocabulary(spec)
        for s in train_set:
            words = vocab.decode(s.gt_explanation[1:-1]).split()
            assert s.gt_explanation[0] == BOS and s.gt_explanation[-1] == EOS
            shapes = [t.split() for t in spec.templates[s.label]]
            assert any(len(words) == len(tpl) and all(
                w == t or t in ("{S}", "{T}") for w, t in zip(words, tpl)) for tpl in shapes)

    def test_same_seed_same_data(self):
        a = generate_synthetic_dataset(SyntheticCorpusSpec(num_samples=20, seed=5))
        b = generate_synthetic_dataset(SyntheticCorpusSpec(num_samples=20, seed=5))
        for x, y in zip(a, b):
            assert x.text_tokens == y.text_tokens and x.gt_explanation == y.gt_explanation
            assert np.array_equal(x.visual, y.visual) and np.array_equal(x.acoustic, y.acoustic)

    def test_features_correlate_with_label(self):
        data = generate_synthetic_dataset(SyntheticCorpusSpec(num_samples=400, noise_scale=0.5))
        means = [np.mean([s.visual.mean(0) for s in data if s.label == y], axis=0) for y in (0, 1)]
        assert np.linalg.norm(means[0] - means[1]) > 1.0

    @pytest.mark.parametrize("kw", [dict(sarcasm_rate=0.0), dict(sarcasm_rate=1.0),
                                    dict(templates={0: (), 1: ("x",)}), dict(vocab_size=20),
                                    dict(marker_token_id=99)])
    def test_invalid_spec(self, kw):
        with pytest.raises(ValueError):
            SyntheticCorpusSpec(**kw)

    def test_jsonl_round_trip(self, tmp_path, train_set):
        save_dataset(train_set[:5], tmp_path / "d.jsonl")
        back = load_dataset(tmp_path / "d.jsonl")
        for x, y in zip(train_set, back):
            assert (x.sample_id, x.label, x.text_tokens) == (y.sample_id, y.label, y.text_tokens)
            assert np.array_equal(x.visual, y.visual)


class TestToyEncode:
    def test_shapes(self, tiny_model, tiny_batch):
        T, V, A = tiny_model.toy_encode(tiny_batch)
        b, n = tiny_batch.text_mask.shape
        assert T.shape == (b, n, 8)
        assert V.shape == (b, tiny_batch.visual.shape[1], 8)
        assert A.shape == (b, 1, 8)

    def test_zero_inputs_zero_projections(self, tiny_model, tiny_batch):
        with torch.no_grad():
            for proj in (tiny_model.visual_proj, tiny_model.acoustic_proj):
                proj.weight.zero_()
                proj.bias.zero_()
        batch = tiny_batch.to(torch.float64)
        batch.visual.zero_()
        batch.acoustic.zero_()
        _, V, A = tiny_model.toy_encode(batch)
        assert torch.count_nonzero(V) == 0 and torch.count_nonzero(A) == 0

    def test_gradient_only_reaches_used_embedding_rows(self, tiny_model, tiny_batch):
        T, _, _ = tiny_model.toy_encode(tiny_batch)
        (T * tiny_batch.text_mask[..., None]).square().sum().backward()
        grad = tiny_model.text_embed.weight.grad
        used = set(tiny_batch.text[tiny_batch.text_mask].tolist())
        nonzero = set(torch.nonzero(grad.abs().sum(1)).flatten().tolist())
        assert nonzero == used

    def test_text_too_long(self, tiny_cfg, train_set):
        model = MuVaC(tiny_cfg.replace(max_text_len=4), seeded_rng(0))
        with pytest.raises(ValueError):
            model.toy_encode(collate(train_set[:2]))


class TestMatrixFiles:
    @pytest.mark.parametrize("suffix", [".bin", ".csv"])
    def test_round_trip(self, tmp_path, suffix):
        x = np.random.default_rng(0).normal(size=(5, 3)).astype(np.float32)
        write_matrix(tmp_path / f"m{suffix}", x)
        assert np.array_equal(read_matrix(tmp_path / f"m{suffix}"), x)

    def test_binary_layout(self, tmp_path):
        write_matrix(tmp_path / "m.bin", np.array([[1.0, 2.0]]))
        raw = (tmp_path / "m.bin").read_bytes()
        assert raw[:4] == b"MVFM" and raw[4:12] == b"\x01\0\0\0\x02\0\0\0"
        assert np.frombuffer(raw[12:], "<f4").tolist() == [1.0, 2.0]

    def test_truncated_binary(self, tmp_path):
        write_matrix(tmp_path / "m.bin", np.ones((2, 2)))
        (tmp_path / "m.bin").write_bytes((tmp_path / "m.bin").read_bytes()[:-4])
        with pytest.raises(ValueError):
            read_matrix(tmp_path / "m.bin")


class TestIngest:
    def test_three_sample_manifest(self, tmp_path, train_set):
        export_features(train_set[:3], tmp_path)
        assert len(ingest_features(tmp_path, d_in_v=16, d_in_a=16)) == 3

    def test_dimension_mismatch_lists_every_file(self, tmp_path, train_set):
        export_features(train_set[:3], tmp_path)
        with pytest.raises(FeatureIngestError) as err:
            ingest_features(tmp_path, d_in_v=12, d_in_a=16)
        assert len(err.value.errors) == 3
        assert all("_V.bin" in e and "12" in e for e in err.value.errors)

    def test_missing_manifest_and_files(self, tmp_path, train_set):
        with pytest.raises(FeatureIngestError, match="missing manifest"):
            ingest_features(tmp_path)
        export_features(train_set[:2], tmp_path)
        (tmp_path / "features" / f"{train_set[1].sample_id}_A.bin").unlink()
        with pytest.raises(FeatureIngestError, match="file not found"):
            ingest_features(tmp_path)

    def test_missing_manifest_entry(self, tmp_path, train_set):
        export_features(train_set[:2], tmp_path)
        lines = (tmp_path / "manifest.csv").read_text().splitlines()
        cells = lines[2].split(",")
        cells[1] = ""
        lines[2] = ",".join(cells)
        (tmp_path / "manifest.csv").write_text("\n".join(lines) + "\n")
        with pytest.raises(FeatureIngestError, match="line 3: missing label"):
            ingest_features(tmp_path)

    @pytest.mark.parametrize("suffix", [".bin", ".csv"])
    def test_round_trip_gives_identical_first_step(self, tmp_path, tiny_cfg, train_set, suffix):
        samples = train_set[:8]
        export_features(samples, tmp_path, suffix)
        back = load_dataset(tmp_path)
        cfg = tiny_cfg.replace(epochs=1)
        a = train(cfg, samples, until_epoch=1, eval_each_epoch=False)
        b = train(cfg, back, until_epoch=1, eval_each_epoch=False)
        assert a.curve[0] == b.curve[0]

    def test_text_features_use_adapter(self, tmp_path, tiny_cfg, train_set):
        gen = np.random.default_rng(0)
        samples = [type(s)((), s.visual, s.acoustic, s.label, s.gt_explanation, s.sample_id,
                           gen.normal(size=(s.text_length, 5)).astype(np.float32))
                   for s in train_set[:4]]
        export_features(samples, tmp_path)
        back = ingest_features(tmp_path, d_in_t=5)
        assert np.array_equal(back[0].text_features, samples[0].text_features)
        model = MuVaC(tiny_cfg.replace(d_in_t=5), seeded_rng(0))
        losses, _ = model.total_loss(collate(back), seeded_rng(1),
                                     InterventionPolicy(0.1))
        assert torch.isfinite(losses.total)

import math
from dataclasses import replace

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image
from sklearn.metrics import roc_curve

from seqdisent.data import ShapeMotionSpec, gen_shape_motion
from seqdisent.evaluation import (JudgeModel, JudgeQualityError, _JudgeNet, eer_from_scores, evaluate,
                                  inception_metrics, latent_classification_from_features, metric_eer,
                                  metric_swap_accuracy, pair_scores, run_negative_mode_ablation, save_swap_csv,
                                  save_swap_grid, swap_generate, thirds_histogram, thirds_similarities, train_judge,
                                  write_report)
from seqdisent.model import ModelConfig, SequenceVAE
from seqdisent.objective import LossWeights
from seqdisent.trainer import TrainConfig


@pytest.fixture(scope="module")
def shapes():
    return gen_shape_motion(ShapeMotionSpec())


@pytest.fixture(scope="module")
def judge(shapes):
    return train_judge(shapes, "dynamic", seed=0)


@pytest.fixture(scope="module")
def small_model():
    torch.manual_seed(0)
    cfg = ModelConfig(static_dim=6, dynamic_dim=2, seq_len=8, frame_shape=(3, 16, 16), recurrent_hidden=8,
                      conv_channel_plan=(4, 4), frame_feature_dim=8)
    return SequenceVAE(cfg).eval()


def roc_oracle_eer(scores, same):
    """EER from sklearn's ROC vertices, linearly interpolated at the FNR = FPR crossing."""
    fpr, tpr, _ = roc_curve(same.astype(int), scores, drop_intermediate=False)
    fnr = 1 - tpr
    diff = fnr - fpr
    k = int(np.nonzero(diff <= 0)[0][0])
    if diff[k] == 0:
        return float(fpr[k])
    a = diff[k - 1] / (diff[k - 1] - diff[k])
    return float(fpr[k - 1] + a * (fpr[k] - fpr[k - 1]))


class TestEER:
    def test_perfect_separation(self):
        emb = np.array([[1, 0], [1, 0.01], [0, 1], [0.01, 1]], dtype=float)
        assert metric_eer(emb, [0, 0, 1, 1]) == 0.0

    def test_all_equal_scores(self):
        assert eer_from_scores(np.zeros(10), np.arange(10) % 2 == 0) == pytest.approx(0.5)

    def test_inverted_scores(self):
        same = np.array([True, True, False, False])
        assert eer_from_scores(np.array([0.0, 0.1, 0.9, 1.0]), same) == pytest.approx(1.0)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 100_000), st.integers(4, 60), st.booleans())
    def test_matches_roc_oracle(self, seed, n, coarse):
        rng = np.random.default_rng(seed)
        same = rng.random(n) < 0.4
        same[:2] = [True, False]
        scores = rng.normal(size=n) + same * rng.uniform(0, 2)
        if coarse:
            scores = np.round(scores, 1)  # plenty of ties
        assert eer_from_scores(scores, same) == pytest.approx(roc_oracle_eer(scores, same), abs=1e-12)

    def test_pair_scores_count(self):
        s, same = pair_scores(np.random.default_rng(0).normal(size=(7, 3)), [0, 0, 1, 1, 1, 2, 2])
        assert len(s) == 21 and int(same.sum()) == 1 + 3 + 1

    def test_single_identity(self):
        with pytest.raises(ValueError):
            metric_eer(np.ones((3, 2)), [0, 0, 0])

    def test_singleton_identity(self):
        with pytest.raises(ValueError):
            metric_eer(np.eye(3), [0, 0, 1])


class TestInceptionMetrics:
    def test_one_hot_nine_classes(self):
        out = inception_metrics(np.eye(9))
        assert out.inception_score == pytest.approx(9.0)
        assert out.intra_entropy == 0.0
        assert out.inter_entropy == pytest.approx(math.log(9))

    def test_uniform(self):
        out = inception_metrics(np.full((5, 4), 0.25))
        assert out.inception_score == pytest.approx(1.0)
        assert out.intra_entropy == pytest.approx(math.log(4))
        assert out.inter_entropy == pytest.approx(math.log(4))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 100_000), st.integers(2, 30), st.integers(2, 10))
    def test_log_is_identity(self, seed, k, c):
        probs = np.random.default_rng(seed).dirichlet(np.ones(c), size=k)
        out = inception_metrics(probs)
        assert math.log(out.inception_score) == pytest.approx(out.inter_entropy - out.intra_entropy, abs=1e-10)
        assert out.intra_entropy <= out.inter_entropy + 1e-12

    def test_single_sample_flagged(self):
        with pytest.warns(RuntimeWarning):
            out = inception_metrics(np.array([[0.2, 0.8]]))
        assert out.degenerate and out.inception_score == pytest.approx(1.0)


class TestJudge:
    def test_accuracy_on_synthetic_data(self, judge):
        assert judge.test_accuracy >= 0.95

    def test_single_class(self, shapes):
        one = replace(shapes, dynamic_labels=np.zeros_like(shapes.dynamic_labels))
        with pytest.raises(ValueError):
            train_judge(one, "dynamic")

    def test_quality_gate(self, shapes):
        noise = np.random.default_rng(0).integers(0, 4, size=len(shapes))
        with pytest.raises(JudgeQualityError):
            train_judge(replace(shapes, dynamic_labels=noise), "dynamic", epochs=3)


class _ResampleStub:
    def __init__(self, fn):
        self.fn = fn

    def resample_static(self, x, generator=None):
        return self.fn(x)


class TestSwapAccuracy:
    def test_identity_stub_equals_judge_accuracy(self, shapes, judge):
        test = shapes.test()
        acc = metric_swap_accuracy(_ResampleStub(lambda x: x), judge, test)
        assert acc == pytest.approx(judge.accuracy(test.data, test.dynamic_labels))

    def test_shuffle_stub_is_near_chance(self, shapes, judge):
        test = shapes.test()
        accs = []
        for seed in range(20):
            perm = torch.as_tensor(np.random.default_rng(seed).permutation(len(test)))
            stub = _ResampleStub(lambda x, p=perm: torch.as_tensor(test.data)[p])
            accs.append(metric_swap_accuracy(stub, judge, test))
        assert np.mean(accs) == pytest.approx(1 / 4, abs=0.06)

    def test_needs_dynamic_judge(self, shapes, judge):
        with pytest.raises(ValueError):
            metric_swap_accuracy(_ResampleStub(lambda x: x), replace(judge, target="static"), shapes.test())


class TestLatentAccuracy:
    def test_one_hot_features(self, shapes):
        s = np.eye(6)[shapes.static_labels]
        d = np.eye(4)[shapes.dynamic_labels]
        table = latent_classification_from_features(s, d, shapes.static_labels, shapes.dynamic_labels)
        assert table.static_from_s == 1.0 and table.dynamic_from_d == 1.0
        assert table.dynamic_from_s < 0.6 and table.static_from_d < 0.6
        assert table.static_gap > 0.4 and table.dynamic_gap > 0.4

    def test_random_features_near_chance(self, shapes):
        rng = np.random.default_rng(0)
        table = latent_classification_from_features(rng.normal(size=(240, 8)), rng.normal(size=(240, 8)),
                                                    shapes.static_labels, shapes.dynamic_labels)
        for v in (table.static_from_s, table.dynamic_from_s, table.static_from_d, table.dynamic_from_d):
            assert v < 0.5

    def test_per_step_labels(self):
        rng = np.random.default_rng(1)
        n, T = 60, 5
        static = np.repeat(np.arange(3), 20)
        steps = rng.integers(0, 2, size=(n, T))
        d = np.eye(2)[steps] + rng.normal(0, 0.01, size=(n, T, 2))
        s = np.eye(3)[static] + rng.normal(0, 0.01, size=(n, 3))
        table = latent_classification_from_features(s, d, static, steps)
        assert table.dynamic_from_d == 1.0 and table.static_from_s == 1.0

    def test_unknown_classifier(self, shapes):
        with pytest.raises(ValueError):
            latent_classification_from_features(np.eye(6)[shapes.static_labels], np.eye(4)[shapes.dynamic_labels],
                                                shapes.static_labels, shapes.dynamic_labels, kind="boosted")


class TestSwaps:
    def test_self_swap_is_reconstruction(self, small_model, shapes):
        x = shapes.data[:3]
        res = swap_generate(small_model, x, x)
        assert np.array_equal(res.content_swap, res.recon_source)
        assert np.array_equal(res.pose_swap, res.recon_source)

    def test_single_sequence(self, small_model, shapes):
        res = swap_generate(small_model, shapes.data[0], shapes.data[1])
        assert res.content_swap.shape == (8, 3, 16, 16)

    def test_shape_mismatch(self, small_model, shapes):
        with pytest.raises(ValueError):
            swap_generate(small_model, shapes.data[:2], shapes.data[:3])

    def test_grid_and_csv(self, small_model, shapes, tmp_path):
        res = swap_generate(small_model, shapes.data[0], shapes.data[1])
        img = Image.open(save_swap_grid(res, tmp_path / "g.png"))
        assert img.size == (8 * 16, 4 * 16)
        lines = save_swap_csv(res, tmp_path / "s.csv").read_text().splitlines()
        assert len(lines) == 1 + 6 * 8 * 3 * 16 * 16


class TestThirds:
    def test_counts(self):
        rng = np.random.default_rng(0)
        codes = rng.normal(size=(12, 4))
        dist = torch.as_tensor(rng.random((12, 12)))
        vals = thirds_similarities(codes, dist)
        assert [len(vals[k]) for k in ("first", "middle", "last")] == [12 * 3, 12 * 4, 12 * 4]
        hist = thirds_histogram(vals, anchors=12)
        assert sum(int(c.sum()) for c in hist.counts.values()) == 12 * 11

    def test_identical_codes_hit_maximum(self):
        vals = thirds_similarities(np.ones((6, 3)), torch.zeros(6, 6))
        for v in vals.values():
            assert np.allclose(v, math.exp(2))

    def test_distance_ordering_drives_similarity(self):
        codes = np.array([[math.cos(a), math.sin(a)] for a in np.linspace(0, math.pi, 9)])
        dist = torch.as_tensor(np.abs(np.arange(9)[:, None] - np.arange(9)[None]), dtype=torch.float64)
        means = thirds_histogram(thirds_similarities(codes, dist), anchors=9).means
        assert means["first"] > means["middle"] > means["last"]


def test_ablation_returns_one_row_per_mode(small_model, shapes):
    tiny = gen_shape_motion(ShapeMotionSpec(n_static_classes=2, n_motion_classes=2, samples_per_pair=4))
    net = _JudgeNet(8, (3, 16, 16), 2)
    fake_judge = JudgeModel(net.eval(), "dynamic", 2, test_accuracy=1.0)
    cfg = TrainConfig(weights=LossWeights(1, 1, 1, 1, 1), batch_size=6, epochs=1, seed=0)
    rows = run_negative_mode_ablation(cfg, tiny, small_model.config, judge=fake_judge)
    assert [r["negative_mode"] for r in rows] == ["random", "middle_third", "middle_plus_farthest", "farthest_third"]
    assert all(0.0 <= r["swap_accuracy"] <= 1.0 and np.isfinite(r["final_total"]) for r in rows)


def test_evaluate_and_write_report(small_model, shapes, judge, tmp_path):
    report = evaluate(small_model, shapes, judge=judge)
    assert 0.0 <= report.acc <= 1.0 and 0.0 <= report.eer_static <= 1.0
    out = write_report(report, tmp_path, embeddings={"static": np.zeros((4, 2))})
    names = {p.name for p in out.iterdir()}
    assert {"report.json", "generation.csv", "eer.csv", "lacc.csv", "thirds_static.csv", "thirds_dynamic.csv",
            "embeddings_static.csv"} <= names

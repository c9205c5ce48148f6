import json
import math
from dataclasses import replace

import numpy as np
import pytest
import torch

from seqdisent.data import ShapeMotionSpec, gen_shape_motion
from seqdisent.model import ModelConfig
from seqdisent.objective import LossWeights, TrainingDivergenceError
from seqdisent.trainer import (CHECKPOINT_VERSION, CheckpointError, IncompatibleCheckpointError, TrainConfig,
                               compute_loss, init_state, load_model, resume, save_checkpoint, step_generators, train)
from seqdisent.views import ViewTrick

TINY_MODEL = ModelConfig(static_dim=6, dynamic_dim=2, seq_len=4, frame_shape=(3, 16, 16), recurrent_hidden=8,
                         conv_channel_plan=(4, 4), frame_feature_dim=8)


@pytest.fixture(scope="module")
def tiny_data():
    return gen_shape_motion(ShapeMotionSpec(n_static_classes=2, n_motion_classes=2, seq_len=4, samples_per_pair=8,
                                            test_fraction=0.0))


def tiny_config(**kw):
    base = dict(weights=LossWeights(1, 1, 1, 1, 1), batch_size=6, epochs=2, seed=3, learning_rate=1e-3)
    base.update(kw)
    return TrainConfig(**base)


def rows(state):
    return [{k: v for k, v in r.items()} for r in state.metrics]


class TestLoop:
    def test_log_length(self, tiny_data):
        state = train(tiny_config(), tiny_data, TINY_MODEL)
        assert len(tiny_data) == 32
        assert len(state.metrics) == 2 * math.ceil(32 / 6)
        assert state.epoch == 2 and state.global_step == 12

    def test_same_seed_bitwise(self, tiny_data):
        a = train(tiny_config(), tiny_data, TINY_MODEL)
        b = train(tiny_config(), tiny_data, TINY_MODEL)
        assert rows(a) == rows(b)
        for pa, pb in zip(a.model.parameters(), b.model.parameters()):
            assert torch.equal(pa, pb)

    def test_different_seed_differs(self, tiny_data):
        a = train(tiny_config(epochs=1), tiny_data, TINY_MODEL)
        b = train(tiny_config(epochs=1, seed=4), tiny_data, TINY_MODEL)
        assert rows(a) != rows(b)

    def test_run_dir_outputs(self, tiny_data, tmp_path):
        train(tiny_config(epochs=1), tiny_data, TINY_MODEL, run_dir=tmp_path)
        lines = (tmp_path / "metrics.jsonl").read_text().splitlines()
        assert len(lines) == 6
        assert set(json.loads(lines[0])) >= {"step", "epoch", "recon", "nce_static", "total"}
        assert (tmp_path / "checkpoint.pt").exists()

    def test_plain_reparam_runs(self, tiny_data):
        state = train(tiny_config(epochs=1, view_trick=ViewTrick.PLAIN_REPARAM), tiny_data, TINY_MODEL)
        assert all(np.isfinite(r["total"]) for r in state.metrics)

    def test_view_tricks_share_step_one_elbo(self, tiny_data):
        x = torch.as_tensor(tiny_data.data[:6])
        terms = {}
        for trick in ViewTrick:
            cfg = tiny_config(view_trick=trick)
            state = init_state(cfg, TINY_MODEL)
            elbo_gen, view_gen = step_generators(cfg.seed, 0)
            parts = compute_loss(state.model, x, cfg, elbo_gen, view_gen)
            terms[trick] = [getattr(parts, k) for k in ("recon", "kl_static", "kl_dynamic")]
        for a, b in zip(terms[ViewTrick.PREDICTIVE], terms[ViewTrick.PLAIN_REPARAM]):
            assert torch.equal(a, b)

    def test_warmup_disables_contrastive(self, tiny_data):
        state = train(tiny_config(epochs=1, warmup_epochs_contrastive=1), tiny_data, TINY_MODEL)
        assert all(r["nce_static"] == 0.0 and r["nce_dynamic"] == 0.0 for r in state.metrics)

    def test_bad_config(self):
        with pytest.raises(ValueError):
            tiny_config(batch_size=2)
        with pytest.raises(ValueError):
            tiny_config(learning_rate=0)


class TestCheckpoint:
    def test_resume_matches_uninterrupted(self, tiny_data, tmp_path):
        full = train(tiny_config(), tiny_data, TINY_MODEL)
        first = train(tiny_config(), tiny_data, TINY_MODEL, run_dir=tmp_path, until_epoch=1)
        assert first.epoch == 1
        resumed = train(tiny_config(), tiny_data, state=resume(tmp_path / "checkpoint.pt"))
        assert rows(full)[6:] == rows(resumed)
        for pa, pb in zip(full.model.parameters(), resumed.model.parameters()):
            assert torch.equal(pa, pb)

    def test_missing(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            resume(tmp_path / "nope.pt")

    def test_corrupted(self, tiny_data, tmp_path):
        path = tmp_path / "c.pt"
        save_checkpoint(init_state(tiny_config(), TINY_MODEL), path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) // 2])
        with pytest.raises(CheckpointError):
            resume(path)

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "x.pt"
        torch.save({"hello": 1}, path)
        with pytest.raises(CheckpointError):
            resume(path)

    def test_version_mismatch(self, tmp_path):
        path = tmp_path / "v.pt"
        save_checkpoint(init_state(tiny_config(), TINY_MODEL), path)
        payload = torch.load(path, weights_only=True)
        payload["version"] = CHECKPOINT_VERSION + 1
        torch.save(payload, path)
        with pytest.raises(IncompatibleCheckpointError):
            resume(path)

    def test_load_model_eval_mode(self, tiny_data, tmp_path):
        train(tiny_config(epochs=1), tiny_data, TINY_MODEL, run_dir=tmp_path)
        model = load_model(tmp_path / "checkpoint.pt")
        assert not model.training and model.config == TINY_MODEL

    def test_divergence_keeps_last_good_checkpoint(self, tiny_data, tmp_path):
        state = train(tiny_config(epochs=1), tiny_data, TINY_MODEL, run_dir=tmp_path)
        bad = replace(tiny_data, data=np.full_like(tiny_data.data, np.nan))
        with pytest.raises(TrainingDivergenceError):
            train(tiny_config(epochs=2), bad, state=state, run_dir=tmp_path)
        assert resume(tmp_path / "checkpoint.pt").epoch == 1

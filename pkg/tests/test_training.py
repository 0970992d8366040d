"""Trainer tests: the decayed learning-rate schedule, Adam against hand
values, deterministic runs, checkpoint round trips and bit-exact resume."""

import numpy as np
import pytest

from motionmoe import autodiff as ad
from motionmoe.data import GeneratorSpec, synth_generate
from motionmoe.model import ModelConfig, MotionMoE
from motionmoe.training import (AdamState, TrainingError, TrainSettings,
                                adam_step, evaluate, fit, load_checkpoint,
                                lr_at_epoch, model_from_checkpoint,
                                restore_into, run_epoch, save_checkpoint)

MICRO_MODEL = dict(joints=3, history_frames=5, total_frames=8, state_dim=4,
                   conv_width=2, codec_hidden=12, dropout=0.0)
MICRO_DATA = dict(sequences=8, persons=1, frames=8, joints=3, seed=0, scale=30.0)


def micro_setup(model_seed=0, data_seed=0, **settings_overrides):
    model = MotionMoE(ModelConfig(**MICRO_MODEL, seed=model_seed))
    seqs = synth_generate(GeneratorSpec(**{**MICRO_DATA, "seed": data_seed}))
    settings = TrainSettings(**{"epochs": 2, "batch_size": 4, "base_lr": 0.01,
                                "horizons": (0.04, 0.12), **settings_overrides})
    return model, seqs, settings


class TestSchedule:
    def test_decade_per_fifty_epochs(self):
        assert lr_at_epoch(0.01, 0) == 0.01
        assert lr_at_epoch(0.01, 50) == pytest.approx(0.001, rel=1e-12)
        assert lr_at_epoch(0.01, 100) == pytest.approx(0.0001, rel=1e-12)
        assert lr_at_epoch(0.01, 25) == pytest.approx(0.01 * 10 ** -0.5, rel=1e-12)

    def test_monotone_decay(self):
        values = [lr_at_epoch(0.01, e) for e in range(0, 200, 10)]
        assert all(a > b for a, b in zip(values, values[1:]))


class TestAdam:
    def test_constant_gradient_moves_by_lr(self):
        # with g constant, bias correction makes every step exactly
        # lr * g / (|g| + eps') with both moments' corrections cancelling
        p = ad.Tensor(np.zeros(3), requires_grad=True)
        state = AdamState()
        g = np.ones(3)
        for step in range(1, 6):
            adam_step(state, {"p": p}, {"p": g}, lr=0.1)
            expected = -step * 0.1 / (1.0 + 1e-8)
            np.testing.assert_allclose(p.data, expected, rtol=1e-12)
        assert state.step == 5

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(0)
        p = ad.Tensor(rng.standard_normal(4), requires_grad=True)
        ref = p.data.copy()
        m = np.zeros(4)
        v = np.zeros(4)
        state = AdamState(beta1=0.9, beta2=0.999, eps=1e-8)
        for step in range(1, 8):
            g = rng.standard_normal(4)
            adam_step(state, {"p": p}, {"p": g.copy()}, lr=0.05)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            mhat = m / (1 - 0.9 ** step)
            vhat = v / (1 - 0.999 ** step)
            ref = ref - 0.05 * mhat / (np.sqrt(vhat) + 1e-8)
            np.testing.assert_allclose(p.data, ref, rtol=1e-12)

    def test_missing_gradient_leaves_parameter(self):
        p = ad.Tensor(np.ones(2), requires_grad=True)
        q = ad.Tensor(np.ones(2), requires_grad=True)
        adam_step(AdamState(), {"p": p, "q": q}, {"p": np.ones(2)}, lr=0.1)
        assert np.abs(p.data - 1.0).max() > 0
        np.testing.assert_array_equal(q.data, np.ones(2))

    def test_nonfinite_gradient_names_parameter(self):
        p = ad.Tensor(np.ones(2), requires_grad=True)
        with pytest.raises(TrainingError, match="codec/bad"):
            adam_step(AdamState(), {"codec/bad": p},
                      {"codec/bad": np.array([1.0, np.inf])}, lr=0.1)


class TestEpochs:
    def test_loss_decreases_on_micro_problem(self):
        model, seqs, settings = micro_setup(epochs=20)
        log = fit(model, seqs, None, settings)
        assert len(log) == 20
        assert log[-1]["train_loss"] < log[0]["train_loss"]

    def test_run_is_deterministic(self):
        losses = []
        for _ in range(2):
            model, seqs, settings = micro_setup(epochs=3)
            log = fit(model, seqs, None, settings)
            losses.append([r["train_loss"] for r in log])
        assert losses[0] == losses[1]

    def test_validation_metrics_logged(self):
        model, seqs, settings = micro_setup(epochs=1)
        log = fit(model, seqs, seqs, settings)
        assert set(log[0]) == {"epoch", "lr", "train_loss", "val_jpe", "val_ape"}
        assert log[0]["val_jpe"] > 0

    def test_gradient_clip_changes_updates(self):
        runs = {}
        for clip in (0.0, 1e-4):
            model, seqs, settings = micro_setup(epochs=1, grad_clip=clip)
            runs[clip] = fit(model, seqs, None, settings)[0]["train_loss"]
        assert runs[0.0] != runs[1e-4]

    def test_epoch_rng_drives_shuffle(self):
        model, seqs, settings = micro_setup(epochs=1)
        optim = AdamState()
        rng = np.random.default_rng(0)
        first = run_epoch(model, seqs, settings, optim, rng, epoch=0)
        assert np.isfinite(first)
        assert optim.step == 2  # 8 sequences / batch_size 4

    def test_evaluate_is_read_only_and_deterministic(self):
        model, seqs, settings = micro_setup()
        before = {n: p.data.copy() for n, p in model.parameters().items()}
        r1 = evaluate(model, seqs, settings)
        r2 = evaluate(model, seqs, settings)
        assert r1.avg_jpe == r2.avg_jpe and r1.avg_ape == r2.avg_ape
        for n, p in model.parameters().items():
            np.testing.assert_array_equal(p.data, before[n])


class TestCheckpoints:
    def test_save_load_round_trip(self, tmp_path):
        model, seqs, settings = micro_setup(epochs=2)
        settings.out_dir = str(tmp_path)
        fit(model, seqs, None, settings)
        path = tmp_path / "checkpoint_00002.stmc"
        assert path.exists()

        ckpt = load_checkpoint(path)
        assert ckpt.epoch == 2
        assert ckpt.config == model.config
        for name, p in model.parameters().items():
            np.testing.assert_array_equal(ckpt.tensors[f"param/{name}"], p.data)

    def test_save_is_byte_deterministic(self, tmp_path):
        model, seqs, settings = micro_setup(epochs=1)
        optim = AdamState()
        rng = np.random.default_rng(3)
        run_epoch(model, seqs, settings, optim, rng, 0)
        save_checkpoint(tmp_path / "a.stmc", model, optim, 1, rng)
        save_checkpoint(tmp_path / "b.stmc", model, optim, 1, rng)
        assert (tmp_path / "a.stmc").read_bytes() == (tmp_path / "b.stmc").read_bytes()

    def test_load_save_is_byte_identical(self, tmp_path):
        model, seqs, settings = micro_setup(epochs=1)
        settings.out_dir = str(tmp_path)
        fit(model, seqs, None, settings)
        path = tmp_path / "checkpoint_00001.stmc"
        ckpt = load_checkpoint(path)
        clone = model_from_checkpoint(ckpt)
        save_checkpoint(tmp_path / "again.stmc", clone, ckpt.optim_state(),
                        ckpt.epoch, ckpt.rng())
        assert path.read_bytes() == (tmp_path / "again.stmc").read_bytes()

    def test_resume_matches_uninterrupted_run(self, tmp_path):
        model, seqs, settings = micro_setup(epochs=5)
        straight = fit(model, seqs, None, settings)

        model2, _, settings2 = micro_setup(epochs=3)
        settings2.out_dir = str(tmp_path)
        first_leg = fit(model2, seqs, None, settings2)
        ckpt = load_checkpoint(tmp_path / "checkpoint_00003.stmc")

        model3 = MotionMoE(ModelConfig(**MICRO_MODEL, seed=0))
        for p in model3.parameters().values():
            p.data += 123.0  # stomped values must be overwritten by the restore
        settings3 = TrainSettings(epochs=5, batch_size=4, base_lr=0.01,
                                  horizons=(0.04, 0.12))
        second_leg = fit(model3, seqs, None, settings3, resume=ckpt)

        resumed = [r["train_loss"] for r in first_leg + second_leg]
        reference = [r["train_loss"] for r in straight]
        assert resumed == reference
        for name, p in model3.parameters().items():
            np.testing.assert_array_equal(p.data, model.parameters()[name].data)

    def test_config_mismatch_names_fields(self, tmp_path):
        model, seqs, settings = micro_setup(epochs=1)
        settings.out_dir = str(tmp_path)
        fit(model, seqs, None, settings)
        ckpt = load_checkpoint(tmp_path / "checkpoint_00001.stmc")
        other = MotionMoE(ModelConfig(**{**MICRO_MODEL, "state_dim": 8}))
        with pytest.raises(TrainingError, match="state_dim"):
            restore_into(other, ckpt)

    def test_expected_config_guard(self, tmp_path):
        model, seqs, settings = micro_setup(epochs=1)
        settings.out_dir = str(tmp_path)
        fit(model, seqs, None, settings)
        path = tmp_path / "checkpoint_00001.stmc"
        load_checkpoint(path, expected_config=model.config)
        with pytest.raises(TrainingError, match="mismatch"):
            load_checkpoint(path,
                            expected_config=ModelConfig(**{**MICRO_MODEL, "state_dim": 8}))

    def test_corrupt_payload_detected(self, tmp_path):
        model, seqs, settings = micro_setup(epochs=1)
        settings.out_dir = str(tmp_path)
        fit(model, seqs, None, settings)
        path = tmp_path / "checkpoint_00001.stmc"
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(TrainingError, match="magic"):
            load_checkpoint(path)

    def test_periodic_checkpoints(self, tmp_path):
        model, seqs, settings = micro_setup(epochs=4, checkpoint_every=2)
        settings.out_dir = str(tmp_path)
        fit(model, seqs, None, settings)
        names = sorted(p.name for p in tmp_path.glob("*.stmc"))
        assert names == ["checkpoint_00002.stmc", "checkpoint_00004.stmc"]

"""Optimizer, schedule, checkpoints, and the proxy pretraining loop."""

import math

import numpy as np
import pytest

from trackfuse import annotate, train
from trackfuse.autodiff import Parameter
from trackfuse.query_former import FusionConfig
from trackfuse.scenegen import SceneConfig, child_seed, generate_scene
from trackfuse.traj_encoder import EncoderConfig
from trackfuse.train import (
    MODE_BOTH,
    MODE_EGO,
    MODE_OBJECT,
    AdamW,
    Checkpoint,
    CorpusEmpty,
    ManifestMismatch,
    TrainConfig,
    build_context_groups,
    checkpoint_from_model,
    evaluate,
    init_model,
    load,
    load_into_model,
    lr_at,
    model_from_checkpoint,
    pretrain,
    save,
    trainable_tensors,
    write_log,
)

SMALL_ENC = EncoderConfig(d_enc=16, n_layers=1, n_heads=2, ffn_mult=2, d_fusion=8)
SMALL_FUS = FusionConfig(d_fusion=8, n_visual_queries=2, n_blocks=1, n_heads=2)


def small_cfg(**kw):
    defaults = dict(
        encoder=SMALL_ENC,
        fusion=SMALL_FUS,
        total_epochs=4,
        warmup_epochs=1,
        batch_size=16,
        base_lr=1e-3,
    )
    defaults.update(kw)
    return TrainConfig(**defaults)


def tiny_corpus(n_scenes=2, base_seed=301):
    scenes = {}
    items = []
    for i in range(n_scenes):
        s = generate_scene(SceneConfig(), child_seed(base_seed, i), f"s{i}")
        scenes[s.scene_id] = s
        for f in range(1, len(s.frame_times)):
            items.extend(annotate.generate_qa(s, f))
    return items, scenes


class TestConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert cfg.base_lr == 1e-4
        assert cfg.weight_decay == 0.05
        assert (cfg.warmup_epochs, cfg.total_epochs) == (5, 20)
        assert cfg.batch_size == 32
        assert cfg.mix_prob == 0.25
        assert cfg.mode == MODE_BOTH
        assert cfg.separate_encoders is True

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(warmup_epochs=10, total_epochs=5)
        with pytest.raises(ValueError):
            TrainConfig(base_lr=0.0)
        with pytest.raises(ValueError):
            TrainConfig(mode="nope")

    def test_presets(self):
        assert train.FINETUNE_PRESET_LITERAL.base_lr == 1e-3
        assert train.FINETUNE_PRESET_TYPO.base_lr == 1e-4
        assert train.FULL_PRETRAIN_PRESET.total_epochs == 150
        assert train.FULL_PRETRAIN_PRESET.warmup_epochs == 5


class TestSchedule:
    CFG = TrainConfig(base_lr=1e-3, warmup_epochs=2, total_epochs=10)

    def test_warmup_is_linear(self):
        # [DERIVED: hand values] spe=5 -> 10 warmup steps, 50 total
        assert lr_at(0, self.CFG, 5) == 0.0
        assert lr_at(5, self.CFG, 5) == pytest.approx(5e-4)
        assert lr_at(10, self.CFG, 5) == pytest.approx(1e-3)

    def test_cosine_midpoint_is_half(self):
        assert lr_at(30, self.CFG, 5) == pytest.approx(5e-4)

    def test_end_of_schedule_is_zero(self):
        assert lr_at(50, self.CFG, 5) == pytest.approx(0.0, abs=1e-18)
        assert lr_at(60, self.CFG, 5) == pytest.approx(0.0, abs=1e-18)

    def test_monotone_decay_after_warmup(self):
        vals = [lr_at(s, self.CFG, 5) for s in range(10, 51)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))


class TestAdamW:
    def test_single_step_hand_value(self):
        # [DERIVED: hand computation of one bias-corrected Adam step]
        p = Parameter(np.array([1.0]))
        p.grad = np.array([0.5])
        opt = AdamW({"p": p}, weight_decay=0.1)
        opt.step(lr=0.01)
        decayed = 1.0 - 0.01 * 0.1 * 1.0
        m_hat = 0.5  # (0.1 * 0.5) / (1 - 0.9)
        v_hat = 0.25  # (0.001 * 0.25) / (1 - 0.999)
        want = decayed - 0.01 * m_hat / (math.sqrt(v_hat) + 1e-8)
        assert p.data[0] == pytest.approx(want, abs=1e-15)

    def test_decay_applies_with_zero_gradient(self):
        p = Parameter(np.array([2.0]))
        opt = AdamW({"p": p}, weight_decay=0.5)
        opt.step(lr=0.1)
        assert p.data[0] == pytest.approx(2.0 * (1.0 - 0.1 * 0.5))

    def test_no_decay_leaves_zero_grad_param_alone(self):
        p = Parameter(np.array([2.0]))
        opt = AdamW({"p": p}, weight_decay=0.0)
        opt.step(lr=0.1)
        assert p.data[0] == 2.0

    def test_descends_a_quadratic(self):
        p = Parameter(np.array([5.0]))
        opt = AdamW({"p": p}, weight_decay=0.0)
        for _ in range(500):
            p.grad = 2.0 * p.data  # d/dp p^2
            opt.step(lr=0.05)
        assert abs(p.data[0]) < 0.1


class TestModel:
    def test_named_tensor_prefixes(self):
        model = init_model(0, SMALL_ENC, SMALL_FUS, separate_encoders=True)
        names = set(model.named_tensors())
        for prefix in ("object_encoder.", "ego_encoder.", "fusion.", "object_heads.", "ego_heads."):
            assert any(n.startswith(prefix) for n in names), prefix
        assert "object_heads.direction.w" in names
        assert "ego_heads.direction.w" not in names

    def test_shared_encoder_is_same_object(self):
        model = init_model(0, SMALL_ENC, SMALL_FUS, separate_encoders=False)
        assert model.ego_encoder is model.object_encoder
        assert not any(n.startswith("ego_encoder.") for n in model.named_tensors())

    def test_separate_encoders_differ_at_init(self):
        model = init_model(0, SMALL_ENC, SMALL_FUS, separate_encoders=True)
        a = model.object_encoder["proj"]["w"].data
        b = model.ego_encoder["proj"]["w"].data
        assert not np.array_equal(a, b)

    def test_init_deterministic(self):
        a = init_model(7, SMALL_ENC, SMALL_FUS)
        b = init_model(7, SMALL_ENC, SMALL_FUS)
        for (na, ta), (nb, tb) in zip(sorted(a.named_tensors().items()), sorted(b.named_tensors().items())):
            assert na == nb
            np.testing.assert_array_equal(ta.data, tb.data)

    @pytest.mark.parametrize(
        "mode,has_obj,has_ego",
        [(MODE_OBJECT, True, False), (MODE_EGO, False, True), (MODE_BOTH, True, True)],
    )
    def test_trainable_tensors_by_mode(self, mode, has_obj, has_ego):
        model = init_model(0, SMALL_ENC, SMALL_FUS)
        names = set(trainable_tensors(model, mode))
        assert any(n.startswith("object_encoder.") for n in names) == has_obj
        assert any(n.startswith("object_heads.") for n in names) == has_obj
        assert any(n.startswith("ego_encoder.") for n in names) == has_ego
        assert any(n.startswith("ego_heads.") for n in names) == has_ego
        assert not any(n.startswith("fusion.") for n in names)

    def test_trainable_shared_encoder_ego_mode(self):
        model = init_model(0, SMALL_ENC, SMALL_FUS, separate_encoders=False)
        names = set(trainable_tensors(model, MODE_EGO))
        assert any(n.startswith("object_encoder.") for n in names)
        assert not any(n.startswith("ego_encoder.") for n in names)


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path):
        model = init_model(3, SMALL_ENC, SMALL_FUS)
        ckpt = checkpoint_from_model(model, step=17, metrics={"val_loss": 1.5})
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save(ckpt, p1)
        back = load(p1)
        assert back.manifest == ckpt.manifest
        assert set(back.tensors) == set(ckpt.tensors)
        for name in ckpt.tensors:
            np.testing.assert_array_equal(back.tensors[name], ckpt.tensors[name])
        save(back, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_header_layout(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save(checkpoint_from_model(init_model(0, SMALL_ENC, SMALL_FUS)), path)
        blob = path.read_bytes()
        assert blob[:4] == b"TFCK"
        assert int.from_bytes(blob[4:8], "little") == 1

    def test_model_from_checkpoint_restores_weights(self, tmp_path):
        model = init_model(5, SMALL_ENC, SMALL_FUS)
        path = tmp_path / "m.ckpt"
        save(checkpoint_from_model(model), path)
        rebuilt = model_from_checkpoint(load(path))
        assert rebuilt.encoder_cfg == SMALL_ENC
        assert rebuilt.fusion_cfg == SMALL_FUS
        for name, t in model.named_tensors().items():
            np.testing.assert_array_equal(rebuilt.named_tensors()[name].data, t.data)

    def test_missing_tensor_rejected(self):
        model = init_model(0, SMALL_ENC, SMALL_FUS)
        ckpt = checkpoint_from_model(model)
        del ckpt.tensors["object_heads.speed.w"]
        with pytest.raises(ManifestMismatch, match="object_heads.speed.w"):
            load_into_model(model, ckpt)

    def test_shape_mismatch_rejected(self):
        model = init_model(0, SMALL_ENC, SMALL_FUS)
        ckpt = checkpoint_from_model(model)
        ckpt.tensors["object_heads.speed.w"] = np.zeros((3, 3))
        with pytest.raises(ManifestMismatch, match="shape"):
            load_into_model(model, ckpt)

    def test_garbage_file_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"not a checkpoint at all")
        with pytest.raises(ManifestMismatch):
            load(path)


class TestContextGroups:
    def test_groups_cover_corpus_frames(self):
        items, scenes = tiny_corpus()
        groups = build_context_groups(items, scenes, small_cfg())
        assert {(g.scene_id, g.frame) for g in groups} == {
            (i.scene_id, int(i.frame_id)) for i in items
        }

    def test_targets_match_annotation_answers(self):
        """Group targets agree with the QA corpus answers for the same
        (scene, frame, track)."""
        items, scenes = tiny_corpus(1)
        groups = build_context_groups(items, scenes, small_cfg())
        by_key = {}
        for item in items:
            if "average speed" in item.question and item.linked_track_ids[0] != "ego":
                by_key[(item.scene_id, int(item.frame_id), item.linked_track_ids[0])] = float(
                    item.answer.split()[0]
                )
        checked = 0
        for g in groups:
            for ex in g.objects:
                key = (g.scene_id, g.frame, ex.world_track.track_id)
                if key in by_key:
                    assert ex.speed == pytest.approx(by_key[key], abs=0.005)
                    checked += 1
        assert checked > 0

    def test_future_targets_are_ego_relative(self):
        items, scenes = tiny_corpus(1)
        groups = build_context_groups(items, scenes, small_cfg())
        # ego future in its own frame: almost straight ahead, so |y| << x
        for g in groups:
            x, y = g.ego.future
            assert x > 0
            assert abs(y) < x


class TestPretrain:
    def test_empty_corpus_rejected(self):
        with pytest.raises(CorpusEmpty):
            pretrain([], {}, small_cfg())

    def test_loss_decreases(self):
        items, scenes = tiny_corpus()
        ckpt, log = pretrain(items, scenes, small_cfg(seed=0, total_epochs=10, mix_prob=0.0))
        assert len(log) > 8
        quarter = max(2, len(log) // 4)
        first = np.mean([e["loss"] for e in log[:quarter]])
        last = np.mean([e["loss"] for e in log[-quarter:]])
        assert last < first

    def test_log_entries_have_expected_fields(self):
        items, scenes = tiny_corpus(1)
        _, log = pretrain(items, scenes, small_cfg(total_epochs=1, warmup_epochs=1))
        for entry in log:
            assert {"step", "lr", "loss", "wall_time"} <= set(entry)
            assert "loss_object_speed" in entry
            assert "loss_ego_speed" in entry
            assert "loss_ego_direction" not in entry

    def test_checkpoint_carries_metrics_and_config(self):
        items, scenes = tiny_corpus(1)
        cfg = small_cfg(total_epochs=1, warmup_epochs=1, mix_prob=0.0)
        ckpt, _ = pretrain(items, scenes, cfg)
        assert "val_loss" in ckpt.manifest["metrics"]
        assert ckpt.manifest["config"]["base_lr"] == cfg.base_lr
        assert ckpt.manifest["separate_encoders"] is True

    def test_deterministic_checkpoints(self, tmp_path):
        items, scenes = tiny_corpus(1)
        cfg = small_cfg(total_epochs=1, warmup_epochs=1, seed=5)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save(pretrain(items, scenes, cfg)[0], p1)
        save(pretrain(items, scenes, cfg)[0], p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_object_mode_leaves_ego_parameters_untouched(self):
        items, scenes = tiny_corpus(1)
        cfg = small_cfg(total_epochs=1, warmup_epochs=1, mode=MODE_OBJECT)
        ckpt, _ = pretrain(items, scenes, cfg)
        init = init_model(cfg.seed, SMALL_ENC, SMALL_FUS)
        for name, t in init.named_tensors().items():
            same = np.array_equal(ckpt.tensors[name], t.data)
            if name.startswith(("ego_encoder.", "ego_heads.", "fusion.")):
                assert same, name
            elif name.startswith("object_encoder.proj"):
                assert not same, name

    def test_write_log(self, tmp_path):
        items, scenes = tiny_corpus(1)
        _, log = pretrain(items, scenes, small_cfg(total_epochs=1, warmup_epochs=1))
        path = tmp_path / "train.log"
        write_log(path, log)
        import json

        lines = path.read_text().splitlines()
        assert len(lines) == len(log)
        assert json.loads(lines[0])["step"] == 0


class TestEvaluate:
    def test_metric_keys(self):
        items, scenes = tiny_corpus(1)
        cfg = small_cfg()
        groups = build_context_groups(items, scenes, cfg)
        model = init_model(0, SMALL_ENC, SMALL_FUS)
        metrics = evaluate(model, groups, cfg)
        assert {
            "accel_accuracy",
            "direction_accuracy",
            "speed_mae",
            "future_mae",
            "ego_speed_mae",
            "val_loss",
        } <= set(metrics)
        assert 0.0 <= metrics["accel_accuracy"] <= 1.0

    def test_noisy_evaluation_is_seeded(self):
        items, scenes = tiny_corpus(1)
        cfg = small_cfg()
        groups = build_context_groups(items, scenes, cfg)
        model = init_model(0, SMALL_ENC, SMALL_FUS)
        a = evaluate(model, groups, cfg, noisy=True, noise_seed=1)
        b = evaluate(model, groups, cfg, noisy=True, noise_seed=1)
        c = evaluate(model, groups, cfg, noisy=True, noise_seed=2)
        assert a == b
        assert a != c

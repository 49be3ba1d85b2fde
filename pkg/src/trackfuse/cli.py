"""Command-line surface: scene generation, QA corpus generation, encoder
pretraining, feature encoding, and metric evaluation.

Exit codes: 0 ok, 2 input error, 3 degraded external dependency, 4 numeric
failure. Every command writes a run manifest next to its outputs.
"""

from __future__ import annotations

import os
import sys
import time
from dataclasses import asdict

import click
import numpy as np

from . import annotate, evalkit, query_former, report as report_mod, scenegen, track_context, train as train_mod, traj_encoder
from .core import ModalityWeights, dumps_record, loads_record
from .manifest import RunManifest, write_manifest
from .query_former import FusionConfig
from .scenegen import NoiseConfig, SceneConfig, child_seed
from .track_context import SelectionConfig
from .traj_encoder import EncoderConfig

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_DEGRADED = 3
EXIT_NUMERIC = 4


def _fail(code: int, message: str) -> "NoReturn":  # noqa: F821
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_record_file(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return loads_record(fh.read())
    except OSError as exc:
        _fail(EXIT_INPUT, str(exc))
    except ValueError as exc:
        _fail(EXIT_INPUT, f"{path}: {exc}")


def _scene_paths(scenes_dir) -> list[str]:
    try:
        names = sorted(n for n in os.listdir(scenes_dir) if n.endswith(".txt") and n.startswith("scene"))
    except OSError as exc:
        _fail(EXIT_INPUT, str(exc))
    return [os.path.join(scenes_dir, n) for n in names]


def _load_scenes(scenes_dir) -> dict:
    scenes = {}
    for path in _scene_paths(scenes_dir):
        try:
            scene = scenegen.load_scene(path)
        except (OSError, ValueError, KeyError) as exc:
            _fail(EXIT_INPUT, f"{path}: {exc}")
        scenes[scene.scene_id] = scene
    return scenes


def _train_config_from_dict(d: dict) -> train_mod.TrainConfig:
    kwargs = dict(d)
    for key, cls in (
        ("encoder", EncoderConfig),
        ("fusion", FusionConfig),
        ("selection", SelectionConfig),
        ("noise", NoiseConfig),
    ):
        if key in kwargs and isinstance(kwargs[key], dict):
            sub = dict(kwargs[key])
            for k, v in sub.items():
                if isinstance(v, list):
                    sub[k] = tuple(v)
            kwargs[key] = cls(**sub)
    return train_mod.TrainConfig(**kwargs)


@click.group()
@click.version_option()
def main() -> None:
    """Trajectory-aware scene understanding toolkit."""


@main.command("gen-scenes")
@click.option("--config", "config_path", type=click.Path(), default=None, help="scene config record")
@click.option("--num", type=int, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def gen_scenes(config_path, num, seed, out_dir) -> None:
    """Generate NUM deterministic synthetic scenes."""
    t0 = time.monotonic()
    if config_path is not None:
        try:
            cfg = SceneConfig.from_dict(_load_record_file(config_path))
        except (TypeError, ValueError, KeyError) as exc:
            _fail(EXIT_INPUT, f"{config_path}: bad scene config field: {exc}")
    else:
        cfg = SceneConfig()
    if num < 0:
        _fail(EXIT_INPUT, "--num must be non-negative")
    os.makedirs(out_dir, exist_ok=True)
    manifest = RunManifest(command="gen-scenes", config=cfg.to_dict(), seeds=[seed])
    if config_path is not None:
        manifest.add_input(config_path)
    for i in range(num):
        scene = scenegen.generate_scene(cfg, child_seed(seed, i), scene_id=f"scene_{i:04d}")
        path = os.path.join(out_dir, f"scene_{i:04d}.txt")
        scenegen.save_scene(path, scene)
        manifest.add_output(path)
    manifest.wall_time_s = time.monotonic() - t0
    write_manifest(manifest, os.path.join(out_dir, "manifest.txt"))
    click.echo(f"wrote {num} scenes to {out_dir}")


@main.command("gen-qa")
@click.option("--scenes", "scenes_dir", type=click.Path(), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--selection-config", "selection_path", type=click.Path(), default=None)
@click.option("--frames", type=str, default="all", show_default=True,
              help='"all", "last", or a comma-separated frame list')
def gen_qa(scenes_dir, out_path, selection_path, frames) -> None:
    """Generate the template QA corpus for every scene in a directory."""
    t0 = time.monotonic()
    cfg = annotate.AnnotateConfig()
    if selection_path is not None:
        d = _load_record_file(selection_path)
        try:
            sel = SelectionConfig(**d.get("selection", d))
            cfg = annotate.AnnotateConfig(selection=sel)
        except (TypeError, ValueError) as exc:
            _fail(EXIT_INPUT, f"{selection_path}: {exc}")
    manifest = RunManifest(command="gen-qa", config=cfg.to_dict())
    items = []
    for path in _scene_paths(scenes_dir):
        try:
            scene = scenegen.load_scene(path)
        except (OSError, ValueError, KeyError) as exc:
            _fail(EXIT_INPUT, f"{path}: {exc}")
        manifest.add_input(path)
        n = len(scene.frame_times)
        if frames == "all":
            frame_list = range(1, n)
        elif frames == "last":
            frame_list = [n - 1]
        else:
            try:
                frame_list = [int(f) for f in frames.split(",")]
            except ValueError:
                _fail(EXIT_INPUT, f"bad --frames value {frames!r}")
        for frame in frame_list:
            if not 0 < frame < n:
                _fail(EXIT_INPUT, f"frame {frame} outside scene {scene.scene_id}")
            items.extend(annotate.generate_qa(scene, frame, cfg))
    annotate.export_qa(items, out_path, cfg)
    manifest.add_output(out_path)
    manifest.wall_time_s = time.monotonic() - t0
    write_manifest(manifest, out_path + ".manifest")
    click.echo(f"wrote {len(items)} QA items to {out_path}")


@main.command("train")
@click.option("--corpus", "corpus_path", type=click.Path(), required=True)
@click.option("--scenes", "scenes_dir", type=click.Path(), required=True)
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", "ckpt_path", type=click.Path(), required=True)
@click.option("--mode", type=click.Choice([train_mod.MODE_BOTH, train_mod.MODE_OBJECT, train_mod.MODE_EGO]), default=None)
@click.option("--mix-prob", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--warmup-epochs", type=int, default=None)
@click.option("--shared-encoder", is_flag=True, default=False, help="share one encoder between objects and ego")
def train_cmd(corpus_path, scenes_dir, config_path, ckpt_path, mode, mix_prob, seed, epochs,
              warmup_epochs, shared_encoder) -> None:
    """Pretrain the trajectory encoders on a QA corpus."""
    t0 = time.monotonic()
    cfg_dict = _load_record_file(config_path) if config_path is not None else {}
    try:
        cfg = _train_config_from_dict(cfg_dict)
    except (TypeError, ValueError) as exc:
        _fail(EXIT_INPUT, f"{config_path}: {exc}")
    overrides = {}
    if mode is not None:
        overrides["mode"] = mode
    if mix_prob is not None:
        overrides["mix_prob"] = mix_prob
    if seed is not None:
        overrides["seed"] = seed
    if epochs is not None:
        overrides["total_epochs"] = epochs
        if warmup_epochs is None:
            overrides["warmup_epochs"] = min(cfg.warmup_epochs, epochs)
    if warmup_epochs is not None:
        overrides["warmup_epochs"] = warmup_epochs
    if shared_encoder:
        overrides["separate_encoders"] = False
    if overrides:
        cfg = _train_config_from_dict({**asdict(cfg), **overrides})

    try:
        items, _ = annotate.import_qa(corpus_path)
    except (annotate.IoFailure, ValueError, KeyError) as exc:
        _fail(EXIT_INPUT, f"{corpus_path}: {exc}")
    scenes = _load_scenes(scenes_dir)

    manifest = RunManifest(command="train", config=asdict(cfg), seeds=[cfg.seed])
    manifest.add_input(corpus_path)

    try:
        ckpt, log = train_mod.pretrain(items, scenes, cfg)
    except train_mod.NonFiniteLoss as exc:
        _fail(EXIT_NUMERIC, str(exc))
    except train_mod.CorpusEmpty as exc:
        _fail(EXIT_INPUT, str(exc))
    except KeyError as exc:
        _fail(EXIT_INPUT, f"corpus references unknown scene {exc}")

    train_mod.save(ckpt, ckpt_path)
    log_path = ckpt_path + ".log"
    train_mod.write_log(log_path, log)
    fig_path = ckpt_path + ".curves.png"
    report_mod.render_training_curves(log, fig_path)
    manifest.add_output(ckpt_path)
    manifest.add_output(log_path)
    manifest.wall_time_s = time.monotonic() - t0
    write_manifest(manifest, ckpt_path + ".manifest")
    metrics = " ".join(f"{k}={v:.4f}" for k, v in sorted(ckpt.manifest["metrics"].items()))
    click.echo(f"trained {ckpt.manifest['step']} steps; {metrics}")


@main.command("encode")
@click.option("--ckpt", "ckpt_path", type=click.Path(), required=True)
@click.option("--context", "context_path", type=click.Path(), required=True, help="scene file providing the track context")
@click.option("--frame", type=int, default=-1, show_default=True, help="context frame; -1 means the last frame")
@click.option("--visual", "visual_path", type=click.Path(), default=None, help="visual token file")
@click.option("--synthetic", "synthetic_seed", type=int, default=None, help="seed for synthetic visual tokens")
@click.option("--weights", type=str, default="1,1,1", show_default=True, help="w_traj,w_ego,w_clip")
@click.option("--out", "out_path", type=click.Path(), required=True)
def encode_cmd(ckpt_path, context_path, frame, visual_path, synthetic_seed, weights, out_path) -> None:
    """Run the full encode/fuse path and write the output query tokens."""
    t0 = time.monotonic()
    try:
        parts = [float(w) for w in weights.split(",")]
        if len(parts) != 3:
            raise ValueError
        mw = ModalityWeights(*parts)
    except ValueError:
        _fail(EXIT_INPUT, f"bad --weights {weights!r}, expected w_traj,w_ego,w_clip")
    try:
        ckpt = train_mod.load(ckpt_path)
        model = train_mod.model_from_checkpoint(ckpt)
    except (train_mod.IoFailure, train_mod.ManifestMismatch) as exc:
        _fail(EXIT_INPUT, str(exc))
    try:
        scene = scenegen.load_scene(context_path)
    except (OSError, ValueError, KeyError) as exc:
        _fail(EXIT_INPUT, f"{context_path}: {exc}")
    n = len(scene.frame_times)
    if frame < 0:
        frame = n - 1
    if not 0 <= frame < n:
        _fail(EXIT_INPUT, f"frame {frame} outside scene ({n} frames)")

    if (visual_path is None) == (synthetic_seed is None):
        _fail(EXIT_INPUT, "provide exactly one of --visual or --synthetic")
    if visual_path is not None:
        try:
            visual = query_former.read_vfea(visual_path)
        except (OSError, ValueError) as exc:
            _fail(EXIT_INPUT, str(exc))
    else:
        visual = query_former.synthetic_visual_features(
            synthetic_seed, d=model.fusion_cfg.d_fusion
        )

    ctx = track_context.build_context(
        scene.tracks_up_to(frame), scene.ego_up_to(frame), None, scene.cameras
    )
    try:
        obj_tokens = traj_encoder.encode_objects(ctx, model.object_encoder, model.encoder_cfg)
        ego_token = traj_encoder.encode_ego(ctx.ego, model.ego_encoder, model.encoder_cfg)
        fused = query_former.fuse(obj_tokens, ego_token, visual, mw, model.fusion, model.fusion_cfg)
        final = query_former.former_forward(fused, model.fusion, model.fusion_cfg)
    except (query_former.WidthMismatch, traj_encoder.TooManyObjects) as exc:
        _fail(EXIT_INPUT, str(exc))
    query_former.write_vfea(out_path, final.data)

    manifest = RunManifest(
        command="encode",
        config={"weights": [mw.w_traj, mw.w_ego, mw.w_clip], "frame": frame},
        seeds=[] if synthetic_seed is None else [synthetic_seed],
    )
    manifest.add_input(ckpt_path)
    manifest.add_input(context_path)
    if visual_path is not None:
        manifest.add_input(visual_path)
    manifest.add_output(out_path)
    manifest.wall_time_s = time.monotonic() - t0
    write_manifest(manifest, out_path + ".manifest")
    click.echo(f"wrote {final.shape[0]}x{final.shape[1]} tokens to {out_path}")


@main.command("eval")
@click.option("--pred", "pred_path", type=click.Path(), required=True)
@click.option("--weights", "weights_path", type=click.Path(), default=None, help="composite weight record")
@click.option("--match-radius", type=float, default=evalkit.DEFAULT_MATCH_RADIUS_PX, show_default=True)
@click.option("--with-external-scorer", is_flag=True, default=False)
@click.option("--out", "out_dir", type=click.Path(), default=None, help="report directory (default: beside --pred)")
def eval_cmd(pred_path, weights_path, match_radius, with_external_scorer, out_dir) -> None:
    """Score a prediction file and write the metric report and figure."""
    t0 = time.monotonic()
    try:
        records = evalkit.read_predictions(pred_path)
    except (OSError, ValueError) as exc:
        _fail(EXIT_INPUT, f"{pred_path}: {exc}")
    weights = None
    if weights_path is not None:
        weights = _load_record_file(weights_path)
        if not isinstance(weights, dict):
            _fail(EXIT_INPUT, f"{weights_path}: expected a weight record")

    degraded = False
    chatgpt_scores = None
    if with_external_scorer:
        try:
            scorer_cfg = evalkit.ScorerConfig.from_env()
            chatgpt_scores, malformed = evalkit.external_score(records, scorer_cfg)
            if malformed:
                click.echo(f"warning: {len(malformed)} records unscored: {malformed}", err=True)
            if not chatgpt_scores:
                degraded = True
                chatgpt_scores = None
        except evalkit.EndpointUnreachable as exc:
            click.echo(f"warning: external scorer unavailable: {exc}", err=True)
            degraded = True

    try:
        rep = evalkit.build_report(records, weights, chatgpt_scores, match_radius)
    except (evalkit.BadWeights, evalkit.CorpusTooSmall) as exc:
        _fail(EXIT_INPUT, str(exc))

    click.echo(evalkit.format_table(rep))

    out_dir = out_dir or os.path.dirname(os.path.abspath(pred_path))
    os.makedirs(out_dir, exist_ok=True)
    record_path = os.path.join(out_dir, "report.txt")
    with open(record_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_record(evalkit.report_to_record(rep)) + "\n")
    tsv_path = os.path.join(out_dir, "report.tsv")
    report_mod.write_report_tsv(rep, tsv_path)
    fig_path = os.path.join(out_dir, "metrics.png")
    report_mod.render_metrics_figure(rep, fig_path)

    manifest = RunManifest(
        command="eval",
        config={"weights": weights or evalkit.DEFAULT_COMPOSITE_WEIGHTS, "match_radius": match_radius},
    )
    manifest.add_input(pred_path)
    manifest.add_output(record_path)
    manifest.add_output(tsv_path)
    manifest.wall_time_s = time.monotonic() - t0
    write_manifest(manifest, os.path.join(out_dir, "manifest.txt"))
    if degraded:
        sys.exit(EXIT_DEGRADED)


if __name__ == "__main__":
    main()

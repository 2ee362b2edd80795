"""Config-driven batch pipeline: oversegment, pseudomask, merge, eval, export.

Every command reads an optional INI config (key/value sections) whose values
individual flags override; outputs are written atomically and are
byte-identical across reruns on identical inputs. Exit codes: 0 success,
1 usage/config error, 2 data error.
"""

from __future__ import annotations

import argparse
import colorsys
import configparser
import dataclasses
import functools
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .densify import MergePolicy, merge_predictions
from .features import (
    aggregate_features,
    cosine_similarity,
    fuse_features,
    fuse_similarities,
    load_vertex_features,
)
from .freemask import FreeMaskParams, freemask_generate
from .masks import PseudoMaskSet, export_benchmark, load_masks, save_masks
from .mesh import compute_vertex_normals, load_ply, save_ply
from .metrics import evaluate_scenes, load_ground_truth, save_report
from .ncut import NCutParams, masked_ncut
from .overseg import load_segments, oversegment, save_segments

log = logging.getLogger("meshmask")

GENERATORS = ("ncut", "freemask")
MODALITIES_3D2D = ("3d", "2d", "both")

# tau_cut operating points: geometry-only scenes separate at a lower
# similarity threshold than fused-modality ones.
TAU_CUT_BY_MODALITY = {"3d": 0.55, "2d": 0.65, "both": 0.65}


class UsageError(Exception):
    """Bad flags or config values; exits 1."""


class DataError(Exception):
    """Missing or malformed inputs; exits 2."""


@dataclass(frozen=True)
class PipelineConfig:
    """Fully resolved settings for one command invocation."""

    mesh: str | None = None
    features_3d: str | None = None
    features_2d: str | None = None
    gt: str | None = None
    segments: str | None = None
    masks: str | None = None
    candidates: str | None = None
    out_dir: str = "."
    k: float = 0.01
    min_size: int = 50
    color_weight: float = 0.25
    tau_cut: float | None = None
    epsilon: float = 1e-5
    max_instances: int = 20
    min_foreground: int = 8
    separation: str = "max"
    n_seeds: int | None = None
    tau_sim: float = 0.65
    nms_iou: float = 0.5
    max_kept: int = 100
    top_k: int = 50
    novelty_iou: float = 0.3
    w2d: float = 0.5
    generator: str = "ncut"
    modality: str = "both"
    jobs: int = 0

    def ncut_params(self) -> NCutParams:
        tau = self.tau_cut if self.tau_cut is not None else TAU_CUT_BY_MODALITY[self.modality]
        return NCutParams(
            tau_cut=tau,
            epsilon=self.epsilon,
            max_instances=self.max_instances,
            min_foreground_segments=self.min_foreground,
            separation=self.separation,
        )

    def freemask_params(self) -> FreeMaskParams:
        return FreeMaskParams(
            n_seeds=self.n_seeds,
            tau_sim=self.tau_sim,
            nms_iou=self.nms_iou,
            max_kept=self.max_kept,
        )

    def merge_policy(self) -> MergePolicy:
        return MergePolicy(top_k=self.top_k, min_novelty_iou=self.novelty_iou)


_CONFIG_SCHEMA = {
    ("paths", "mesh"): ("mesh", str),
    ("paths", "features_3d"): ("features_3d", str),
    ("paths", "features_2d"): ("features_2d", str),
    ("paths", "gt"): ("gt", str),
    ("paths", "segments"): ("segments", str),
    ("paths", "masks"): ("masks", str),
    ("paths", "candidates"): ("candidates", str),
    ("paths", "out_dir"): ("out_dir", str),
    ("overseg", "k"): ("k", float),
    ("overseg", "min_size"): ("min_size", int),
    ("overseg", "color_weight"): ("color_weight", float),
    ("ncut", "tau_cut"): ("tau_cut", float),
    ("ncut", "epsilon"): ("epsilon", float),
    ("ncut", "max_instances"): ("max_instances", int),
    ("ncut", "min_foreground"): ("min_foreground", int),
    ("ncut", "separation"): ("separation", str),
    ("freemask", "n_seeds"): ("n_seeds", int),
    ("freemask", "tau_sim"): ("tau_sim", float),
    ("freemask", "nms_iou"): ("nms_iou", float),
    ("freemask", "max_kept"): ("max_kept", int),
    ("merge", "top_k"): ("top_k", int),
    ("merge", "novelty_iou"): ("novelty_iou", float),
    ("pipeline", "w2d"): ("w2d", float),
    ("pipeline", "generator"): ("generator", str),
    ("pipeline", "modality"): ("modality", str),
    ("pipeline", "jobs"): ("jobs", int),
}


def load_config(path) -> dict:
    """Read an INI config into PipelineConfig field overrides."""
    parser = configparser.ConfigParser()
    read = parser.read([str(path)])
    if not read:
        raise UsageError(f"config file not found: {path}")
    out = {}
    for section in parser.sections():
        for key in parser[section]:
            spec = _CONFIG_SCHEMA.get((section, key))
            if spec is None:
                raise UsageError(f"unknown config entry [{section}] {key}")
            field, cast = spec
            try:
                out[field] = cast(parser[section][key])
            except ValueError as exc:
                raise UsageError(f"bad config value [{section}] {key}: {exc}") from None
    return out


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    """defaults < config file < command-line flags."""
    values = {}
    if getattr(args, "config", None):
        values.update(load_config(args.config))
    for field in dataclasses.fields(PipelineConfig):
        flag = getattr(args, field.name, None)
        if flag is not None:
            values[field.name] = flag
    try:
        cfg = PipelineConfig(**values)
    except TypeError as exc:
        raise UsageError(str(exc)) from None
    if cfg.generator not in GENERATORS:
        raise UsageError(f"generator must be one of {GENERATORS}, got {cfg.generator!r}")
    if cfg.modality not in MODALITIES_3D2D:
        raise UsageError(f"modality must be one of {MODALITIES_3D2D}, got {cfg.modality!r}")
    if not 0.0 <= cfg.w2d <= 1.0:
        raise UsageError(f"w2d must lie in [0, 1], got {cfg.w2d}")
    try:
        cfg.ncut_params()
        cfg.freemask_params()
        cfg.merge_policy()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return cfg


# ---------------------------------------------------------------------------
# Helpers


def _require(path: str | None, what: str) -> Path:
    if not path:
        raise UsageError(f"no {what} path given (flag or [paths] section)")
    p = Path(path)
    if not p.exists():
        raise DataError(f"{what} file not found: {p}")
    return p


def _atomic_write(path: Path, writer) -> None:
    """Write via a sibling temp file and rename, so reruns never tear output."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    try:
        writer(tmp)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def _format_scene(template: str | None, scene: str | None) -> str | None:
    if template is None or scene is None:
        return template
    return template.replace("{scene}", scene)


def _scene_paths(cfg: PipelineConfig, scene: str | None) -> PipelineConfig:
    return dataclasses.replace(
        cfg,
        mesh=_format_scene(cfg.mesh, scene),
        features_3d=_format_scene(cfg.features_3d, scene),
        features_2d=_format_scene(cfg.features_2d, scene),
        gt=_format_scene(cfg.gt, scene),
        segments=_format_scene(cfg.segments, scene),
        masks=_format_scene(cfg.masks, scene),
        candidates=_format_scene(cfg.candidates, scene),
    )


def _scene_stem(cfg: PipelineConfig, scene: str | None, source: str | None) -> str:
    if scene:
        return scene
    if source:
        return Path(source).stem.split(".")[0]
    return "scene"


def mask_palette(n: int = 64) -> np.ndarray:
    """n visually distinct RGB colors in [0, 1] (golden-ratio hue walk)."""
    hues = (np.arange(n) * 0.6180339887498949) % 1.0
    return np.array([colorsys.hsv_to_rgb(h, 0.65, 0.95) for h in hues])


# ---------------------------------------------------------------------------
# Commands (single scene)


def cmd_oversegment(cfg: PipelineConfig, scene: str | None = None) -> Path:
    cfg = _scene_paths(cfg, scene)
    mesh_path = _require(cfg.mesh, "mesh")
    mesh = load_ply(mesh_path)
    if mesh.normals is None:
        mesh = compute_vertex_normals(mesh)
    seg = oversegment(mesh, k=cfg.k, min_size=cfg.min_size, color_weight=cfg.color_weight)
    stem = _scene_stem(cfg, scene, cfg.mesh)
    out = Path(cfg.out_dir) / f"{stem}.segs.txt"
    params = {"k": cfg.k, "min_size": cfg.min_size, "color_weight": cfg.color_weight}
    out.parent.mkdir(parents=True, exist_ok=True)
    save_segments(seg, out, params=params)
    log.info("%s: %d segments over %d vertices -> %s", stem, seg.num_segments,
             mesh.num_vertices, out)
    return out


def _load_segment_features(cfg: PipelineConfig, seg, modality: str):
    """Aggregated per-segment features for one modality tag."""
    if modality == "3d":
        path = _require(cfg.features_3d, "features-3d")
        vf = load_vertex_features(path, modality="geometry3d")
    else:
        path = _require(cfg.features_2d, "features-2d")
        vf = load_vertex_features(path, modality="color2d")
    if vf.num_vertices != len(seg.segment_of_vertex):
        raise DataError(
            f"{path}: {vf.num_vertices} feature rows but the segment file covers "
            f"{len(seg.segment_of_vertex)} vertices"
        )
    return aggregate_features(vf, seg)


def cmd_pseudomask(cfg: PipelineConfig, scene: str | None = None) -> Path:
    cfg = _scene_paths(cfg, scene)
    seg = load_segments(_require(cfg.segments, "segments"))
    modality = cfg.modality
    # exact fusion endpoints: w2d 0/1 degrade to the single-modality runs
    if modality == "both" and cfg.w2d == 0.0:
        modality = "3d"
    elif modality == "both" and cfg.w2d == 1.0:
        modality = "2d"

    if modality == "both":
        f3d = _load_segment_features(cfg, seg, "3d")
        f2d = _load_segment_features(cfg, seg, "2d")
    else:
        fmat = _load_segment_features(cfg, seg, modality)

    params: dict
    if cfg.generator == "ncut":
        # tau_cut defaults track the effective modality when not set explicitly
        ncut_params = dataclasses.replace(cfg, modality=modality).ncut_params()
        if modality == "both":
            affinity = fuse_similarities(cosine_similarity(f2d), cosine_similarity(f3d), cfg.w2d)
            masks = masked_ncut(affinity, seg, ncut_params)
        else:
            masks = masked_ncut(fmat, seg, ncut_params)
        params = {"generator": "ncut", "modality": cfg.modality, "w2d": cfg.w2d,
                  **ncut_params.as_dict()}
    else:
        fm_params = cfg.freemask_params()
        feats = fuse_features(f2d, f3d, cfg.w2d) if modality == "both" else fmat
        masks = freemask_generate(feats, seg, fm_params)
        params = {"generator": "freemask", "modality": cfg.modality, "w2d": cfg.w2d,
                  **fm_params.as_dict()}

    stem = _scene_stem(cfg, scene, cfg.segments)
    out = Path(cfg.out_dir) / f"{stem}.masks.json"
    _atomic_write(out, lambda p: save_masks(masks, p, params=params))
    export_benchmark(masks, len(seg.segment_of_vertex), Path(cfg.out_dir) / "benchmark", stem)
    log.info("%s: %d pseudo instances -> %s", stem, len(masks), out)
    return out


def cmd_merge(cfg: PipelineConfig, scene: str | None = None) -> Path:
    cfg = _scene_paths(cfg, scene)
    seg = load_segments(_require(cfg.segments, "segments"))
    existing = load_masks(_require(cfg.masks, "masks"), seg)
    candidates = load_masks(_require(cfg.candidates, "candidates"), seg)
    merged = merge_predictions(existing, list(candidates), cfg.merge_policy())
    out = Path(cfg.masks)
    params = {"merge": cfg.merge_policy().as_dict()}
    _atomic_write(out, lambda p: save_masks(merged, p, params=params))
    log.info("merge: %d existing + %d candidates -> %d masks (%s)",
             len(existing), len(candidates), len(merged), out)
    return out


def cmd_eval(cfg: PipelineConfig, scenes=None, per_scene: bool = False) -> Path:
    pairs = []
    for scene in scenes or [None]:
        scfg = _scene_paths(cfg, scene)
        seg = load_segments(_require(scfg.segments, "segments"))
        preds = load_masks(_require(scfg.masks, "masks"), seg)
        gt = load_ground_truth(_require(scfg.gt, "gt"))
        if gt.num_vertices != len(seg.segment_of_vertex):
            raise DataError(
                f"{scfg.gt}: {gt.num_vertices} ground-truth rows but the segment "
                f"file covers {len(seg.segment_of_vertex)} vertices"
            )
        pairs.append((preds, gt))
    try:
        report = evaluate_scenes(pairs, mode="per_scene" if per_scene else "pooled")
    except ValueError as exc:
        raise DataError(str(exc)) from None
    out_dir = Path(cfg.out_dir)
    json_path = out_dir / "ap_report.json"
    _atomic_write(json_path, lambda p: save_report(report, p))
    save_report(report, json_path, out_dir / "ap_report.txt")
    log.info("AP@25 %.4f  AP@50 %.4f  AP %.4f -> %s",
             report.ap25, report.ap50, report.ap_mean, json_path)
    return json_path


def cmd_export_colored(cfg: PipelineConfig, scene: str | None = None) -> Path:
    cfg = _scene_paths(cfg, scene)
    mesh = load_ply(_require(cfg.mesh, "mesh"))
    seg = load_segments(_require(cfg.segments, "segments"))
    masks = load_masks(_require(cfg.masks, "masks"), seg)
    if len(seg.segment_of_vertex) != mesh.num_vertices:
        raise DataError(
            f"{cfg.segments}: segment file covers {len(seg.segment_of_vertex)} vertices "
            f"but the mesh has {mesh.num_vertices}"
        )
    palette = mask_palette(64)
    colors = np.full((mesh.num_vertices, 3), 0.5)
    for i, m in enumerate(masks):
        colors[m.vertex_ids] = palette[i % len(palette)]
    stem = _scene_stem(cfg, scene, cfg.mesh)
    out = Path(cfg.out_dir) / f"{stem}.masks.ply"
    colored = mesh.with_colors(colors)
    _atomic_write(out, lambda p: save_ply(colored, p, binary=True))
    log.info("%s: colored export with %d masks -> %s", stem, len(masks), out)
    return out


# ---------------------------------------------------------------------------
# Batch driver


def _read_scene_list(path) -> list:
    p = Path(path)
    if not p.exists():
        raise DataError(f"scene list not found: {p}")
    scenes = [line.strip() for line in p.read_text().splitlines() if line.strip()]
    if not scenes:
        raise DataError(f"scene list is empty: {p}")
    return scenes


def _run_one(command, cfg: PipelineConfig, scene: str | None) -> str:
    command(cfg, scene)
    return scene or ""


def _run_batch(command, cfg: PipelineConfig, scenes, jobs: int) -> int:
    failures = []
    if jobs == 1 or len(scenes) == 1:
        for scene in scenes:
            try:
                _run_one(command, cfg, scene)
            except Exception as exc:  # collect, do not fail fast
                failures.append((scene, f"{type(exc).__name__}: {exc}"))
    else:
        workers = jobs if jobs > 0 else (os.cpu_count() or 1)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {
                pool.submit(_run_one, command, cfg, scene): scene for scene in scenes
            }
            for fut, scene in futures.items():
                try:
                    fut.result()
                except Exception as exc:
                    failures.append((scene, f"{type(exc).__name__}: {exc}"))
    if failures:
        for scene, msg in sorted(failures):
            log.error("scene %s failed: %s", scene, msg)
        log.error("%d/%d scenes failed", len(failures), len(scenes))
        return 2
    log.info("%d/%d scenes succeeded", len(scenes), len(scenes))
    return 0


# ---------------------------------------------------------------------------
# Argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's default 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_common(p):
    p.add_argument("--config", help="INI config file; flags override its values")
    p.add_argument("--out-dir", dest="out_dir", help="output directory")
    p.add_argument("--scene-list", dest="scene_list",
                   help="file with one scene name per line; paths may use {scene}")
    p.add_argument("--jobs", type=int, help="worker processes for batch runs (0 = all cores)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="meshmask", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("oversegment", help="mesh -> segment file + sidecar", parents=[])
    _add_common(p)
    p.add_argument("--mesh", help="input PLY mesh")
    p.add_argument("--k", type=float, help="clustering scale parameter")
    p.add_argument("--min-size", dest="min_size", type=int, help="minimum segment vertex count")
    p.add_argument("--color-weight", dest="color_weight", type=float,
                   help="color term weight in [0, 1]")

    p = sub.add_parser("pseudomask", help="segments + features -> pseudo-mask JSON")
    _add_common(p)
    p.add_argument("--segments", help="segment file (with .json sidecar)")
    p.add_argument("--features-3d", dest="features_3d", help="FMAT file, geometric features")
    p.add_argument("--features-2d", dest="features_2d", help="FMAT file, projected color features")
    p.add_argument("--modality", choices=MODALITIES_3D2D, help="feature modality selection")
    p.add_argument("--generator", choices=GENERATORS, help="pseudo-mask generator")
    p.add_argument("--w2d", type=float, help="2D weight in similarity fusion")
    p.add_argument("--tau-cut", dest="tau_cut", type=float, help="saliency threshold")
    p.add_argument("--epsilon", type=float, help="sub-threshold affinity floor")
    p.add_argument("--max-instances", dest="max_instances", type=int)
    p.add_argument("--min-foreground", dest="min_foreground", type=int,
                   help="minimum foreground segments per accepted cut")
    p.add_argument("--separation", choices=("max", "avg", "largest", "none"))
    p.add_argument("--n-seeds", dest="n_seeds", type=int, help="freemask seed count")
    p.add_argument("--tau-sim", dest="tau_sim", type=float, help="freemask region threshold")
    p.add_argument("--nms-iou", dest="nms_iou", type=float, help="freemask NMS IoU bound")
    p.add_argument("--max-kept", dest="max_kept", type=int, help="freemask proposal cap")

    p = sub.add_parser("merge", help="fold candidate masks into an existing set")
    _add_common(p)
    p.add_argument("--segments", help="segment file")
    p.add_argument("--masks", help="existing pseudo-mask JSON (updated in place)")
    p.add_argument("--candidates", help="candidate pseudo-mask JSON")
    p.add_argument("--top-k", dest="top_k", type=int, help="candidate cap per merge")
    p.add_argument("--novelty-iou", dest="novelty_iou", type=float,
                   help="maximum IoU against existing masks")

    p = sub.add_parser("eval", help="masks vs ground truth -> AP report")
    _add_common(p)
    p.add_argument("--segments", help="segment file")
    p.add_argument("--masks", help="prediction pseudo-mask JSON")
    p.add_argument("--gt", help="ground truth, one instance id per vertex line")
    p.add_argument("--per-scene", dest="per_scene", action="store_true",
                   help="average per-scene APs instead of pooling matches")

    p = sub.add_parser("export", help="colored PLY of the pseudo masks")
    _add_common(p)
    p.add_argument("--mesh", help="input PLY mesh")
    p.add_argument("--segments", help="segment file")
    p.add_argument("--masks", help="pseudo-mask JSON")

    return parser


_COMMANDS = {
    "oversegment": cmd_oversegment,
    "pseudomask": cmd_pseudomask,
    "merge": cmd_merge,
    "export": cmd_export_colored,
}


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
        scenes = _read_scene_list(args.scene_list) if args.scene_list else None
        if args.command == "eval":
            cmd_eval(cfg, scenes=scenes, per_scene=args.per_scene)
            return 0
        command = _COMMANDS[args.command]
        if scenes is None:
            command(cfg, None)
            return 0
        return _run_batch(command, cfg, scenes, cfg.jobs)
    except UsageError as exc:
        log.error("%s", exc)
        return 1
    except DataError as exc:
        log.error("%s", exc)
        return 2
    except (OSError, ValueError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())

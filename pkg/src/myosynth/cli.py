"""Command-line surface for dataset production, post-processing, and scoring.

Subcommands:
  generate   sample scenes, rasterize labels + skeletons, write manifests
  render     degrade a label volume into a synthetic fluorescence stack
  synth      generate followed by render (byte-identical to the two steps)
  watershed  threshold probability volumes and separate instances
  eval       IPQ scoring; with --pred-b, paired significance comparison
  preview    export a slice as a portable graymap
  stats      summarize a volume

Every run prints the config digest and seed actually used. Exit status is 0
on success, 2 for package errors (with a machine-readable category on
stderr), 1 for unexpected failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import metrics, volio, watershed as ws
from .errors import ConfigError, DomainError, MyosynthError
from .render import RenderConfig, render_fluorescence
from .scene import DatasetConfig, build_scene, get_preset
from .volume import Volume, check_probability
from .voxelize import rasterize_scene


def _load_volume(path, spacing=(1.0, 1.0, 1.0)) -> Volume:
    path = Path(path)
    if path.suffix.lower() in (".tif", ".tiff"):
        return volio.read_tiff(path, spacing)
    return volio.read_raw(path)


def _save_volume(vol: Volume, path, fmt: str, seed: int = 0, digest: str = ""):
    if fmt == "tiff":
        volio.write_tiff(vol, path)
    else:
        volio.write_raw(vol, path, seed=seed, digest=digest)


def _vol_name(stem: str, fmt: str) -> str:
    return f"{stem}.tiff" if fmt == "tiff" else f"{stem}.raw"


def _dataset_config(args) -> DatasetConfig:
    if args.preset and args.config:
        raise ConfigError("pass either --preset or --config, not both")
    if args.preset:
        cfg = get_preset(args.preset)
    elif args.config:
        cfg = volio.parse_dataset_config(args.config)
    else:
        raise ConfigError("one of --preset or --config is required")
    if args.seed is not None:
        cfg = DatasetConfig(name=cfg.name, seed=args.seed,
                            n_volumes=cfg.n_volumes,
                            instances_per_volume=cfg.instances_per_volume,
                            scene_template=cfg.scene_template)
    return cfg


def _announce(digest: str, seed: int):
    print(f"config digest: {digest}")
    print(f"seed: {seed}")


# ---------------------------------------------------------------------------
# generate / render / synth


def _generate_volumes(cfg: DatasetConfig, out_dir: Path, fmt: str):
    """Yield (index, scene, label volume, skeleton volume, stats); writes files."""
    total_instances = 0
    volume_entries = []
    for v in range(cfg.n_volumes):
        scfg = cfg.scene_config(v)
        scene = build_scene(scfg)
        labels, skeleton, stats = rasterize_scene(scene)
        vdir = out_dir / f"volume_{v:03d}"
        vdir.mkdir(parents=True, exist_ok=True)
        digest = volio.config_digest(scfg.to_dict())
        _save_volume(labels, vdir / _vol_name("labels", fmt), fmt,
                     seed=scfg.seed, digest=digest)
        _save_volume(skeleton, vdir / _vol_name("skeleton", fmt), fmt,
                     seed=scfg.seed, digest=digest)
        volio.write_manifest(scene, stats, vdir / "manifest.json")
        total_instances += len(scene.models)
        volume_entries.append({
            "index": v,
            "path": vdir.name,
            "seed": scfg.seed,
            "n_instances": len(scene.models),
        })
        yield v, scene, labels, skeleton
    dataset_manifest = {
        "name": cfg.name,
        "seed": cfg.seed,
        "config_digest": volio.config_digest(cfg.to_dict()),
        "n_volumes": cfg.n_volumes,
        "total_instances": total_instances,
        "volumes": volume_entries,
    }
    (out_dir / "dataset_manifest.json").write_text(
        json.dumps(dataset_manifest, indent=2, sort_keys=True) + "\n")


def cmd_generate(args) -> int:
    cfg = _dataset_config(args)
    digest = volio.config_digest(cfg.to_dict())
    _announce(digest, cfg.seed)
    shape = tuple(cfg.scene_template.get("grid_shape", (32, 128, 128)))
    if args.dry_run:
        print(f"plan: {cfg.n_volumes} volumes of shape {shape}, "
              f"expected instances ~{cfg.expected_instances():.0f}")
        return 0
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for v, scene, _, _ in _generate_volumes(cfg, out_dir, args.format):
        print(f"volume {v:03d}: {len(scene.models)} instances")
    return 0


def _render_one(labels: Volume, scene, rcfg: RenderConfig, seed, out, fmt):
    if seed is None:
        seed = scene.config.seed
    stack, stats = render_fluorescence(labels, scene, rcfg, seed)
    _save_volume(stack, out, fmt, seed=seed,
                 digest=volio.config_digest(rcfg.to_dict()))
    return seed, stats


def cmd_render(args) -> int:
    rcfg = RenderConfig.from_dict(volio.load_json(args.render_config)) \
        if args.render_config else RenderConfig()
    scene = volio.read_manifest(args.manifest)
    labels = _load_volume(args.labels, spacing=scene.config.spacing)
    digest = volio.config_digest(rcfg.to_dict())
    seed, stats = _render_one(labels, scene, rcfg, args.seed,
                              args.out, args.format)
    _announce(digest, seed)
    print(json.dumps({"render_stats": stats}))
    return 0


def cmd_synth(args) -> int:
    cfg = _dataset_config(args)
    rcfg = RenderConfig.from_dict(volio.load_json(args.render_config)) \
        if args.render_config else RenderConfig()
    _announce(volio.config_digest(cfg.to_dict()), cfg.seed)
    if args.dry_run:
        shape = tuple(cfg.scene_template.get("grid_shape", (32, 128, 128)))
        print(f"plan: {cfg.n_volumes} volumes of shape {shape}, "
              f"expected instances ~{cfg.expected_instances():.0f}")
        return 0
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for v, scene, labels, _ in _generate_volumes(cfg, out_dir, args.format):
        vdir = out_dir / f"volume_{v:03d}"
        _render_one(labels, scene, rcfg, None,
                    vdir / _vol_name("fluor", args.format), args.format)
        print(f"volume {v:03d}: {len(scene.models)} instances rendered")
    return 0


# ---------------------------------------------------------------------------
# watershed / eval


def cmd_watershed(args) -> int:
    p_fg = _load_volume(args.fg)
    p_cl = _load_volume(args.cl)
    check_probability(p_fg)
    check_probability(p_cl)
    labels, report = ws.separate_instances(
        p_fg, p_cl, tau_fg=args.tau_fg, tau_cl=args.tau_cl,
        min_seed_size=args.min_seed_size)
    digest = volio.config_digest({
        "tau_fg": args.tau_fg, "tau_cl": args.tau_cl,
        "min_seed_size": args.min_seed_size})
    _announce(digest, 0)
    _save_volume(labels, args.out, args.format, digest=digest)
    print(json.dumps({
        "instances": report.labels_used,
        "dropped_seed_voxels": report.dropped_seed_voxels,
        "unreachable_mask_voxels": report.unreachable_mask_voxels,
    }))
    return 0


def _write_report(report, out_prefix: Path):
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    with open(out_prefix.with_suffix(".json"), "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out_prefix.with_suffix(".csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["gt_id", "score"])
        for gt_id, score in report.per_instance:
            writer.writerow([gt_id, score])


def cmd_eval(args) -> int:
    gt = _load_volume(args.gt)
    pred = _load_volume(args.pred)
    recall = not args.sparse
    report = metrics.ipq_sparse(pred.data, gt.data, recall_enabled=recall)
    digest = volio.config_digest({"sparse": args.sparse})
    _announce(digest, 0)
    out_prefix = Path(args.out)
    _write_report(report, out_prefix)
    print(f"mean IPQ: {report.mean:.4f} +- {report.sem:.4f} (n={report.n})")

    if args.pred_b:
        pred_b = _load_volume(args.pred_b)
        report_b = metrics.ipq_sparse(pred_b.data, gt.data,
                                      recall_enabled=recall)
        scores_a = [s for _, s in report.per_instance]
        scores_b = [s for _, s in report_b.per_instance]
        t, p, df, degenerate = metrics.paired_t_test(scores_a, scores_b)
        table = {
            "mean_a": report.mean, "sem_a": report.sem,
            "mean_b": report_b.mean, "sem_b": report_b.sem,
            "t": t, "p": p, "df": df, "degenerate": degenerate,
            "n": len(scores_a),
        }
        with open(out_prefix.with_suffix(".compare.json"), "w") as fh:
            json.dump(table, fh, indent=2, sort_keys=True)
            fh.write("\n")
        stars = "***" if p < 0.001 else "**" if p < 0.01 \
            else "*" if p < 0.05 else "ns"
        print(f"paired t-test: t={t:.4f}, p={p:.3e}, df={df} [{stars}]")
    return 0


# ---------------------------------------------------------------------------
# preview / stats


def _stable_gray(label: int) -> int:
    # stable label -> gray mapping across runs (Knuth multiplicative hash)
    return 1 + (label * 2654435761 % 2 ** 32) % 255


def cmd_preview(args) -> int:
    vol = _load_volume(args.volume)
    nz = vol.shape[0]
    z = nz // 2 if args.slice == "mid" else int(args.slice)
    if not (0 <= z < nz):
        raise DomainError(f"slice {z} outside [0, {nz - 1}]")
    plane = vol.data[z]
    if args.labels:
        img = np.zeros(plane.shape, dtype=np.uint8)
        for lab in np.unique(plane):
            if lab:
                img[plane == lab] = _stable_gray(int(lab))
    else:
        top = float(plane.max())
        img = (plane.astype(np.float64) / top * 255.0 + 0.5).astype(np.uint8) \
            if top > 0 else np.zeros(plane.shape, dtype=np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    Path(args.out).write_bytes(header + img.tobytes())
    _announce(volio.config_digest({"slice": z, "labels": args.labels}), 0)
    print(f"wrote {args.out} ({img.shape[0]} x {img.shape[1]})")
    return 0


def cmd_stats(args) -> int:
    vol = _load_volume(args.volume)
    d = vol.data
    out = {
        "shape": list(vol.shape),
        "dtype": vol.dtype_name(),
        "spacing": list(vol.spacing),
        "min": float(d.min()),
        "max": float(d.max()),
        "mean": float(d.mean()),
        "var": float(d.var()),
    }
    if np.issubdtype(d.dtype, np.integer):
        ids, counts = np.unique(d, return_counts=True)
        if ids.size <= 64:
            out["label_counts"] = {int(i): int(c) for i, c in zip(ids, counts)}
        out["n_labels"] = int((ids != 0).sum())
    _announce(volio.config_digest({"volume": str(args.volume)}), 0)
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="myosynth", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_dataset_flags(p):
        p.add_argument("--preset", help="built-in dataset preset name")
        p.add_argument("--config", help="dataset config JSON path")
        p.add_argument("--seed", type=int, default=None,
                       help="override the dataset seed")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--format", choices=("tiff", "raw"), default="raw")
        p.add_argument("--threads", type=int, default=1,
                       help="worker count (affects wall time only, never bytes)")
        p.add_argument("--dry-run", action="store_true",
                       help="print the plan and write nothing")

    p = sub.add_parser("generate", help="rasterize label + skeleton volumes")
    add_dataset_flags(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("render", help="render one fluorescence stack")
    p.add_argument("--labels", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--render-config", help="RenderConfig JSON path")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("tiff", "raw"), default="raw")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("synth", help="generate + render a dataset")
    add_dataset_flags(p)
    p.add_argument("--render-config", help="RenderConfig JSON path")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("watershed", help="separate instances from probabilities")
    p.add_argument("--fg", required=True, help="foreground probability volume")
    p.add_argument("--cl", required=True, help="centerline probability volume")
    p.add_argument("--tau-fg", type=float, default=0.5)
    p.add_argument("--tau-cl", type=float, default=0.5)
    p.add_argument("--min-seed-size", type=int, default=5)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("tiff", "raw"), default="raw")
    p.set_defaults(func=cmd_watershed)

    p = sub.add_parser("eval", help="IPQ scoring against (sparse) GT")
    p.add_argument("--pred", required=True)
    p.add_argument("--pred-b", help="second prediction set for paired comparison")
    p.add_argument("--gt", required=True)
    p.add_argument("--sparse", action="store_true",
                   help="sparse GT: disable the recall component")
    p.add_argument("--out", default="ipq_report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("preview", help="write one slice as a PGM image")
    p.add_argument("--volume", required=True)
    p.add_argument("--slice", default="mid", help="z index or 'mid'")
    p.add_argument("--labels", action="store_true",
                   help="map instance ids to stable gray levels")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preview)

    p = sub.add_parser("stats", help="summarize a volume")
    p.add_argument("--volume", required=True)
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MyosynthError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

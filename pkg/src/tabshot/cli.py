"""``tabshot`` command line: transform, train, eval, diagnose.

Exit codes: 0 success, 2 usage or input error, 3 runtime or numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import backbone as bb
from . import fewshot as fs
from . import metrics, storage, synthetic
from .config import ExperimentConfig
from .data import load_csv, preprocess
from .exceptions import NumericError, TabshotError, TrainingDivergedError
from .transform import FeatureLayout, fit_layout, render_png, rows_to_images

log = logging.getLogger("tabshot")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3


class UsageError(TabshotError, ValueError):
    pass


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_transform(cfg: ExperimentConfig) -> int:
    if not cfg.data or not cfg.label:
        raise UsageError("transform needs --data and --label")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    ds = preprocess(load_csv(cfg.data, cfg.label))
    layout = fit_layout(ds.values, seed=cfg.layout_seed, max_sweeps=cfg.max_sweeps,
                        distance_mode=cfg.distance_mode)
    layout.save(out / "layout.json")
    _write_json(out / "preprocess.json", {
        "features": [{"name": f.name, "kind": f.kind.value, "categories": list(f.categories)}
                     for f in ds.features],
        "class_names": list(ds.class_names),
        "norm_stats": [list(s) for s in ds.norm_stats],
        "norm_reference": "full labeled pool",
        "config_hash": cfg.hash,
    })
    images = rows_to_images(ds.values, layout)
    storage.write_tensor_dump(out, images, ds.labels, {
        "class_names": list(ds.class_names),
        "row_ids": ds.row_ids.tolist(),
        "layout_id": layout.layout_id,
    })
    rows = []
    if cfg.write_png:
        (out / "png").mkdir(exist_ok=True)
    for i, (rid, lab) in enumerate(zip(ds.row_ids.tolist(), ds.labels.tolist())):
        entry = {"row_id": rid, "label": lab, "tensor_index": i}
        if cfg.write_png:
            name = f"png/row_{rid:06d}.png"
            render_png(images[i], out / name)
            entry["png"] = name
        rows.append(entry)
    _write_json(out / "manifest.json", {"layout": "layout.json", "tensors": storage.TENSOR_FILE, "rows": rows})
    log.info("wrote %d images (grid %dx%d, loss %.1f) to %s", len(rows),
             layout.grid.n_rows, layout.grid.n_cols, layout.loss, out)
    return EXIT_OK


def _training_corpus(cfg: ExperimentConfig):
    if cfg.corpus == "synthetic":
        return synthetic.make_block_corpus(cfg.corpus_classes, cfg.corpus_per_class, seed=cfg.corpus_seed)
    return storage.load_images(cfg.corpus)


def cmd_train(cfg: ExperimentConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = bb.BackboneSpec(cfg.arch, cfg.channels, cfg.resolved_latent_mode())
    if cfg.resume:
        weights = bb.load_weights(cfg.resume)
    else:
        weights = bb.build_backbone(spec, seed=cfg.init_seed)
    images, labels = _training_corpus(cfg)
    pool = fs.ImagePool(images, labels)
    ep_spec = fs.EpisodeSpec(cfg.train_way, cfg.train_shot, cfg.train_query, seed=cfg.seed)
    trace = {"config_hash": cfg.hash, "losses": [], "accuracies": []}
    try:
        run = fs.meta_train(pool, ep_spec, weights, cfg.head, epochs=cfg.epochs,
                            episodes_per_epoch=cfg.episodes_per_epoch, lr=cfg.lr,
                            inner_steps=cfg.inner_steps, inner_lr=cfg.inner_lr,
                            log=lambda i, loss, acc: (trace["losses"].append(loss),
                                                      trace["accuracies"].append(acc)))
    except TrainingDivergedError as e:
        trace["diverged_at_episode"] = e.episode
        _write_json(out / "loss_trace.json", trace)
        raise
    bb.save_weights(run.weights, out / "weights.bin")
    _write_json(out / "loss_trace.json", trace)
    log.info("trained %s for %d episodes; weights in %s", spec.arch, len(run.losses), out / "weights.bin")
    return EXIT_OK


def _require(value, flag):
    if not value:
        raise UsageError(f"missing required option {flag}")
    return value


def cmd_eval(cfg: ExperimentConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    weights = bb.load_weights(_require(cfg.weights, "--weights"))
    images, labels, _ = storage.read_tensor_dump(_require(cfg.images, "--images"))
    pool = fs.ImagePool(images, labels)
    spec = fs.EpisodeSpec(cfg.way, cfg.shot, cfg.query, seed=cfg.seed)
    t0 = time.perf_counter()
    episodes = fs.sample_episodes(pool, spec, cfg.episodes)
    report = fs.evaluate(weights, cfg.head, episodes, inner_steps=cfg.inner_steps,
                         inner_lr=cfg.inner_lr, config_hash=cfg.hash, keep_manifests=cfg.dump_episodes)
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    # wall time kept apart so report.json stays byte-identical across reruns
    _write_json(out / "timing.json", {"wall_time_s": time.perf_counter() - t0})
    if cfg.dump_episodes:
        _write_json(out / "episodes.json", report.manifests)
    log.info("%s %d-way %d-shot over %d episodes: accuracy %.4f, AUC %.4f", cfg.head, cfg.way,
             cfg.shot, report.n_episodes, report.mean_accuracy, report.mean_auc)
    print(json.dumps({"mean_accuracy": report.mean_accuracy, "mean_auc": report.mean_auc}))
    return EXIT_OK


def _latents_for(source, weights, max_points, seed):
    path = Path(source)
    if path.suffix == ".npy":
        lat = np.load(path)
    else:
        images, _ = storage.load_images(path)
        idx = np.arange(len(images))
        if len(idx) > max_points:
            idx = np.sort(np.random.default_rng(seed).choice(idx, max_points, replace=False))
        lat = bb.embed(weights, np.asarray(images[idx]))
    return np.asarray(lat, dtype=np.float64).reshape(len(lat), -1)


def cmd_diagnose(cfg: ExperimentConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.points:
        natural, tabular = metrics.read_points_csv(cfg.points)
    else:
        _require(cfg.natural, "--natural or --points")
        _require(cfg.tabular, "--tabular")
        weights = None
        if not (str(cfg.natural).endswith(".npy") and str(cfg.tabular).endswith(".npy")):
            weights = bb.load_weights(_require(cfg.weights, "--weights"))
        nat = _latents_for(cfg.natural, weights, cfg.max_points, cfg.seed)
        tab = _latents_for(cfg.tabular, weights, cfg.max_points, cfg.seed)
        pts = metrics.project_2d(np.vstack([nat, tab]))
        natural, tabular = pts[:len(nat)], pts[len(nat):]
    result = metrics.domain_coverage(natural, tabular)
    _write_json(out / "coverage.json", result.to_dict())
    metrics.write_points_csv(out / "points.csv", natural, tabular)
    print(json.dumps(result.to_dict()))
    return EXIT_OK


COMMANDS = {"transform": cmd_transform, "train": cmd_train, "eval": cmd_eval, "diagnose": cmd_diagnose}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="master seed for episode sampling")
    common.add_argument("-v", "--verbose", action="store_true")

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--arch", choices=sorted(bb.ARCH_BLOCKS))
    model.add_argument("--head", choices=fs.HEAD_KINDS)
    model.add_argument("--channels", type=int)
    model.add_argument("--latent-mode", dest="latent_mode", choices=bb.LATENT_MODES)
    model.add_argument("--inner-steps", dest="inner_steps", type=int)
    model.add_argument("--inner-lr", dest="inner_lr", type=float)

    episode = argparse.ArgumentParser(add_help=False)
    episode.add_argument("--way", type=int)
    episode.add_argument("--shot", type=int)
    episode.add_argument("--query", type=int)

    parser = argparse.ArgumentParser(prog="tabshot", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("transform", parents=[common], help="CSV -> layout sidecar + tabular images")
    p.add_argument("--data", help="input CSV with a header row")
    p.add_argument("--label", help="name of the class column")
    p.add_argument("--layout-seed", dest="layout_seed", type=int)
    p.add_argument("--max-sweeps", dest="max_sweeps", type=int)
    p.add_argument("--distance-mode", dest="distance_mode", choices=("euclidean", "one_minus"))
    p.add_argument("--no-png", dest="write_png", action="store_false", default=None)

    p = sub.add_parser("train", parents=[common, model], help="episodic meta-training of a backbone")
    p.add_argument("--corpus", help="'synthetic', a tensor dump directory or an image folder")
    p.add_argument("--epochs", type=int)
    p.add_argument("--episodes-per-epoch", dest="episodes_per_epoch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--train-way", dest="train_way", type=int)
    p.add_argument("--train-shot", dest="train_shot", type=int)
    p.add_argument("--train-query", dest="train_query", type=int)
    p.add_argument("--init-seed", dest="init_seed", type=int)
    p.add_argument("--resume", help="start from an existing weights file")

    p = sub.add_parser("eval", parents=[common, model, episode], help="few-shot evaluation over episodes")
    p.add_argument("--weights")
    p.add_argument("--images", help="tensor dump directory written by 'transform'")
    p.add_argument("--episodes", type=int)
    p.add_argument("--dump-episodes", dest="dump_episodes", action="store_true", default=None)

    p = sub.add_parser("diagnose", parents=[common], help="two-circle domain coverage check")
    p.add_argument("--points", help="CSV with columns x,y,set")
    p.add_argument("--natural", help="natural images (dump/folder) or latents .npy")
    p.add_argument("--tabular", help="tabular images (dump/folder) or latents .npy")
    p.add_argument("--weights")
    p.add_argument("--max-points", dest="max_points", type=int)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    try:
        cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
        cfg = cfg.updated(overrides)
        return COMMANDS[args.command](cfg)
    except (TrainingDivergedError, NumericError) as e:
        print(f"tabshot {args.command}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except (TabshotError, ValueError, FileNotFoundError) as e:
        print(f"tabshot {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # pragma: no cover - last-resort reporting
        print(f"tabshot {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

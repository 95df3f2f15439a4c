"""Command-line surface: dataset generation, pretraining, training,
evaluation, single-image segmentation, and reward-landscape dumps."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import harness
from .config import ConfigError, DatasetSpec, load_config
from .harness import HarnessError
from .imaging.formats import (FormatError, read_labels, read_pgm,
                              write_features, write_labels)
from .imaging.synth import GenerationError
from .pretrain import encode_node_features
from .rewards import RewardConfig, circles_object_reward


def _cmd_gen_data(args) -> int:
    spec = DatasetSpec(kind=args.kind, count=args.count, size=args.size)
    manifest = harness.write_dataset(spec, args.seed, args.out,
                                     force=args.force)
    print(f"wrote {manifest['count']} {manifest['kind']} scenes to {args.out}")
    return 0


def _cmd_pretrain(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.training.seed = args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = harness.build_dataset(cfg.dataset, cfg.training.seed)
    result = harness.pretrain_encoder(cfg, dataset)
    harness.save_encoder(out / "encoder.npz", result,
                         cfg.features.encoder_hidden, 3)
    harness.write_csv(out / "pretrain_log.csv", ("epoch", "loss"),
                      list(enumerate(result.epoch_losses)))
    # frozen node features for every image, held-out ones included: dumping
    # embeddings is inference, only the loss updates saw the training split
    for i, (image, _) in enumerate(dataset):
        sp = harness.compute_superpixels(image, cfg.dataset)
        feats = encode_node_features(result.encoder, image, sp,
                                     cfg.features.boundary_sigma)
        write_features(out / f"feats_{i:04d}.fea", feats)
    print(f"pretrained encoder on {len(dataset)} images; final epoch loss "
          f"{result.epoch_losses[-1]:.6f}; artifacts in {out}")
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.training.seed = args.seed
    out = args.out or cfg.output.out_dir
    manifest = harness.train(cfg, out)
    best = manifest.best
    print(f"trained {cfg.training.steps} steps; best checkpoint "
          f"{best.checkpoint} (held-out reward {best.heldout_reward:.4f}) "
          f"in {out}")
    return 0


def _load_eval_inputs(args):
    cfg, step, arrays = harness.load_checkpoint(args.checkpoint)
    if args.data:
        cfg.dataset.data_dir = args.data
    dataset = harness.build_dataset(cfg.dataset, cfg.training.seed)
    encoder = None
    if cfg.features.mode == "pretrained":
        if not cfg.features.encoder_path:
            raise HarnessError("checkpoint uses pretrained features but "
                               "records no encoder path")
        encoder = harness.load_encoder(cfg.features.encoder_path)
    contexts = harness.build_contexts(cfg, dataset, encoder)
    static_dim = contexts[0].rag.node_features.shape[1]
    actor, _, _ = harness.restore_networks(cfg, arrays, static_dim)
    return cfg, contexts, actor, encoder, step


def _cmd_eval(args) -> int:
    cfg, contexts, actor, _, step = _load_eval_inputs(args)
    rows = harness.evaluate(cfg, contexts, actor, metrics_path=args.metrics,
                            oracle=args.oracle)
    mean = next(r for r in rows if r["index"] == "mean")
    print(f"evaluated {len(contexts)} images at step {step}: "
          f"SBD {mean['sbd']:.4f}, VI merge {mean['vi_merge']:.4f}, "
          f"VI split {mean['vi_split']:.4f} -> {args.metrics}")
    return 0


def _cmd_segment(args) -> int:
    cfg, _, arrays = harness.load_checkpoint(args.checkpoint)
    image = read_pgm(args.image).astype(np.float64) / 255.0
    superpixels = read_labels(args.superpixels) if args.superpixels else None
    encoder = None
    if cfg.features.mode == "pretrained":
        encoder = harness.load_encoder(cfg.features.encoder_path)
    actor, _, _ = harness.restore_networks(cfg, arrays,
                                           harness.static_feature_dim(cfg))
    labelmap, rows = harness.segment_image(cfg, actor, image, superpixels,
                                           encoder)
    write_labels(args.out_labels, labelmap)
    harness.write_csv(args.out_edges, ("node_i", "node_j", "action",
                                       "decision"), rows)
    clusters = int(labelmap.max()) + 1
    print(f"segmented {args.image} into {clusters} clusters; "
          f"labels -> {args.out_labels}, edges -> {args.out_edges}")
    return 0


def _cmd_reward_surface(args) -> int:
    scale, floor = (1.0, 0.6) if args.global_mode == "paper" else (0.5, 0.3)
    cfg = RewardConfig(gamma=args.gamma, k=args.k, theta=args.theta,
                       global_scale=scale, global_floor=floor)
    cht = np.linspace(0.0, 1.0, args.cht_steps)
    counts = range(args.count_min, args.count_max + 1)
    rows = [(float(c), int(n), circles_object_reward(float(c), int(n), cfg))
            for c in cht for n in counts]
    harness.write_csv(args.out, ("cht", "count", "reward"), rows)
    print(f"wrote {len(rows)} reward-surface cells to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="priorseg",
        description="Instance segmentation by reinforcement-learned graph "
                    "partitioning with prior-based rewards.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--kind", choices=("circles", "ring"), default="circles")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true",
                   help="overwrite a non-empty output directory")
    p.set_defaults(fn=_cmd_gen_data)

    p = sub.add_parser("pretrain", help="contrastive encoder pretraining")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_pretrain)

    p = sub.add_parser("train", help="train the actor-critic agent")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None,
                   help="override training.seed from the config")
    p.add_argument("--out", default=None,
                   help="override output.out_dir from the config")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="compute pixel metrics for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default=None,
                   help="dataset directory; defaults to regenerating from "
                        "the checkpoint's config")
    p.add_argument("--metrics", required=True, help="output CSV path")
    p.add_argument("--oracle", action="store_true",
                   help="score ground-truth edge actions instead of the "
                        "policy (projection ceiling)")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("segment", help="segment one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="PGM input image")
    p.add_argument("--superpixels", default=None,
                   help="LBL1 superpixel map; defaults to the watershed")
    p.add_argument("--out-labels", required=True)
    p.add_argument("--out-edges", required=True)
    p.set_defaults(fn=_cmd_segment)

    p = sub.add_parser("reward-surface",
                       help="dump the circle-prior reward landscape")
    p.add_argument("--out", required=True)
    p.add_argument("--cht-steps", type=int, default=21)
    p.add_argument("--count-min", type=int, default=1)
    p.add_argument("--count-max", type=int, default=10)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--gamma", type=float, default=0.8)
    p.add_argument("--theta", type=float, default=4.0)
    p.add_argument("--global-mode", choices=("scaled", "paper"),
                   default="scaled",
                   help="count-prior scaling: halved with floor 0.3, or the "
                        "unscaled original")
    p.set_defaults(fn=_cmd_reward_surface)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, HarnessError, FormatError, GenerationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

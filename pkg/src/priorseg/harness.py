"""Experiment orchestration: datasets, training and evaluation loops, artifacts.

Everything here is reproducible from (config, seed): random streams are
spawned per concern from numpy SeedSequences, CSV and JSON artifacts carry
no timestamps, and checkpoints are plain npz archives whose bytes depend
only on the stored arrays.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from . import autodiff as ad
from .agent import (ActorNetwork, AgentError, AgentImage, CriticNetwork,
                    ReplayBuffer, TemperatureState, act, explore_episode,
                    train_step)
from .config import ExperimentConfig
from .encoder import ConvEncoder, encoder_input
from .imaging.features import handcrafted_node_features
from .imaging.filters import gaussian_gradient_magnitude
from .imaging.formats import read_labels, read_pgm, write_labels, write_pgm
from .imaging.synth import generate_circles, generate_rings
from .imaging.watershed import seeded_watershed
from .metrics import (instance_recovery, symmetric_best_dice,
                      variation_of_information)
from .partitioning import (Partition, actions_to_costs, background_cluster,
                           partition_to_labelmap, solve_multicut)
from .pretrain import (EmbeddingConfig, PretrainResult, encode_node_features,
                       pretrain_features)
from .rag import Rag, build_rag, extract_subgraphs, gt_edge_actions, \
    superpixel_gt_majority
from .rewards import (RewardConfig, RewardVector, circles_suite_rewards,
                      dice_suite_rewards, ring_suite_rewards)

HELDOUT_FRACTION = 0.2  # last 20% of the dataset by index
HANDCRAFTED_DIM = 4     # polar position (r, sin, cos) and mass

# seed-stream tags: each concern owns an independent child stream so that,
# say, a different subgraph draw cannot shift the training noise
_STREAM_DATA, _STREAM_INIT, _STREAM_SUBGRAPH, _STREAM_LOOP, \
    _STREAM_PRETRAIN = range(5)


class HarnessError(RuntimeError):
    """Orchestration-level failure: bad artifacts, incompatible inputs."""


def _rng(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream, index]))


def thread_count() -> int:
    """Worker cap for per-image fan-out; PRIORSEG_THREADS overrides."""
    raw = os.environ.get("PRIORSEG_THREADS", "").strip()
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise HarnessError(
                f"PRIORSEG_THREADS must be an integer, got {raw!r}") from None
    return min(8, os.cpu_count() or 1)


def _fan_out(fn: Callable, items: Sequence) -> list:
    """Order-preserving map, threaded when more than one worker is allowed.

    Every fn call must be pure with respect to shared state; results are
    identical to a sequential map regardless of scheduling.
    """
    workers = thread_count()
    if workers == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: str | Path, header: Sequence[str],
              rows: Sequence[Sequence]) -> None:
    lines = [",".join(header)]
    for row in rows:
        if len(row) != len(header):
            raise HarnessError(f"csv row width {len(row)} != header "
                               f"width {len(header)}")
        lines.append(",".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# datasets


def generate_scene(spec, seed: int, index: int) -> tuple[np.ndarray, np.ndarray]:
    """One deterministic scene: the stream depends only on (seed, index)."""
    rng = _rng(seed, _STREAM_DATA, index)
    if spec.kind == "circles":
        scene = generate_circles(
            spec.size, rng, count_range=(spec.min_objects, spec.max_objects),
            radius_range=(spec.radius_min, spec.radius_max),
            boundary_perturb=spec.boundary_perturb, noise=spec.noise)
    else:
        scene = generate_rings(spec.size, rng,
                               cell_range=(spec.cells_min, spec.cells_max),
                               noise=spec.noise)
    return scene.image, scene.labels


def build_dataset(spec, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """(image, gt_labels) pairs, generated or read from a gen-data directory."""
    if spec.data_dir:
        root = Path(spec.data_dir)
        manifest_path = root / "manifest.json"
        if not manifest_path.is_file():
            raise HarnessError(f"no dataset manifest at {manifest_path}")
        manifest = json.loads(manifest_path.read_text())
        items = []
        for entry in manifest["items"]:
            image = read_pgm(root / entry["image"]).astype(np.float64) / 255.0
            labels = read_labels(root / entry["labels"])
            items.append((image, labels))
        if not items:
            raise HarnessError(f"dataset at {root} is empty")
        return items
    return _fan_out(lambda i: generate_scene(spec, seed, i),
                    list(range(spec.count)))


def write_dataset(spec, seed: int, out_dir: str | Path,
                  force: bool = False) -> dict:
    """Materialize a generated dataset; images quantize to 8-bit PGM."""
    if spec.count < 1:
        raise HarnessError(f"dataset count must be >= 1, got {spec.count}")
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not force:
        raise HarnessError(
            f"output directory {out} is not empty; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    items = []
    for i, (image, labels) in enumerate(build_dataset(spec, seed)):
        img_name, lbl_name = f"img_{i:04d}.pgm", f"gt_{i:04d}.lbl"
        write_pgm(out / img_name,
                  np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8))
        write_labels(out / lbl_name, labels.astype(np.int32))
        items.append({"image": img_name, "labels": lbl_name})
    manifest = {"kind": spec.kind, "count": spec.count, "size": spec.size,
                "seed": seed, "items": items}
    (out / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return manifest


# ---------------------------------------------------------------------------
# per-image context


@dataclass
class ImageContext:
    """Everything derived from one image that training and eval consume."""

    index: int
    image: np.ndarray
    gt_labels: np.ndarray | None
    superpixels: np.ndarray
    rag: Rag
    subgraphs: dict[int, list[np.ndarray]]
    gt_edges: np.ndarray | None
    agent_image: AgentImage


def compute_superpixels(image: np.ndarray, spec) -> np.ndarray:
    boundary = gaussian_gradient_magnitude(image, spec.gradient_sigma)
    return seeded_watershed(boundary, smoothing_sigma=spec.watershed_sigma)


def prepare_context(cfg: ExperimentConfig, index: int, image: np.ndarray,
                    gt: np.ndarray | None,
                    encoder: ConvEncoder | None = None) -> ImageContext:
    sp = compute_superpixels(image, cfg.dataset)
    static = handcrafted_node_features(sp)
    if encoder is not None:
        extra = encode_node_features(encoder, image, sp,
                                     cfg.features.boundary_sigma)
        static = np.concatenate([static, extra], axis=1)
    rag = build_rag(sp, static)
    srng = _rng(cfg.training.seed, _STREAM_SUBGRAPH, index)
    subgraphs: dict[int, list[np.ndarray]] = {}
    for size in sorted(cfg.agent.subgraph_sizes):
        # sizes the graph cannot host are skipped for this image
        if size <= rag.topo.num_edges:
            subgraphs[size] = extract_subgraphs(rag.topo, size, srng)
    if not subgraphs:
        raise HarnessError(
            f"image {index}: region graph has {rag.topo.num_edges} edges, "
            f"fewer than every subgraph size {cfg.agent.subgraph_sizes}")
    stack = None
    if cfg.features.mode == "joint":
        stack = encoder_input(image, sp, cfg.features.boundary_sigma)
    gt_edges = gt_edge_actions(rag.topo, sp, gt) if gt is not None else None
    return ImageContext(index, image, gt, sp, rag, subgraphs, gt_edges,
                        AgentImage(index, rag, subgraphs, stack))


def build_contexts(cfg: ExperimentConfig,
                   dataset: Sequence[tuple[np.ndarray, np.ndarray | None]],
                   encoder: ConvEncoder | None = None) -> list[ImageContext]:
    return _fan_out(
        lambda pair: prepare_context(cfg, pair[0], pair[1][0], pair[1][1],
                                     encoder),
        list(enumerate(dataset)))


def split_heldout(contexts: Sequence[ImageContext]
                  ) -> tuple[list[ImageContext], list[ImageContext]]:
    """Last 20% of images by index are held out (at least one when n >= 2)."""
    n = len(contexts)
    n_held = max(1, int(n * HELDOUT_FRACTION)) if n >= 2 else 0
    cut = n - n_held
    return list(contexts[:cut]), list(contexts[cut:])


# ---------------------------------------------------------------------------
# rewards


def build_reward_config(cfg: ExperimentConfig, size: int) -> RewardConfig:
    """Reward constants; zero-valued ring geometry derives from image size."""
    r = cfg.rewards
    kw = dict(gamma=r.gamma, k=r.k, theta=r.theta, r_min=r.r_min,
              r_max=r.r_max, global_scale=r.global_scale,
              global_floor=r.global_floor, tol_orient=r.tol_orient)
    if r.suite == "ring":
        ring_radius = r.ring_radius or 0.3 * size
        half = (size - 1) / 2.0
        box_long = r.box_long or 0.24 * size
        box_short = r.box_short or min(box_long,
                                       2.0 * math.pi * ring_radius / max(r.k, 1))
        kw.update(ring_radius=ring_radius, center=(half, half),
                  max_center_dist=math.hypot(half, half) + 1.0,
                  box_long=box_long, box_short=box_short,
                  tol_long=r.tol_long or 0.5 * box_long,
                  tol_short=r.tol_short or 0.5 * box_short)
    return RewardConfig(**kw)


def make_reward_fn(cfg: ExperimentConfig, ctx: ImageContext,
                   rcfg: RewardConfig):
    """Bind one image's reward suite; mixed = Dice on image 0, prior elsewhere."""
    suite = cfg.rewards.suite
    if suite == "supervised-dice" or (suite == "mixed" and ctx.index == 0):
        if ctx.gt_edges is None:
            raise HarnessError(
                f"image {ctx.index}: supervised rewards need ground truth")
        gt_edges = ctx.gt_edges

        def dice_fn(actions, part, sgs):
            return dice_suite_rewards(actions, gt_edges, sgs)
        return dice_fn
    if suite in ("circles", "mixed"):
        def circles_fn(actions, part, sgs):
            return circles_suite_rewards(ctx.superpixels, part, ctx.rag.topo,
                                         sgs, rcfg)
        return circles_fn

    def ring_fn(actions, part, sgs):
        return ring_suite_rewards(ctx.superpixels, part, ctx.rag.topo, sgs,
                                  actions, rcfg)
    return ring_fn


# ---------------------------------------------------------------------------
# networks and checkpoints


def static_feature_dim(cfg: ExperimentConfig) -> int:
    """Width of the per-node feature rows the networks are built against."""
    extra = cfg.features.encoder_dim if cfg.features.mode == "pretrained" \
        else 0
    return HANDCRAFTED_DIM + extra


def build_networks(cfg: ExperimentConfig,
                   static_dim: int) -> tuple[ActorNetwork, CriticNetwork]:
    a = cfg.agent
    channels = 2 if cfg.features.mode == "joint" else 0
    rng = _rng(cfg.training.seed, _STREAM_INIT)
    actor = ActorNetwork(rng, static_dim, image_channels=channels,
                         width=a.width, conv_layers=a.conv_layers,
                         encoder_hidden=cfg.features.encoder_hidden,
                         encoder_dim=cfg.features.encoder_dim)
    critic = CriticNetwork(rng, static_dim, sorted(a.subgraph_sizes),
                           image_channels=channels, width=a.width,
                           conv_layers=a.conv_layers,
                           encoder_hidden=cfg.features.encoder_hidden,
                           encoder_dim=cfg.features.encoder_dim)
    return actor, critic


def save_checkpoint(path: str | Path, actor: ActorNetwork,
                    critic: CriticNetwork, temp: TemperatureState,
                    cfg: ExperimentConfig, step: int) -> None:
    arrays = {}
    arrays.update(actor.pset.state_arrays("actor."))
    arrays.update(critic.pset.state_arrays("critic."))
    arrays.update(temp.to_arrays())
    arrays["meta.step"] = np.array([float(step)])
    arrays["meta.config"] = np.frombuffer(
        cfg.snapshot().encode("utf-8"), dtype=np.uint8).copy()
    np.savez(path, **arrays)


def load_checkpoint(path: str | Path) -> tuple[ExperimentConfig, int, dict]:
    p = Path(path)
    if not p.is_file():
        raise HarnessError(f"checkpoint not found: {p}")
    with np.load(p) as bundle:
        arrays = {k: bundle[k] for k in bundle.files}
    if "meta.config" not in arrays:
        raise HarnessError(f"{p} is not a training checkpoint")
    snapshot = json.loads(bytes(arrays["meta.config"]).decode("utf-8"))
    cfg = ExperimentConfig()
    for section, values in snapshot.items():
        spec = getattr(cfg, section)
        for key, val in values.items():
            if isinstance(val, list):
                val = tuple(val)
            setattr(spec, key, val)
    cfg.validate()
    return cfg, int(arrays["meta.step"][0]), arrays


def restore_networks(cfg: ExperimentConfig, arrays: dict, static_dim: int
                     ) -> tuple[ActorNetwork, CriticNetwork, TemperatureState]:
    actor, critic = build_networks(cfg, static_dim)
    try:
        actor.pset.load_state(arrays, "actor.")
        critic.pset.load_state(arrays, "critic.")
    except (KeyError, ValueError) as exc:
        raise HarnessError(
            f"checkpoint does not fit the configured networks: {exc}") from exc
    return actor, critic, TemperatureState.from_arrays(arrays)


def save_encoder(path: str | Path, result: PretrainResult,
                 hidden: int, num_layers: int) -> None:
    arrays = result.pset.state_arrays("encoder.")
    arrays["encoder.meta"] = np.array([
        float(result.encoder.in_channels), float(hidden),
        float(result.encoder.out_dim), float(num_layers)])
    np.savez(path, **arrays)


def load_encoder(path: str | Path) -> ConvEncoder:
    p = Path(path)
    if not p.is_file():
        raise HarnessError(f"encoder checkpoint not found: {p}")
    with np.load(p) as bundle:
        arrays = {k: bundle[k] for k in bundle.files}
    if "encoder.meta" not in arrays:
        raise HarnessError(f"{p} is not an encoder checkpoint")
    in_ch, hidden, out_dim, layers = (int(v) for v in arrays["encoder.meta"])
    pset = ad.ParameterSet()
    encoder = ConvEncoder(pset, "enc", np.random.default_rng(0), in_ch,
                          hidden=hidden, out_dim=out_dim, num_layers=layers)
    try:
        pset.load_state(arrays, "encoder.")
    except (KeyError, ValueError) as exc:
        raise HarnessError(
            f"encoder checkpoint does not fit its metadata: {exc}") from exc
    return encoder


# ---------------------------------------------------------------------------
# pretraining entry


def pretrain_encoder(cfg: ExperimentConfig,
                     dataset: Sequence[tuple[np.ndarray, np.ndarray | None]]
                     ) -> PretrainResult:
    """Contrastive pretraining on the training split (held-out images stay
    unseen so downstream evaluations remain honest)."""
    f = cfg.features
    n_held = max(1, int(len(dataset) * HELDOUT_FRACTION)) \
        if len(dataset) >= 2 else 0
    train_items = dataset[:len(dataset) - n_held]
    items = _fan_out(
        lambda pair: (pair[0], compute_superpixels(pair[0], cfg.dataset)),
        list(train_items))
    ecfg = EmbeddingConfig(dim=f.encoder_dim, delta_v=f.delta_v,
                           delta_d=f.delta_d)
    return pretrain_features(items, ecfg, epochs=f.pretrain_epochs,
                             lr=f.pretrain_lr,
                             seed=cfg.training.seed + 7919 * _STREAM_PRETRAIN,
                             hidden=f.encoder_hidden,
                             smooth_sigma=f.boundary_sigma,
                             weight_sigma=cfg.dataset.gradient_sigma)


# ---------------------------------------------------------------------------
# training


@dataclass
class EvalPoint:
    step: int
    heldout_reward: float
    checkpoint: str


@dataclass
class RunManifest:
    """Everything needed to audit or resume a finished run."""

    config: dict
    version: str
    evaluations: list[EvalPoint] = field(default_factory=list)
    best: EvalPoint | None = None

    def to_json(self) -> str:
        payload = {
            "config": self.config,
            "version": self.version,
            "evaluations": [dataclasses.asdict(e) for e in self.evaluations],
            "best": dataclasses.asdict(self.best) if self.best else None,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def heldout_mean_reward(cfg: ExperimentConfig,
                        contexts: Sequence[ImageContext],
                        actor: ActorNetwork, rcfg: RewardConfig) -> float:
    """Mean subgraph reward of the deterministic policy; rewards only, no
    ground-truth metrics (model selection must never see them)."""

    def one(ctx: ImageContext) -> np.ndarray:
        aset = act(ctx.rag, actor, "deterministic",
                   pixel_stack=ctx.agent_image.pixel_stack)
        part = solve_multicut(ctx.rag.topo, actions_to_costs(aset.actions))
        fn = make_reward_fn(cfg, ctx, rcfg)
        values = [fn(aset.actions, part, sgs).values
                  for _, sgs in sorted(ctx.subgraphs.items())]
        return np.concatenate(values)

    per_image = _fan_out(one, list(contexts))
    return float(np.concatenate(per_image).mean())


def _dump_diagnostics(out: Path, step: int, exc: AgentError) -> Path:
    batch = getattr(exc, "batch", None) or []
    payload = {
        "step": step,
        "error": str(exc),
        "batch": [{
            "image_id": e.image_id,
            "actions": [float(v) for v in e.actions],
            "rewards": {str(s): [float(v) for v in r]
                        for s, r in sorted(e.rewards.items())},
        } for e in batch],
    }
    path = out / "diagnostic.json"
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return path


def train(cfg: ExperimentConfig, out_dir: str | Path) -> RunManifest:
    """Full training run: explore/update loop, periodic held-out reward
    evaluation, CSV logs, checkpoints, and the best-reward manifest."""
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t = cfg.training

    dataset = build_dataset(cfg.dataset, t.seed)
    if len(dataset) < 2:
        raise HarnessError("training needs at least 2 images so one can be "
                           "held out")

    encoder = None
    if cfg.features.mode == "pretrained":
        if cfg.features.encoder_path:
            encoder = load_encoder(cfg.features.encoder_path)
        else:
            result = pretrain_encoder(cfg, dataset)
            enc_path = out / "encoder.npz"
            save_encoder(enc_path, result, cfg.features.encoder_hidden, 3)
            # checkpoints must self-describe, so record where the frozen
            # encoder lives before any snapshot is taken
            cfg.features.encoder_path = str(enc_path)
            encoder = result.encoder

    contexts = build_contexts(cfg, dataset, encoder)
    train_ctxs, held_ctxs = split_heldout(contexts)
    rcfg = build_reward_config(cfg, contexts[0].image.shape[0])
    reward_fns = {ctx.index: make_reward_fn(cfg, ctx, rcfg)
                  for ctx in train_ctxs}
    images = {ctx.index: ctx.agent_image for ctx in train_ctxs}

    static_dim = contexts[0].rag.node_features.shape[1]
    actor, critic = build_networks(cfg, static_dim)
    actor_opt = ad.Adam(actor.pset, cfg.agent.actor_lr)
    critic_opt = ad.Adam(critic.pset, cfg.agent.critic_lr)
    temp = TemperatureState()
    buffer = ReplayBuffer(cfg.agent.buffer_capacity)
    loop_rng = _rng(t.seed, _STREAM_LOOP)

    manifest = RunManifest(config=cfg.to_dict(), version=__version__)
    train_rows: list[tuple] = []
    eval_rows: list[tuple] = []

    for step in range(1, t.steps + 1):
        ctx = train_ctxs[int(loop_rng.integers(len(train_ctxs)))]
        explore_episode(ctx.agent_image, actor, reward_fns[ctx.index],
                        buffer, loop_rng)
        try:
            temp, report = train_step(
                buffer, images, actor, critic, actor_opt, critic_opt, temp,
                loop_rng, batch_size=cfg.agent.batch_size,
                temp_lr=cfg.agent.temperature_lr,
                normalize_coverage=cfg.agent.normalize_coverage)
        except AgentError as exc:
            write_csv(out / "train_log.csv",
                      ("step", "critic_loss", "actor_loss", "alpha",
                       "batch_reward"), train_rows)
            path = _dump_diagnostics(out, step, exc)
            raise HarnessError(
                f"training aborted at step {step}: {exc} "
                f"(diagnostics written to {path})") from exc
        batch_reward = float(np.mean(list(report["mean_reward"].values())))
        train_rows.append((step, report["critic_loss"], report["actor_loss"],
                           report["alpha"], batch_reward))

        if step % t.eval_every == 0 or step == t.steps:
            reward = heldout_mean_reward(cfg, held_ctxs, actor, rcfg)
            name = f"ckpt_{step:06d}.npz"
            save_checkpoint(out / name, actor, critic, temp, cfg, step)
            manifest.evaluations.append(EvalPoint(step, reward, name))
            eval_rows.append((step, reward, name))

    best = max(manifest.evaluations, key=lambda e: e.heldout_reward)
    manifest.best = best
    shutil.copyfile(out / best.checkpoint, out / "best.npz")

    write_csv(out / "train_log.csv",
              ("step", "critic_loss", "actor_loss", "alpha", "batch_reward"),
              train_rows)
    write_csv(out / "eval_log.csv",
              ("step", "heldout_mean_reward", "checkpoint"), eval_rows)
    (out / "manifest.json").write_text(manifest.to_json())
    return manifest


# ---------------------------------------------------------------------------
# evaluation


def _background_zero_labelmap(part: Partition, rag: Rag,
                              superpixels: np.ndarray) -> np.ndarray:
    """Partition to pixel labels with the heaviest cluster mapped to 0, the
    background convention the instance metrics expect."""
    bg = background_cluster(part, rag.masses)
    lut = np.empty(part.num_clusters, dtype=np.int32)
    lut[bg] = 0
    rest = [c for c in range(part.num_clusters) if c != bg]
    lut[rest] = np.arange(1, part.num_clusters, dtype=np.int32)
    return lut[part.labels][superpixels]


def projection_ceiling(ctx: ImageContext) -> float:
    """SBD of the best label map expressible on this superpixel graph."""
    if ctx.gt_labels is None:
        raise HarnessError(f"image {ctx.index} has no ground truth")
    maj = superpixel_gt_majority(ctx.superpixels, ctx.gt_labels)
    return symmetric_best_dice(maj[ctx.superpixels], ctx.gt_labels)


def evaluate(cfg: ExperimentConfig, contexts: Sequence[ImageContext],
             actor: ActorNetwork | None, metrics_path: str | Path | None = None,
             oracle: bool = False) -> list[dict]:
    """Deterministic actions -> multicut -> pixel metrics per image.

    With oracle=True the ground-truth edge labels replace the policy,
    which measures the superpixel-projection ceiling of the pipeline.
    Returns per-image rows plus mean and std aggregate rows.
    """
    if not contexts:
        raise HarnessError("evaluation needs at least one image")
    if not oracle and actor is None:
        raise HarnessError("evaluation needs a policy unless oracle=True")

    def one(ctx: ImageContext) -> dict:
        if ctx.gt_labels is None:
            raise HarnessError(f"image {ctx.index} has no ground truth")
        if oracle:
            actions = ctx.gt_edges
        else:
            actions = act(ctx.rag, actor, "deterministic",
                          pixel_stack=ctx.agent_image.pixel_stack).actions
        part = solve_multicut(ctx.rag.topo, actions_to_costs(actions))
        pred = _background_zero_labelmap(part, ctx.rag, ctx.superpixels)
        vi_merge, vi_split = variation_of_information(pred, ctx.gt_labels)
        return {
            "index": ctx.index,
            "sbd": symmetric_best_dice(pred, ctx.gt_labels),
            "vi_merge": vi_merge,
            "vi_split": vi_split,
            "recovery": instance_recovery(pred, ctx.gt_labels),
            "sbd_ceiling": projection_ceiling(ctx),
        }

    rows = _fan_out(one, list(contexts))
    keys = ("sbd", "vi_merge", "vi_split", "recovery", "sbd_ceiling")
    mean_row: dict = {"index": "mean"}
    std_row: dict = {"index": "std"}
    for k in keys:
        vals = np.array([r[k] for r in rows])
        mean_row[k] = float(vals.mean())
        std_row[k] = float(vals.std())
    rows = rows + [mean_row, std_row]
    if metrics_path is not None:
        header = ("index",) + keys
        write_csv(metrics_path, header,
                  [tuple(r[h] for h in header) for r in rows])
    return rows


# ---------------------------------------------------------------------------
# single-image segmentation


def segment_image(cfg: ExperimentConfig, actor: ActorNetwork,
                  image: np.ndarray,
                  superpixels: np.ndarray | None = None,
                  encoder: ConvEncoder | None = None
                  ) -> tuple[np.ndarray, list[tuple[int, int, float, str]]]:
    """Predict a label map plus the per-edge (i, j, action, decision) dump.

    The decision column reports the multicut outcome (merge/cut), which can
    disagree with thresholding the action on frustrated cycles.
    """
    sp = compute_superpixels(image, cfg.dataset) if superpixels is None \
        else np.asarray(superpixels)
    if sp.shape != image.shape:
        raise HarnessError(f"superpixel map shape {sp.shape} != image "
                           f"shape {image.shape}")
    static = handcrafted_node_features(sp)
    if encoder is not None:
        extra = encode_node_features(encoder, image, sp,
                                     cfg.features.boundary_sigma)
        static = np.concatenate([static, extra], axis=1)
    rag = build_rag(sp, static)
    if rag.topo.num_edges == 0:
        return np.zeros_like(sp, dtype=np.int32), []
    stack = None
    if cfg.features.mode == "joint":
        stack = encoder_input(image, sp, cfg.features.boundary_sigma)
    actions = act(rag, actor, "deterministic", pixel_stack=stack).actions
    part = solve_multicut(rag.topo, actions_to_costs(actions))
    labelmap = partition_to_labelmap(sp, part).astype(np.int32)
    rows = []
    for eid, (i, j) in enumerate(rag.topo.edges):
        decision = "merge" if part.labels[i] == part.labels[j] else "cut"
        rows.append((int(i), int(j), float(actions[eid]), decision))
    return labelmap, rows

"""Prior-based reward functions and the object/edge/subgraph reward decomposition.

Rewards never see gradient; they only score partitions. Three suites are
provided: circle priors (Hough evidence plus a count prior), ring priors
(radial background/foreground weighting plus box-template object scores),
and a supervised soft-Dice reward for sanity runs against known edge labels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .graph import GraphTopology
from .imaging.shape import BoxStats, circle_hough_value, fit_rotated_bbox
from .partitioning import Partition, background_cluster, partition_to_labelmap

_DICE_EPS = 1e-6


class RewardError(ValueError):
    """Invalid reward configuration or inconsistent reward inputs."""


@dataclass
class RewardConfig:
    """Constants of the reward priors.

    gamma is the circle-evidence threshold; objects scoring below it earn no
    local reward. k is the expected object count. theta sharpens every
    exponentially shaped reward. The ring-geometry block (ring_radius,
    center, max_center_dist and the three normalizers) positions the radial
    weighting; normalizers left at 0 are derived from the geometry.
    """

    gamma: float = 0.8
    k: int = 5
    theta: float = 4.0
    # circle evidence search range, in pixels
    r_min: float = 5.0
    r_max: float = 10.0
    # ring geometry: expected ring radius, image center, center-to-border max
    ring_radius: float = 0.0
    center: tuple[float, float] = (0.0, 0.0)
    max_center_dist: float = 0.0
    gamma_bg: float = 0.0
    eta: float = 0.0
    delta_fg: float = 0.0
    # box template: expected side lengths and per-feature tolerances
    box_long: float = 0.0
    box_short: float = 0.0
    tol_long: float = 0.0
    tol_short: float = 0.0
    tol_orient: float = 0.35
    # count-prior scaling; (1.0, 0.6) restores the unscaled variant
    global_scale: float = 0.5
    global_floor: float = 0.3

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            raise RewardError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.theta <= 0.0:
            raise RewardError(f"theta must be positive, got {self.theta}")
        if self.k < 1:
            raise RewardError(f"expected object count must be >= 1, got {self.k}")
        if self.r_min <= 0.0 or self.r_max < self.r_min:
            raise RewardError("circle radius range must satisfy 0 < r_min <= r_max")
        if self.ring_radius > 0.0:
            j, m = self.ring_radius, self.max_center_dist
            if m <= j:
                raise RewardError("max_center_dist must exceed ring_radius")
            # default normalizers scale with the geometry they divide
            if self.gamma_bg == 0.0:
                self.gamma_bg = 0.25 * j
            if self.eta == 0.0:
                self.eta = 0.25 * (m - j)
            if self.delta_fg == 0.0:
                self.delta_fg = 0.15 * j
            for name in ("gamma_bg", "eta", "delta_fg"):
                if getattr(self, name) <= 0.0:
                    raise RewardError(f"{name} must be positive")
        if self.box_long > 0.0:
            if self.box_short <= 0.0 or self.box_short > self.box_long:
                raise RewardError("box template needs 0 < box_short <= box_long")
            if self.tol_long <= 0.0 or self.tol_short <= 0.0 or self.tol_orient <= 0.0:
                raise RewardError("box tolerances must be positive")
        if self.global_scale <= 0.0 or self.global_floor < 0.0:
            raise RewardError("count-prior scale must be positive, floor non-negative")


@dataclass(frozen=True)
class RewardVector:
    """Per-subgraph rewards plus any globally computed scalar terms."""

    values: np.ndarray
    global_rewards: dict[str, float] = field(default_factory=dict)


def r_exp(r: float, theta: float) -> float:
    """Exponential shaping exp(r*theta)/exp(theta); maps [0,1] onto [e^-theta, 1]."""
    return math.exp((r - 1.0) * theta)


def gaussian_kernel(u: float) -> float:
    """Unnormalized Gaussian exp(-u^2/2); peak 1 at u = 0."""
    return math.exp(-0.5 * u * u)


def circles_object_reward(c: float, n: int, cfg: RewardConfig) -> float:
    """Score one predicted object by circle evidence c plus the count prior.

    The local term rescales c from [gamma, 1] onto the sigmoid's [-3, 3]
    sweet spot and caps at 0.4; evidence below gamma earns nothing. The
    global term rewards predicting at least k objects, decaying as the count
    overshoots.
    """
    if c >= cfg.gamma:
        z = ((c - cfg.gamma) / (1.0 - cfg.gamma) - 0.5) * 6.0
        r_local = 0.4 / (1.0 + math.exp(-z))
    else:
        r_local = 0.0
    if n >= cfg.k:
        r_global = cfg.global_scale * r_exp(cfg.k / n, cfg.theta)
    else:
        r_global = cfg.global_floor
    return min(max(r_local + r_global, 0.0), 1.0)


def circles_background_reward(n: int, cfg: RewardConfig) -> float:
    """Score the presumed background object: full marks once n reaches k."""
    if n <= cfg.k:
        return r_exp(n / cfg.k, cfg.theta)
    return 1.0


def ring_edge_reward(h: float, a: float, r_o1: float, r_o2: float,
                     cfg: RewardConfig) -> float:
    """Radially weighted edge reward for ring-of-cells scenes.

    h is the mean distance of the edge's two incident objects' centers of
    mass from the image center. Edges far from the expected ring radius are
    background: merging them (low a) pays off, weighted by how deep into the
    background they sit. Edges near the ring inherit the better of their two
    objects' box-template scores.
    """
    j, m = cfg.ring_radius, cfg.max_center_dist
    if h <= j:
        bg_weight = gaussian_kernel(h / cfg.gamma_bg)
    else:
        bg_weight = gaussian_kernel((m - h) / cfg.eta)
    r_bg = bg_weight * (1.0 - a)
    r_fg = gaussian_kernel((h - j) / cfg.delta_fg) * max(r_o1, r_o2)
    return min(max(r_fg + r_bg, 0.0), 1.0)


def _fold_angle(delta: float) -> float:
    """Reduce an undirected-axis angle difference to [0, pi/2]."""
    d = math.fmod(abs(delta), math.pi)
    return min(d, math.pi - d)


def box_object_reward(stats: BoxStats, cfg: RewardConfig) -> float:
    """Score one object by how well its oriented box matches the template.

    The orientation target is the radial direction at the object's center,
    so ring cells pointing at the image center score highest. Degenerate
    boxes (no extent) earn 0.
    """
    if stats.length <= 0.0 or stats.width <= 0.0:
        return 0.0
    hi = max(stats.length, stats.width)
    lo = min(stats.length, stats.width)
    radial = math.atan2(stats.center[0] - cfg.center[0],
                        stats.center[1] - cfg.center[1])
    similarity = (gaussian_kernel((hi - cfg.box_long) / cfg.tol_long)
                  * gaussian_kernel((lo - cfg.box_short) / cfg.tol_short)
                  * gaussian_kernel(_fold_angle(stats.orientation - radial)
                                    / cfg.tol_orient))
    return r_exp(similarity, cfg.theta)


def supervised_dice_reward(actions: np.ndarray, gt_edges: np.ndarray) -> float:
    """Soft Dice between predicted merge affinities and binary edge labels."""
    a = np.asarray(actions, dtype=np.float64)
    g = np.asarray(gt_edges, dtype=np.float64)
    if a.shape != g.shape:
        raise RewardError(
            f"action/label length mismatch: {a.shape} vs {g.shape}")
    return float((2.0 * (a * g).sum() + _DICE_EPS)
                 / (a.sum() + g.sum() + _DICE_EPS))


def decompose_rewards(object_rewards: Mapping[int, float], part: Partition,
                      topo: GraphTopology,
                      subgraphs: Sequence[np.ndarray]) -> RewardVector:
    """Object rewards -> superpixel -> edge (max) -> subgraph (mean)."""
    node_reward = np.empty(topo.num_nodes, dtype=np.float64)
    for i in range(topo.num_nodes):
        lab = int(part.labels[i])
        if lab not in object_rewards:
            raise RewardError(f"superpixel {i} maps to cluster {lab} "
                              "which has no object reward")
        node_reward[i] = object_rewards[lab]
    edge_reward = np.maximum(node_reward[topo.edges[:, 0]],
                             node_reward[topo.edges[:, 1]])
    values = np.array([float(edge_reward[sg].mean()) for sg in subgraphs],
                      dtype=np.float64)
    return RewardVector(values)


def _cluster_pixel_stats(superpixels: np.ndarray,
                         part: Partition) -> tuple[np.ndarray, list[np.ndarray]]:
    """Pixel label map plus per-cluster boolean masks."""
    labelmap = partition_to_labelmap(superpixels, part)
    masks = [labelmap == lab for lab in range(part.num_clusters)]
    return labelmap, masks


def circles_suite_rewards(superpixels: np.ndarray, part: Partition,
                          topo: GraphTopology,
                          subgraphs: Sequence[np.ndarray],
                          cfg: RewardConfig) -> RewardVector:
    """Circle-prior rewards for a full image partition.

    The largest cluster is treated as background and scored by the count
    prior alone; every other cluster is scored by its circle evidence.
    The predicted count n excludes the background cluster.
    """
    _, masks = _cluster_pixel_stats(superpixels, part)
    node_masses = np.bincount(np.asarray(superpixels).ravel(),
                              minlength=len(part.labels))
    bg = background_cluster(part, node_masses)
    n = max(part.num_clusters - 1, 1)
    rewards: dict[int, float] = {}
    for lab in range(part.num_clusters):
        if lab == bg:
            rewards[lab] = circles_background_reward(n, cfg)
        else:
            c = circle_hough_value(masks[lab], cfg.r_min, cfg.r_max)
            rewards[lab] = circles_object_reward(c, n, cfg)
    vec = decompose_rewards(rewards, part, topo, subgraphs)
    vec.global_rewards["background"] = rewards[bg]
    vec.global_rewards["count"] = float(n)
    return vec


def ring_suite_rewards(superpixels: np.ndarray, part: Partition,
                       topo: GraphTopology, subgraphs: Sequence[np.ndarray],
                       actions: np.ndarray,
                       cfg: RewardConfig) -> RewardVector:
    """Ring-prior rewards: per-edge radial weighting of box-template scores."""
    if cfg.ring_radius <= 0.0:
        raise RewardError("ring suite needs ring geometry in the config")
    _, masks = _cluster_pixel_stats(superpixels, part)
    box_scores = []
    centers = []
    for mask in masks:
        stats = fit_rotated_bbox(mask)
        box_scores.append(box_object_reward(stats, cfg))
        centers.append(stats.center)
    dists = [math.hypot(cy - cfg.center[0], cx - cfg.center[1])
             for cy, cx in centers]

    cluster_of = part.labels
    edge_reward = np.empty(len(topo.edges), dtype=np.float64)
    for eid, (i, j) in enumerate(topo.edges):
        c1, c2 = int(cluster_of[i]), int(cluster_of[j])
        h = 0.5 * (dists[c1] + dists[c2])
        edge_reward[eid] = ring_edge_reward(h, float(actions[eid]),
                                            box_scores[c1], box_scores[c2],
                                            cfg)
    values = np.array([float(edge_reward[sg].mean()) for sg in subgraphs],
                      dtype=np.float64)
    return RewardVector(values)


def dice_suite_rewards(actions: np.ndarray, gt_edges: np.ndarray,
                       subgraphs: Sequence[np.ndarray]) -> RewardVector:
    """Supervised per-subgraph soft Dice against known edge labels."""
    a = np.asarray(actions, dtype=np.float64)
    g = np.asarray(gt_edges, dtype=np.float64)
    if a.shape != g.shape:
        raise RewardError(
            f"action/label length mismatch: {a.shape} vs {g.shape}")
    values = np.array(
        [supervised_dice_reward(a[sg], g[sg]) for sg in subgraphs],
        dtype=np.float64)
    return RewardVector(values)


def reward_surface(cfg: RewardConfig, cht_values: np.ndarray,
                   counts: np.ndarray) -> np.ndarray:
    """Object reward over a (CHT value x predicted count) grid, for plotting."""
    grid = np.empty((len(cht_values), len(counts)), dtype=np.float64)
    for i, c in enumerate(cht_values):
        for j, n in enumerate(counts):
            grid[i, j] = circles_object_reward(float(c), int(n), cfg)
    return grid

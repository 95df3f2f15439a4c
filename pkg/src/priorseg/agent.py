"""Stateless soft actor-critic over region graph edges.

Episodes have length one: the actor proposes a merge affinity per edge for
a whole image, the environment partitions and scores the proposal, and the
critic regresses those immediate rewards per subgraph. No bootstrapping,
no discount, no target networks.

The actor emits a Normal(mean, exp(logvar)) per edge; actions are sigmoid-
squashed samples, so the log-density carries the change-of-variables term
-log(a(1-a)). The critic convolves node features together with the actions
and scores each fixed-size subgraph with a size-specific MLP head over its
edge rows in canonical order.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, replace
from typing import Callable, Literal, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import ConvEncoder
from .gnn import MLP, actor_conv, critic_conv, edge_readout, make_mlp
from .graph import GraphTopology
from .partitioning import Partition, actions_to_costs, solve_multicut
from .rag import Rag
from .rewards import RewardVector

LOGVAR_MIN = -8.0
LOGVAR_MAX = 2.0
# sigmoid(36) is the largest float64 value strictly below 1, so clamping the
# pre-squash sample here keeps every action strictly inside (0, 1)
_PRESQUASH_CLAMP = 36.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

Subgraphs = Mapping[int, Sequence[np.ndarray]]
RewardFn = Callable[[np.ndarray, Partition, Sequence[np.ndarray]],
                    RewardVector]


class AgentError(RuntimeError):
    """Contract violation in the actor-critic stack."""


@dataclass(frozen=True)
class ActionSet:
    """One policy evaluation: per-edge distribution, sample, and density."""

    mean: np.ndarray
    logvar: np.ndarray
    presquash: np.ndarray
    actions: np.ndarray
    log_density: np.ndarray


@dataclass(frozen=True)
class ReplayEntry:
    """Actions and their scored outcome for one episode on one image.

    State features are recomputed when the entry is sampled, because the
    joint feature extractor trains with the agent and stale features would
    poison the buffer.
    """

    image_id: int
    actions: np.ndarray
    rewards: dict[int, np.ndarray]


@dataclass(frozen=True)
class AgentImage:
    """Cached per-image environment state the agent trains against."""

    image_id: int
    rag: Rag
    subgraphs: dict[int, list[np.ndarray]]
    pixel_stack: np.ndarray | None = None


class ReplayBuffer:
    """FIFO ring of ReplayEntry; sampling is uniform with replacement."""

    def __init__(self, capacity: int = 512) -> None:
        if capacity < 1:
            raise AgentError(f"buffer capacity must be positive, got {capacity}")
        self._entries: deque[ReplayEntry] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._entries)

    def push(self, entry: ReplayEntry) -> None:
        self._entries.append(entry)

    def sample(self, rng: np.random.Generator, batch: int) -> list[ReplayEntry]:
        if not self._entries:
            raise AgentError("replay buffer is empty")
        idx = rng.integers(0, len(self._entries), size=batch)
        return [self._entries[int(i)] for i in idx]


@dataclass(frozen=True)
class TemperatureState:
    """Log-parameterized entropy temperature with its Adam moments."""

    log_alpha: float = math.log(0.1)
    target_entropy: float = -1.0  # per edge
    adam_m: float = 0.0
    adam_v: float = 0.0
    step: int = 0

    @property
    def alpha(self) -> float:
        return math.exp(self.log_alpha)

    def to_arrays(self, prefix: str = "temperature.") -> dict[str, np.ndarray]:
        return {f"{prefix}state": np.array([
            self.log_alpha, self.target_entropy,
            self.adam_m, self.adam_v, float(self.step)])}

    @staticmethod
    def from_arrays(arrays: Mapping[str, np.ndarray],
                    prefix: str = "temperature.") -> "TemperatureState":
        raw = arrays[f"{prefix}state"]
        return TemperatureState(float(raw[0]), float(raw[1]),
                                float(raw[2]), float(raw[3]), int(raw[4]))


class ActorNetwork:
    """Graph-convolutional policy: per-edge (mean, logvar) head.

    With an encoder the network owns a jointly trained pixel embedder whose
    outputs are mean-pooled per superpixel and concatenated with the static
    node features; without one it consumes static features alone.
    """

    def __init__(self, rng: np.random.Generator, static_dim: int,
                 image_channels: int = 0, width: int = 32,
                 conv_layers: int = 3, encoder_hidden: int = 16,
                 encoder_dim: int = 8) -> None:
        self.pset = ad.ParameterSet()
        self.static_dim = static_dim
        self.encoder: ConvEncoder | None = None
        if image_channels > 0:
            self.encoder = ConvEncoder(self.pset, "enc", rng, image_channels,
                                       hidden=encoder_hidden,
                                       out_dim=encoder_dim)
        in_dim = static_dim + (encoder_dim if self.encoder else 0)
        if in_dim == 0:
            raise AgentError("actor has no feature source")
        self.convs: list[tuple[MLP, MLP]] = []
        d = in_dim
        for k in range(conv_layers):
            phi = make_mlp(self.pset, f"conv{k}.phi", [2 * d, width, width], rng)
            gamma = make_mlp(self.pset, f"conv{k}.gamma",
                             [d + width, width, width], rng)
            self.convs.append((phi, gamma))
            d = width
        self.edge_head = make_mlp(self.pset, "edge", [2 * d, width, 2], rng)

    def node_features(self, rag: Rag,
                      pixel_stack: np.ndarray | None) -> Tensor:
        return _compose_features(self, rag, pixel_stack)

    def edge_params(self, rag: Rag,
                    pixel_stack: np.ndarray | None = None) -> Tensor:
        """Per-edge (mean, raw logvar), shape (E, 2)."""
        feats = self.node_features(rag, pixel_stack)
        for phi, gamma in self.convs:
            feats = actor_conv(rag.topo, feats, phi, gamma)
        return edge_readout(rag.topo, feats, self.edge_head)


class CriticNetwork:
    """Graph-convolutional action-value network with per-size MLP heads."""

    def __init__(self, rng: np.random.Generator, static_dim: int,
                 subgraph_sizes: Sequence[int], image_channels: int = 0,
                 width: int = 32, conv_layers: int = 3,
                 encoder_hidden: int = 16, encoder_dim: int = 8) -> None:
        self.pset = ad.ParameterSet()
        self.static_dim = static_dim
        self.width = width
        self.encoder: ConvEncoder | None = None
        if image_channels > 0:
            self.encoder = ConvEncoder(self.pset, "enc", rng, image_channels,
                                       hidden=encoder_hidden,
                                       out_dim=encoder_dim)
        in_dim = static_dim + (encoder_dim if self.encoder else 0)
        if in_dim == 0:
            raise AgentError("critic has no feature source")
        self.convs: list[tuple[MLP, MLP]] = []
        d = in_dim
        for k in range(conv_layers):
            phi = make_mlp(self.pset, f"conv{k}.phi",
                           [2 * d + 1, width, width], rng)
            gamma = make_mlp(self.pset, f"conv{k}.gamma",
                             [d + width, width, width], rng)
            self.convs.append((phi, gamma))
            d = width
        self.edge_head = make_mlp(self.pset, "edge", [2 * d, width, width], rng)
        self.q_heads: dict[int, MLP] = {}
        for size in sorted(set(int(s) for s in subgraph_sizes)):
            self.q_heads[size] = make_mlp(self.pset, f"q{size}",
                                          [size * width, width, 1], rng)

    def node_features(self, rag: Rag,
                      pixel_stack: np.ndarray | None) -> Tensor:
        return _compose_features(self, rag, pixel_stack)

    def edge_features(self, rag: Rag, actions: Tensor,
                      pixel_stack: np.ndarray | None = None,
                      node_feats: Tensor | None = None) -> Tensor:
        """Per-edge feature rows; node_feats short-circuits the feature
        composition so batched callers can share one encoder evaluation."""
        if actions.data.ndim == 1:
            actions = ad.reshape(actions, (actions.shape[0], 1))
        if actions.shape[0] != len(rag.topo.edges):
            raise AgentError(f"action count {actions.shape[0]} != edge count "
                             f"{len(rag.topo.edges)}")
        feats = (self.node_features(rag, pixel_stack)
                 if node_feats is None else node_feats)
        for phi, gamma in self.convs:
            feats = critic_conv(rag.topo, feats, actions, phi, gamma)
        return edge_readout(rag.topo, feats, self.edge_head)


def _compose_features(net: ActorNetwork | CriticNetwork, rag: Rag,
                      pixel_stack: np.ndarray | None) -> Tensor:
    parts: list[Tensor] = []
    if net.encoder is not None:
        if pixel_stack is None:
            raise AgentError("network has a pixel encoder but no pixel stack "
                             "was provided")
        emb = net.encoder(pixel_stack)
        flat = rag.superpixels.ravel()
        if emb.shape[0] != flat.size:
            raise AgentError(f"pixel stack size {emb.shape[0]} != superpixel "
                             f"map size {flat.size}")
        pooled = ad.segment_sum(emb, flat, rag.topo.num_nodes)
        parts.append(ad.mul(pooled, 1.0 / rag.masses[:, None]))
    static = rag.node_features
    got = 0 if static is None else static.shape[1]
    if got != net.static_dim:
        raise AgentError(f"static feature dim {got} != expected "
                         f"{net.static_dim}")
    if static is not None:
        parts.append(ad.as_tensor(static))
    return parts[0] if len(parts) == 1 else ad.concat(parts, axis=1)


def squashed_log_density(presquash: np.ndarray, mean: np.ndarray,
                         logvar: np.ndarray) -> np.ndarray:
    """Log-density of a = sigmoid(presquash) under Normal(mean, exp(logvar)).

    Normal log-density of the pre-squash value minus log(a(1-a)), written
    with softplus so the tails stay finite.
    """
    z = (presquash - mean) * np.exp(-0.5 * logvar)
    normal = -0.5 * z * z - 0.5 * logvar - _HALF_LOG_2PI
    # -log(a(1-a)) = softplus(x) + softplus(-x) for a = sigmoid(x)
    squash = np.logaddexp(0.0, presquash) + np.logaddexp(0.0, -presquash)
    return normal + squash


def act(rag: Rag, actor: ActorNetwork,
        mode: Literal["sample", "deterministic"] = "sample",
        rng: np.random.Generator | None = None,
        pixel_stack: np.ndarray | None = None) -> ActionSet:
    """Evaluate the policy on every edge of one image's graph."""
    params = actor.edge_params(rag, pixel_stack).data
    if not np.isfinite(params).all():
        raise AgentError("actor produced non-finite edge parameters")
    mean = params[:, 0].copy()
    logvar = np.clip(params[:, 1], LOGVAR_MIN, LOGVAR_MAX)
    if mode == "deterministic":
        pre = mean.copy()
    elif mode == "sample":
        if rng is None:
            raise AgentError("sampling requires an rng")
        pre = mean + np.exp(0.5 * logvar) * rng.standard_normal(mean.shape)
    else:
        raise AgentError(f"unknown action mode {mode!r}")
    pre = np.clip(pre, -_PRESQUASH_CLAMP, _PRESQUASH_CLAMP)
    actions = 1.0 / (1.0 + np.exp(-pre))
    return ActionSet(mean, logvar, pre, actions,
                     squashed_log_density(pre, mean, logvar))


def _canonical_edge_order(topo: GraphTopology, eids: np.ndarray) -> np.ndarray:
    """Subgraph edge ids sorted by (min endpoint, max endpoint)."""
    e = topo.edges[eids]
    return np.asarray(eids)[np.lexsort((e[:, 1], e[:, 0]))]


def critic_q(rag: Rag, actions: np.ndarray | Tensor, critic: CriticNetwork,
             subgraphs: Subgraphs, pixel_stack: np.ndarray | None = None,
             node_feats: Tensor | None = None) -> dict[int, Tensor]:
    """Q value per subgraph, grouped by subgraph size.

    Each subgraph's edge-feature rows are concatenated in canonical order
    and scored by the head for its size.
    """
    for size in subgraphs:
        if size not in critic.q_heads:
            raise AgentError(f"no critic head for subgraph size {size}")
    acts = actions if isinstance(actions, Tensor) else ad.as_tensor(actions)
    ef = critic.edge_features(rag, acts, pixel_stack, node_feats)
    out: dict[int, Tensor] = {}
    for size in sorted(subgraphs):
        sgs = subgraphs[size]
        if not sgs:
            continue
        flat = np.concatenate(
            [_canonical_edge_order(rag.topo, sg) for sg in sgs])
        rows = ad.gather_rows(ef, flat)
        stacked = ad.reshape(rows, (len(sgs), size * critic.width))
        out[size] = ad.reshape(critic.q_heads[size](stacked), (len(sgs),))
    return out


def edge_coverage(num_edges: int, subgraphs: Subgraphs) -> np.ndarray:
    """How many subgraphs (across all sizes) contain each edge."""
    cov = np.zeros(num_edges, dtype=np.float64)
    for sgs in subgraphs.values():
        for sg in sgs:
            cov[sg] += 1.0
    return cov


def actor_loss(log_densities: Tensor, q_by_size: Mapping[int, Tensor],
               subgraphs: Subgraphs, alpha: float,
               normalize_coverage: bool = False) -> Tensor:
    """Mean over subgraphs of alpha * sum of edge log-densities minus Q.

    Edges shared by several subgraphs are counted once per subgraph, as the
    objective is written; normalize_coverage instead divides each edge's
    log-density by the number of subgraphs covering it.
    """
    logd = log_densities
    if logd.data.ndim == 1:
        logd = ad.reshape(logd, (logd.shape[0], 1))
    if normalize_coverage:
        cov = np.maximum(edge_coverage(logd.shape[0], subgraphs), 1.0)
        logd = ad.mul(logd, (1.0 / cov)[:, None])
    terms: list[Tensor] = []
    for size in sorted(q_by_size):
        q = q_by_size[size]
        sgs = subgraphs[size]
        if len(sgs) != q.shape[0]:
            raise AgentError(f"size {size}: {len(sgs)} subgraphs but "
                             f"{q.shape[0]} Q values")
        flat = np.concatenate([np.asarray(sg) for sg in sgs])
        gathered = ad.gather_rows(logd, flat)
        per_sg = ad.reduce_sum(ad.reshape(gathered, (len(sgs), size)), axis=1)
        terms.append(ad.sub(ad.mul(per_sg, float(alpha)), q))
    if not terms:
        raise AgentError("actor loss needs at least one subgraph")
    pooled = terms[0] if len(terms) == 1 else ad.concat(terms, axis=0)
    return ad.reduce_mean(pooled)


def critic_loss(q_by_size: Mapping[int, Tensor],
                rewards: Mapping[int, np.ndarray]) -> Tensor:
    """Half squared error between Q and reward, averaged over subgraphs."""
    terms: list[Tensor] = []
    for size in sorted(q_by_size):
        if size not in rewards:
            raise AgentError(f"no rewards stored for subgraph size {size}")
        q = q_by_size[size]
        r = np.asarray(rewards[size], dtype=np.float64)
        if q.shape[0] != r.shape[0]:
            raise AgentError(f"size {size}: {q.shape[0]} Q values but "
                             f"{r.shape[0]} rewards")
        terms.append(ad.mul(ad.square(ad.sub(q, r)), 0.5))
    if not terms:
        raise AgentError("critic loss needs at least one subgraph")
    pooled = terms[0] if len(terms) == 1 else ad.concat(terms, axis=0)
    return ad.reduce_mean(pooled)


def temperature_update(mean_log_density: float, state: TemperatureState,
                       lr: float = 1e-3) -> tuple[TemperatureState, float]:
    """One Adam step on J(alpha) = -alpha * (mean log-density + target).

    Descending J raises alpha when the policy is more deterministic than
    the target entropy and lowers it when more random; the log
    parameterization keeps alpha positive.
    """
    alpha = state.alpha
    loss = -alpha * (mean_log_density + state.target_entropy)
    grad = loss  # dJ/d(log alpha) = J itself under the log parameterization
    b1, b2, eps = 0.9, 0.999, 1e-8
    t = state.step + 1
    m = b1 * state.adam_m + (1.0 - b1) * grad
    v = b2 * state.adam_v + (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    log_alpha = state.log_alpha - lr * m_hat / (math.sqrt(v_hat) + eps)
    return replace(state, log_alpha=log_alpha, adam_m=m, adam_v=v,
                   step=t), loss


def _sample_differentiable(params: Tensor,
                           noise: np.ndarray) -> tuple[Tensor, Tensor]:
    """Reparameterized actions and per-edge log-densities with gradients.

    params is the actor's (E, 2) edge-parameter tensor and noise a fixed
    (E, 1) standard-normal draw; gradients flow only through params.
    """
    mean = ad.slice_cols(params, 0, 1)
    logvar = ad.clip(ad.slice_cols(params, 1, 2), LOGVAR_MIN, LOGVAR_MAX)
    std = ad.exp(ad.mul(logvar, 0.5))
    pre = ad.clip(ad.add(mean, ad.mul(std, noise)),
                  -_PRESQUASH_CLAMP, _PRESQUASH_CLAMP)
    actions = ad.sigmoid(pre)
    # (pre - mean)/std is identically the (constant) noise, so the Normal
    # term reduces to -0.5 noise^2 - 0.5 logvar - log sqrt(2 pi)
    squash = ad.add(ad.softplus(pre), ad.softplus(ad.neg(pre)))
    logd = ad.sub(squash, ad.add(ad.mul(logvar, 0.5),
                                 0.5 * noise * noise + _HALF_LOG_2PI))
    return actions, logd


def explore_episode(img: AgentImage, actor: ActorNetwork, reward_fn: RewardFn,
                    buffer: ReplayBuffer, rng: np.random.Generator,
                    mode: Literal["sample", "deterministic"] = "sample",
                    ) -> tuple[ReplayEntry, Partition]:
    """One single-step episode: act, partition, score, store."""
    aset = act(img.rag, actor, mode, rng, img.pixel_stack)
    part = solve_multicut(img.rag.topo, actions_to_costs(aset.actions))
    rewards = {size: reward_fn(aset.actions, part, sgs).values
               for size, sgs in sorted(img.subgraphs.items())}
    entry = ReplayEntry(img.image_id, aset.actions, rewards)
    buffer.push(entry)
    return entry, part


def train_step(buffer: ReplayBuffer, images: Mapping[int, AgentImage],
               actor: ActorNetwork, critic: CriticNetwork,
               actor_opt: ad.Adam, critic_opt: ad.Adam,
               temp: TemperatureState, rng: np.random.Generator,
               batch_size: int = 4, temp_lr: float = 1e-3,
               normalize_coverage: bool = False,
               ) -> tuple[TemperatureState, dict]:
    """One off-policy update: critic, then actor, then temperature."""
    entries = buffer.sample(rng, batch_size)
    inv = 1.0 / len(entries)

    actor.pset.zero_grad()
    critic.pset.zero_grad()
    # node features are action-independent, so batch entries drawn from the
    # same image share a single encoder evaluation per tape
    with ad.Tape():
        cfeats: dict[int, Tensor] = {}
        closs: Tensor | None = None
        for e in entries:
            img = images[e.image_id]
            if e.image_id not in cfeats:
                cfeats[e.image_id] = critic.node_features(img.rag,
                                                          img.pixel_stack)
            q = critic_q(img.rag, e.actions, critic, img.subgraphs,
                         node_feats=cfeats[e.image_id])
            term = critic_loss(q, e.rewards)
            closs = term if closs is None else ad.add(closs, term)
        assert closs is not None
        closs = ad.mul(closs, inv)
    critic_value = float(closs.data)
    if not math.isfinite(critic_value):
        err = AgentError(
            f"non-finite critic loss {critic_value} on images "
            f"{[e.image_id for e in entries]}")
        err.batch = entries  # callers dump these for diagnostics
        raise err
    ad.backpropagate(closs)
    critic_opt.step()
    critic.pset.zero_grad()

    # the actor's edge parameters are entry-independent (only the noise
    # differs), so they too are computed once per distinct image
    with ad.Tape():
        params: dict[int, Tensor] = {}
        cfeats = {}
        aloss: Tensor | None = None
        logd_sum, edge_count = 0.0, 0
        for e in entries:
            img = images[e.image_id]
            if e.image_id not in params:
                params[e.image_id] = actor.edge_params(img.rag,
                                                       img.pixel_stack)
                cfeats[e.image_id] = critic.node_features(img.rag,
                                                          img.pixel_stack)
            noise = rng.standard_normal((len(img.rag.topo.edges), 1))
            actions, logd = _sample_differentiable(params[e.image_id], noise)
            q = critic_q(img.rag, actions, critic, img.subgraphs,
                         node_feats=cfeats[e.image_id])
            term = actor_loss(logd, q, img.subgraphs, temp.alpha,
                              normalize_coverage)
            aloss = term if aloss is None else ad.add(aloss, term)
            logd_sum += float(logd.data.sum())
            edge_count += logd.shape[0]
        assert aloss is not None
        aloss = ad.mul(aloss, inv)
    actor_value = float(aloss.data)
    if not math.isfinite(actor_value):
        err = AgentError(
            f"non-finite actor loss {actor_value} on images "
            f"{[e.image_id for e in entries]}")
        err.batch = entries
        raise err
    ad.backpropagate(aloss)
    actor_opt.step()
    actor.pset.zero_grad()
    critic.pset.zero_grad()  # actor backprop also touched critic grads

    mean_logd = logd_sum / max(edge_count, 1)
    temp, temp_value = temperature_update(mean_logd, temp, lr=temp_lr)

    sizes = sorted({s for e in entries for s in e.rewards})
    mean_reward = {s: float(np.mean([e.rewards[s].mean() for e in entries
                                     if s in e.rewards])) for s in sizes}
    return temp, {
        "critic_loss": critic_value,
        "actor_loss": actor_value,
        "temperature_loss": temp_value,
        "alpha": temp.alpha,
        "mean_log_density": mean_logd,
        "mean_reward": mean_reward,
        "image_ids": [e.image_id for e in entries],
    }

"""The hybrid graph: edge embeddings, one-shot adapters, message passing, readout.

Nodes are (domain, scale) pairs holding a [B,C,H,W] feature map.  Counting
nodes live in domain 1 and localization nodes in domain 2.  Cross-scale edges
join every ordered pair of distinct scales inside one domain; cross-domain
edges join the two nodes that share a scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from .dfl import COUNTING, DOMAINS, LOCALIZATION
from .ops import (
    ConvGruParams,
    ConvParams,
    concat_channels,
    conv2d,
    conv_gru_step,
    dynamic_conv,
    global_avg_pool,
    init_conv,
    init_conv_gru,
    linear,
    relu,
    sigmoid,
)
from .tensor import Tensor, TensorError

CROSS_SCALE = "cross-scale"
CROSS_DOMAIN = "cross-domain"

DIRECTIONS = ((COUNTING, LOCALIZATION), (LOCALIZATION, COUNTING))


class GraphError(ValueError):
    """Nodes or edges that violate the hybrid graph's structure."""


@dataclass
class HybridGraphConfig:
    """``n_scales`` is N, ``iterations`` is K, ``channels`` is C."""

    n_scales: int = 3
    iterations: int = 3
    channels: int = 8
    enable_cross_domain: bool = True
    enable_adapter: bool = True
    lam: float = 0.001
    adapter_hidden: int = 16

    def __post_init__(self):
        if self.n_scales < 1:
            raise ValueError("n_scales must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.channels < 1 or self.adapter_hidden < 1:
            raise ValueError("channels and adapter_hidden must be positive")

    @property
    def uses_adapters(self) -> bool:
        return self.enable_cross_domain and self.enable_adapter


@dataclass
class NodeState:
    domain: int
    scale: int
    h: Tensor

    @property
    def key(self) -> tuple[int, int]:
        return (self.domain, self.scale)


@dataclass
class EdgeEmbedding:
    kind: str
    source: tuple[int, int]
    target: tuple[int, int]
    e: Tensor


@dataclass
class AdapterParams:
    """Spatial mean -> Linear -> ReLU -> Linear emitting a C x C channel mixer."""

    w1: Tensor  # [C, hidden]
    b1: Tensor  # [hidden]
    w2: Tensor  # [hidden, C*C]
    b2: Tensor  # [C*C]

    def named_parameters(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        for name in ("w1", "b1", "w2", "b2"):
            yield f"{prefix}.{name}", getattr(self, name)


def init_adapter(rng: np.random.Generator, channels: int, hidden: int) -> AdapterParams:
    # starts near the identity mixer so early cross-domain messages are not noise
    return AdapterParams(
        w1=Tensor(rng.normal(0.0, np.sqrt(2.0 / channels), (channels, hidden)), grad_tracked=True),
        b1=Tensor(np.zeros(hidden), grad_tracked=True),
        w2=Tensor(rng.normal(0.0, 0.1 * np.sqrt(1.0 / hidden), (hidden, channels * channels)), grad_tracked=True),
        b2=Tensor(np.eye(channels).reshape(-1), grad_tracked=True),
    )


def _tag(direction: tuple[int, int]) -> str:
    return f"{direction[0]}to{direction[1]}"


@dataclass
class GraphWeights:
    cs_edge: dict[int, ConvParams]
    cs_gate: dict[int, ConvParams]
    gru2: dict[int, ConvGruParams]
    heads: dict[int, ConvParams]
    cd_edge: dict[tuple[int, int], ConvParams] = field(default_factory=dict)
    cd_gate: dict[tuple[int, int], ConvParams] = field(default_factory=dict)
    phi: dict[tuple[int, int], AdapterParams] = field(default_factory=dict)
    eta: dict[tuple[int, int], AdapterParams] = field(default_factory=dict)
    gru1: dict[int, ConvGruParams] = field(default_factory=dict)

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for d in DOMAINS:
            yield from self.cs_edge[d].named_parameters(f"graph.cs_edge.{d}")
            yield from self.cs_gate[d].named_parameters(f"graph.cs_gate.{d}")
        for direction in DIRECTIONS:
            for group in ("cd_edge", "cd_gate", "phi", "eta"):
                table = getattr(self, group)
                if direction in table:
                    yield from table[direction].named_parameters(f"graph.{group}.{_tag(direction)}")
        for d in DOMAINS:
            if d in self.gru1:
                yield from self.gru1[d].named_parameters(f"graph.gru1.{d}")
            yield from self.gru2[d].named_parameters(f"graph.gru2.{d}")
        for d in DOMAINS:
            yield from self.heads[d].named_parameters(f"graph.head.{d}")


def init_graph(rng: np.random.Generator, config: HybridGraphConfig) -> GraphWeights:
    C, N = config.channels, config.n_scales
    w = GraphWeights(
        cs_edge={d: init_conv(rng, C, C, 3) for d in DOMAINS},
        cs_gate={d: init_conv(rng, C, 1, 1) for d in DOMAINS},
        gru2={d: init_conv_gru(rng, C) for d in DOMAINS},
        heads={d: init_conv(rng, N * C, 1, 1, gain=0.5) for d in DOMAINS},
    )
    if config.enable_cross_domain:
        for direction in DIRECTIONS:
            w.cd_edge[direction] = init_conv(rng, C, C, 3)
            w.cd_gate[direction] = init_conv(rng, C, 1, 1)
            if config.enable_adapter:
                w.phi[direction] = init_adapter(rng, C, config.adapter_hidden)
                w.eta[direction] = init_adapter(rng, C, config.adapter_hidden)
        for d in DOMAINS:
            w.gru1[d] = init_conv_gru(rng, C)
    return w


# ---------------------------------------------------------------------------
# Edges
# ---------------------------------------------------------------------------


def cross_scale_edge_embed(h_i: NodeState, h_j: NodeState, conv: ConvParams) -> EdgeEmbedding:
    """e_ij = Conv(h_i - h_j) for two scales of one domain."""
    if h_i.domain != h_j.domain:
        raise GraphError("cross-scale edges join nodes of the same domain")
    if h_i.scale == h_j.scale:
        raise GraphError("cross-scale edges join different scales")
    return EdgeEmbedding(CROSS_SCALE, h_i.key, h_j.key, conv2d(h_i.h - h_j.h, conv))


def adapter_predict(h_source: Tensor, net: AdapterParams) -> Tensor:
    """Predict a per-sample [B,C,C,1,1] dynamic kernel from one exemplar."""
    B, C = h_source.shape[:2]
    hidden = relu(linear(global_avg_pool(h_source), net.w1, net.b1))
    return linear(hidden, net.w2, net.b2).reshape(B, C, C, 1, 1)


def cross_domain_edge_embed(
    src: NodeState,
    tgt: NodeState,
    conv: ConvParams,
    phi: Optional[AdapterParams],
) -> EdgeEmbedding:
    """Adapt the target through a kernel predicted from the source, then Conv(h' - h_tgt).

    ``phi=None`` is the adapter-free ablation: h' is the raw source state.
    """
    if src.domain == tgt.domain:
        raise GraphError("cross-domain edges join nodes of different domains")
    if src.scale != tgt.scale:
        raise GraphError("cross-domain edges join nodes of the same scale")
    adapted = src.h if phi is None else dynamic_conv(tgt.h, adapter_predict(src.h, phi))
    return EdgeEmbedding(CROSS_DOMAIN, src.key, tgt.key, conv2d(adapted - tgt.h, conv))


# ---------------------------------------------------------------------------
# Messages
# ---------------------------------------------------------------------------


def link_weight(edge: EdgeEmbedding, gate: ConvParams) -> Tensor:
    """Single-channel (0, 1) map from a 1x1 projection of the edge embedding."""
    if gate.out_channels != 1:
        raise TensorError("link-weight projection must emit one channel")
    return sigmoid(conv2d(edge.e, gate))


def cross_scale_message(h_i: NodeState, edge: EdgeEmbedding, gate: ConvParams) -> Tensor:
    if edge.kind != CROSS_SCALE:
        raise GraphError(f"expected a cross-scale edge, got {edge.kind}")
    if edge.source != h_i.key:
        raise GraphError(f"edge leaves {edge.source}, not {h_i.key}")
    return link_weight(edge, gate) * h_i.h


def cross_domain_message(
    src: NodeState,
    tgt: NodeState,
    edge: EdgeEmbedding,
    gate: ConvParams,
    eta: Optional[AdapterParams],
) -> Tensor:
    """psi = E_eta(w * h_src); message = psi applied to h_tgt.

    ``eta=None`` passes the gated source state directly.
    """
    if edge.kind != CROSS_DOMAIN:
        raise GraphError(f"expected a cross-domain edge, got {edge.kind}")
    if edge.source != src.key or edge.target != tgt.key:
        raise GraphError(f"edge {edge.source}->{edge.target} does not join {src.key}->{tgt.key}")
    gated = link_weight(edge, gate) * src.h
    if eta is None:
        return gated
    return dynamic_conv(tgt.h, adapter_predict(gated, eta))


# ---------------------------------------------------------------------------
# Update and propagation
# ---------------------------------------------------------------------------


def node_update_two_stage(
    node: NodeState,
    cross_domain_msg: Optional[Tensor],
    cross_scale_msg: Optional[Tensor],
    gru1: Optional[ConvGruParams],
    gru2: Optional[ConvGruParams],
) -> NodeState:
    """GRU on the cross-domain message, then GRU on the cross-scale message.

    A ``None`` message skips that stage (the node has no such neighbours).
    """
    h = node.h
    if cross_domain_msg is not None:
        if cross_domain_msg.shape != h.shape:
            raise TensorError("cross-domain message shape differs from node state")
        h = conv_gru_step(h, cross_domain_msg, gru1)
    if cross_scale_msg is not None:
        if cross_scale_msg.shape != h.shape:
            raise TensorError("cross-scale message shape differs from node state")
        h = conv_gru_step(h, cross_scale_msg, gru2)
    return NodeState(node.domain, node.scale, h)


def _index_states(states: Sequence[NodeState], n_scales: int) -> dict[tuple[int, int], NodeState]:
    expected = {(d, i) for d in DOMAINS for i in range(1, n_scales + 1)}
    if len(states) != 2 * n_scales:
        raise GraphError(f"expected {2 * n_scales} node states, got {len(states)}")
    table = {s.key: s for s in states}
    if set(table) != expected:
        raise GraphError(f"node states must cover every (domain, scale) once, got {sorted(table)}")
    return table


def cross_domain_stage(
    nodes: dict[tuple[int, int], NodeState],
    config: HybridGraphConfig,
    weights: GraphWeights,
) -> dict[tuple[int, int], NodeState]:
    """Every node reads its same-scale partner's prior state and updates once."""
    out = {}
    for m, n in DIRECTIONS:
        for i in range(1, config.n_scales + 1):
            src, tgt = nodes[(m, i)], nodes[(n, i)]
            direction = (m, n)
            edge = cross_domain_edge_embed(src, tgt, weights.cd_edge[direction], weights.phi.get(direction))
            msg = cross_domain_message(src, tgt, edge, weights.cd_gate[direction], weights.eta.get(direction))
            out[tgt.key] = node_update_two_stage(tgt, msg, None, weights.gru1[n], None)
    return out


def cross_scale_stage(
    nodes: dict[tuple[int, int], NodeState],
    config: HybridGraphConfig,
    weights: GraphWeights,
) -> dict[tuple[int, int], NodeState]:
    """Every node averages the gated messages from the other scales of its domain."""
    N = config.n_scales
    if N == 1:
        return dict(nodes)
    out = {}
    for d in DOMAINS:
        for i in range(1, N + 1):
            tgt = nodes[(d, i)]
            total = None
            for j in range(1, N + 1):
                if j == i:
                    continue
                src = nodes[(d, j)]
                edge = cross_scale_edge_embed(src, tgt, weights.cs_edge[d])
                msg = cross_scale_message(src, edge, weights.cs_gate[d])
                total = msg if total is None else total + msg
            out[tgt.key] = node_update_two_stage(tgt, None, total * (1.0 / (N - 1)), None, weights.gru2[d])
    return out


def propagate(
    states: Sequence[NodeState],
    config: HybridGraphConfig,
    weights: GraphWeights,
) -> list[NodeState]:
    """K synchronous rounds of the two-stage update over all 2N nodes."""
    nodes = _index_states(states, config.n_scales)
    for _ in range(config.iterations):
        if config.enable_cross_domain:
            nodes = cross_domain_stage(nodes, config, weights)
        nodes = cross_scale_stage(nodes, config, weights)
    return [nodes[(d, i)] for d in DOMAINS for i in range(1, config.n_scales + 1)]


def readout(states: Sequence[NodeState], head: ConvParams) -> Tensor:
    """Concatenate one domain's states in scale order and project to one channel."""
    domains = {s.domain for s in states}
    if len(domains) != 1:
        raise GraphError(f"readout needs the states of exactly one domain, got {sorted(domains)}")
    ordered = sorted(states, key=lambda s: s.scale)
    return conv2d(concat_channels([s.h for s in ordered]), head)

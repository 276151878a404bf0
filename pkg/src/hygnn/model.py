"""Full network: DFL features -> hybrid graph -> density and localization maps."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .dfl import COUNTING, DOMAINS, LOCALIZATION, DflConfig, back_end, front_end, init_dfl, init_node_states
from .graph import GraphWeights, HybridGraphConfig, NodeState, init_graph, propagate, readout
from .tensor import Tensor, TensorError


class HyGnn:
    """Parameters plus configuration for one network instance.

    Parameters are created once from ``seed`` and mutated in place by the
    optimizer; ``named_parameters`` always yields them in the same order.
    """

    def __init__(self, dfl_config: DflConfig, graph_config: HybridGraphConfig, seed: int = 0):
        if dfl_config.n_scales != graph_config.n_scales:
            raise ValueError(
                f"{dfl_config.n_scales} pyramid scales but graph expects N={graph_config.n_scales}"
            )
        if dfl_config.node_channels != graph_config.channels:
            raise ValueError("DFL node_channels must equal graph channels")
        self.dfl_config = dfl_config
        self.graph_config = graph_config
        rng = np.random.default_rng(seed)
        self.dfl = init_dfl(rng, dfl_config)
        self.graph: GraphWeights = init_graph(rng, graph_config)

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        yield from self.dfl.named_parameters()
        yield from self.graph.named_parameters()

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = sorted(set(params) - set(arrays))
        extra = sorted(set(arrays) - set(params))
        if missing or extra:
            raise KeyError(f"parameter mismatch; missing={missing} unexpected={extra}")
        for name, p in params.items():
            if arrays[name].shape != p.shape:
                raise ValueError(f"{name}: shape {arrays[name].shape} != {p.shape}")
            p.data[...] = arrays[name]

    def node_states(self, image: Tensor) -> list[NodeState]:
        shared = front_end(image, self.dfl)
        states = []
        for domain in DOMAINS:
            pyramid = init_node_states(back_end(shared, domain, self.dfl), self.dfl_config, domain)
            states.extend(NodeState(domain, i + 1, h) for i, h in enumerate(pyramid.states))
        return states

    def forward(self, image: Tensor) -> tuple[Tensor, Tensor]:
        return model_forward(image, self)

    __call__ = forward


def model_forward(image: Tensor, model: HyGnn) -> tuple[Tensor, Tensor]:
    """image [B,3,H,W] -> (density [B,1,H/8,W/8], localization [B,1,H/8,W/8])."""
    if image.ndim != 4 or image.shape[1] != 3:
        raise TensorError(f"expected an image batch [B,3,H,W], got {list(image.shape)}")
    states = propagate(model.node_states(image), model.graph_config, model.graph)
    density = readout([s for s in states if s.domain == COUNTING], model.graph.heads[COUNTING])
    localization = readout([s for s in states if s.domain == LOCALIZATION], model.graph.heads[LOCALIZATION])
    return density, localization


def predicted_count(density: Tensor) -> np.ndarray:
    """Per-image sum of the density map."""
    return density.data.reshape(density.shape[0], -1).sum(axis=1)

"""Small feed-forward expression classifier with LoRA-wrappable layers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .categories import check_unique
from .errors import DimensionError
from .lora import (
    INIT_STD,
    AdaptedLinear,
    LoraAdapter,
    init_adapter,
    lora_forward,
    make_linear,
    trainable_param_count,
)
from .seeding import derive_seed, rng_for

DEFAULT_D_IN = 16
DEFAULT_HIDDEN = (64, 32)


@dataclass
class ClassifierNet:
    backbone: list[AdaptedLinear]
    head: AdaptedLinear
    active_labels: tuple[str, ...]

    def __post_init__(self) -> None:
        self.active_labels = tuple(self.active_labels)
        check_unique(self.active_labels)
        for prev, nxt in zip(self.backbone, self.backbone[1:]):
            if prev.d_out != nxt.d_in:
                raise DimensionError(f"backbone layers do not chain: {prev.d_out} -> {nxt.d_in}")
        width = self.backbone[-1].d_out if self.backbone else self.head.d_in
        if self.head.d_in != width:
            raise DimensionError(f"head expects {self.head.d_in} inputs, backbone gives {width}")
        if self.head.d_out != len(self.active_labels):
            raise DimensionError(f"head width {self.head.d_out} != {len(self.active_labels)} labels")

    @property
    def d_in(self) -> int:
        return self.backbone[0].d_in if self.backbone else self.head.d_in

    def layers(self) -> Iterator[AdaptedLinear]:
        yield from self.backbone
        yield self.head

    def trainable_parameters(self) -> list[Node]:
        return [p for layer in self.layers() for p in layer.trainable_parameters()]

    def base_parameters(self) -> list[Node]:
        """Frozen backbone weights and biases."""
        return [t for layer in self.backbone for t in (layer.weight, layer.bias)]

    def trainable_param_count(self) -> int:
        return sum(trainable_param_count(layer) for layer in self.layers())

    def adapter_ranks(self) -> list[int | None]:
        return [layer.adapter.rank if layer.adapter else None for layer in self.backbone]


def _head(d_in: int, labels: Sequence[str], seed: int) -> AdaptedLinear:
    rng = np.random.default_rng(seed)
    return make_linear(d_in, len(labels), rng, INIT_STD, trainable_base=True, name="head")


def build_net(
    labels: Sequence[str],
    d_in: int = DEFAULT_D_IN,
    hidden: Sequence[int] = DEFAULT_HIDDEN,
    seed: int = 0,
) -> ClassifierNet:
    """Seeded base network with He-initialized backbone and a fresh head.

    The backbone stands in for a pretrained model and is frozen from the start.
    """
    backbone = []
    width = d_in
    for i, h in enumerate(hidden):
        rng = rng_for(seed, "backbone", i)
        backbone.append(make_linear(width, h, rng, np.sqrt(2.0 / width), name=f"backbone.{i}"))
        width = h
    head = _head(width, labels, derive_seed(seed, "head"))
    return ClassifierNet(backbone, head, tuple(labels))


def attach_adapters(net: ClassifierNet, rank: int, seed: int, scale: float = 1.0) -> None:
    """Install fresh rank-``rank`` adapters on every backbone layer (in place)."""
    for i, layer in enumerate(net.backbone):
        layer.attach(init_adapter(layer.d_in, layer.d_out, rank, derive_seed(seed, "adapter", i), scale))


def _as_input(features) -> Node:
    x = ad.as_matrix(features)
    if x.shape[1] != 1:
        x = x.reshape(-1, 1)
    return Node(x)


def forward_node(net: ClassifierNet, x: Node) -> Node:
    if x.shape != (net.d_in, 1):
        raise DimensionError(f"features have shape {x.shape}, expected ({net.d_in}, 1)")
    h = x
    for layer in net.backbone:
        h = ad.relu(lora_forward(layer, h))
    return lora_forward(net.head, h)


def forward(net: ClassifierNet, features) -> np.ndarray:
    """Logits as a 1-D array, one entry per active label."""
    return forward_node(net, _as_input(features)).value.reshape(-1)


def backbone_features(net: ClassifierNet, features) -> np.ndarray:
    h = _as_input(features)
    for layer in net.backbone:
        h = ad.relu(lora_forward(layer, h))
    return h.value.reshape(-1)


def argmax_first(logits: np.ndarray) -> int:
    # np.argmax returns the lowest index among ties
    return int(np.argmax(logits))


def predict(net: ClassifierNet, features) -> str:
    return net.active_labels[argmax_first(forward(net, features))]


def swap_head(net: ClassifierNet, new_labels: Sequence[str], seed: int) -> ClassifierNet:
    """New network sharing copied backbone values and a freshly initialized head.

    The head is re-initialized even when ``new_labels`` equals the current set.
    """
    new_labels = tuple(new_labels)
    check_unique(new_labels)
    backbone = [_copy_layer(layer) for layer in net.backbone]
    return ClassifierNet(backbone, _head(net.head.d_in, new_labels, seed), new_labels)


def _copy_layer(layer: AdaptedLinear) -> AdaptedLinear:
    adapter = None
    if layer.adapter is not None:
        a = layer.adapter
        adapter = LoraAdapter(
            ad.leaf(a.A.value.copy(), requires_grad=True, name="lora_A"),
            ad.leaf(a.B.value.copy(), requires_grad=True, name="lora_B"),
            a.scale,
        )
    return AdaptedLinear(
        ad.leaf(layer.weight.value.copy(), name=layer.weight.name),
        ad.leaf(layer.bias.value.copy(), name=layer.bias.name),
        adapter=adapter,
        trainable_base=layer.trainable_base,
        name=layer.name,
    )


def copy_net(net: ClassifierNet) -> ClassifierNet:
    return ClassifierNet(
        [_copy_layer(layer) for layer in net.backbone], _copy_layer(net.head), net.active_labels
    )

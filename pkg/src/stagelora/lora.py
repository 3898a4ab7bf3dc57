"""Low-rank adapters for linear layers.

A layer computes ``y = W0 x + b`` with ``W0`` frozen. Attaching an adapter
adds ``scale * B (A x)`` where ``A`` is ``r x d_in`` and ``B`` is
``d_out x r``, so the effective weight is ``W0 + scale * B A`` while only
``r * (d_in + d_out)`` numbers are trained.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import ContractError, DimensionError

INIT_STD = 0.02


@dataclass
class LoraAdapter:
    A: Node
    B: Node
    scale: float = 1.0

    @property
    def rank(self) -> int:
        return self.A.shape[0]

    @property
    def d_in(self) -> int:
        return self.A.shape[1]

    @property
    def d_out(self) -> int:
        return self.B.shape[0]

    def delta_weight(self) -> np.ndarray:
        """Materialize ``scale * B A``. Not used on the training path."""
        return self.scale * (self.B.value @ self.A.value)

    def parameters(self) -> list[Node]:
        return [self.A, self.B]


def init_adapter(d_in: int, d_out: int, r: int, seed: int, scale: float = 1.0) -> LoraAdapter:
    """Fresh adapter: ``A ~ N(0, 0.02^2)`` from ``seed``, ``B = 0``."""
    if not 1 <= r <= min(d_in, d_out):
        raise ContractError(f"rank {r} outside [1, {min(d_in, d_out)}] for a {d_out}x{d_in} layer")
    rng = np.random.default_rng(seed)
    A = ad.leaf(rng.normal(0.0, INIT_STD, size=(r, d_in)), requires_grad=True, name="lora_A")
    B = ad.leaf(np.zeros((d_out, r)), requires_grad=True, name="lora_B")
    return LoraAdapter(A=A, B=B, scale=float(scale))


@dataclass
class AdaptedLinear:
    """Linear layer with an optional low-rank adapter.

    ``trainable_base`` marks layers (the classifier head) whose own weight
    and bias are trained directly. Base parameters of a layer never receive
    gradient while an adapter is attached.
    """

    weight: Node
    bias: Node
    adapter: LoraAdapter | None = None
    trainable_base: bool = False
    name: str = field(default="linear")

    def __post_init__(self) -> None:
        if self.bias.shape != (self.d_out, 1):
            raise DimensionError(f"bias shape {self.bias.shape} does not match weight {self.weight.shape}")
        if self.adapter is not None:
            self._check_adapter(self.adapter)
        self._sync_flags()

    @property
    def d_in(self) -> int:
        return self.weight.shape[1]

    @property
    def d_out(self) -> int:
        return self.weight.shape[0]

    def _check_adapter(self, adapter: LoraAdapter) -> None:
        if adapter.d_in != self.d_in or adapter.d_out != self.d_out:
            raise DimensionError(
                f"adapter ({adapter.d_out}x{adapter.rank}, {adapter.rank}x{adapter.d_in}) "
                f"does not fit layer {self.weight.shape}"
            )

    def _sync_flags(self) -> None:
        base_trains = self.trainable_base and self.adapter is None
        self.weight.requires_grad = base_trains
        self.bias.requires_grad = base_trains
        if not base_trains:
            self.weight.zero_grad()
            self.bias.zero_grad()

    def attach(self, adapter: LoraAdapter) -> None:
        self._check_adapter(adapter)
        self.adapter = adapter
        self._sync_flags()

    def detach(self) -> LoraAdapter | None:
        adapter, self.adapter = self.adapter, None
        self._sync_flags()
        return adapter

    def trainable_parameters(self) -> list[Node]:
        if self.adapter is not None:
            return self.adapter.parameters()
        if self.trainable_base:
            return [self.weight, self.bias]
        return []


def make_linear(
    d_in: int,
    d_out: int,
    rng: np.random.Generator,
    std: float,
    trainable_base: bool = False,
    name: str = "linear",
) -> AdaptedLinear:
    weight = ad.leaf(rng.normal(0.0, std, size=(d_out, d_in)), name=f"{name}.weight")
    bias = ad.leaf(np.zeros((d_out, 1)), name=f"{name}.bias")
    return AdaptedLinear(weight, bias, trainable_base=trainable_base, name=name)


def lora_forward(layer: AdaptedLinear, x: Node) -> Node:
    """``W0 x + b + scale * B (A x)``; ``B A`` is never formed."""
    if x.shape[0] != layer.d_in:
        raise DimensionError(f"input has {x.shape[0]} rows, layer expects d_in={layer.d_in}")
    y = ad.add(ad.matmul(layer.weight, x), layer.bias)
    adapter = layer.adapter
    if adapter is None:
        return y
    low = ad.matmul(adapter.B, ad.matmul(adapter.A, x))
    return ad.add(y, ad.scale(low, adapter.scale))


def merge(layer: AdaptedLinear) -> AdaptedLinear:
    """Fold the adapter into the base weight and return an adapter-free copy."""
    if layer.adapter is None:
        raise ContractError(f"layer {layer.name!r} has no adapter to merge")
    merged = layer.weight.value + layer.adapter.delta_weight()
    return AdaptedLinear(
        ad.leaf(merged, name=layer.weight.name),
        ad.leaf(layer.bias.value.copy(), name=layer.bias.name),
        adapter=None,
        trainable_base=layer.trainable_base,
        name=layer.name,
    )


def trainable_param_count(layer: AdaptedLinear) -> int:
    """``r * (d_in + d_out)`` with an adapter (``2dr`` when square).

    A frozen layer without adapter counts 0; a directly trained layer (the
    head) counts its full weight and bias.
    """
    if layer.adapter is not None:
        return layer.adapter.rank * (layer.d_in + layer.d_out)
    if layer.trainable_base:
        return layer.d_in * layer.d_out + layer.d_out
    return 0


def base_param_count(layer: AdaptedLinear) -> int:
    """Number of entries in the base weight (``d^2`` when square)."""
    return layer.d_in * layer.d_out

"""Named parameter storage with a freeze mask."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from pcbdet.errors import ConfigError
from pcbdet.nn.tensor import Tensor, default_dtype


class ParamStore:
    """Mapping ``name -> Tensor`` plus a per-name frozen flag.

    Iteration is lexicographic by name. Frozen tensors have
    ``requires_grad=False`` so backward passes skip them entirely.
    """

    def __init__(self) -> None:
        self._tensors: dict[str, Tensor] = {}
        self._frozen: dict[str, bool] = {}

    def add(self, name: str, data: np.ndarray, frozen: bool = False) -> Tensor:
        if name in self._tensors:
            raise ConfigError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(data, dtype=default_dtype()).copy(), requires_grad=not frozen)
        self._tensors[name] = t
        self._frozen[name] = frozen
        return t

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._tensors[name]
        except KeyError:
            raise KeyError(f"no parameter named {name!r}") from None

    def get(self, name: str) -> Tensor | None:
        return self._tensors.get(name)

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return sorted(self._tensors)

    def __iter__(self) -> Iterator[str]:
        return iter(self.names())

    def items(self) -> Iterator[tuple[str, Tensor]]:
        for name in self.names():
            yield name, self._tensors[name]

    def is_frozen(self, name: str) -> bool:
        return self._frozen[name]

    def set_frozen(self, name: str, frozen: bool) -> None:
        self._frozen[name] = frozen
        self._tensors[name].requires_grad = not frozen

    def trainable(self) -> Iterator[tuple[str, Tensor]]:
        for name, t in self.items():
            if not self._frozen[name]:
                yield name, t

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def state(self) -> dict[str, np.ndarray]:
        """Copies of every array, keyed by name (for snapshots and comparisons)."""
        return {name: t.data.copy() for name, t in self.items()}

    def astype(self, dtype) -> "ParamStore":
        """A copy with every array cast to ``dtype`` and the same freeze mask."""
        out = ParamStore()
        for name, t in self.items():
            out._tensors[name] = Tensor(t.data.astype(dtype), requires_grad=not self._frozen[name])
            out._frozen[name] = self._frozen[name]
        return out


def count_params(params: ParamStore, trainable_only: bool = False) -> int:
    """Exact element count over all (or only the non-frozen) parameters."""
    return sum(
        int(t.data.size) for name, t in params.items() if not (trainable_only and params.is_frozen(name))
    )


def mparams(params: ParamStore, trainable_only: bool = False) -> float:
    return count_params(params, trainable_only) / 1e6


def he_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


def add_conv(
    params: ParamStore,
    rng: np.random.Generator,
    prefix: str,
    c_in: int,
    c_out: int,
    k: int,
    groups: int = 1,
    bias: bool = True,
    std: float | None = None,
) -> None:
    shape = (c_out, c_in // groups, k, k)
    fan_in = (c_in // groups) * k * k
    w = rng.standard_normal(shape) * std if std is not None else he_normal(rng, shape, fan_in)
    params.add(f"{prefix}.weight", w)
    if bias:
        params.add(f"{prefix}.bias", np.zeros(c_out))


def add_affine(params: ParamStore, prefix: str, channels: int) -> None:
    params.add(f"{prefix}.scale", np.ones(channels))
    params.add(f"{prefix}.shift", np.zeros(channels))

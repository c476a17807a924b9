"""Parameterized building blocks: named parameter sets, MLPs, a gated recurrent cell.

Forward functions accept any mapping from name to array or autodiff Node,
so the same code serves taped training passes and tape-free evaluation.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Array


class ParamSet(Mapping):
    """Ordered name -> float64 array mapping with init metadata.

    Deep copies are value-equal but update-independent; iteration order is
    insertion order, which fixes the coordinate order used by optimizers,
    gradient clipping and checkpoints.
    """

    def __init__(self, meta: dict | None = None):
        self._data: dict[str, Array] = {}
        self.meta: dict = dict(meta or {})

    def add(self, name: str, value: Array) -> None:
        if name in self._data:
            raise ValueError(f"duplicate parameter name {name!r}")
        self._data[name] = np.asarray(value, dtype=np.float64)

    def merge(self, prefix: str, other: "ParamSet") -> None:
        for name, value in other.items():
            self.add(prefix + name, value)

    def __getitem__(self, name: str) -> Array:
        return self._data[name]

    def __setitem__(self, name: str, value: Array) -> None:
        if name not in self._data:
            raise KeyError(name)
        self._data[name] = np.asarray(value, dtype=np.float64)

    def __iter__(self) -> Iterator[str]:
        return iter(self._data)

    def __len__(self) -> int:
        return len(self._data)

    def copy(self) -> "ParamSet":
        out = ParamSet(meta=dict(self.meta))
        for name, value in self._data.items():
            out.add(name, value.copy())
        return out

    def equal(self, other: "ParamSet") -> bool:
        return (list(self) == list(other)
                and all(np.array_equal(self[k], other[k]) for k in self))

    def n_params(self) -> int:
        return sum(v.size for v in self._data.values())


def subparams(params: Mapping, prefix: str) -> dict:
    """View of ``params`` restricted to ``prefix``, with the prefix stripped.

    Values are shared, not copied; works on ParamSets and on dicts of Nodes.
    """
    n = len(prefix)
    return {k[n:]: v for k, v in params.items() if k.startswith(prefix)}


@dataclass(frozen=True)
class NetSpec:
    """Shape of an MLP plus an optional trailing recurrent cell.

    ``sizes`` are layer widths (input first); ``activations`` has one entry
    per weight layer.  ``recurrent_hidden`` > 0 appends a gated recurrent
    cell fed by the MLP output.
    """

    sizes: tuple[int, ...]
    activations: tuple[str, ...] = ()
    recurrent_hidden: int = 0

    def __post_init__(self):
        if any(s <= 0 for s in self.sizes) or self.recurrent_hidden < 0:
            raise ValueError(f"NetSpec: zero-sized layer in {self.sizes}")
        if len(self.activations) != max(0, len(self.sizes) - 1):
            raise ValueError("NetSpec: need one activation per weight layer")


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Array:
    """Weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(spec: NetSpec, seed: int) -> ParamSet:
    """Deterministically initialize parameters for ``spec``.

    Weights are fan-in-scaled uniform, biases zero.  Layer i gets
    ``layer{i}.w`` of shape (out, in) and ``layer{i}.b``; the recurrent
    cell gets fused-gate blocks ``gru.wx/wh/bx/bh`` (gate order z, r, c).
    """
    rng = np.random.default_rng(seed)
    params = ParamSet(meta={"spec": spec, "seed": seed})
    for i in range(len(spec.sizes) - 1):
        n_in, n_out = spec.sizes[i], spec.sizes[i + 1]
        params.add(f"layer{i}.w", uniform_init(rng, (n_out, n_in), n_in))
        params.add(f"layer{i}.b", np.zeros(n_out))
    if spec.recurrent_hidden:
        h = spec.recurrent_hidden
        n_in = spec.sizes[-1]
        params.add("gru.wx", uniform_init(rng, (3 * h, n_in), n_in))
        params.add("gru.wh", uniform_init(rng, (3 * h, h), h))
        params.add("gru.bx", np.zeros(3 * h))
        params.add("gru.bh", np.zeros(3 * h))
    return params


def mlp_forward(spec: NetSpec, params: Mapping, x):
    """Run the MLP layers of ``spec`` over ``x`` using ``params``."""
    for i, kind in enumerate(spec.activations):
        x = ad.linear(params[f"layer{i}.w"], x, params[f"layer{i}.b"])
        x = ad.activation(kind, x)
    return x


def gru_step(params: Mapping, x_t, h_prev):
    """One gated recurrent update; returns the new hidden state.

    z = sigmoid(.), r = sigmoid(.), candidate = tanh(gx_c + r * gh_c),
    h = (1 - z) * h_prev + z * candidate.  Output entries stay in (-1, 1).
    """
    wx, wh = params["gru.wx"], params["gru.wh"]
    h = ad.value_of(wh).shape[1]
    xv, hv = ad.value_of(x_t), ad.value_of(h_prev)
    if xv.shape[-1] != ad.value_of(wx).shape[1] or hv.shape[-1] != h:
        raise ad.ShapeError(
            f"gru_step: got x {xv.shape}, h {hv.shape} for wx "
            f"{ad.value_of(wx).shape}, wh {ad.value_of(wh).shape}")
    batched = xv.ndim == 2
    spec = ("gi,bi->bg" if batched else "gi,i->g")
    gx = ad.add(ad.einsum(spec, wx, x_t), params["gru.bx"])
    gh = ad.add(ad.einsum(spec.replace("i", "h"), wh, h_prev), params["gru.bh"])
    z = ad.sigmoid(ad.add(ad.slice_axis(gx, 0, h), ad.slice_axis(gh, 0, h)))
    r = ad.sigmoid(ad.add(ad.slice_axis(gx, h, 2 * h), ad.slice_axis(gh, h, 2 * h)))
    cand = ad.tanh(ad.add(ad.slice_axis(gx, 2 * h, 3 * h),
                          ad.mul(r, ad.slice_axis(gh, 2 * h, 3 * h))))
    return ad.add(ad.mul(ad.sub(1.0, z), h_prev), ad.mul(z, cand))

"""Desk-scale convolutional networks for the paste generator and the pose net.

Layers are drawn from a fixed vocabulary: ("conv", out_channels),
("relu",), ("maxpool",), ("gap",), ("fc", out_features), ("tanh",).
Weights are He fan-in initialized from the spec's seed; the final layer
can be zero-initialized so a freshly built generator emits range
midpoints, i.e. training starts from the untransformed paste.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DomainError


@dataclass(frozen=True)
class ToyNetSpec:
    layers: tuple
    in_channels: int = 3
    init_seed: int = 0
    zero_init_last: bool = False

    def validate(self):
        known = {"conv", "relu", "maxpool", "gap", "fc", "tanh"}
        for layer in self.layers:
            if layer[0] not in known:
                raise ConfigError(f"unknown layer kind {layer[0]!r}")
        return self


def generator_spec(n_classes: int, width: int = 6, seed: int = 0) -> ToyNetSpec:
    """conv-relu-maxpool x2 -> gap -> fc emitting 3 raw values per part class."""
    return ToyNetSpec(
        layers=(
            ("conv", width), ("relu",), ("maxpool",),
            ("conv", width * 2), ("relu",), ("maxpool",),
            ("gap",),
            ("fc", 3 * n_classes),
        ),
        init_seed=seed,
        zero_init_last=True,
    )


def discriminator_spec(n_joints: int, width: int = 8, seed: int = 0) -> ToyNetSpec:
    """Three conv-relu blocks with two 2x2 pools, then a conv head with one
    channel per joint at 1/4 input resolution."""
    return ToyNetSpec(
        layers=(
            ("conv", width), ("relu",), ("maxpool",),
            ("conv", width), ("relu",), ("maxpool",),
            ("conv", width), ("relu",),
            ("conv", n_joints),
        ),
        init_seed=seed,
    )


def init_params(spec: ToyNetSpec, prefix: str) -> dict[str, np.ndarray]:
    """He fan-in initialization; biases zero; optional zero final layer."""
    spec.validate()
    rng = np.random.default_rng(spec.init_seed)
    params: dict[str, np.ndarray] = {}
    c = spec.in_channels
    feat = None
    weighted = [i for i, l in enumerate(spec.layers) if l[0] in ("conv", "fc")]
    last_weighted = weighted[-1] if weighted else -1
    for i, layer in enumerate(spec.layers):
        kind = layer[0]
        if kind == "conv":
            out = layer[1]
            fan_in = c * 9
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(out, c, 3, 3))
            if spec.zero_init_last and i == last_weighted:
                w = np.zeros_like(w)
            params[f"{prefix}/l{i}/w"] = w
            params[f"{prefix}/l{i}/b"] = np.zeros(out)
            c = out
        elif kind == "gap":
            feat = c
        elif kind == "fc":
            if feat is None:
                feat = c
            out = layer[1]
            w = rng.normal(0.0, np.sqrt(2.0 / feat), size=(feat, out))
            if spec.zero_init_last and i == last_weighted:
                w = np.zeros_like(w)
            params[f"{prefix}/l{i}/w"] = w
            params[f"{prefix}/l{i}/b"] = np.zeros(out)
            feat = out
    return params


def net_forward(tape: ad.Tape, spec: ToyNetSpec, params: dict[str, ad.Node],
                prefix: str, image) -> ad.Node:
    """Run the layer stack on (B, C, H, W) input nodes/arrays."""
    x = image if isinstance(image, ad.Node) else ad.Node(image, tape=tape)
    if x.value.ndim != 4 or x.value.shape[1] != spec.in_channels:
        raise DomainError(
            f"input {x.value.shape} does not match spec channels {spec.in_channels}")
    for i, layer in enumerate(spec.layers):
        kind = layer[0]
        if kind == "conv":
            x = ad.conv3x3(tape, x, params[f"{prefix}/l{i}/w"], params[f"{prefix}/l{i}/b"])
        elif kind == "relu":
            x = ad.relu(tape, x)
        elif kind == "maxpool":
            x = ad.maxpool2(tape, x)
        elif kind == "gap":
            x = ad.global_avg_pool(tape, x)
        elif kind == "fc":
            x = ad.linear(tape, x, params[f"{prefix}/l{i}/w"], params[f"{prefix}/l{i}/b"])
        elif kind == "tanh":
            x = ad.tanh(tape, x)
    return x


def generator_forward(tape: ad.Tape, spec: ToyNetSpec, params: dict[str, ad.Node],
                      image, ranges, n_classes: int, prefix: str = "G") -> ad.Node:
    """Per-class placement groups: (B, n_classes, 3) with columns (r, tx, ty).

    Raw head outputs are squashed by tanh and affinely mapped into the
    configured rotation/translation ranges, so a zero head emits the range
    midpoints and every output is range-bounded by construction.
    """
    raw = net_forward(tape, spec, params, prefix, image)
    if raw.value.ndim != 2 or raw.value.shape[1] != 3 * n_classes:
        raise DomainError(f"generator head emits {raw.value.shape}, need (B, {3 * n_classes})")
    batch = raw.value.shape[0]
    squashed = ad.tanh(tape, raw)
    table = ad.reshape(tape, squashed, (batch, n_classes, 3))
    mid = np.array([(ranges.r_hi + ranges.r_lo) / 2.0,
                    (ranges.t_hi + ranges.t_lo) / 2.0,
                    (ranges.t_hi + ranges.t_lo) / 2.0])
    half = np.array([(ranges.r_hi - ranges.r_lo) / 2.0,
                     (ranges.t_hi - ranges.t_lo) / 2.0,
                     (ranges.t_hi - ranges.t_lo) / 2.0])
    return ad.add(tape, ad.mul(tape, table, half[None, None, :]), mid[None, None, :])


def discriminator_forward(tape: ad.Tape, spec: ToyNetSpec, params: dict[str, ad.Node],
                          image, prefix: str = "D") -> ad.Node:
    """Joint heatmaps at 1/4 input resolution, values unconstrained."""
    return net_forward(tape, spec, params, prefix, image)

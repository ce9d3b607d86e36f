"""Phase-indexed generator, per-track refiners and mirrored critic.

Layer indices follow the full 12-row layer table: the generator is
``dense -> reshape -> transconv3d * G`` and the critic is the mirror image,
``conv3d * G -> reshape -> dense``. Every transposed convolution grows one
axis (time first, then pitch) by an integer factor ``f`` using kernel ``f``
and stride ``f`` with no padding; the critic undoes it with the same pair.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from pgbn import ops
from pgbn.layers import (
    LEAKY_SLOPE,
    Conv3d,
    DbnState,
    Dense,
    ResidualUnit,
    TransConv3d,
    dbn_forward,
    minibatch_stddev,
    pixelnorm,
)
from pgbn.errors import ConfigurationError, ShapeError
from pgbn.tensor import Tensor

DEFAULT_TRACK_NAMES = (
    "Drums",
    "Piano",
    "Guitar",
    "Bass",
    "Ensemble",
    "Reed",
    "Synth Lead",
    "Synth Pad",
)

_NET_GENERATOR = 0
_NET_DISCRIMINATOR = 1
_NET_REFINER = 2


def _prime_factors(n: int) -> list:
    factors, p = [], 2
    while n > 1:
        while n % p == 0:
            factors.append(p)
            n //= p
        p += 1
    return factors


@dataclass(frozen=True)
class ModelDims:
    """Sizes of the full-resolution model.

    ``time_factors``/``pitch_factors`` give the per-layer growth factors; by
    default time uses the prime factors of ``steps`` in descending order and
    pitch those of ``pitches`` in ascending order, which reproduces
    1-3-6-...-96 and 1-2-4-12-84.
    """

    bars: int = 4
    steps: int = 96
    pitches: int = 84
    tracks: int = 8
    latent: int = 128
    refiner_channels: int = 64
    track_names: Optional[tuple] = None
    time_factors: Optional[tuple] = None
    pitch_factors: Optional[tuple] = None

    def __post_init__(self):
        for name in ("bars", "steps", "pitches", "tracks", "latent", "refiner_channels"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.track_names is None:
            names = DEFAULT_TRACK_NAMES[: self.tracks] + tuple(
                f"Track {i}" for i in range(len(DEFAULT_TRACK_NAMES), self.tracks)
            )
            object.__setattr__(self, "track_names", names)
        else:
            object.__setattr__(self, "track_names", tuple(self.track_names))
        if len(self.track_names) != self.tracks:
            raise ConfigurationError("track_names length must equal tracks")
        tf = tuple(self.time_factors) if self.time_factors else tuple(
            sorted(_prime_factors(self.steps), reverse=True)
        )
        pf = tuple(self.pitch_factors) if self.pitch_factors else tuple(
            sorted(_prime_factors(self.pitches))
        )
        if int(np.prod(tf)) != self.steps or any(f < 2 for f in tf):
            raise ConfigurationError(f"time factors {tf} do not multiply to {self.steps}")
        if int(np.prod(pf)) != self.pitches or any(f < 2 for f in pf):
            raise ConfigurationError(f"pitch factors {pf} do not multiply to {self.pitches}")
        object.__setattr__(self, "time_factors", tf)
        object.__setattr__(self, "pitch_factors", pf)

    @property
    def growth(self) -> list:
        """``(axis, factor)`` per transposed-conv layer; axis 2 = time, 3 = pitch."""
        return [(2, f) for f in self.time_factors] + [(3, f) for f in self.pitch_factors]

    @property
    def num_phases(self) -> int:
        return 1 + len(self.growth)

    @property
    def num_layers(self) -> int:
        return 2 + len(self.growth)


@dataclass(frozen=True)
class LayerSpec:
    index: int
    kind: str
    kernel: Optional[tuple]
    stride: Optional[tuple]
    out_shape: tuple


@dataclass(frozen=True)
class Schedule:
    generator: list
    refiner: list
    discriminator: list


@dataclass(frozen=True)
class PhaseConfig:
    phase_index: int
    generator_layer_count: int
    time_steps: int
    pitch_values: int
    epochs: int = 2


def _resolutions(dims: ModelDims) -> list:
    """(time, pitch) after each generator layer; entry i is layer i's output."""
    res = [(1, 1), (1, 1)]
    t, p = 1, 1
    for axis, f in dims.growth:
        if axis == 2:
            t *= f
        else:
            p *= f
        res.append((t, p))
    return res


def _kernel(axis: int, factor: int) -> tuple:
    k = [1, 1, 1]
    k[axis - 1] = factor
    return tuple(k)


def generator_specs(dims: ModelDims, batch: int) -> list:
    res = _resolutions(dims)
    specs = [
        LayerSpec(0, "dense", None, None, (batch, dims.bars * dims.tracks)),
        LayerSpec(1, "reshape", None, None, (batch, dims.bars, 1, 1, dims.tracks)),
    ]
    for i, (axis, f) in enumerate(dims.growth, start=2):
        t, p = res[i]
        k = _kernel(axis, f)
        specs.append(LayerSpec(i, "transconv3d", k, k, (batch, dims.bars, t, p, dims.tracks)))
    return specs


def discriminator_specs(dims: ModelDims, batch: int) -> list:
    gen = generator_specs(dims, batch)
    last = dims.num_layers - 1
    specs = []
    for j in range(len(dims.growth)):
        mirror = gen[last - j]
        specs.append(
            LayerSpec(j, "conv3d", mirror.kernel, mirror.stride, gen[last - j - 1].out_shape)
        )
    specs.append(LayerSpec(last - 1, "reshape", None, None, (batch, dims.bars * dims.tracks)))
    specs.append(LayerSpec(last, "dense", None, None, (batch, 1)))
    return specs


REFINER_KINDS = (
    "identity",
    "identity",
    "conv3d",
    "conv3d",
    "identity",
    "identity",
    "conv3d",
    "conv3d",
    "identity",
)


def refiner_specs(dims: ModelDims, batch: int, time_steps=None, pitch_values=None) -> list:
    t = dims.steps if time_steps is None else time_steps
    p = dims.pitches if pitch_values is None else pitch_values
    specs = []
    for i, kind in enumerate(REFINER_KINDS):
        channels = dims.refiner_channels if i in (2, 6) else 1
        k = (1, 3, 3) if kind == "conv3d" else None
        s = (1, 1, 1) if kind == "conv3d" else None
        specs.append(LayerSpec(i, kind, k, s, (batch, dims.bars, t, p, channels)))
    return specs


def layer_table(batch: int = 32, dims: Optional[ModelDims] = None) -> Schedule:
    """Full-resolution layer table for generator, one refiner, and critic."""
    dims = dims or ModelDims()
    return Schedule(
        generator_specs(dims, batch), refiner_specs(dims, batch), discriminator_specs(dims, batch)
    )


def phase_schedule(dims: ModelDims, epochs: int = 2) -> list:
    res = _resolutions(dims)
    return [
        PhaseConfig(p, p + 1, res[p][0], res[p][1], epochs) for p in range(1, dims.num_phases + 1)
    ]


def phase_config(dims: ModelDims, phase: int, epochs: int = 2) -> PhaseConfig:
    if not 1 <= phase <= dims.num_phases:
        raise ConfigurationError(f"phase must be in 1..{dims.num_phases}, got {phase}")
    return phase_schedule(dims, epochs)[phase - 1]


def _layer_rng(seed: int, net: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, net, index])


class Refiner:
    """Private per-track network: two residual units then a binary neuron layer."""

    def __init__(self, hidden: int, seed: int, track: int, dtype):
        self.units = [
            ResidualUnit(1, hidden, _layer_rng(seed, _NET_REFINER + track, u), dtype)
            for u in range(2)
        ]

    def parameters(self) -> dict:
        out = {}
        for u, layer_a, layer_b in ((0, 2, 3), (1, 6, 7)):
            unit = self.units[u]
            out[f"Layer_{layer_a}/weight"] = unit.conv_a.weight
            out[f"Layer_{layer_a}/bias"] = unit.conv_a.bias
            out[f"Layer_{layer_b}/weight"] = unit.conv_b.weight
            out[f"Layer_{layer_b}/bias"] = unit.conv_b.bias
        return out

    def forward(self, x: Tensor, state: DbnState, trace: Optional[list] = None) -> Tensor:
        h = x
        for unit in self.units:
            if trace is not None:
                trace.append(h.shape)  # skip branch input
                a = ops.leaky_relu(h, LEAKY_SLOPE)
                trace.append(a.shape)
                b = unit.conv_a(a)
                trace.append(b.shape)
                c = unit.conv_b(ops.leaky_relu(b, LEAKY_SLOPE))
                trace.append(c.shape)
                h = ops.add(h, c)
            else:
                h = unit(h)
        out = dbn_forward(h, state)
        if trace is not None:
            trace.append(out.shape)
        return out


class NetworkSet:
    """Generator, refiners and critic at one phase of progressive growth."""

    def __init__(self, dims: ModelDims, phase: PhaseConfig, seed: int, dtype=np.float64):
        self.dims = dims
        self.phase = phase
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.generator: dict = {}
        self.discriminator: dict = {}
        self.refiners: list = []

    # -- construction -------------------------------------------------
    def _new_generator_layer(self, i: int):
        d = self.dims
        rng = _layer_rng(self.seed, _NET_GENERATOR, i)
        if i == 0:
            return Dense(d.latent, d.bars * d.tracks, rng, self.dtype)
        if i == 1:
            return None
        axis, f = d.growth[i - 2]
        k = _kernel(axis, f)
        return TransConv3d(d.tracks, d.tracks, k, k, rng, self.dtype)

    def _new_discriminator_layer(self, j: int):
        d = self.dims
        rng = _layer_rng(self.seed, _NET_DISCRIMINATOR, j)
        last = d.num_layers - 1
        if j == last:
            return Dense(d.bars * d.tracks, 1, rng, self.dtype)
        if j == last - 1:
            return None
        axis, f = d.growth[last - j - 2]
        k = _kernel(axis, f)
        cin = d.tracks + 1 if j == self.stddev_index else d.tracks
        return Conv3d(cin, d.tracks, k, k, rng, self.dtype)

    @property
    def stddev_index(self) -> int:
        """Critic layer preceded by the minibatch-stddev channel (the last conv)."""
        return self.dims.num_layers - 3

    @property
    def discriminator_start(self) -> int:
        return self.dims.num_layers - 1 - self.phase.phase_index

    def generator_indices(self) -> list:
        return list(range(self.phase.generator_layer_count))

    def discriminator_indices(self) -> list:
        return list(range(self.discriminator_start, self.dims.num_layers))

    # -- parameters ---------------------------------------------------
    def generator_parameters(self) -> dict:
        out = {}
        for i, layer in self.generator.items():
            if layer is not None:
                for k, v in layer.parameters().items():
                    out[f"G/Layer_{i}/{k}"] = v
        for t, ref in enumerate(self.refiners):
            for k, v in ref.parameters().items():
                out[f"R{t}/{k}"] = v
        return out

    def discriminator_parameters(self) -> dict:
        out = {}
        for j, layer in self.discriminator.items():
            if layer is not None:
                for k, v in layer.parameters().items():
                    out[f"D/Layer_{j}/{k}"] = v
        return out

    def parameters(self) -> dict:
        return {**self.generator_parameters(), **self.discriminator_parameters()}

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.parameters().values()))

    def layer_specs(self, batch: int) -> Schedule:
        """Layer table truncated to this phase."""
        d = self.dims
        gen = generator_specs(d, batch)[: self.phase.generator_layer_count]
        disc = [s for s in discriminator_specs(d, batch) if s.index >= self.discriminator_start]
        ref = refiner_specs(d, batch, self.phase.time_steps, self.phase.pitch_values)
        return Schedule(gen, ref, disc)

    def output_shape(self, batch: int) -> tuple:
        d = self.dims
        return (batch, d.bars, self.phase.time_steps, self.phase.pitch_values, d.tracks)


def _resolve_phase(dims: ModelDims, phase, epochs: int = 2) -> PhaseConfig:
    if isinstance(phase, PhaseConfig):
        expected = phase_config(dims, phase.phase_index, phase.epochs)
        if expected != phase:
            raise ConfigurationError(f"phase config {phase} inconsistent with dims")
        return phase
    return phase_config(dims, int(phase), epochs)


def build_networks(phase, seed: int, dims: Optional[ModelDims] = None, dtype=np.float64) -> NetworkSet:
    """Fresh networks for ``phase``; every layer's weights come from its own seeded stream."""
    dims = dims or ModelDims()
    cfg = _resolve_phase(dims, phase)
    nets = NetworkSet(dims, cfg, seed, dtype)
    for i in nets.generator_indices():
        nets.generator[i] = nets._new_generator_layer(i)
    for j in nets.discriminator_indices():
        nets.discriminator[j] = nets._new_discriminator_layer(j)
    nets.refiners = [Refiner(dims.refiner_channels, seed, t, nets.dtype) for t in range(dims.tracks)]
    return nets


def _clone_layer(layer):
    if layer is None:
        return None
    clone = copy.copy(layer)
    if isinstance(layer, ResidualUnit):
        clone.conv_a = _clone_layer(layer.conv_a)
        clone.conv_b = _clone_layer(layer.conv_b)
        return clone
    clone.weight = Tensor(layer.weight.data.copy(), requires_grad=True)
    clone.bias = Tensor(layer.bias.data.copy(), requires_grad=True)
    return clone


def grow(nets: NetworkSet, seed: Optional[int] = None) -> NetworkSet:
    """Return the next phase's networks, carrying every existing parameter over by copy."""
    dims = nets.dims
    k = nets.phase.phase_index
    if k >= dims.num_phases:
        raise ConfigurationError(f"cannot grow past final phase {dims.num_phases}")
    seed = nets.seed if seed is None else seed
    new = NetworkSet(dims, phase_config(dims, k + 1, nets.phase.epochs), seed, nets.dtype)
    new.generator = {i: _clone_layer(layer) for i, layer in nets.generator.items()}
    new.discriminator = {j: _clone_layer(layer) for j, layer in nets.discriminator.items()}
    new.generator[k + 1] = new._new_generator_layer(k + 1)
    new.discriminator[new.discriminator_start] = new._new_discriminator_layer(new.discriminator_start)
    new.discriminator = dict(sorted(new.discriminator.items()))
    for ref in nets.refiners:
        clone = copy.copy(ref)
        clone.units = [_clone_layer(u) for u in ref.units]
        new.refiners.append(clone)
    return new


def added_parameter_count(dims: ModelDims, phase_index: int) -> int:
    """Parameters introduced when growing into ``phase_index`` (kernel + bias, both nets)."""
    axis, f = dims.growth[phase_index - 2]
    kernel = f * dims.tracks * dims.tracks + dims.tracks
    disc_cin = dims.tracks + 1 if phase_index == 2 else dims.tracks
    return kernel + f * disc_cin * dims.tracks + dims.tracks


def generator_forward(nets: NetworkSet, z: Tensor, intermediates: bool = False):
    """Real-valued generator output at the current phase resolution.

    With ``intermediates=True`` also return each layer's pre-activation output.
    """
    d = nets.dims
    if z.ndim != 2 or z.shape[1] != d.latent:
        raise ShapeError(f"latent must be (batch, {d.latent}), got {z.shape}")
    batch = z.shape[0]
    outs = []
    h = nets.generator[0](z)
    outs.append(h)
    h = ops.reshape(h, (batch, d.bars, 1, 1, d.tracks))
    outs.append(h)
    for i in range(2, nets.phase.generator_layer_count):
        h = pixelnorm(ops.leaky_relu(h, LEAKY_SLOPE))
        h = nets.generator[i](h)
        outs.append(h)
    return (h, outs) if intermediates else h


def refiner_forward(nets: NetworkSet, x_hat: Tensor, state: DbnState, trace: Optional[list] = None) -> Tensor:
    """Split along tracks, refine each with its private network, binarize, merge."""
    tracks = nets.dims.tracks
    if x_hat.shape[-1] != tracks:
        raise ShapeError(f"expected {tracks} tracks, got {x_hat.shape[-1]}")
    pieces = []
    for t, ref in enumerate(nets.refiners):
        piece = ops.slice_axis(x_hat, -1, t, t + 1)
        sub = trace if (trace is not None and t == 0) else None
        pieces.append(ref.forward(piece, state, sub))
    return ops.concat(pieces, axis=-1)


def discriminator_forward(
    nets: NetworkSet, x: Tensor, intermediates: bool = False, start: Optional[int] = None
):
    """Critic score per sample, shape ``(batch, 1)``.

    ``start`` feeds ``x`` into critic layer ``start`` instead of the first
    layer of the current phase (used to probe carried-over suffixes).
    """
    d = nets.dims
    start = nets.discriminator_start if start is None else start
    if start == nets.discriminator_start and x.shape[1:] != nets.output_shape(1)[1:]:
        raise ShapeError(f"critic input must be {nets.output_shape(x.shape[0])}, got {x.shape}")
    last = d.num_layers - 1
    outs = []
    h = x
    for j in range(start, last - 1):
        if j == nets.stddev_index:
            h = minibatch_stddev(h)
        h = ops.leaky_relu(nets.discriminator[j](h), LEAKY_SLOPE)
        outs.append(h)
    h = ops.reshape(h, (h.shape[0], d.bars * d.tracks))
    outs.append(h)
    h = nets.discriminator[last](h)
    outs.append(h)
    return (h, outs) if intermediates else h

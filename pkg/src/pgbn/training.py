"""WGAN-GP training with Adam across the progressive phase schedule."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from pgbn import ops
from pgbn.checkpoint import save_checkpoint
from pgbn.data import Dataset, downsample_array
from pgbn.errors import ConfigurationError, NumericAbort
from pgbn.layers import DbnState, anneal_slope
from pgbn.networks import (
    ModelDims,
    NetworkSet,
    build_networks,
    discriminator_forward,
    generator_forward,
    grow,
    refiner_forward,
)
from pgbn.tensor import Tensor, backward, frozen, grad, no_grad, zero_grad

logger = logging.getLogger(__name__)

GP_NORM_EPS = 1e-12
METRIC_COLUMNS = ("phase", "epoch", "iteration", "g_loss", "d_loss", "gp", "slope")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs_per_phase: int = 2
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.9
    adam_eps: float = 1e-8
    gp_lambda: float = 10.0
    critic_steps: int = 5
    seed: int = 0
    anneal_factor: float = 1.1
    initial_slope: float = 1.0
    dtype: str = "float32"

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigurationError("batch_size must be >= 2 (minibatch stddev needs two samples)")
        if self.epochs_per_phase < 1 or self.critic_steps < 1:
            raise ConfigurationError("epochs_per_phase and critic_steps must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError(f"dtype must be float32 or float64, got {self.dtype}")


@dataclass(frozen=True)
class MetricRow:
    phase: int
    epoch: int
    iteration: int
    g_loss: float
    d_loss: float
    gp: float
    slope: float

    def to_line(self) -> str:
        return "\t".join(repr(getattr(self, c)) for c in METRIC_COLUMNS)


def iterations_per_epoch(dataset_size: int, batch_size: int) -> int:
    """Full batches per epoch; the partial tail batch is dropped."""
    return dataset_size // batch_size


def critic_loss(d_real: Tensor, d_fake: Tensor, gp, gp_lambda: float) -> Tensor:
    """``mean(D(fake)) - mean(D(real)) + lambda * gp``, minimized by the critic."""
    if d_real.shape[0] != d_fake.shape[0]:
        raise ConfigurationError("real and fake score batches differ in size")
    loss = ops.sub(ops.reduce_mean(d_fake), ops.reduce_mean(d_real))
    if gp_lambda:
        loss = ops.add(loss, ops.mul(gp, gp_lambda))
    return loss


def generator_loss(d_fake: Tensor) -> Tensor:
    return ops.neg(ops.reduce_mean(d_fake))


def gradient_penalty(d: Callable, real, fake, rng: np.random.Generator, eps=None) -> Tensor:
    """Mean over the batch of ``(||grad D(x_hat)||_2 - 1)^2``.

    ``x_hat = eps * real + (1 - eps) * fake`` with one uniform ``eps`` per
    sample (pass ``eps`` explicitly to pin it). The returned tensor stays
    differentiable with respect to the critic's parameters.
    """
    real = real.data if isinstance(real, Tensor) else np.asarray(real)
    fake = fake.data if isinstance(fake, Tensor) else np.asarray(fake)
    if real.shape != fake.shape:
        raise ConfigurationError(f"real {real.shape} and fake {fake.shape} differ")
    batch = real.shape[0]
    if eps is None:
        eps = rng.uniform(size=batch)
    eps = np.asarray(eps, dtype=real.dtype).reshape((batch,) + (1,) * (real.ndim - 1))
    x_hat = Tensor(eps * real + (1 - eps) * fake, requires_grad=True)
    scores = d(x_hat)
    (g,) = grad(ops.reduce_sum(scores), [x_hat], create_graph=True)
    axes = tuple(range(1, real.ndim))
    norms = ops.sqrt(ops.add(ops.reduce_sum(ops.square(g), axes), GP_NORM_EPS), GP_NORM_EPS)
    return ops.reduce_mean(ops.square(ops.sub(norms, 1.0)))


def adam_step(param, grad_, m, v, t, lr, beta1, beta2, eps):
    """One bias-corrected Adam update. Returns ``(param, m, v)`` as new arrays."""
    m = beta1 * m + (1 - beta1) * grad_
    v = beta2 * v + (1 - beta2) * grad_ * grad_
    m_hat = m / (1 - beta1**t)
    v_hat = v / (1 - beta2**t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class Adam:
    """Adam keyed by parameter name so moments survive network growth.

    Each parameter keeps its own step count, so a freshly added layer gets a
    correctly bias-corrected first update.
    """

    def __init__(self, lr=2e-4, beta1=0.5, beta2=0.9, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict = {}
        self.v: dict = {}
        self.t: dict = {}

    def step(self, params: dict) -> None:
        for name, p in params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            dtype = p.data.dtype
            m = self.m.get(name, np.zeros_like(p.data))
            v = self.v.get(name, np.zeros_like(p.data))
            t = self.t.get(name, 0) + 1
            # overflow shows up as non-finite parameters, which the loop reports
            with np.errstate(over="ignore", invalid="ignore"):
                new, m, v = adam_step(
                    p.data, g.astype(dtype), m, v, t,
                    dtype.type(self.lr), dtype.type(self.beta1), dtype.type(self.beta2), dtype.type(self.eps),
                )
            p.data = new.astype(dtype, copy=False)
            self.m[name], self.v[name], self.t[name] = m.astype(dtype, copy=False), v.astype(dtype, copy=False), t

    def state_arrays(self, prefix: str) -> dict:
        out = {}
        for name in self.m:
            out[f"{prefix}/m/{name}"] = self.m[name]
            out[f"{prefix}/v/{name}"] = self.v[name]
            out[f"{prefix}/t/{name}"] = np.array([self.t[name]], dtype=np.int64)
        return out

    def load_arrays(self, prefix: str, arrays: dict) -> None:
        for key, arr in arrays.items():
            if not key.startswith(prefix + "/"):
                continue
            kind, name = key[len(prefix) + 1 :].split("/", 1)
            if kind == "m":
                self.m[name] = arr.copy()
            elif kind == "v":
                self.v[name] = arr.copy()
            elif kind == "t":
                self.t[name] = int(arr[0])


@dataclass
class TrainState:
    dbn_state: DbnState
    rng: np.random.Generator
    g_opt: Adam
    d_opt: Adam
    epoch: int = 0
    iteration: int = 0
    metric_log: list = field(default_factory=list)
    slope_history: list = field(default_factory=list)

    @classmethod
    def fresh(cls, config: TrainConfig) -> "TrainState":
        def opt():
            return Adam(config.lr, config.beta1, config.beta2, config.adam_eps)

        return cls(
            DbnState(config.initial_slope, config.anneal_factor),
            np.random.default_rng([config.seed, 1]),
            opt(),
            opt(),
        )

    def optimizer_arrays(self) -> dict:
        return {**self.g_opt.state_arrays("g"), **self.d_opt.state_arrays("d")}


def _finite_scalar(t: Tensor, term: str, nets: NetworkSet, state: TrainState) -> float:
    value = float(t.data)
    if not math.isfinite(value):
        raise NumericAbort(
            f"{term} became {value} at phase {nets.phase.phase_index}, iteration {state.iteration}",
            phase=nets.phase.phase_index, iteration=state.iteration, term=term,
        )
    return value


def _check_params(params: dict, nets: NetworkSet, state: TrainState) -> None:
    for name, p in params.items():
        if not np.all(np.isfinite(p.data)):
            raise NumericAbort(
                f"parameter {name} non-finite at phase {nets.phase.phase_index}, iteration {state.iteration}",
                phase=nets.phase.phase_index, iteration=state.iteration, term=name,
            )


def sample_latent(rng: np.random.Generator, batch: int, dims: ModelDims, dtype) -> Tensor:
    return Tensor(rng.standard_normal((batch, dims.latent)).astype(dtype))


def generate(nets: NetworkSet, z: Tensor, dbn_state: DbnState) -> Tensor:
    """Generator followed by the per-track refiners: binary samples."""
    return refiner_forward(nets, generator_forward(nets, z), dbn_state)


def critic_step(nets, state, real: np.ndarray, config: TrainConfig):
    d_params = nets.discriminator_parameters()
    dtype = nets.dtype
    z = sample_latent(state.rng, real.shape[0], nets.dims, dtype)
    with no_grad():
        fake = generate(nets, z, state.dbn_state).data

    def critic(x):
        return discriminator_forward(nets, x)

    zero_grad(d_params.values())
    with frozen(nets.generator_parameters().values()):
        d_real = critic(Tensor(real))
        d_fake = critic(Tensor(fake))
        gp = gradient_penalty(critic, real, fake, state.rng)
        loss = critic_loss(d_real, d_fake, gp, config.gp_lambda)
    d_value = _finite_scalar(loss, "d_loss", nets, state)
    gp_value = _finite_scalar(gp, "gp", nets, state)
    backward(loss)
    state.d_opt.step(d_params)
    return d_value, gp_value


def generator_step(nets, state, batch: int):
    g_params = nets.generator_parameters()
    z = sample_latent(state.rng, batch, nets.dims, nets.dtype)
    zero_grad(g_params.values())
    with frozen(nets.discriminator_parameters().values()):
        loss = generator_loss(discriminator_forward(nets, generate(nets, z, state.dbn_state)))
    value = _finite_scalar(loss, "g_loss", nets, state)
    backward(loss)
    state.g_opt.step(g_params)
    return value


def train_phase(state: TrainState, nets: NetworkSet, data: np.ndarray, config: TrainConfig,
                on_row: Optional[Callable] = None) -> TrainState:
    """Run ``config.epochs_per_phase`` epochs on ``data`` (already at phase resolution).

    Each iteration draws one real batch, runs ``critic_steps`` critic updates
    on it (fresh latents and interpolation weights each time), then one joint
    generator + refiner update. The DBN slope is annealed after every epoch.
    """
    expected = nets.output_shape(1)[1:]
    if data.shape[1:] != expected:
        raise ConfigurationError(f"phase data has shape {data.shape[1:]}, expected {expected}")
    bs = config.batch_size
    n_iter = iterations_per_epoch(len(data), bs)
    if n_iter < 1:
        raise ConfigurationError(f"dataset of {len(data)} samples is smaller than one batch of {bs}")
    data = data.astype(nets.dtype, copy=False)
    for _ in range(config.epochs_per_phase):
        order = state.rng.permutation(len(data))
        for it in range(n_iter):
            real = data[order[it * bs : (it + 1) * bs]]
            for _ in range(config.critic_steps):
                d_value, gp_value = critic_step(nets, state, real, config)
            g_value = generator_step(nets, state, bs)
            _check_params(nets.parameters(), nets, state)
            state.iteration += 1
            row = MetricRow(nets.phase.phase_index, state.epoch + 1, state.iteration, g_value,
                            d_value, gp_value, state.dbn_state.slope)
            state.metric_log.append(row)
            if on_row is not None:
                on_row(row)
        state.epoch += 1
        state.dbn_state = anneal_slope(state.dbn_state)
        state.slope_history.append(state.dbn_state.slope)
        logger.info("phase %d epoch %d done, slope %.4f", nets.phase.phase_index, state.epoch,
                    state.dbn_state.slope)
    return state


@dataclass
class TrainSinks:
    """Where training writes its artifacts; every field is optional."""

    checkpoint_dir: Optional[Path] = None
    metric_log: Optional[Path] = None
    on_phase_end: Optional[Callable] = None
    checkpoint_every: int = 1  # phases between checkpoints; the last phase is always saved


def train_progressive(config: TrainConfig, dataset, dims: Optional[ModelDims] = None,
                      sinks: Optional[TrainSinks] = None, last_phase: Optional[int] = None):
    """Train every phase in turn, growing the networks between phases.

    ``dataset`` is a :class:`~pgbn.data.Dataset` or a stacked full-resolution
    array. Returns ``(nets, state)``.
    """
    sinks = sinks or TrainSinks()
    full = dataset.to_array() if isinstance(dataset, Dataset) else np.asarray(dataset)
    if dims is None:
        _, bars, steps, pitches, tracks = full.shape
        dims = ModelDims(bars=bars, steps=steps, pitches=pitches, tracks=tracks)
    expected = (dims.bars, dims.steps, dims.pitches, dims.tracks)
    if full.shape[1:] != expected:
        raise ConfigurationError(f"dataset rolls are {full.shape[1:]}, model expects {expected}")
    last_phase = dims.num_phases if last_phase is None else last_phase
    if not 1 <= last_phase <= dims.num_phases:
        raise ConfigurationError(f"last_phase must be in 1..{dims.num_phases}")
    dtype = np.dtype(config.dtype)
    state = TrainState.fresh(config)
    nets = build_networks(1, config.seed, dims, dtype)
    nets.phase = _with_epochs(nets, config)

    log_fh = None
    if sinks.metric_log is not None:
        log_fh = open(sinks.metric_log, "w", encoding="utf-8")
        log_fh.write("\t".join(METRIC_COLUMNS) + "\n")

    def on_row(row):
        if log_fh is not None:
            log_fh.write(row.to_line() + "\n")

    try:
        for phase in range(1, last_phase + 1):
            data = downsample_array(full, nets.phase.time_steps, nets.phase.pitch_values)
            train_phase(state, nets, data, config, on_row)
            if log_fh is not None:
                log_fh.flush()
            due = sinks.checkpoint_every and phase % sinks.checkpoint_every == 0
            if sinks.checkpoint_dir is not None and (due or phase == last_phase):
                path = Path(sinks.checkpoint_dir) / f"phase_{phase:02d}.pgbc"
                save_checkpoint(path, nets, state.dbn_state, state.rng.bit_generator.state,
                                state.optimizer_arrays(),
                                {"epoch": state.epoch, "iteration": state.iteration})
            if sinks.on_phase_end is not None:
                sinks.on_phase_end(nets, state)
            if phase < last_phase:
                nets = grow(nets)
    finally:
        if log_fh is not None:
            log_fh.close()
    return nets, state


def _with_epochs(nets: NetworkSet, config: TrainConfig):
    return replace(nets.phase, epochs=config.epochs_per_phase)


def read_metric_log(path) -> list:
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if tuple(header) != METRIC_COLUMNS:
            raise ValueError(f"{path} is not a metric log (header {header})")
        for line in fh:
            if not line.strip():
                continue
            f = line.rstrip("\n").split("\t")
            rows.append(MetricRow(int(f[0]), int(f[1]), int(f[2]), float(f[3]), float(f[4]),
                                  float(f[5]), float(f[6])))
    return rows

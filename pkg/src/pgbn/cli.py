"""Command-line interface: ``train``, ``generate``, ``export-midi``, ``inspect``.

Exit codes: 0 success, 2 configuration error, 3 data/format error,
4 numeric abort during training.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from pgbn.checkpoint import MAGIC as CHECKPOINT_MAGIC
from pgbn.checkpoint import load_checkpoint
from pgbn.config import RunConfig, dump_config, load_config
from pgbn.data import (
    PianoRoll,
    export_midi,
    load_dataset,
    load_pianoroll,
    save_pianoroll,
    synth_dataset,
    validate,
)
from pgbn.errors import ConfigurationError, FormatError, NumericAbort
from pgbn.tensor import no_grad
from pgbn.training import (
    TrainSinks,
    generate,
    read_metric_log,
    sample_latent,
    train_progressive,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

LOG_FLOOR = -12.0

logger = logging.getLogger("pgbn")


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _resolve_dataset(cfg: RunConfig):
    if cfg.dataset:
        try:
            return load_dataset(cfg.dataset)
        except (OSError, FormatError) as exc:
            raise CliError(f"dataset: {exc}", EXIT_DATA) from None
    shape = (cfg.bars, cfg.steps, cfg.pitches, cfg.tracks)
    return synth_dataset(cfg.synthetic_count, shape, cfg.synthetic_seed,
                         track_names=cfg.model_dims().track_names)


def sample_rolls(nets, dbn_state, count: int, seed: int) -> list:
    rng = np.random.default_rng([seed, 2])
    z = sample_latent(rng, count, nets.dims, nets.dtype)
    with no_grad():
        cells = generate(nets, z, dbn_state).data
    return [PianoRoll(c.astype(np.uint8), nets.dims.track_names) for c in cells]


def _write_rolls(rolls, out_dir: Path) -> list:
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, roll in enumerate(rolls):
        problems = validate(roll)
        if problems:
            raise CliError(f"generated roll {i} invalid: {problems}", EXIT_DATA)
        path = out_dir / f"sample_{i:03d}.pgbn"
        save_pianoroll(roll, path)
        paths.append(path)
    return paths


def cmd_train(args) -> int:
    if args.print_defaults:
        sys.stdout.write(dump_config(RunConfig()))
        return EXIT_OK
    if not args.config:
        raise CliError("train needs --config (see --print-defaults)", EXIT_CONFIG)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.out = args.out
        cfg.validate()
    except ConfigurationError as exc:
        raise CliError(f"config: {exc}", EXIT_CONFIG) from None
    dataset = _resolve_dataset(cfg)
    dims = cfg.model_dims()

    out = Path(cfg.out)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(dump_config(cfg), encoding="utf-8")
    sinks = TrainSinks(out / "checkpoints", out / "metrics.tsv", checkpoint_every=cfg.checkpoint_every)
    try:
        nets, state = train_progressive(cfg.train_config(), dataset, dims, sinks,
                                        last_phase=cfg.last_phase or None)
    except NumericAbort as exc:
        raise CliError(f"numeric abort: {exc}", EXIT_NUMERIC) from None
    except ConfigurationError as exc:
        raise CliError(f"config: {exc}", EXIT_CONFIG) from None
    if cfg.samples:
        _write_rolls(sample_rolls(nets, state.dbn_state, cfg.samples, cfg.seed), out / "samples")
    print(f"trained {nets.phase.phase_index} phases, {state.iteration} iterations -> {out}")
    return EXIT_OK


def cmd_generate(args) -> int:
    if not args.checkpoint:
        raise CliError("generate needs --checkpoint", EXIT_CONFIG)
    try:
        ckpt = load_checkpoint(args.checkpoint)
    except (OSError, FormatError) as exc:
        raise CliError(f"checkpoint: {exc}", EXIT_DATA) from None
    if args.count < 1:
        raise CliError("--count must be >= 1", EXIT_CONFIG)
    rolls = sample_rolls(ckpt.nets, ckpt.dbn_state, args.count, args.seed or 0)
    paths = _write_rolls(rolls, Path(args.out or "samples"))
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_export_midi(args) -> int:
    try:
        roll = load_pianoroll(args.roll)
    except (OSError, FormatError) as exc:
        raise CliError(f"roll: {exc}", EXIT_DATA) from None
    target = Path(args.out) if args.out else Path(args.roll).with_suffix(".mid")
    try:
        export_midi(roll, args.tempo, target)
    except (OSError, ConfigurationError) as exc:
        raise CliError(f"midi: {exc}", EXIT_DATA) from None
    print(target)
    return EXIT_OK


def format_layer_table(nets, batch: int) -> list:
    sched = nets.layer_specs(batch)
    lines = ["----- GAN/G -----", "[GAN/G/shared]", f"Input\t\t({batch}, {nets.dims.latent})"]
    for s in sched.generator:
        lines.append(f"GAN/G/shared/Layer_{s.index}\t{s.kind}\t{s.out_shape}")
    for t in range(nets.dims.tracks):
        lines.append(f"[GAN/G/refiner{t}]")
        for s in sched.refiner:
            lines.append(f"GAN/G/refiner{t}/Layer_{s.index}\t{s.kind}\t{s.out_shape}")
    lines += ["----- GAN/D -----", "[GAN/D/shared]", f"Input\t\t{nets.output_shape(batch)}"]
    for s in sched.discriminator:
        lines.append(f"GAN/D/shared/Layer_{s.index}\t{s.kind}\t{s.out_shape}")
    return lines


def log_abs(value: float, floor: float = LOG_FLOOR) -> float:
    if value == 0 or not math.isfinite(value):
        return floor
    return max(math.log10(abs(value)), floor)


def loss_series(rows) -> list:
    """Per-iteration log10|loss| rows; ``epoch_end`` is 1 on an epoch's last iteration."""
    lines = ["phase\tepoch\titeration\tlog10_abs_g_loss\tlog10_abs_d_loss\tepoch_end"]
    for i, r in enumerate(rows):
        end = int(i + 1 == len(rows) or rows[i + 1].epoch != r.epoch)
        lines.append(f"{r.phase}\t{r.epoch}\t{r.iteration}\t{log_abs(r.g_loss):.6f}\t"
                     f"{log_abs(r.d_loss):.6f}\t{end}")
    return lines


def cmd_inspect(args) -> int:
    path = Path(args.path)
    try:
        with open(path, "rb") as fh:
            head = fh.read(4)
    except OSError as exc:
        raise CliError(f"inspect: {exc}", EXIT_DATA) from None
    if head == CHECKPOINT_MAGIC:
        try:
            ckpt = load_checkpoint(path)
        except FormatError as exc:
            raise CliError(f"checkpoint: {exc}", EXIT_DATA) from None
        nets = ckpt.nets
        g = sum(p.size for k, p in nets.generator_parameters().items() if k.startswith("G/"))
        r = sum(p.size for k, p in nets.generator_parameters().items() if k.startswith("R"))
        d = sum(p.size for p in nets.discriminator_parameters().values())
        lines = [
            f"phase {nets.phase.phase_index} of {nets.dims.num_phases} "
            f"(time {nets.phase.time_steps}, pitch {nets.phase.pitch_values}), "
            f"dbn slope {ckpt.dbn_state.slope!r}",
            *format_layer_table(nets, args.batch),
            f"parameters: generator {g}, refiners {r}, discriminator {d}, total {g + r + d}",
        ]
    else:
        try:
            rows = read_metric_log(path)
        except (OSError, ValueError, IndexError) as exc:
            raise CliError(f"inspect: {path} is neither a checkpoint nor a metric log ({exc})",
                           EXIT_DATA) from None
        lines = loss_series(rows)
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pgbn", description=__doc__.splitlines()[0])
    parser.add_argument("--print-defaults", action="store_true", help="print the default config and exit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("train", help="progressively train on a dataset")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--print-defaults", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample binary piano-rolls from a checkpoint")
    p.add_argument("--checkpoint")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("export-midi", help="render a PGBN roll as a MIDI file")
    p.add_argument("roll")
    p.add_argument("--tempo", type=float, default=120.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_export_midi)

    p = sub.add_parser("inspect", help="describe a checkpoint or turn a metric log into log-loss series")
    p.add_argument("path")
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--out")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                         format="%(levelname)s %(name)s: %(message)s")
    if args.command is None:
        if args.print_defaults:
            sys.stdout.write(dump_config(RunConfig()))
            return EXIT_OK
        parser.print_help()
        return EXIT_CONFIG
    try:
        return args.func(args)
    except CliError as exc:
        print(f"pgbn: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``mimnet {gen-data,train,evaluate,predict,sweep}``.

Exit codes: 0 success, 64 usage, 65 refused configuration, 66 bad input file,
2 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import data as data_mod
from .data import Metal
from .model import CheckpointError, ModelConfig, load_checkpoint, predict, save_checkpoint
from .numcore import ContractError, DomainError
from .sweeps import ModelBackend, OracleBackend, SweepSpec, run_sweep, sweep_table
from .training import MAX_EPOCHS, Observer, TrainConfig, evaluate, train

EXIT_OK = 0
EXIT_IO = 2
EXIT_USAGE = 64
EXIT_REFUSED = 65
EXIT_BAD_INPUT = 66

log = logging.getLogger("mimnet")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _usage(msg: str) -> CliError:
    return CliError(msg, EXIT_USAGE)


def _write_text(path, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}", EXIT_IO) from None


def _read_dataset(path) -> data_mod.Dataset:
    try:
        return data_mod.read_dataset(path)
    except FileNotFoundError:
        raise CliError(f"dataset not found: {path}", EXIT_BAD_INPUT) from None
    except (data_mod.DatasetParseError, ContractError, ValueError) as exc:
        raise CliError(f"bad dataset {path}: {exc}", EXIT_BAD_INPUT) from None


def _load_ckpt(path):
    try:
        return load_checkpoint(path)
    except FileNotFoundError:
        raise CliError(f"checkpoint not found: {path}", EXIT_BAD_INPUT) from None
    except CheckpointError as exc:
        raise CliError(f"cannot load checkpoint: {type(exc).__name__}: {exc}", EXIT_BAD_INPUT) from None


def _parse_floats(text: str, n: int, what: str) -> list[float]:
    parts = text.split(",")
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise _usage(f"{what} must be {n} comma-separated numbers, got {text!r}") from None
    if len(vals) != n:
        raise _usage(f"{what} must be {n} comma-separated numbers, got {text!r}")
    return vals


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    ds = data_mod.generate_grid(Metal.parse(args.metal))
    try:
        data_mod.write_dataset(ds, args.out, seed=args.seed)
    except OSError as exc:
        raise CliError(f"cannot write {args.out}: {exc}", EXIT_IO) from None
    print(f"wrote {len(ds)} samples to {args.out}", file=sys.stderr)
    return EXIT_OK


class _FoldPrinter(Observer):
    def __init__(self, k: int):
        self.k = k

    def on_fold_scored(self, fold, val_db):
        print(f"fold {fold + 1}/{self.k} validation {val_db:.2f} dB", file=sys.stderr, flush=True)


def cmd_train(args) -> int:
    if args.folds < 2:
        raise _usage("--folds must be at least 2")
    if args.batch < 1:
        raise _usage("--batch must be at least 1")
    if args.epochs_per_fold < 0 or args.finetune_epochs < 0:
        raise _usage("epoch counts must be non-negative")
    config = TrainConfig(
        k=args.folds,
        epochs_per_fold=args.epochs_per_fold,
        stage1_lr=args.lr,
        finetune_lr=args.finetune_lr,
        finetune_epochs=args.finetune_epochs,
        batch_size=args.batch,
        seed=args.seed,
        init=args.init,
        model=ModelConfig(),
    )
    if not config.within_budget and not args.allow_over_budget:
        raise CliError(
            f"epoch budget {config.epochs_total} exceeds {MAX_EPOCHS}; pass --allow-over-budget to run anyway",
            EXIT_REFUSED,
        )
    dataset = _read_dataset(args.data)
    if len(dataset) != data_mod.FULL_GRID_SIZE:
        raise CliError(f"dataset must hold {data_mod.FULL_GRID_SIZE} samples, found {len(dataset)}", EXIT_BAD_INPUT)
    source = None
    if args.init is not None:
        source, _, _ = _load_ckpt(args.init)
        if source.config != config.model:
            raise CliError("initial checkpoint has a different model shape", EXIT_BAD_INPUT)
    params, _, report = train(dataset, config, source=source, observer=_FoldPrinter(config.k))
    meta = {
        "metal": dataset.metal.value,
        "seed": config.seed,
        "epochs_total": config.epochs_total,
        "init": report.init,
        "source_checkpoint": args.init,
        "stage1_lr": report.stage1_lr,
        "finetune_lr": report.finetune_lr,
        "dataset_fingerprint": report.dataset_fingerprint,
        "version": __version__,
    }
    try:
        save_checkpoint(args.out, params, meta)
    except OSError as exc:
        raise CliError(f"cannot write {args.out}: {exc}", EXIT_IO) from None
    doc = report.to_dict()
    doc["version"] = __version__
    doc["checkpoint"] = str(args.out)
    _write_text(args.report, _dump_json(doc))
    print(f"test {report.test_db:.2f} dB  train {report.finetune_train_db:.2f} dB  epochs {report.epochs_run}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if args.split in ("test", "pool") and args.seed is None:
        raise _usage(f"--split {args.split} needs the training --seed to rebuild the split")
    params, meta, _ = _load_ckpt(args.ckpt)
    dataset = _read_dataset(args.data)
    if args.split == "all":
        samples = dataset
    else:
        try:
            pool, test = data_mod.split(dataset, args.seed)
        except ContractError as exc:
            raise CliError(str(exc), EXIT_BAD_INPUT) from None
        samples = test if args.split == "test" else pool
    db = evaluate(params, samples)
    print(f"{db:.2f}")
    if args.report:
        _write_text(
            args.report,
            _dump_json({"split": args.split, "seed": args.seed, "samples": len(samples), "loss_db": db,
                        "metal": dataset.metal.value, "checkpoint_metal": meta.get("metal"),
                        "dataset_fingerprint": dataset.fingerprint(), "version": __version__}),
        )
    return EXIT_OK


def cmd_predict(args) -> int:
    geom = _parse_floats(args.geometry, 4, "--geometry")
    try:
        data_mod.Geometry(*geom)
    except DomainError as exc:
        raise _usage(str(exc)) from None
    params, meta, _ = _load_ckpt(args.ckpt)
    extrapolated = bool(ModelBackend(params).outside_range(np.array([geom]))[0])
    if extrapolated:
        print("warning: geometry lies outside the model's training range; prediction is an extrapolation",
              file=sys.stderr)
    re, im = predict(params, [geom])
    header = [f"re_{k}" for k in range(data_mod.N_WAVELENGTHS)] + [f"im_{k}" for k in range(data_mod.N_WAVELENGTHS)]
    values = [format(float(v), ".17g") for v in np.concatenate([re[0], im[0]])]
    lines = [
        f"# mimnet {__version__} prediction, metal={meta.get('metal')}, geometry H,P,R,T={args.geometry}",
        f"# wavelengths_nm: 500 + k*350/63, k=0..63",
        f"# extrapolated={int(extrapolated)}",
        ",".join(header),
        ",".join(values),
    ]
    _write_text(args.out, "\n".join(lines) + "\n")
    return EXIT_OK


def _parse_range(text: str) -> tuple[float, float, float]:
    vals = text.split(":")
    if len(vals) != 3:
        raise _usage(f"--range must be START:STOP:STEP, got {text!r}")
    try:
        return tuple(float(v) for v in vals)
    except ValueError:
        raise _usage(f"--range must be START:STOP:STEP, got {text!r}") from None


def _parse_fixed(text: str) -> dict[str, float]:
    fixed = {}
    for part in text.split(","):
        name, sep, val = part.partition("=")
        if not sep or name.strip() not in data_mod.PARAM_NAMES:
            raise _usage(f"--fixed entries must look like H=30, got {part!r}")
        try:
            fixed[name.strip()] = float(val)
        except ValueError:
            raise _usage(f"--fixed value for {name} is not a number: {val!r}") from None
    return fixed


def cmd_sweep(args) -> int:
    if (args.oracle is None) == (args.ckpt is None):
        raise _usage("give exactly one of --oracle METAL or --ckpt CKPT")
    start, stop, step = _parse_range(args.range)
    fixed = _parse_fixed(args.fixed)
    if args.oracle is not None:
        try:
            backend = OracleBackend(Metal.parse(args.oracle))
        except DomainError as exc:
            raise _usage(str(exc)) from None
        source = f"oracle={backend.metal.value}"
    else:
        params, meta, _ = _load_ckpt(args.ckpt)
        backend = ModelBackend(params, allow_extrapolation=args.allow_extrapolation)
        source = f"checkpoint={args.ckpt} metal={meta.get('metal')}"
    try:
        spec = SweepSpec(backend, fixed, args.vary, start, stop, step, probe=args.probe_phase)
        rows = run_sweep(spec)
    except (ContractError, DomainError) as exc:
        raise _usage(str(exc)) from None
    comments = [
        f"mimnet {__version__} sweep {source}",
        f"vary={args.vary} range={args.range} fixed={args.fixed}",
    ]
    if args.probe_phase is not None:
        comments.append(f"phase_at_probe: radians at {args.probe_phase:g} nm")
    text = sweep_table(rows, probe=args.probe_phase, with_resonance=args.find_resonance, comments=comments)
    _write_text(args.out, text)
    print(f"wrote {len(rows)} rows to {args.out}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mimnet", description="Residual-network S11 surrogate for MIM metasurfaces.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write the 6561-sample synthetic dataset for one metal")
    p.add_argument("--metal", required=True, type=str.lower, choices=["al", "au", "ag"])
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="k-fold + fine-tune training, optionally transferred from --init")
    p.add_argument("--data", required=True)
    p.add_argument("--init", default=None, help="checkpoint to transfer weights from")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--epochs-per-fold", type=int, default=100)
    p.add_argument("--lr", type=float, default=None, help="stage-1 rate (default 5e-4; 3e-4 for Ag transfer)")
    p.add_argument("--finetune-lr", type=float, default=1e-4)
    p.add_argument("--finetune-epochs", type=int, default=100)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--allow-over-budget", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="loss of a checkpoint on a dataset, in dB")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=["test", "pool", "all"], default="all")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="predict one spectrum")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--geometry", required=True, help="H,P,R,T in nm")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("sweep", help="single-parameter sweep over the oracle or a model")
    p.add_argument("--oracle", default=None, metavar="METAL")
    p.add_argument("--ckpt", default=None)
    p.add_argument("--vary", required=True, choices=list(data_mod.PARAM_NAMES))
    p.add_argument("--range", required=True, help="START:STOP:STEP in nm")
    p.add_argument("--fixed", required=True, help="e.g. H=30,P=300,T=80")
    p.add_argument("--probe-phase", type=float, default=None, metavar="NM")
    p.add_argument("--find-resonance", action="store_true")
    p.add_argument("--allow-extrapolation", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"mimnet {args.command}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())

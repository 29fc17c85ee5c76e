"""Command-line interface: corrupt, train, denoise, evaluate, sweep, verify.

Exit codes: 0 success, 1 usage error, 2 data error, 3 verification failure.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import io
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import SCALES, build_training_set, list_images, load_patchset, save_patchset
from .errors import IdcnnError
from .idcnn import (
    TrainConfig,
    TrainingState,
    build_model,
    check_threshold,
    forward,
    load_model,
    save_model,
    train,
    write_loss_csv,
)
from .images import load_image, load_map, save_map, save_ppm, save_probability_map
from .metrics import REPORT_COLUMNS, evaluate
from .noise import NoiseSpec, corrupt
from .restore import adaptive_mean_restore

log = logging.getLogger("idcnn_switch")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3
THREADS_ENV = "IDCNN_THREADS"
CSV_COLUMNS = ("image", "rho", "method") + REPORT_COLUMNS


class UsageError(Exception):
    pass


class VerificationFailed(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- helpers -----------------------------------------------------------------


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _unit_interval(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"{text} is not in [0, 1]")
    return v


def _train_rho(text: str) -> str:
    if text.strip().lower() == "random":
        return "random"
    return str(_unit_interval(text))


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def read_config_file(path) -> dict[str, str]:
    """Plain ``key=value`` lines; blank lines and ``#`` comments ignored."""
    values = {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{n}: expected key=value, got {raw!r}")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _apply_config(sub: argparse.ArgumentParser, values: dict[str, str]) -> None:
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in values.items():
        action = actions.get(key)
        if action is None or key in ("help", "config"):
            raise UsageError(f"unknown config key {key!r}")
        if isinstance(action, argparse.BooleanOptionalAction) or action.nargs == 0:
            low = value.lower()
            if low not in _TRUE | _FALSE:
                raise UsageError(f"config key {key!r} expects a boolean, got {value!r}")
            defaults[key] = low in _TRUE
        else:
            # argparse converts string defaults with the action's type
            defaults[key] = value
    sub.set_defaults(**defaults)


def resolved_config(args: argparse.Namespace) -> dict[str, str]:
    skip = {"func", "verbose"}
    return {k: str(v) for k, v in sorted(vars(args).items()) if k not in skip}


def write_config_sidecar(path, args) -> None:
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in resolved_config(args).items()))


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)  # round-trips exactly; infinity prints as "inf"
    return str(v)


def write_report(rows: list[dict], out, comments: dict[str, str]) -> None:
    buf = io.StringIO()
    for k, v in comments.items():
        buf.write(f"# {k}={v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    if out is None or str(out) == "-":
        sys.stdout.write(buf.getvalue())
    else:
        Path(out).write_text(buf.getvalue())


def read_report(path) -> list[dict[str, str]]:
    with open(path, newline="") as f:
        lines = [line for line in f if not line.startswith("#")]
    return list(csv.DictReader(lines))


def _default_sibling(path: str, suffix: str) -> str:
    p = Path(path)
    return str(p.with_name(p.stem + suffix))


# -- commands ----------------------------------------------------------------


def cmd_corrupt(args) -> int:
    image = load_image(args.input)
    noisy, noise_map = corrupt(image, args.rho, args.model, np.random.default_rng(args.seed))
    map_out = args.map or _default_sibling(args.output, ".map.pgm")
    save_ppm(noisy, args.output)
    save_map(noise_map, map_out)
    write_config_sidecar(args.output + ".cfg", args)
    flagged = int(noise_map.sum())
    print(f"flagged {flagged} of {noise_map.size} pixels (density {flagged / noise_map.size:.4f})")
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs, lr=args.lr, lr_decay=args.lr_decay, decay_epoch=args.decay_epoch,
        batch_size=args.batch_size, patch_size=args.patch_size, train_noise=args.rho,
        noise_model=args.noise, seed=args.seed,
    )


def cmd_train(args) -> int:
    config = _train_config(args)
    noise = NoiseSpec.parse(config.train_noise, config.noise_model)
    if args.patch_cache and Path(args.patch_cache).exists():
        patches = load_patchset(args.patch_cache)
    else:
        patches = build_training_set(
            args.data, config.patch_size, noise, seed=config.seed, scales=args.scales,
            augmentation=args.augment, max_images=args.max_images,
        )
        if args.patch_cache:
            save_patchset(patches, args.patch_cache)
    if len(patches) == 0:
        raise IdcnnError(f"no {config.patch_size}x{config.patch_size} patches could be cut from {args.data}")

    if args.resume:
        model, _, state = load_model(args.resume)
        state = state or TrainingState()
    else:
        model = build_model(args.depth, args.filters, rng=config.seed)
        state = TrainingState()

    loss_csv = args.loss_csv or _default_sibling(args.out, ".loss.csv")
    comments = resolved_config(args)

    def checkpoint(m, st):
        if args.checkpoint_every and st.epoch % args.checkpoint_every == 0 and st.epoch < config.epochs:
            save_model(args.out, m, config, st)
            write_loss_csv(loss_csv, st.history, comments)

    print(f"training on {len(patches)} patches of {config.patch_size}x{config.patch_size}")
    model, history = train(model, patches, config, state, on_epoch_end=checkpoint)
    save_model(args.out, model, config, state)
    write_loss_csv(loss_csv, history, comments)
    if history:
        print(f"epoch {len(history)} mean loss {history[-1]:.6f}")
    return EXIT_OK


def cmd_denoise(args) -> int:
    check_threshold(args.threshold)
    if not (args.model or args.oracle_map):
        raise UsageError("denoise needs --model or --oracle-map")
    image = load_image(args.input)
    prob = None
    if args.oracle_map:
        noise_map = load_map(args.oracle_map)
    else:
        model, _, _ = load_model(args.model)
        prob = forward(model, image)
        noise_map = prob >= args.threshold
    restored = adaptive_mean_restore(image, noise_map)
    save_ppm(restored, args.output)
    save_map(noise_map, args.map_out or _default_sibling(args.output, ".map.pgm"))
    if args.prob_out:
        if prob is None:
            raise UsageError("--prob-out needs the detector; it cannot be combined with --oracle-map")
        save_probability_map(prob, args.prob_out)
    write_config_sidecar(args.output + ".cfg", args)
    print(f"restored {int(noise_map.sum())} of {noise_map.size} pixels")
    return EXIT_OK


def _evaluation_inputs(args) -> list[tuple[str, Path, Path, Path, Path]]:
    paths = [Path(args.clean), Path(args.restored), Path(args.truth), Path(args.est)]
    if not paths[0].is_dir():
        if any(p.is_dir() for p in paths):
            raise UsageError("either all of --clean/--restored/--truth/--est are directories or none")
        return [(paths[0].stem, *paths)]
    if not all(p.is_dir() for p in paths):
        raise UsageError("either all of --clean/--restored/--truth/--est are directories or none")
    items = []
    for clean in list_images(paths[0]):
        stem = clean.stem
        others = [paths[1] / f"{stem}.ppm", paths[2] / f"{stem}.pgm", paths[3] / f"{stem}.pgm"]
        missing = [str(p) for p in others if not p.exists()]
        if missing:
            raise FileNotFoundError(f"no match for {clean.name}: {', '.join(missing)}")
        items.append((stem, clean, *others))
    if not items:
        raise FileNotFoundError(f"no PPM images in {paths[0]}")
    return items


def evaluation_rows(args) -> list[dict]:
    rows = []
    for name, clean, restored, truth, est in _evaluation_inputs(args):
        row = evaluate(load_image(clean), load_image(restored), load_map(truth), load_map(est))
        rows.append({"image": name, "method": args.method, **row})
    if len(rows) > 1:
        mean = {c: float(np.mean([r[c] for r in rows])) for c in ("rho",) + REPORT_COLUMNS}
        rows.append({"image": "MEAN", "method": args.method, **mean})
    return rows


def cmd_evaluate(args) -> int:
    write_report(evaluation_rows(args), args.output, resolved_config(args))
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_checks

    results = run_checks(fault=args.inject_fault, seed=args.seed)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    total = sum(r.seconds for r in results)
    print(f"{len(results) - len(failed)}/{len(results)} checks passed in {total:.1f}s")
    if failed:
        raise VerificationFailed(f"failed checks: {', '.join(failed)}")
    return EXIT_OK


SWEEP_AXES = ("patch_size", "dataset_size", "train_rho", "repetition")


def _train_argv(args, value) -> list[str]:
    opts = {
        "depth": args.depth, "filters": args.filters, "epochs": args.epochs,
        "batch-size": args.batch_size, "patch-size": args.patch_size, "lr": args.lr,
        "lr-decay": args.lr_decay, "decay-epoch": args.decay_epoch, "rho": args.rho,
        "noise": args.noise, "seed": args.seed,
        "scales": ",".join(repr(s) for s in args.scales),
    }
    if args.max_images is not None:
        opts["max-images"] = args.max_images
    if args.axis == "patch_size":
        opts["patch-size"] = int(value)
    elif args.axis == "dataset_size":
        opts["max-images"] = int(value)
    elif args.axis == "train_rho":
        opts["rho"] = value
    elif args.axis == "repetition":
        opts["seed"] = args.seed + int(value)
    argv = [f"--{k}={v}" for k, v in opts.items()]
    argv.append("--augment" if args.augment else "--no-augment")
    return argv


def cmd_sweep(args) -> int:
    """Train one detector per axis value, then evaluate each on the test set."""
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    common = ["--threads", str(args.threads)] if args.threads else []
    if args.deterministic:
        common.append("--deterministic")
    test_images = list_images(args.test_dir)
    if not test_images:
        raise FileNotFoundError(f"no PPM images in {args.test_dir}")

    summary = []
    for value in args.values.split(","):
        value = value.strip()
        run = out / f"{args.axis}={value}"
        run.mkdir(exist_ok=True)
        model = run / "model.ckpt"
        _run(["train", "--data", args.train_dir, "--out", str(model), *_train_argv(args, value), *common])
        for rho in args.test_rhos:
            d = run / f"rho={rho:g}"
            for sub in ("noisy", "truth", "restored", "est"):
                (d / sub).mkdir(parents=True, exist_ok=True)
            for i, img in enumerate(test_images):
                stem = img.stem
                _run(["corrupt", "-i", str(img), "-o", str(d / "noisy" / f"{stem}.ppm"),
                      "--map", str(d / "truth" / f"{stem}.pgm"), "--rho", repr(rho),
                      "--model", args.test_noise, "--seed", str(args.seed * 100003 + i), *common])
                _run(["denoise", "-i", str(d / "noisy" / f"{stem}.ppm"), "--model", str(model),
                      "-o", str(d / "restored" / f"{stem}.ppm"), "--map-out", str(d / "est" / f"{stem}.pgm"),
                      "--threshold", repr(args.threshold), *common])
            report = d / "report.csv"
            _run(["evaluate", "--clean", args.test_dir, "--restored", str(d / "restored"),
                  "--truth", str(d / "truth"), "--est", str(d / "est"), "--method", f"{args.axis}={value}",
                  "--output", str(report), *common])
            mean = read_report(report)[-1]
            summary.append({"axis": args.axis, "value": value, "test_rho": repr(rho),
                            **{c: mean[c] for c in REPORT_COLUMNS}})

    buf = io.StringIO()
    for k, v in resolved_config(args).items():
        buf.write(f"# {k}={v}\n")
    w = csv.DictWriter(buf, fieldnames=["axis", "value", "test_rho", *REPORT_COLUMNS], lineterminator="\n")
    w.writeheader()
    w.writerows(summary)
    (out / "summary.csv").write_text(buf.getvalue())
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


class _SubcommandFailed(Exception):
    def __init__(self, code: int):
        super().__init__(code)
        self.code = code


def _run(argv: list[str]) -> None:
    log.info("sweep: %s", " ".join(argv))
    with contextlib.redirect_stdout(io.StringIO()):
        code = main(argv)
    if code != EXIT_OK:
        raise _SubcommandFailed(code)


# -- parser ------------------------------------------------------------------


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = _Parser(prog="idcnn", description="Deep-learning switching filter for impulsive noise.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)
    table = {}

    def add(name, func, help_text):
        p = subs.add_parser(name, help=help_text, description=help_text)
        p.set_defaults(func=func)
        p.add_argument("--config", help="key=value file; command-line flags take precedence")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--deterministic", action="store_true",
                       help="single-threaded numerics for byte-identical reruns")
        p.add_argument("--threads", type=int, default=None,
                       help=f"BLAS threads (default: ${THREADS_ENV} or library default)")
        p.add_argument("-v", "--verbose", action="count", default=0)
        table[name] = p
        return p

    p = add("corrupt", cmd_corrupt, "Corrupt an image with impulsive noise.")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-o", "--output", required=True, help="noisy PPM")
    p.add_argument("--map", help="ground-truth PGM (default: <output>.map.pgm)")
    p.add_argument("--model", choices=("ctri", "spin"), default="ctri")
    p.add_argument("--rho", type=_unit_interval, default=0.3)

    def add_train_options(p):
        p.add_argument("--depth", type=int, default=17)
        p.add_argument("--filters", type=int, default=64)
        p.add_argument("--epochs", type=int, default=50)
        p.add_argument("--batch-size", type=int, default=128)
        p.add_argument("--patch-size", type=int, default=41)
        p.add_argument("--lr", type=float, default=1e-3)
        p.add_argument("--lr-decay", type=float, default=0.1)
        p.add_argument("--decay-epoch", type=int, default=30)
        p.add_argument("--rho", type=_train_rho, default="0.3", help="training density or 'random'")
        p.add_argument("--noise", choices=("ctri", "spin"), default="ctri")
        p.add_argument("--scales", type=_float_list, default=",".join(str(s) for s in SCALES))
        p.add_argument("--augment", action=argparse.BooleanOptionalAction, default=True)
        p.add_argument("--max-images", type=int, default=None)

    p = add("train", cmd_train, "Train the impulse detector on a directory of clean PPM images.")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--loss-csv", help="per-epoch loss (default: <out>.loss.csv)")
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--patch-cache", help="patch cache file, reused when present")
    add_train_options(p)

    p = add("denoise", cmd_denoise, "Detect and restore impulses in an image.")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--model", help="detector checkpoint")
    p.add_argument("-o", "--output", required=True, help="restored PPM")
    p.add_argument("--map-out", help="detection PGM (default: <output>.map.pgm)")
    p.add_argument("--prob-out", help="16-bit probability PGM")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--oracle-map", help="restore with this map instead of running the detector")

    p = add("evaluate", cmd_evaluate, "Detection and quality metrics as CSV.")
    p.add_argument("--clean", required=True, help="clean PPM or directory")
    p.add_argument("--restored", required=True, help="noisy/restored PPM or directory")
    p.add_argument("--truth", required=True, help="ground-truth map PGM or directory")
    p.add_argument("--est", required=True, help="estimated map PGM or directory")
    p.add_argument("--method", default="idcnn")
    p.add_argument("--output", help="CSV path (default: stdout)")

    p = add("sweep", cmd_sweep, "Ablation sweep over one training parameter.")
    p.add_argument("--axis", choices=SWEEP_AXES, required=True)
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--train-dir", required=True)
    p.add_argument("--test-dir", required=True)
    p.add_argument("--test-rhos", type=_float_list, default="0.1,0.3,0.5")
    p.add_argument("--test-noise", choices=("ctri", "spin"), default="ctri")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out-dir", required=True)
    add_train_options(p)

    p = add("verify", cmd_verify, "Run gradient and oracle self-checks.")
    p.add_argument("--inject-fault", action="store_true", help="sabotage a backward pass (self-test)")

    return parser, table


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser, table = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            values = read_config_file(args.config)
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}") from exc
        _apply_config(table[args.command], values)
        args = parser.parse_args(argv)
    if args.threads is None and os.environ.get(THREADS_ENV):
        args.threads = int(os.environ[THREADS_ENV])
    if args.deterministic:
        args.threads = 1
    return args


def _thread_limit(n: int | None):
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.verbose:
        logging.basicConfig(level=logging.DEBUG if args.verbose > 1 else logging.INFO,
                            format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit(args.threads):
            return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except VerificationFailed as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except _SubcommandFailed as exc:
        return exc.code
    except (IdcnnError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""Command-line entry point: ``maskfuse {synth,train,cv,eval,gradcheck}``.

Settings resolve as built-in defaults < ``--config`` JSON < explicit flags.
Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 numeric failure.
"""

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .data import SyntheticSpec, load_dataset, synth_generate, write_dataset
from .errors import DataError, MaskfuseError, NumericError
from .gradcheck import random_suite
from .metrics import CSV_HEADER, report_serialize, to_json
from .model import ArchConfig, load_checkpoint, save_checkpoint
from .train import TrainConfig, cross_validate, evaluate_params, train

log = logging.getLogger("maskfuse")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# config-file key -> default; flags use the same names with '-' for '_'
DEFAULTS = {
    "seed": 0,
    "epochs": 100,
    "lr": 1e-3,
    "batch_size": 32,
    "gamma": 2.0,
    "acb_enabled": True,
    "aff_enabled": True,
    "r": 16,
    "hidden": 128,
    "d": None,
    "S": None,
    "k": 5,
    "counts": [100, 100, 100],
    "separation": 5.0,
    "noise": 1.0,
    "informative": [True] * 6,
    "configs": 20,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text):
    try:
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _mask(text):
    bits = text.split(",") if "," in text else list(text)
    if any(b not in ("0", "1") for b in bits):
        raise argparse.ArgumentTypeError(f"expected six 0/1 flags, got {text!r}")
    return [b == "1" for b in bits]


def build_parser():
    S = argparse.SUPPRESS
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", default=S, help="JSON file of settings (flags override it)")
    common.add_argument("--out", metavar="PATH", default=S, help="output path")
    common.add_argument("--seed", type=int, default=S, help="PRNG seed (u64)")
    common.add_argument("--force", action="store_true", default=S, help="overwrite existing outputs")
    common.add_argument("-v", "--verbose", action="store_true", default=False, help="debug logging")

    shape = _Parser(add_help=False)
    shape.add_argument("--d", type=int, default=S, help="channels per expression map")
    shape.add_argument("--S", type=int, default=S, help="spatial positions per map")

    training = _Parser(add_help=False)
    training.add_argument("--data", metavar="PATH", default=S, help="dataset manifest or directory")
    training.add_argument("--epochs", type=int, default=S)
    training.add_argument("--lr", type=float, default=S)
    training.add_argument("--batch-size", dest="batch_size", type=int, default=S)
    training.add_argument("--gamma", type=float, default=S, help="focusing parameter")
    training.add_argument("--no-acb", dest="acb_enabled", action="store_false", default=S,
                          help="plain cross-entropy instead of class-balanced focal loss")
    training.add_argument("--no-aff", dest="aff_enabled", action="store_false", default=S,
                          help="bypass attention fusion (weights pinned to 1)")
    training.add_argument("--r", type=int, default=S, help="attention reduction ratio")
    training.add_argument("--hidden", type=int, default=S, help="classifier hidden width")

    parser = _Parser(prog="maskfuse", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"maskfuse {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth", parents=[common, shape], help="write a synthetic dataset")
    p.add_argument("--counts", type=_int_list, default=S, help="per-class counts, e.g. 200,40,20")
    p.add_argument("--separation", type=float, default=S, help="norm of each class-mean direction")
    p.add_argument("--noise", type=float, default=S, help="noise standard deviation")
    p.add_argument("--informative", type=_mask, default=S, help="six 0/1 flags, e.g. 111100")

    sub.add_parser("train", parents=[common, shape, training], help="train and write a checkpoint")

    p = sub.add_parser("cv", parents=[common, shape, training], help="stratified k-fold cross-validation")
    p.add_argument("--k", type=int, default=S, help="number of folds (default 5)")
    p.add_argument("--csv", metavar="PATH", default=S, help="also write per-fold auc,gmean,f1,acc rows")

    p = sub.add_parser("eval", parents=[common], help="score a checkpoint on a dataset")
    p.add_argument("--data", metavar="PATH", default=S, help="dataset manifest or directory")
    p.add_argument("--checkpoint", metavar="PATH", default=S, help="model checkpoint file")

    p = sub.add_parser("gradcheck", parents=[common, shape], help="finite-difference gradient suite")
    p.add_argument("--configs", type=int, default=S, help="number of random configurations")

    lines = ["flags by command:"]
    for name, sp in sub.choices.items():
        flags = sorted({o for a in sp._actions for o in a.option_strings if o.startswith("--")})
        lines.append(f"  {name}: {' '.join(flags)}")
    parser.epilog = "\n".join(lines)
    parser.formatter_class = argparse.RawDescriptionHelpFormatter
    return parser


def resolve(ns):
    """Merge defaults, config file and flags into one settings dict."""
    settings = dict(DEFAULTS)
    flags = vars(ns)
    if "config" in flags:
        path = Path(flags["config"])
        if not path.is_file():
            raise DataError(f"config file not found: {path}")
        try:
            cfg = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON ({exc})") from None
        unknown = set(cfg) - set(DEFAULTS)
        if unknown:
            raise DataError(f"{path}: unknown settings {sorted(unknown)}")
        settings.update(cfg)
        explicit = set(cfg)
    else:
        explicit = set()
    given = {k: v for k, v in flags.items() if k not in ("config", "verbose")}
    settings.update(given)
    settings["explicit"] = explicit | set(given)
    return settings


def _train_config(s):
    return TrainConfig(
        epochs=s["epochs"], lr=s["lr"], batch_size=s["batch_size"], seed=s["seed"],
        gamma=s["gamma"], acb_enabled=s["acb_enabled"], aff_enabled=s["aff_enabled"],
    )


def _arch_for(dataset, s):
    for key, actual in (("d", dataset.d), ("S", dataset.S)):
        if s[key] is not None and s[key] != actual:
            raise DataError(f"--{key} {s[key]} does not match the dataset ({key}={actual})")
    r = s["r"] if "r" in s["explicit"] else min(s["r"], 6 * dataset.d)
    return ArchConfig(d=dataset.d, S=dataset.S, r=r, h=s["hidden"], aff_enabled=s["aff_enabled"])


def _require(s, *keys):
    missing = [k for k in keys if k not in s]
    if missing:
        raise UsageError(f"missing required option(s): {', '.join('--' + k for k in missing)}")


def _writable(path, force):
    path = Path(path)
    if path.exists() and not force:
        raise DataError(f"{path} exists; pass --force to overwrite")
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _emit(text, out, force):
    if out is None:
        sys.stdout.write(text)
    else:
        _writable(out, force).write_text(text)


def cmd_synth(s):
    _require(s, "out")
    spec = SyntheticSpec(
        counts=tuple(s["counts"]), d=s["d"] or 8, S=s["S"] or 1,
        separation=s["separation"], noise=s["noise"],
        informative=tuple(s["informative"]), seed=s["seed"],
    )
    force = s.get("force", False)
    _writable(Path(s["out"]) / "manifest.json", force)
    manifest = write_dataset(synth_generate(spec), s["out"], force=force)
    print(f"wrote {sum(spec.counts)} subjects to {manifest}")


def cmd_train(s):
    _require(s, "data", "out")
    dataset = load_dataset(s["data"])
    cfg = _train_config(s)
    out = _writable(s["out"], s.get("force", False))
    params, history = train(dataset, _arch_for(dataset, s), cfg)
    save_checkpoint(params, out)
    hist = {
        "config": asdict(cfg),
        "epoch_loss": history.epoch_loss,
        "clamp_events": history.clamp_events,
        "wall_time": history.wall_time,
    }
    _writable(str(out) + ".history.json", True).write_text(to_json(hist) + "\n")
    print(f"final epoch loss {history.epoch_loss[-1]:.6g}; checkpoint written to {out}")


def cmd_cv(s):
    _require(s, "data", "out")
    dataset = load_dataset(s["data"])
    cfg = _train_config(s)
    arch = _arch_for(dataset, s)
    out = _writable(s["out"], s.get("force", False))
    folds, mean = cross_validate(dataset, arch, cfg, k=s["k"])
    report = {
        "k": s["k"],
        "config": asdict(cfg),
        "arch": asdict(arch),
        "folds": [f.as_dict() for f in folds],
        "mean": mean.as_dict(),
    }
    out.write_text(to_json(report) + "\n")
    if "csv" in s:
        rows = [CSV_HEADER] + [f.csv_row() for f in folds]
        _writable(s["csv"], s.get("force", False)).write_text("\n".join(rows) + "\n")
    print(f"{s['k']}-fold mean: auc {mean.auc:.4f} gmean {mean.gmean:.4f} f1 {mean.f1:.4f} acc {mean.acc:.4f}")


def cmd_eval(s):
    _require(s, "data", "checkpoint")
    dataset = load_dataset(s["data"])
    params = load_checkpoint(s["checkpoint"])
    report = evaluate_params(dataset, params)
    _emit(report_serialize(report), s.get("out"), s.get("force", False))


def cmd_gradcheck(s):
    result = random_suite(n_configs=s["configs"], seed=s["seed"], d=s["d"], S=s["S"])
    print(f"max relative error {result.max_rel_error:.3e} over {len(result.reports)} configurations")
    if "out" in s:
        body = {"max_rel_error": result.max_rel_error, "passed": result.passed,
                "per_config": [r.max_rel_error for r in result.reports]}
        _writable(s["out"], s.get("force", False)).write_text(to_json(body) + "\n")
    if not result.passed:
        raise NumericError(f"gradient check failed (tolerance {result.reports[0].tolerance:g})")


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "cv": cmd_cv,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
}


def run(argv=None):
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if ns.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        settings = resolve(ns)
        command = settings.pop("command")
        COMMANDS[command](settings)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (MaskfuseError, OSError, ValueError, TypeError) as exc:
        # ValueError/TypeError here come from ill-typed config values
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SystemExit as exc:  # --help / --version
        return exc.code or EXIT_OK
    return EXIT_OK


def main():
    sys.exit(run())

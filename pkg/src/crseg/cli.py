"""Command-line runner: ``crseg <command> --config <path> [--set key=value ...] --out <dir>``.

Configs are plain ``key = value`` lines (``#`` starts a comment). Every run
writes ``resolved.cfg`` (all keys, including the seed) and ``git_describe.txt``
into its output directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from . import defense, experiments, regretlab, synth
from .smoothing import SmoothingConfig, certify
from .tensor import NORMS, RandomSource, TensorFormatError, save_tensor
from .toymodel import ModelOracle, ToySegModel, TrainingDiverged, default_model, train

log = logging.getLogger("crseg")

EXIT_CONFIG = 2
EXIT_FAILED = 1
EXIT_BUDGET = 3


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple:
    return tuple(int(float(v)) for v in text.split(",") if v.strip())


def _fmt(value) -> str:
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


REQUIRED = object()
_DATA = synth.SynthDatasetSpec()
_SMOOTH = SmoothingConfig()

SMOOTHING_KEYS = {
    "sigma": (float, _SMOOTH.sigma),
    "m": (int, _SMOOTH.m),
    "a": (float, _SMOOTH.a),
    "b": (float, _SMOOTH.b),
    "interval": (int, 0),
}

SCHEMAS = {
    "gen-data": {
        "seed": (int, 0),
        "count": (int, _DATA.count),
        "height": (int, _DATA.height),
        "width": (int, _DATA.width),
        "num_classes": (int, _DATA.num_classes),
        "noise_std": (float, _DATA.noise_std),
        "contrast": (float, _DATA.contrast),
        "color_jitter": (float, _DATA.color_jitter),
    },
    "train": {
        "seed": (int, 0),
        "data": (str, REQUIRED),
        "epochs": (int, 20),
        "lr": (float, 0.05),
        "batch_size": (int, 8),
        "momentum": (float, 0.9),
        "k": (int, 2),
        "hidden": (int, 32),
    },
    "certify": {
        "seed": (int, 0),
        "model": (str, REQUIRED),
        "data": (str, REQUIRED),
        "images": (int, 0),
        **SMOOTHING_KEYS,
    },
    "attack": {
        "seed": (int, 0),
        "model": (str, REQUIRED),
        "data": (str, REQUIRED),
        "attack": (str, "pgd"),
        "norm": (str, "linf"),
        "eps": (float, 0.03),
        "steps": (int, 20),
        "lr": (float, 0.0),
        "rounds": (int, 100),
        "gamma": (float, 0.01),
        "query_limit": (int, 0),
        "best_every": (int, 0),
        "images": (int, 0),
        "workers": (int, 1),
        "traces": (_bool, True),
        **SMOOTHING_KEYS,
    },
    "defend": {
        "seed": (int, 0),
        "model": (str, REQUIRED),
        "data": (str, REQUIRED),
        "eps": (float, 0.03),
        "alpha": (float, 0.0),
        "epochs": (int, 10),
        "lr": (float, 0.01),
        "batch_size": (int, 8),
        "cr": (_bool, False),
        **SMOOTHING_KEYS,
    },
    "regret-lab": {
        "seed": (int, 0),
        "kind": (str, "quadratic"),
        "dim": (int, 2),
        "radius": (float, 1.0),
        "offset": (float, 0.0),
        "grid": (_ints, (1000, 10000, 100000)),
        "gammas": (_floats, (1e-1, 1e-2, 1e-3, 1e-4)),
        "samples": (int, 10000),
    },
    "report": {
        "seed": (int, 0),
        "runs": (str, REQUIRED),
    },
}


def parse_pairs(lines, source: str) -> dict:
    out = {}
    for no, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{no}: expected key = value, got {raw.strip()!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def resolve_config(command: str, config_path=None, overrides=()) -> dict:
    """Merge defaults, the config file and ``--set`` overrides; unknown keys are errors."""
    schema = SCHEMAS[command]
    raw = {}
    if config_path is not None:
        path = Path(config_path)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        raw.update(parse_pairs(path.read_text().splitlines(), str(path)))
    raw.update(parse_pairs(overrides, "--set"))
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown key(s) for {command}: {', '.join(unknown)}; "
                          f"allowed: {', '.join(sorted(schema))}")
    cfg = {}
    for key, (kind, default) in schema.items():
        if key in raw:
            try:
                cfg[key] = kind(raw[key])
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {raw[key]!r} ({exc})") from None
        elif default is REQUIRED:
            raise ConfigError(f"{command} needs {key} = ...")
        else:
            cfg[key] = default
    return cfg


def git_describe() -> str:
    try:
        res = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True,
                             text=True, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return res.stdout.strip() if res.returncode == 0 and res.stdout.strip() else "unknown"


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _smoothing(cfg) -> SmoothingConfig:
    return SmoothingConfig(cfg["sigma"], cfg["m"], cfg["a"], cfg["b"], cfg["interval"] or None)


def _need_dir(path, what):
    p = Path(path)
    if not p.is_dir():
        raise FileNotFoundError(f"{what} directory {p} does not exist")
    return p


def _load_model(path):
    return ToySegModel.load(_need_dir(path, "model"))


def _load_data(path, limit=0):
    data = synth.load_dataset(_need_dir(path, "data"))
    return data[:limit] if limit else data


def cmd_gen_data(cfg, out: Path) -> int:
    spec = synth.SynthDatasetSpec(count=cfg["count"], height=cfg["height"], width=cfg["width"],
                                  num_classes=cfg["num_classes"], noise_std=cfg["noise_std"],
                                  contrast=cfg["contrast"], color_jitter=cfg["color_jitter"],
                                  seed=cfg["seed"])
    synth.save_dataset(out, synth.gen_synthetic_dataset(spec))
    return 0


def cmd_train(cfg, out: Path) -> int:
    data = _load_data(cfg["data"])
    h, w, c = data[0][0].shape
    n_classes = int(max(int(y.max()) for _, y in data)) + 1
    model = default_model(cfg["seed"], height=h, width=w, channels=c, num_classes=max(n_classes, 2),
                          k=cfg["k"], hidden=cfg["hidden"])
    model = train(model, data, cfg["epochs"], cfg["lr"], RandomSource(cfg["seed"], 7),
                  cfg["batch_size"], cfg["momentum"])
    model.save(out / "model")
    (out / "train_losses.csv").write_text(
        "epoch,loss\n" + "".join(f"{i + 1},{v!r}\n" for i, v in enumerate(model.train_losses)))
    return 0


def cmd_certify(cfg, out: Path) -> int:
    model = _load_model(cfg["model"])
    data = _load_data(cfg["data"], cfg["images"])
    smooth = _smoothing(cfg)
    oracle = ModelOracle(model)
    root = RandomSource(cfg["seed"], experiments.ATTACK_STREAM)
    rows = []
    for i, (x, _) in enumerate(data):
        radii, weights = certify(oracle, x, smooth, root.split(i))
        save_tensor(out / f"radius_{i:05d}.ftz", radii)
        save_tensor(out / f"weights_{i:05d}.ftz", weights)
        rows.append({"image": i, "radius_mean": float(radii.mean()), "radius_min": float(radii.min()),
                     "weight_mean": float(weights.mean())})
    write_json(out / "summary.json", rows)
    return 0


def cmd_attack(cfg, out: Path) -> int:
    if cfg["norm"] not in NORMS and cfg["norm"] != "inf":
        raise ConfigError(f"norm must be one of {NORMS}")
    model = _load_model(cfg["model"])
    data = _load_data(cfg["data"], cfg["images"])
    spec = experiments.AttackSpec(cfg["attack"], cfg["norm"], cfg["eps"], cfg["steps"], cfg["lr"],
                                  cfg["rounds"], cfg["gamma"], _smoothing(cfg), cfg["query_limit"],
                                  cfg["best_every"])
    outcomes = experiments.evaluate(model, data, spec, cfg["seed"], cfg["workers"])
    (out / "images").mkdir(exist_ok=True)
    if cfg["traces"]:
        (out / "traces").mkdir(exist_ok=True)
    for o in outcomes:
        write_json(out / "images" / f"summary_{o.index:05d}.json", o.summary)
        if cfg["traces"]:
            path = out / "traces" / f"trace_{o.index:05d}.csv"
            (o.trace.write_csv if o.trace is not None else o.result.write_trace)(path)
    agg = experiments.aggregate([o.summary for o in outcomes], spec)
    write_json(out / "aggregate.json", agg)
    # wall-clock time is kept apart so the summaries stay byte-reproducible
    write_json(out / "timing.json", {"wall_ms": [round(o.wall_ms, 3) for o in outcomes]})
    print(format_table([agg]))
    if agg["exhausted"]:
        print(f"error: query budget exhausted on {agg['exhausted']} image(s)", file=sys.stderr)
        return EXIT_BUDGET
    return 0


def cmd_defend(cfg, out: Path) -> int:
    model = _load_model(cfg["model"])
    data = _load_data(cfg["data"])
    robust = defense.fast_adt(model, data, cfg["eps"], cfg["alpha"] or None, cfg["epochs"],
                              RandomSource(cfg["seed"], 0xADF), cfg["cr"], _smoothing(cfg), cfg["lr"],
                              cfg["batch_size"])
    robust.save(out / "model")
    return 0


def cmd_regret_lab(cfg, out: Path) -> int:
    bed = regretlab.ConvexTestbed(cfg["kind"], cfg["dim"], cfg["radius"], offset=cfg["offset"])
    root = RandomSource(cfg["seed"], 0x2E62E7)
    traces, slope = regretlab.regret_sweep(bed, cfg["grid"], root.split(0))
    diags = regretlab.estimator_diagnostics(bed, cfg["gammas"], cfg["samples"], root.split(1))
    regretlab.write_report(out / "report.csv", bed, cfg["grid"], traces, slope, diags)
    print(f"slope of log R(T) against log T: {slope:.4f}")
    for rounds, tr in zip(cfg["grid"], traces):
        print(f"T={rounds:<8d} R(T)={tr.total:.6g}  R(T)/T={tr.total / rounds:.3e}")
    return 0


TABLE_COLUMNS = (("attack", "attack"), ("norm", "norm"), ("eps", "eps"),
                 ("pixacc_clean_mean", "pixacc_clean"), ("pixacc_attacked_mean", "pixacc"),
                 ("miou_clean_mean", "miou_clean"), ("miou_attacked_mean", "miou"),
                 ("queries_mean", "queries"))


def format_table(rows) -> str:
    cells = [[title for _, title in TABLE_COLUMNS]]
    for r in rows:
        cells.append([f"{r[k]:.4f}" if isinstance(r[k], float) else str(r[k]) for k, _ in TABLE_COLUMNS])
    widths = [max(len(row[i]) for row in cells) for i in range(len(TABLE_COLUMNS))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells)


def cmd_report(cfg, out: Path) -> int:
    rows = []
    for run in (r.strip() for r in cfg["runs"].split(",") if r.strip()):
        path = Path(run) / "aggregate.json"
        if not path.is_file():
            raise FileNotFoundError(f"{path} not found; is {run} an attack run directory?")
        rows.append(json.loads(path.read_text(encoding="utf-8")))
    table = format_table(rows)
    (out / "table.txt").write_text(table + "\n", encoding="utf-8")
    with open(out / "table.csv", "w", encoding="utf-8") as fh:
        fh.write(",".join(title for _, title in TABLE_COLUMNS) + "\n")
        for r in rows:
            fh.write(",".join(str(r[k]) for k, _ in TABLE_COLUMNS) + "\n")
    print(table)
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "certify": cmd_certify,
    "attack": cmd_attack,
    "defend": cmd_defend,
    "regret-lab": cmd_regret_lab,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crseg", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args.command, args.config, args.set)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved.cfg").write_text(
        f"# crseg {args.command}\n" + "".join(f"{k} = {_fmt(v)}\n" for k, v in sorted(cfg.items())))
    (out / "git_describe.txt").write_text(git_describe() + "\n")
    start = time.perf_counter()
    try:
        code = COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, TensorFormatError, TrainingDiverged, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED
    log.info("%s finished in %.1fs", args.command, time.perf_counter() - start)
    return code


if __name__ == "__main__":
    sys.exit(main())

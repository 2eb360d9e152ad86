"""Command-line front end.

Subcommands:
  run       one experiment -> manifest.json, rounds.csv, summary.json
  sweep     grid over one config key, one run per value
  theory    deviation-bound verification suite -> CSV
  selftest  quick built-in property checks

Config files are flat `key = value` lines (# comments allowed). Unknown
keys are rejected; missing keys take the documented defaults. Outputs use
fixed column orders and 9-significant-digit decimals so reruns diff
clean. FEDARENA_THREADS caps sweep parallelism (0 = sequential).
"""

import argparse
import json
import math
import multiprocessing
import os
import sys
from pathlib import Path

import numpy as np

from .aggregation import KINDS as RULE_KINDS
from .aggregation import AggregationRule
from .attacks import KINDS as ATTACK_KINDS
from .attacks import AttackStrategy
from .engine import ExperimentConfig, ExperimentResult, run, validate_config
from .errors import ConfigError, FedArenaError
from .theory import (
    ADVERSARIES,
    TruncatedGaussian,
    deviation_bound,
    monte_carlo_deviation,
)

ARTIFACT_VERSION = "0.1.0"

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_ACCEPTANCE = 3

_D = ExperimentConfig()
_R = AggregationRule()
_A = AttackStrategy()

# key -> (default, parser); order here is the canonical emission order
DEFAULTS: dict[str, tuple] = {
    "n_clients": (_D.n_clients, int),
    "malicious_fraction": (_D.malicious_fraction, float),
    "C": (_D.participation, float),
    "lr": (_D.lr, float),
    "rounds": (_D.rounds, int),
    "batch_size": (_D.batch_size, int),
    "rule": (_R.kind, str),
    "trim_b": (_R.trim_b, int),
    "dp_sigma": (_R.dp_sigma, float),
    "top_k": (_R.top_k, int),
    "krum_f": (_R.krum_f, int),
    "krum_count": (_R.krum_count, int),
    "fang_mode": (_R.fang_mode, str),
    "fang_remove": (_R.fang_remove, int),
    "inner_rule": ("fedavg", str),
    "attack": (_A.kind, str),
    "gamma": (_A.mask_fraction, float),
    "alpha_min": (0.01, float),
    "alpha_max": (100.0, float),
    "alpha_points": (25, int),
    "knowledge": (_A.knowledge, str),
    "ga_scale": (_A.ga_scale, float),
    "dataset": (_D.dataset, str),
    "csv_path": (_D.csv_path, str),
    "classes": (_D.classes, int),
    "features": (_D.features, int),
    "per_class": (_D.per_class, int),
    "spread": (_D.spread, float),
    "partition": (_D.partition, str),
    "beta": (_D.beta, float),
    "train_fraction": (_D.train_fraction, float),
    "holdout_fraction": (_D.holdout_fraction, float),
    "val_fraction": (_D.val_fraction, float),
    "n_attack": (_D.n_attack, int),
    "n_mask": (_D.n_mask, int),
    "async": (_D.asynchronous, bool),
    "tau_max": (_D.tau_max, int),
    "seed": (_D.seed, int),
    "theory_n": (20, int),
    "theory_mu": (math.pi / 2, float),
    "theory_sigma": (0.3, float),
    "theory_m_values": ((0, 2, 4), "int_list"),
    "theory_b_max": (5, int),
    "theory_trials": (2000, int),
    "theory_adversaries": (ADVERSARIES, "str_list"),
}


def _coerce(key: str, raw: str):
    default, kind = DEFAULTS[key]
    raw = raw.strip()
    if raw.startswith('"') and raw.endswith('"') and len(raw) >= 2:
        raw = raw[1:-1]
    try:
        if kind is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind == "int_list":
            return tuple(int(v) for v in raw.split(",") if v.strip() != "")
        if kind == "str_list":
            return tuple(v.strip() for v in raw.split(",") if v.strip() != "")
        return raw
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r}") from None


def _fmt_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_fmt_value(v) for v in value)
    if isinstance(value, str):
        return value if value else '""'
    return str(value)


def parse_config_text(text: str) -> dict:
    values = {key: default for key, (default, _) in DEFAULTS.items()}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}", f"expected key = value, got {line!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(key, "unknown key")
        values[key] = _coerce(key, raw)
    _validate_values(values)
    return values


def _validate_values(v: dict) -> None:
    if not 0 < v["C"] <= 1:
        raise ConfigError("C", f"{v['C']} outside (0, 1]")
    if not 0 <= v["malicious_fraction"] < 0.5:
        raise ConfigError("malicious_fraction", f"{v['malicious_fraction']} outside [0, 0.5)")
    if v["rule"] not in RULE_KINDS:
        raise ConfigError("rule", f"{v['rule']!r} not one of {RULE_KINDS}")
    if v["inner_rule"] not in RULE_KINDS or v["inner_rule"] in ("dp", "topk"):
        raise ConfigError("inner_rule", f"{v['inner_rule']!r} cannot nest")
    if v["attack"] not in ATTACK_KINDS:
        raise ConfigError("attack", f"{v['attack']!r} not one of {ATTACK_KINDS}")
    if v["attack"] != "none" and not 0 < v["gamma"] < 1:
        raise ConfigError("gamma", f"{v['gamma']} outside (0, 1)")
    if v["knowledge"] not in ("full", "partial"):
        raise ConfigError("knowledge", f"{v['knowledge']!r} not full|partial")
    if v["dataset"] not in ("synthetic", "csv"):
        raise ConfigError("dataset", f"{v['dataset']!r} not synthetic|csv")
    if v["partition"] not in ("iid", "noniid"):
        raise ConfigError("partition", f"{v['partition']!r} not iid|noniid")
    if not 0 < v["beta"] <= 1:
        raise ConfigError("beta", f"{v['beta']} outside (0, 1]")
    if v["fang_mode"] not in ("err", "lfr"):
        raise ConfigError("fang_mode", f"{v['fang_mode']!r} not err|lfr")
    if v["alpha_min"] <= 0 or v["alpha_max"] < v["alpha_min"] or v["alpha_points"] < 1:
        raise ConfigError("alpha_min", "need 0 < alpha_min <= alpha_max, alpha_points >= 1")
    if v["lr"] <= 0:
        raise ConfigError("lr", f"{v['lr']} must be positive")
    if v["rounds"] < 1:
        raise ConfigError("rounds", f"{v['rounds']} must be >= 1")
    if v["tau_max"] < 0:
        raise ConfigError("tau_max", f"{v['tau_max']} must be >= 0")
    if v["classes"] < 2:
        raise ConfigError("classes", f"{v['classes']} must be >= 2")
    if v["features"] < 1 or v["per_class"] < 1:
        raise ConfigError("features", "features and per_class must be positive")
    if v["spread"] < 0:
        raise ConfigError("spread", f"{v['spread']} must be >= 0")
    if v["n_attack"] < 1 or v["n_mask"] < 0:
        raise ConfigError("n_attack", "need n_attack >= 1 and n_mask >= 0")
    if not 0 < v["train_fraction"] + v["holdout_fraction"] + v["val_fraction"] < 1:
        raise ConfigError("train_fraction", "data fractions must leave room for a test split")
    if v["theory_sigma"] < 0:
        raise ConfigError("theory_sigma", f"{v['theory_sigma']} must be >= 0")
    if v["theory_trials"] < 1:
        raise ConfigError("theory_trials", f"{v['theory_trials']} must be >= 1")
    for adv in v["theory_adversaries"]:
        if adv not in ADVERSARIES:
            raise ConfigError("theory_adversaries", f"{adv!r} not one of {ADVERSARIES}")


def parse_config(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError("config", f"no such file: {path}")
    return parse_config_text(p.read_text(encoding="utf-8"))


def default_config_text() -> str:
    lines = ["# fedarena configuration (defaults)"]
    for key, (default, _) in DEFAULTS.items():
        lines.append(f"{key} = {_fmt_value(default)}")
    return "\n".join(lines) + "\n"


def to_experiment_config(values: dict) -> ExperimentConfig:
    inner = None
    if values["rule"] in ("dp", "topk"):
        inner = AggregationRule(kind=values["inner_rule"])
    rule = AggregationRule(
        kind=values["rule"],
        trim_b=values["trim_b"],
        dp_sigma=values["dp_sigma"],
        top_k=values["top_k"],
        krum_f=values["krum_f"],
        krum_count=values["krum_count"],
        fang_mode=values["fang_mode"],
        fang_remove=values["fang_remove"],
        inner=inner,
    )
    grid = tuple(
        float(a)
        for a in np.geomspace(values["alpha_min"], values["alpha_max"], values["alpha_points"])
    )
    attack = AttackStrategy(
        kind=values["attack"],
        mask_fraction=values["gamma"],
        alpha_grid=grid,
        knowledge=values["knowledge"],
        ga_scale=values["ga_scale"],
    )
    cfg = ExperimentConfig(
        n_clients=values["n_clients"],
        malicious_fraction=values["malicious_fraction"],
        participation=values["C"],
        lr=values["lr"],
        rounds=values["rounds"],
        batch_size=values["batch_size"],
        rule=rule,
        attack=attack,
        dataset=values["dataset"],
        csv_path=values["csv_path"],
        classes=values["classes"],
        features=values["features"],
        per_class=values["per_class"],
        spread=values["spread"],
        partition=values["partition"],
        beta=values["beta"],
        train_fraction=values["train_fraction"],
        holdout_fraction=values["holdout_fraction"],
        val_fraction=values["val_fraction"],
        n_attack=values["n_attack"],
        n_mask=values["n_mask"],
        asynchronous=values["async"],
        tau_max=values["tau_max"],
        seed=values["seed"],
    )
    return cfg


def _fmt9(x: float) -> str:
    return format(float(x), ".9g")


def _round9(x: float) -> float:
    return float(_fmt9(x))


def write_outputs(out_dir: Path, values: dict, result: ExperimentResult) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    truth = np.asarray(result.member_flags, dtype=bool)
    rows = ["round,test_acc,mem_correct,mem_total,kept_count"]
    for r in result.records:
        correct = int(np.sum(r.membership_preds == truth))
        rows.append(
            f"{r.round},{_fmt9(r.test_acc)},{correct},{truth.size},"
            f"{len(r.diagnostics.get('kept', ()))}"
        )
    (out_dir / "rounds.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    summary = {
        "attack_accuracy": _round9(result.attack_acc),
        "precision": _round9(result.attack_prec),
        "recall": _round9(result.attack_rec),
        "final_test_acc": _round9(result.final_test_acc),
    }
    (out_dir / "summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    manifest = {
        "artifact_version": ARTIFACT_VERSION,
        "config": {k: _manifest_value(v) for k, v in values.items()},
        "outputs": ["rounds.csv", "summary.json"],
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def _manifest_value(v):
    if isinstance(v, tuple):
        return list(v)
    return v


def run_experiment(values: dict, out_dir) -> int:
    """Execute one configured run and write its artifacts."""
    cfg = to_experiment_config(values)
    validate_config(cfg)
    result = run(cfg)
    write_outputs(Path(out_dir), values, result)
    return EXIT_OK


def theory_grid(values: dict):
    points = []
    for m in values["theory_m_values"]:
        for b in range(m + 1, values["theory_b_max"] + 1):
            for adv in values["theory_adversaries"]:
                points.append((values["theory_n"], m, b, adv))
    return points


def run_theory_suite(values: dict, out_path) -> int:
    """Monte-Carlo the deviation of the trimmed mean against the bound on
    every grid point; nonzero exit when any point exceeds it."""
    dist = TruncatedGaussian(mu=values["theory_mu"], sigma=values["theory_sigma"])
    sigma2 = dist.var
    points = theory_grid(values)
    rows = ["n,m,b,sigma2,adversary,trials,empirical,bound,pass"]
    failures = []
    for n, m, b, adv in points:
        empirical = monte_carlo_deviation(
            dist, n, m, b, adv, values["theory_trials"], values["seed"]
        )
        bound = deviation_bound(n, m, b, sigma2)
        ok = empirical <= bound
        if not ok:
            failures.append((n, m, b, adv))
        rows.append(
            f"{n},{m},{b},{_fmt9(sigma2)},{adv},{values['theory_trials']},"
            f"{_fmt9(empirical)},{_fmt9(bound)},{'true' if ok else 'false'}"
        )
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(rows) + "\n", encoding="utf-8")
    if not points:
        print("warning: empty theory grid, nothing verified", file=sys.stderr)
        return EXIT_OK
    if failures:
        for n, m, b, adv in failures:
            print(f"bound violated at n={n} m={m} b={b} adversary={adv}", file=sys.stderr)
        return EXIT_ACCEPTANCE
    return EXIT_OK


def _worker_threads() -> int:
    raw = os.environ.get("FEDARENA_THREADS", "0")
    try:
        return max(0, int(raw))
    except ValueError:
        return 0


def _sweep_one(args) -> tuple[str, dict]:
    values, out_dir = args
    cfg = to_experiment_config(values)
    validate_config(cfg)
    result = run(cfg)
    write_outputs(Path(out_dir), values, result)
    summary = {
        "attack_accuracy": _round9(result.attack_acc),
        "precision": _round9(result.attack_prec),
        "recall": _round9(result.attack_rec),
        "final_test_acc": _round9(result.final_test_acc),
    }
    return str(out_dir), summary


def run_sweep(values: dict, sweep_spec: str, out_dir) -> int:
    if "=" not in sweep_spec:
        raise ConfigError("sweep", f"expected key=v1,v2,..., got {sweep_spec!r}")
    key, raw_values = sweep_spec.split("=", 1)
    key = key.strip()
    if key not in DEFAULTS:
        raise ConfigError(key, "unknown sweep key")
    points = []
    for raw in raw_values.split(","):
        v = dict(values)
        v[key] = _coerce(key, raw)
        _validate_values(v)
        points.append((v, Path(out_dir) / f"{key}={raw.strip()}"))
    threads = _worker_threads()
    if threads > 1:
        with multiprocessing.get_context("spawn").Pool(threads) as pool:
            outcomes = pool.map(_sweep_one, points)
    else:
        outcomes = [_sweep_one(p) for p in points]
    rows = ["value,attack_accuracy,precision,recall,final_test_acc"]
    for (v, _), (_, summary) in zip(points, outcomes):
        rows.append(
            f"{_fmt_value(v[key])},{_fmt9(summary['attack_accuracy'])},"
            f"{_fmt9(summary['precision'])},{_fmt9(summary['recall'])},"
            f"{_fmt9(summary['final_test_acc'])}"
        )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep_summary.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    return EXIT_OK


def run_selftest() -> int:
    """Fast built-in property checks; prints one line per suite."""
    from .selftest import SUITES

    failed = False
    for name, check in SUITES:
        try:
            check()
            print(f"selftest {name}: PASS")
        except AssertionError as exc:
            failed = True
            print(f"selftest {name}: FAIL ({exc})")
    return EXIT_ACCEPTANCE if failed else EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedarena")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment")
    p_run.add_argument("--config", default=None)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--seed", type=int, default=None)

    p_sweep = sub.add_parser("sweep", help="grid over one config key")
    p_sweep.add_argument("--config", default=None)
    p_sweep.add_argument("--out", required=True)
    p_sweep.add_argument("--sweep", required=True, metavar="key=v1,v2,...")
    p_sweep.add_argument("--seed", type=int, default=None)

    p_theory = sub.add_parser("theory", help="deviation-bound suite")
    p_theory.add_argument("--config", default=None)
    p_theory.add_argument("--out", required=True, help="output CSV path")
    p_theory.add_argument("--seed", type=int, default=None)

    sub.add_parser("selftest", help="built-in property checks")

    p_defaults = sub.add_parser("defaults", help="print the default config")
    p_defaults.add_argument("--out", default=None)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "selftest":
            return run_selftest()
        if args.command == "defaults":
            text = default_config_text()
            if args.out:
                Path(args.out).write_text(text, encoding="utf-8")
            else:
                sys.stdout.write(text)
            return EXIT_OK
        values = (
            parse_config(args.config)
            if args.config
            else parse_config_text("")
        )
        if args.seed is not None:
            values["seed"] = args.seed
        if args.command == "run":
            return run_experiment(values, args.out)
        if args.command == "sweep":
            return run_sweep(values, args.sweep, args.out)
        if args.command == "theory":
            return run_theory_suite(values, args.out)
        raise ConfigError("command", f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FedArenaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

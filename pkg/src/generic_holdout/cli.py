"""Command-line front end.

Subcommands::

    generic-holdout calibrate --s 100 1000 --k 1 2 --p0 0.05
    generic-holdout simulate  --config configs/fwer_null_s100.json --out runs/s100
    generic-holdout attack    --d 1000 --n 100 --seed 1
    generic-holdout report    runs/*/result.json

Exit codes: 0 success, 2 bad flags or malformed input, 3 a declared bound
check failed.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from .analysts import FreedmanAdversary, run_session
from .core import PRNG_ID, Dataset, GlobalNull, PlantedLinear, RngStream, sample_dataset
from .errors import ConfigError, HoldoutError
from .mechanisms import GenericHoldout, NaiveDisclosure
from .simharness import (
    ANALYSTS,
    MECHANISMS,
    ExperimentConfig,
    combined_digest,
    fwer_from_outcomes,
    power_from_outcomes,
    run_replications,
)
from .testkit import calibrate_correlation_null, per_test_alpha, required_holdout_size

EXIT_OK, EXIT_USAGE, EXIT_BOUND = 0, 2, 3

RESULT_NAME = "result.json"
ROWS_NAME = "replications.csv"

_TOP_KEYS = {"model", "n_total", "holdout_size", "budgets", "mechanism", "analyst", "replications", "seed", "prng_id"}
_REQUIRED = _TOP_KEYS - {"prng_id"}
_MODEL_KEYS = {"kind", "d", "w_true", "mu", "sigma_y"}
_BUDGET_KEYS = {"s", "k", "p0"}
_KIND_KEYS = {"kind", "params"}
_RESULT_KEYS = {"config_echo", "prng_id", "estimates", "bound", "bound_satisfied", "transcript_digest"}


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# config files


def _only(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")


def _int(obj, key, where, minimum=0):
    if key not in obj:
        raise ConfigError(f"{where}: missing key '{key}'")
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        raise ConfigError(f"{where}.{key}: expected an integer >= {minimum}, got {v!r}")
    return v


def _num(obj, key, where, default=None):
    if key not in obj:
        if default is None:
            raise ConfigError(f"{where}: missing key '{key}'")
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.{key}: expected a number, got {v!r}")
    return float(v)


def _model_from_json(obj):
    _only(obj, _MODEL_KEYS, "model")
    d = _int(obj, "d", "model", minimum=1)
    kind = obj.get("kind")
    if kind == "global_null":
        extra = sorted(set(obj) - {"kind", "d"})
        if extra:
            raise ConfigError(f"model: key(s) {', '.join(extra)} only apply to planted_linear")
        return GlobalNull(d)
    if kind == "planted_linear":
        w = obj.get("w_true")
        if w is None:
            w = np.zeros(d)
            w[0] = 1.0
        return PlantedLinear(d, np.asarray(w, dtype=float), _num(obj, "mu", "model"), _num(obj, "sigma_y", "model", 0.0))
    raise ConfigError(f"model.kind: expected 'global_null' or 'planted_linear', got {kind!r}")


def _kind(obj, where, allowed):
    _only(obj, _KIND_KEYS, where)
    kind = obj.get("kind")
    if kind not in allowed:
        raise ConfigError(f"{where}.kind: expected one of {', '.join(allowed)}, got {kind!r}")
    params = obj.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError(f"{where}.params: expected an object")
    return kind, params


def config_from_json(obj: dict, base_dir: Path | None = None) -> ExperimentConfig:
    """Validate a parsed config object and build the experiment it describes."""
    _only(obj, _TOP_KEYS, "config")
    missing = sorted(_REQUIRED - set(obj))
    if missing:
        raise ConfigError(f"config: missing key(s) {', '.join(missing)}")
    if "prng_id" in obj and obj["prng_id"] != PRNG_ID:
        raise ConfigError(f"config.prng_id: this build provides {PRNG_ID!r}, not {obj['prng_id']!r}")
    model = _model_from_json(obj["model"])
    budgets = obj["budgets"]
    _only(budgets, _BUDGET_KEYS, "budgets")
    s = _int(budgets, "s", "budgets")
    k = _int(budgets, "k", "budgets")
    p0 = _num(budgets, "p0", "budgets")
    n_total = _int(obj, "n_total", "config")
    h = obj["holdout_size"]
    if h == "auto":
        try:
            h = required_holdout_size(s, k, p0)
        except HoldoutError as err:
            raise ConfigError(f"config.holdout_size: cannot resolve 'auto': {err}") from None
    else:
        h = _int(obj, "holdout_size", "config")
    mech, mech_params = _kind(obj["mechanism"], "mechanism", MECHANISMS)
    analyst, analyst_params = _kind(obj["analyst"], "analyst", ANALYSTS)
    if "calibration" in mech_params and base_dir is not None:
        mech_params = dict(mech_params, calibration=str((base_dir / mech_params["calibration"]).resolve()))
    seed = _int(obj, "seed", "config")
    if seed >= 2**64:
        raise ConfigError("config.seed: must fit in 64 unsigned bits")
    return ExperimentConfig(
        model=model,
        n_total=n_total,
        holdout_size=h,
        s_max=s,
        k_max=k,
        p0=p0,
        mechanism=mech,
        analyst=analyst,
        replications=_int(obj, "replications", "config", minimum=1),
        root_seed=seed,
        mechanism_params=dict(mech_params),
        analyst_params=dict(analyst_params),
    )


def config_to_json(config: ExperimentConfig) -> dict:
    return {
        "model": config.model.to_dict(),
        "n_total": config.n_total,
        "holdout_size": config.holdout_size,
        "budgets": {"s": config.s_max, "k": config.k_max, "p0": config.p0},
        "mechanism": {"kind": config.mechanism, "params": dict(config.mechanism_params)},
        "analyst": {"kind": config.analyst, "params": dict(config.analyst_params)},
        "replications": config.replications,
        "seed": config.root_seed,
        "prng_id": PRNG_ID,
    }


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"{path}: {err.strerror}") from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}:{err.lineno}:{err.colno}: {err.msg}") from None
    try:
        return config_from_json(obj, base_dir=path.parent)
    except (ConfigError, HoldoutError, ValueError, TypeError) as err:
        raise ConfigError(f"{path}: {err}") from None


# --------------------------------------------------------------------------
# result files


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def result_payload(config: ExperimentConfig, outcomes) -> tuple[dict, bool]:
    """Result-file object and whether the run passed its declared check."""
    if config.model.is_global_null:
        est = fwer_from_outcomes(config, outcomes)
        estimates = {
            "kind": "fwer",
            "rate": est.false_discovery_rate,
            "ci": list(est.wilson_95),
            "events": est.events,
            "replications": est.replications,
        }
        bound, ok = est.theoretical_bound, est.bound_satisfied
    else:
        est = power_from_outcomes(outcomes)
        estimates = {
            "kind": "power",
            "rate": est.power,
            "ci": list(est.wilson_95),
            "events": est.events,
            "replications": est.replications,
        }
        bound, ok = None, None
    payload = {
        "config_echo": config_to_json(config),
        "prng_id": PRNG_ID,
        "estimates": estimates,
        "bound": bound,
        "bound_satisfied": ok,
        "transcript_digest": combined_digest(outcomes),
    }
    return payload, ok is not False


def rows_csv(outcomes) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rep_index", "queries_used", "confirmations", "false_confirmations", "stop_reason"])
    for o in outcomes:
        w.writerow([o.rep_index, o.queries_used, o.confirmations, o.false_confirmations, o.stop_reason.value])
    return buf.getvalue()


# --------------------------------------------------------------------------
# subcommands


def cmd_calibrate(args) -> int:
    p0 = args.p0
    # grid cells with k > s are skipped; a grid with no valid cell is an error
    pairs = [(s, k) for s in args.s for k in args.k if 1 <= k <= s]
    if not pairs:
        raise UsageError(f"no (s, k) pair with 1 <= k <= s in s={args.s}, k={args.k}")
    if not 0 < p0 < 1:
        raise UsageError(f"--p0 must lie in (0, 1), got {p0}")

    table = None
    if args.family == "correlation":
        ns = [2**i for i in range(int(math.log2(args.max_n)) + 1)]
        table = calibrate_correlation_null(ns, 1, args.replications, RngStream(args.seed))

    rows = []
    for s, k in pairs:
        alpha = per_test_alpha(s, k, p0)
        if table is None:
            h = required_holdout_size(s, k, p0)
        else:
            fits = [n for n, e in sorted(table.entries.items()) if e.upper <= alpha]
            h = fits[0] if fits else None
        rows.append({"s": s, "k": k, "p0": p0, "alpha": alpha, "required_h": h})

    out = {"family": args.family, "rows": rows}
    if table is not None:
        out["calibration"] = table.to_json()
    if args.format == "json":
        sys.stdout.write(_dump(out))
    elif args.format == "csv":
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(["s", "k", "p0", "alpha", "required_h"])
        for r in rows:
            w.writerow([r["s"], r["k"], repr(r["p0"]), repr(r["alpha"]), "" if r["required_h"] is None else r["required_h"]])
    else:
        print(f"family: {args.family}")
        print(f"{'s':>12} {'k':>4} {'alpha':>12} {'required h':>11}")
        for r in rows:
            h = "unattainable" if r["required_h"] is None else r["required_h"]
            print(f"{r['s']:>12} {r['k']:>4} {r['alpha']:>12.4g} {h:>11}")
    if args.json:
        Path(args.json).write_text(_dump(out))
    return EXIT_OK


def cmd_simulate(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, root_seed=args.seed)
    outcomes = run_replications(config, args.threads)
    payload, ok = result_payload(config, outcomes)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / RESULT_NAME).write_text(_dump(payload))
    (out / ROWS_NAME).write_text(rows_csv(outcomes))
    est = payload["estimates"]
    lo, hi = est["ci"]
    line = f"{est['kind']}: {est['rate']:.6g} (95% Wilson [{lo:.4g}, {hi:.4g}], R={est['replications']})"
    if payload["bound"] is not None:
        line += f"; bound {payload['bound']:.4g} -> {'ok' if ok else 'VIOLATED'}"
    print(line)
    return EXIT_OK if ok else EXIT_BOUND


def attack_trial(d: int, n: int, p0: float, stream: RngStream) -> dict:
    """One Freedman attack against naive disclosure and against the generic holdout."""
    model = GlobalNull(d)
    holdout = sample_dataset(model, n, stream.child(0))
    empty = Dataset.empty(d)

    naive = run_session(FreedmanAdversary(d, "correlation"), NaiveDisclosure(holdout), empty, model, stream.child(1))
    final = naive.responses[-1].value

    oracle = GenericHoldout(holdout, d + 1, 1, p0, quiet=True)
    generic = run_session(FreedmanAdversary(d, "gapped"), oracle, empty, model, stream.child(2))
    return {
        "naive_statistic": final,
        "naive_pass": final > 1.0,
        "generic_stop": generic.stop_reason.value,
        "generic_queries": oracle.queries_used,
        "generic_false_confirmations": generic.false_confirmations,
        "oracle": oracle,
    }


def cmd_attack(args) -> int:
    d, n, p0 = args.d, args.n, args.p0
    if d < 1 or n < 1 or args.trials < 1:
        raise UsageError("--d, --n and --trials must be at least 1")
    if not 0 < p0 < 1:
        raise UsageError(f"--p0 must lie in (0, 1), got {p0}")
    root = RngStream(args.seed)
    trials = [attack_trial(d, n, p0, root.child(t)) for t in range(args.trials)]

    s, k = d + 1, 1
    print(f"Freedman attack, global null, d={d}, n=h={n}, trials={args.trials}")
    print(f"{'mechanism':<20} {'final statistic':>16} {'result':>10}")
    for t in trials:
        verdict = "PASS" if t["naive_pass"] else "FAIL"
        print(f"{'naive_disclosure':<20} {t['naive_statistic']:>16.4f} {verdict:>10}")
        confirmed = "CONFIRMED" if t["generic_false_confirmations"] else "none"
        print(f"{'generic_holdout':<20} {'(hidden)':>16} {confirmed:>10}  stop={t['generic_stop']} queries={t['generic_queries']}")
    if args.trials > 1:
        naive_rate = sum(t["naive_pass"] for t in trials) / args.trials
        gen_rate = sum(t["generic_false_confirmations"] > 0 for t in trials) / args.trials
        print(f"false-discovery rate: naive {naive_rate:.3f}, generic {gen_rate:.3f}")
    print("budget ledger (generic holdout):")
    print(f"  s={s} k={k} p0={p0} alpha=p0/s^k={per_test_alpha(s, k, p0):.4g}")
    print(f"  holdout h={n}, gapped-test requirement h>={required_holdout_size(s, k, p0)}")
    print(f"  false-discovery bound s^k * alpha = {p0}")
    return EXIT_OK


def _load_result(path: str) -> dict:
    try:
        obj = json.loads(Path(path).read_text())
    except OSError as err:
        raise UsageError(f"{path}: {err.strerror}") from None
    except json.JSONDecodeError as err:
        raise UsageError(f"{path}:{err.lineno}:{err.colno}: {err.msg}") from None
    if not isinstance(obj, dict) or set(obj) != _RESULT_KEYS:
        raise UsageError(f"{path}: not a result file (expected keys {sorted(_RESULT_KEYS)})")
    est = obj["estimates"]
    if not isinstance(est, dict) or not {"kind", "rate", "ci"} <= set(est):
        raise UsageError(f"{path}: malformed 'estimates' block")
    return obj


REPORT_COLUMNS = ["source", "mechanism", "analyst", "estimate", "rate", "ci_lo", "ci_hi", "bound", "bound_satisfied", "prng_id"]


def report_rows(paths) -> list[dict]:
    results = [(p, _load_result(p)) for p in paths]
    rows = []
    for p, r in results:
        echo = r["config_echo"]
        est = r["estimates"]
        rows.append(
            {
                "source": str(p),
                "mechanism": echo["mechanism"]["kind"],
                "analyst": echo["analyst"]["kind"],
                "estimate": est["kind"],
                "rate": est["rate"],
                "ci_lo": est["ci"][0],
                "ci_hi": est["ci"][1],
                "bound": r["bound"],
                "bound_satisfied": r["bound_satisfied"],
                "prng_id": r["prng_id"],
            }
        )
    ids = sorted({r["prng_id"] for _, r in results})
    if len(ids) > 1:
        rows.append({c: "" for c in REPORT_COLUMNS} | {"source": "WARNING", "prng_id": "mixed PRNGs: " + " | ".join(ids)})
    return rows


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def cmd_report(args) -> int:
    rows = report_rows(args.results)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in rows:
        w.writerow([_cell(r[c]) for c in REPORT_COLUMNS])
    if args.out:
        Path(args.out).write_text(buf.getvalue())
    if args.format == "csv":
        sys.stdout.write(buf.getvalue())
    elif args.format == "json":
        sys.stdout.write(_dump(rows))
    else:
        print(f"{'mechanism':<18} {'analyst':<14} {'estimate':<8} {'rate':>10} {'bound':>8} {'ok':>6}")
        for r in rows:
            if r["source"] == "WARNING":
                print(f"WARNING: {r['prng_id']}")
                continue
            bound = "" if r["bound"] is None else f"{r['bound']:.4g}"
            ok = "" if r["bound_satisfied"] is None else ("yes" if r["bound_satisfied"] else "NO")
            print(f"{r['mechanism']:<18} {r['analyst']:<14} {r['estimate']:<8} {r['rate']:>10.5g} {bound:>8} {ok:>6}")
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point


def _threads(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError("--threads must be at least 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="generic-holdout", description="Budgeted one-bit holdout validation toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="holdout size and per-test level for (s, k, p0)")
    p.add_argument("--s", type=int, nargs="+", required=True, help="query budget(s)")
    p.add_argument("--k", type=int, nargs="+", default=[1], help="confirmation budget(s)")
    p.add_argument("--p0", type=float, default=0.05)
    p.add_argument("--family", choices=["gapped", "correlation"], default="gapped")
    p.add_argument("--replications", type=int, default=100_000, help="Monte Carlo size for the correlation family")
    p.add_argument("--max-n", type=int, default=1024, help="largest n tried for the correlation family")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=["table", "json", "csv"], default="table")
    p.add_argument("--json", help="also write the JSON table to this path")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("simulate", help="run a Monte Carlo experiment from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the config's root seed")
    p.add_argument("--threads", type=_threads, default=None, help="worker processes (default: $GH_THREADS or 1)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("attack", help="Freedman adversary against naive disclosure and the generic holdout")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--p0", type=float, default=0.05)
    p.add_argument("--trials", type=int, default=1)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("report", help="merge result files into one table")
    p.add_argument("results", nargs="+")
    p.add_argument("--out", help="write the aggregate CSV here")
    p.add_argument("--format", choices=["table", "json", "csv"], default="table")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except HoldoutError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

"""``lmpred`` command-line interface.

Exit codes: 0 success, 1 usage error, 2 numerical or contract error,
3 experiment or validation verdict FAIL.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .errors import LmpredError
from .model import ProcessSpec, autocovariance, validate_assumptions
from .predict import (predict_same_realisation, predict_theoretical,
                      predict_wiener_kolmogorov, theoretical_coefficients)
from .simulate import (SamplePath, read_binary, read_csv, sample, write_binary, write_csv)
from .theory import validate_schedule

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_FAIL = 0, 1, 2, 3

COMMANDS = ("simulate", "acvf", "coeffs", "predict", "mse", "clt", "covrate",
            "momentbound", "validate")

DEFAULTS = {
    "d": None, "sigma_eps": 1.0, "ar": [], "ma": [], "n": None, "k": None, "Kn": None,
    "J": None, "replicates": 1000, "seed": 0, "q": [1, 2], "format": None, "out": None,
    "threads": None, "theorem": None, "input": None, "max_lag": 10,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lmpred", description="Long-memory linear prediction toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON file of defaults (flags win)")
        p.add_argument("--d", type=float)
        p.add_argument("--sigma-eps", dest="sigma_eps", type=float)
        p.add_argument("--ar", help="comma-separated AR coefficients")
        p.add_argument("--ma", help="comma-separated MA coefficients")
        p.add_argument("--n", help="sample size, or comma-separated grid for experiments")
        p.add_argument("--k", type=int)
        p.add_argument("--Kn", type=int)
        p.add_argument("--J", type=int, help="truncation of infinite-past sums")
        p.add_argument("--replicates", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--q", help="comma-separated moment orders")
        p.add_argument("--format", choices=["csv", "json", "binary"])
        p.add_argument("--out")
        p.add_argument("--threads", type=int, help="worker threads (0 = all cores)")
        if name == "predict":
            p.add_argument("--input", required=False, help="path file (CSV or LMPRED01)")
        if name == "validate":
            p.add_argument("--theorem", choices=["T2", "T3"])
        if name == "acvf":
            p.add_argument("--max-lag", dest="max_lag", type=int)
    return parser


def _resolve(args: argparse.Namespace) -> dict:
    """Merge built-in defaults, the config file and explicit flags (flags win)."""
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    for key, val in vars(args).items():
        if key in DEFAULTS and val is not None:
            cfg[key] = val
    for key, conv in (("ar", float), ("ma", float), ("q", int), ("n", int)):
        cfg[key] = _as_list(cfg[key], conv)
    if cfg["threads"] is None:
        env = os.environ.get("LMPRED_THREADS")
        cfg["threads"] = int(env) if env else 1
    if cfg["threads"] == 0:
        cfg["threads"] = os.cpu_count() or 1
    cfg["command"] = args.command
    return cfg


def _as_list(value, conv):
    if value is None:
        return None
    if isinstance(value, str):
        parts = [p for p in value.split(",") if p.strip()]
        try:
            return [conv(p) for p in parts]
        except ValueError as exc:
            raise UsageError(f"cannot parse list {value!r}") from exc
    if isinstance(value, (list, tuple)):
        return [conv(v) for v in value]
    return [conv(value)]


def _spec(cfg: dict) -> ProcessSpec:
    if cfg["d"] is None:
        raise UsageError("--d is required")
    return ProcessSpec(cfg["d"], cfg["sigma_eps"], tuple(cfg["ar"]), tuple(cfg["ma"]))


def _require(cfg, *keys):
    for key in keys:
        if cfg[key] is None:
            raise UsageError(f"--{key} is required for {cfg['command']}")


def _single_n(cfg) -> int:
    _require(cfg, "n")
    if len(cfg["n"]) != 1:
        raise UsageError("--n must be a single value here")
    return cfg["n"][0]


def _emit(text: str, cfg: dict) -> None:
    if cfg["out"]:
        Path(cfg["out"]).write_text(text)
    else:
        sys.stdout.write(text)


def _provenance(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if k != "out"}


def _rows_csv(header: str, rows, cfg: dict) -> str:
    lines = [f"# config={json.dumps(_provenance(cfg), sort_keys=True)}", header]
    lines += [",".join(repr(v) if isinstance(v, float) else str(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def _rows_json(names, rows, cfg: dict) -> str:
    body = {"provenance": _provenance(cfg), "rows": [dict(zip(names, r)) for r in rows]}
    return json.dumps(body, indent=2) + "\n"


def _table(names, rows, cfg) -> str:
    if cfg["format"] == "json":
        return _rows_json(names, rows, cfg)
    return _rows_csv(",".join(names), rows, cfg)


# ---------------------------------------------------------------------------
# commands


def _cmd_simulate(cfg) -> int:
    spec = _spec(cfg)
    path = sample(spec, _single_n(cfg), cfg["seed"])
    fmt = cfg["format"] or "csv"
    if fmt == "binary":
        if not cfg["out"]:
            raise UsageError("binary output needs --out")
        write_binary(path.values, cfg["out"])
    elif fmt == "json":
        body = {"provenance": _provenance(cfg), "spec": spec.to_dict(), "seed": path.seed,
                "method": path.method, "values": path.values.tolist()}
        _emit(json.dumps(body) + "\n", cfg)
    elif cfg["out"]:
        write_csv(path, cfg["out"])
    else:
        write_csv(path, sys.stdout)
    return EXIT_OK


def _cmd_acvf(cfg) -> int:
    acv = autocovariance(_spec(cfg), cfg["max_lag"])
    rows = [(h, float(v)) for h, v in enumerate(acv)]
    _emit(_table(["lag", "acvf"], rows, cfg), cfg)
    return EXIT_OK


def _cmd_coeffs(cfg) -> int:
    _require(cfg, "k")
    coeffs = theoretical_coefficients(_spec(cfg), cfg["k"])
    _emit(_table(["j", "a_jk"], coeffs.to_rows(), cfg), cfg)
    return EXIT_OK


def _load_path(source: str, spec: ProcessSpec | None) -> SamplePath:
    raw = Path(source).read_bytes()[:8]
    if raw == b"LMPRED01":
        if spec is None:
            raise UsageError("binary paths carry no model; pass --d")
        return SamplePath(read_binary(source), spec, 0, "binary")
    path = read_csv(source)
    if spec is not None:
        path = SamplePath(path.values, spec, path.seed, path.method)
    return path


def _cmd_predict(cfg) -> int:
    _require(cfg, "input", "k")
    spec = _spec(cfg) if cfg["d"] is not None else None
    path = _load_path(cfg["input"], spec)
    k = cfg["k"]
    K_n = cfg["Kn"] if cfg["Kn"] is not None else k
    rows = [("theoretical", predict_theoretical(path, theoretical_coefficients(path.spec, k))),
            ("same_realisation", predict_same_realisation(path, k, K_n))]
    J = cfg["J"] if cfg["J"] is not None else path.n
    value, tail = predict_wiener_kolmogorov(path, J, path.spec)
    rows += [("wiener_kolmogorov", value), ("wiener_kolmogorov_tail_bound", tail)]
    _emit(_table(["predictor", "value"], rows, cfg), cfg)
    return EXIT_OK


def _experiment_config(cfg) -> ex.ExperimentConfig:
    _require(cfg, "n")
    kw = dict(spec=_spec(cfg), n_grid=tuple(cfg["n"]), replicates=cfg["replicates"],
              master_seed=cfg["seed"], K_n=cfg["Kn"], moment_orders=tuple(cfg["q"]),
              truncation=cfg["J"], workers=cfg["threads"])
    if cfg["k"] is not None:
        if cfg["command"] == "mse":
            kw["k_grid"] = (cfg["k"],)
        else:
            kw["k"] = cfg["k"]
    return ex.ExperimentConfig(**kw)


def _cmd_experiment(cfg) -> int:
    report = ex.EXPERIMENTS[cfg["command"]](_experiment_config(cfg))
    report.config["cli"] = _provenance(cfg)
    if cfg["format"] == "json":
        text = report.to_json() + "\n"
    else:
        text = f"# config={json.dumps(_provenance(cfg), sort_keys=True)}\n" + report.to_csv()
    _emit(text, cfg)
    if report.qq is not None and cfg["out"]:
        Path(cfg["out"]).with_suffix(".qq.csv").write_text(report.qq_csv())
    for v in report.verdicts:
        status = "PASS" if v.passed else "FAIL"
        print(f"{status} {v.name}: value={v.value:.6g} tolerance={v.tolerance:.6g}", file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_FAIL


def _cmd_validate(cfg) -> int:
    spec = _spec(cfg)
    if cfg["theorem"]:
        _require(cfg, "Kn")
        rep = validate_schedule(spec, _single_n(cfg), cfg["Kn"], cfg["theorem"])
    else:
        rep = validate_assumptions(spec)
    if cfg["format"] == "json":
        body = {"provenance": _provenance(cfg), **rep.to_dict()}
        _emit(json.dumps(body, indent=2) + "\n", cfg)
    else:
        rows = [(c.name, "PASS" if c.passed else "FAIL",
                 "" if c.margin is None else repr(float(c.margin)), c.detail.replace(",", ";"))
                for c in rep.checks]
        text = _rows_csv("check,status,margin,detail", rows, cfg)
        text += f"# overall={'PASS' if rep.passed else 'FAIL'}\n"
        _emit(text, cfg)
    return EXIT_OK if rep.passed else EXIT_FAIL


HANDLERS = {"simulate": _cmd_simulate, "acvf": _cmd_acvf, "coeffs": _cmd_coeffs,
            "predict": _cmd_predict, "validate": _cmd_validate,
            **{name: _cmd_experiment for name in ex.EXPERIMENTS}}


def run(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = _build_parser().parse_args(argv)
        cfg = _resolve(args)
        return HANDLERS[cfg["command"]](cfg)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (LmpredError, ValueError, ArithmeticError, OSError) as exc:
        print(f"lmpred: error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

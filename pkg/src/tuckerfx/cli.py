"""Command-line front end: ``tuckerfx {synth,decompose,estimate,compare}``.

Settings come from built-in defaults, then an optional ``--config`` file of
``key = value`` lines, then command-line flags; later sources win.

Exit codes: 0 success, 2 invalid arguments or configuration, 3 I/O
failure (unreadable input, malformed DTF, unwritable output), 4 the
decomposition did not reach its convergence test within ``--iters``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass
from typing import Callable, Optional

from tuckerfx import dtf, report
from tuckerfx.fxp import FxProfile
from tuckerfx.hooi import HooiOptions, check_rank, hooi, make_synthetic
from tuckerfx.perf import HwConfig, total_cycles
from tuckerfx.tensor import DenseTensor, ShapeError, check_shape

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NOT_CONVERGED = 4

log = logging.getLogger("tuckerfx")


class UsageError(Exception):
    pass


class InputOutputError(Exception):
    pass


# --- value parsing -------------------------------------------------------------


def int_list(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    parts = str(text).replace("x", ",").replace("X", ",").split(",")
    try:
        return [int(p) for p in parts if p.strip()]
    except ValueError:
        raise UsageError(f"expected a comma-separated integer list, got {text!r}") from None


def boolean(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


def profile_spec(text) -> dict:
    """``"tensor_fmt=16,12;cordic_iterations=20"`` -> FxProfile overrides."""
    if isinstance(text, dict):
        return dict(text)
    out = {}
    for item in str(text).split(";"):
        item = item.strip()
        if not item:
            continue
        key, sep, val = item.partition("=")
        if not sep:
            raise UsageError(f"profile entry {item!r} is not key=value")
        out[key.strip()] = val.strip()
    try:
        FxProfile.from_dict(out)
    except (KeyError, ValueError) as exc:
        raise UsageError(f"invalid profile: {exc}") from None
    return out


def choice(*options) -> Callable:
    def conv(text):
        t = str(text).strip()
        if t not in options:
            raise UsageError(f"expected one of {', '.join(options)}, got {text!r}")
        return t
    return conv


def optional_int(text):
    return None if text in (None, "", "none") else int(text)


@dataclass(frozen=True)
class Setting:
    convert: Callable
    default: object
    help: str


SETTINGS: dict[str, Setting] = {
    "input": Setting(str, None, "input tensor (DTF file)"),
    "dims": Setting(int_list, None, "synthetic tensor dims, e.g. 64,64,64"),
    "rank": Setting(int_list, None, "target multilinear rank"),
    "synth_rank": Setting(int_list, None, "rank of the synthetic tensor (default: --rank)"),
    "noise": Setting(float, 0.0, "noise variance as a fraction of the signal variance"),
    "seed": Setting(int, 0, "seed for synthetic data and random initialization"),
    "numeric": Setting(choice("real", "fixed"), "real", "arithmetic path"),
    "profile": Setting(profile_spec, {}, "fixed-point overrides, e.g. 'tensor_fmt=16,12;cordic_iterations=20'"),
    "init": Setting(choice("random", "hosvd"), "random", "factor initialization"),
    "iters": Setting(int, 8, "maximum HOOI iterations"),
    "tol": Setting(float, 1e-4, "relative change in error that stops HOOI"),
    "warm": Setting(boolean, True, "warm-start each SVD from the previous basis"),
    "max_sweeps": Setting(optional_int, None, "Jacobi sweeps per SVD (default 1 warm, 30 cold)"),
    "q": Setting(int, 32, "PE array columns"),
    "r": Setting(int, 32, "PE array rows"),
    "p": Setting(int, 128, "SVD lanes"),
    "clock": Setting(float, 185e6, "clock rate in Hz"),
    "sweeps_per_svd": Setting(int, 1, "Jacobi sweeps charged per SVD in the cycle model"),
    "scalar": Setting(choice("f32", "f64"), "f64", "scalar type written by synth"),
    "out": Setting(str, None, "output DTF file (synth) or directory for model files"),
    "report": Setting(str, None, "JSON report path (default: stdout)"),
    "csv": Setting(str, None, "error-curve CSV path"),
    "plot": Setting(str, None, "error-curve PNG path"),
}

COMMAND_KEYS = {
    "synth": ("dims", "rank", "synth_rank", "noise", "seed", "scalar", "out"),
    "decompose": ("input", "dims", "rank", "synth_rank", "noise", "seed", "numeric", "profile",
                  "init", "iters", "tol", "warm", "max_sweeps", "q", "r", "p", "clock",
                  "sweeps_per_svd", "out", "report", "csv", "plot"),
    "estimate": ("dims", "rank", "iters", "warm", "q", "r", "p", "clock", "sweeps_per_svd", "report"),
    "compare": ("input", "dims", "rank", "synth_rank", "noise", "seed", "profile", "init", "iters",
                "tol", "warm", "max_sweeps", "q", "r", "p", "clock", "report", "csv", "plot"),
}


def read_config_file(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment, dashes equal underscores."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise InputOutputError(f"cannot read config {path}: {exc.strerror}") from None
    out = {}
    for n, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep:
            raise UsageError(f"{path}:{n}: expected key = value")
        if key not in SETTINGS:
            raise UsageError(f"{path}:{n}: unknown key {key!r}")
        out[key] = val.strip()
    return out


def resolve(command: str, cli: dict, config_path: Optional[str]) -> dict:
    """Merge defaults < config file < command line for ``command``'s keys."""
    merged = {k: SETTINGS[k].default for k in COMMAND_KEYS[command]}
    if config_path:
        for k, v in read_config_file(config_path).items():
            if k in merged:
                merged[k] = v
    for k, v in cli.items():
        if k in merged and v is not None:
            merged[k] = v
    for k, v in merged.items():
        if v is not None and isinstance(v, str):
            try:
                merged[k] = SETTINGS[k].convert(v)
            except ValueError:
                raise UsageError(f"invalid value for {k}: {v!r}") from None
    return merged


# --- argument parser -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tuckerfx",
        description="Tucker decomposition by HOOI with fixed-point emulation and a cycle model.",
        epilog="exit codes: 0 ok, 2 invalid arguments, 3 I/O error, 4 not converged",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "synth": "write a synthetic low-rank tensor plus noise",
        "decompose": "run HOOI and write the model and a report",
        "estimate": "cycle and DSP estimate without running numerics",
        "compare": "run the real and fixed-point paths and report both error curves",
    }
    for name, keys in COMMAND_KEYS.items():
        p = sub.add_parser(name, help=helps[name], description=helps[name])
        p.add_argument("--config", help="flat key = value settings file")
        for key in keys:
            s = SETTINGS[key]
            flag = "--" + key.replace("_", "-")
            if key == "numeric":
                g = p.add_mutually_exclusive_group()
                g.add_argument("--fixed", dest="numeric", action="store_const", const="fixed",
                               default=None, help="fixed-point path")
                g.add_argument("--real", dest="numeric", action="store_const", const="real",
                               default=None, help="float64 path (default)")
            elif key == "warm":
                g = p.add_mutually_exclusive_group()
                g.add_argument("--warm", dest="warm", action="store_const", const=True,
                               default=None, help="warm-started SVDs (default)")
                g.add_argument("--cold", dest="warm", action="store_const", const=False,
                               default=None, help="SVDs run to convergence from scratch")
            else:
                shown = s.help if s.default in (None, {}) else f"{s.help} (default: {s.default})"
                p.add_argument(flag, dest=key, default=None, help=shown)
    return parser


# --- helpers -------------------------------------------------------------------


def _hw(cfg: dict) -> HwConfig:
    try:
        return HwConfig(q=cfg["q"], r=cfg["r"], p=cfg["p"], clock_hz=cfg["clock"],
                        jacobi_sweeps_per_svd=cfg.get("sweeps_per_svd", 1))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _profile(cfg: dict) -> FxProfile:
    return FxProfile.from_dict(cfg.get("profile") or {})


def _require(cfg: dict, *keys):
    for k in keys:
        if cfg.get(k) is None:
            raise UsageError(f"--{k.replace('_', '-')} is required")


def _check_synth(cfg: dict):
    _require(cfg, "dims", "rank")
    dims = check_shape(cfg["dims"])
    check_rank(dims, cfg.get("synth_rank") or cfg["rank"])
    if cfg["noise"] < 0:
        raise UsageError("--noise must be non-negative")


def _load_input(cfg: dict) -> DenseTensor:
    """Validate the source choice and return the tensor to decompose."""
    _require(cfg, "rank")
    if cfg.get("input") is not None:
        if cfg.get("dims") is not None:
            raise UsageError("give either --input or --dims, not both")
        try:
            X = dtf.read(cfg["input"])
        except OSError as exc:
            raise InputOutputError(f"cannot read {cfg['input']}: {exc.strerror}") from None
        except dtf.DtfError as exc:
            raise InputOutputError(f"{cfg['input']}: {exc}") from None
        if X.fmt is not None:
            X = DenseTensor(X.shape, X.values())
    else:
        if cfg.get("dims") is None:
            raise UsageError("one of --input or --dims is required")
        _check_synth(cfg)
        X = make_synthetic(cfg["dims"], cfg.get("synth_rank") or cfg["rank"], cfg["noise"], cfg["seed"])
    check_rank(X.shape, cfg["rank"])
    return X


def _options(cfg: dict, numeric: str) -> HooiOptions:
    if cfg["iters"] < 1:
        raise UsageError("--iters must be >= 1")
    return HooiOptions(init=cfg["init"], max_iters=cfg["iters"], tol=cfg["tol"],
                       warm_start=cfg["warm"], numeric=numeric, seed=cfg["seed"],
                       max_sweeps=cfg.get("max_sweeps"), profile=_profile(cfg), hw=_hw(cfg))


def _writable(path):
    if path is None:
        return
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise InputOutputError(f"output directory {parent} does not exist")


def _echo(cfg: dict) -> dict:
    return {k: v for k, v in sorted(cfg.items())}


def _emit(cfg: dict, rep: dict, stdout):
    if cfg.get("report"):
        report.write_json(cfg["report"], rep)
    else:
        stdout.write(report.dumps(rep))


def _curves(cfg: dict, curves: dict, title: str):
    if cfg.get("csv"):
        report.write_curves_csv(cfg["csv"], curves)
    if cfg.get("plot"):
        report.plot_curves(cfg["plot"], curves, title)


# --- commands ------------------------------------------------------------------


def cmd_synth(cfg: dict, stdout) -> int:
    _check_synth(cfg)
    _require(cfg, "out")
    _writable(cfg["out"])
    X = make_synthetic(cfg["dims"], cfg.get("synth_rank") or cfg["rank"], cfg["noise"], cfg["seed"])
    dtf.write(cfg["out"], X, cfg["scalar"])
    log.info("wrote %s (%s)", cfg["out"], "x".join(map(str, X.shape)))
    return EXIT_OK


def cmd_decompose(cfg: dict, stdout) -> int:
    X = _load_input(cfg)
    opts = _options(cfg, cfg["numeric"])
    for key in ("report", "csv", "plot"):
        _writable(cfg.get(key))
    if cfg.get("out") is not None and os.path.exists(cfg["out"]) and not os.path.isdir(cfg["out"]):
        raise InputOutputError(f"{cfg['out']} exists and is not a directory")

    model, stats = hooi(X, cfg["rank"], opts)
    cycles = total_cycles(X.shape, cfg["rank"], opts.hw, iters=stats.iterations, warm_start=opts.warm_start)
    outputs = {}
    if cfg.get("out") is not None:
        os.makedirs(cfg["out"], exist_ok=True)
        outputs["core"] = os.path.join(cfg["out"], "core.dtf")
        dtf.write(outputs["core"], model.core)
        for k, A in enumerate(model.factors, start=1):
            outputs[f"factor_{k}"] = os.path.join(cfg["out"], f"factor_{k}.dtf")
            dtf.write(outputs[f"factor_{k}"], DenseTensor.from_array(A))
    rep = report.make_report("decompose", _echo(cfg), run=report.run_section(stats),
                             cycles=cycles.to_dict(), outputs=outputs or None)
    _emit(cfg, rep, stdout)
    _curves(cfg, {cfg["numeric"]: stats.errors}, f"HOOI ({cfg['numeric']})")
    log.info("final error %.6g%% after %d iterations", stats.errors[-1], stats.iterations)
    return EXIT_OK if stats.converged else EXIT_NOT_CONVERGED


def cmd_estimate(cfg: dict, stdout) -> int:
    _require(cfg, "dims", "rank")
    dims = check_shape(cfg["dims"])
    check_rank(dims, cfg["rank"])
    if cfg["iters"] < 1:
        raise UsageError("--iters must be >= 1")
    _writable(cfg.get("report"))
    cycles = total_cycles(dims, cfg["rank"], _hw(cfg), iters=cfg["iters"], warm_start=cfg["warm"])
    _emit(cfg, report.make_report("estimate", _echo(cfg), cycles=cycles.to_dict()), stdout)
    return EXIT_OK


def cmd_compare(cfg: dict, stdout) -> int:
    X = _load_input(cfg)
    real_opts = _options(cfg, "real")
    fixed_opts = _options(cfg, "fixed")
    for key in ("report", "csv", "plot"):
        _writable(cfg.get(key))
    _, real = hooi(X, cfg["rank"], real_opts)
    _, fixed = hooi(X, cfg["rank"], fixed_opts)
    gap = fixed.errors[-1] - real.errors[-1]
    rep = report.make_report("compare", _echo(cfg), real=report.run_section(real),
                             fixed=report.run_section(fixed), gap_percent_points=gap)
    _emit(cfg, rep, stdout)
    _curves(cfg, {"real": real.errors, "fixed": fixed.errors}, "real vs fixed-point HOOI")
    log.info("gap %.4g percentage points", gap)
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "decompose": cmd_decompose, "estimate": cmd_estimate,
            "compare": cmd_compare}


def main(argv=None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    cli = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    try:
        cfg = resolve(args.command, cli, args.config)
        return COMMANDS[args.command](cfg, stdout)
    except (UsageError, ShapeError, ValueError) as exc:
        print(f"tuckerfx: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InputOutputError, OSError) as exc:
        print(f"tuckerfx: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

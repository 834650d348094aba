"""Run reports: versioned JSON, CSV error curves and PNG figures."""

from __future__ import annotations

import csv
import datetime as _dt
import io
import json
import os
from typing import Optional, Sequence

SCHEMA_VERSION = "1.0"

_INT_LIST = {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1}
_CURVE = {"type": "array", "items": {"type": "number", "minimum": 0}}

_QUANT = {
    "type": "object",
    "required": ["total_saturations", "stages"],
    "properties": {
        "total_saturations": {"type": "integer", "minimum": 0},
        "stages": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["saturations", "max_abs"],
                "properties": {
                    "saturations": {"type": "integer", "minimum": 0},
                    "max_abs": {"type": "number", "minimum": 0},
                },
            },
        },
    },
}

_RUN = {
    "type": "object",
    "required": ["errors_percent", "sweeps", "total_sweeps", "ttm_steps", "converged",
                 "iterations", "input_scale", "final_error_percent"],
    "properties": {
        "errors_percent": _CURVE,
        "sweeps": {"type": "array", "items": {"type": "array", "items": {"type": "integer", "minimum": 0}}},
        "total_sweeps": {"type": "integer", "minimum": 0},
        "ttm_steps": {"type": "integer", "minimum": 0},
        "converged": {"type": "boolean"},
        "iterations": {"type": "integer", "minimum": 1},
        "input_scale": {"type": "number", "exclusiveMinimum": 0},
        "final_error_percent": {"type": "number", "minimum": 0},
        "quantization": _QUANT,
    },
}

_CYCLES = {
    "type": "object",
    "required": ["schema_version", "dims", "ranks", "iterations", "warm_start", "config",
                 "stages", "totals", "wall_time_seconds", "dsp"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "dims": _INT_LIST,
        "ranks": _INT_LIST,
        "iterations": {"type": "integer", "minimum": 1},
        "warm_start": {"type": "boolean"},
        "config": {"type": "object"},
        "stages": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["iteration", "mode", "ttm", "ttm_warm", "svd", "permute_in",
                             "permute_out", "total"],
            },
        },
        "totals": {
            "type": "object",
            "required": ["ttm", "svd", "permute", "overhead", "total"],
            "additionalProperties": {"type": "integer", "minimum": 0},
        },
        "wall_time_seconds": {"type": "number", "minimum": 0},
        "dsp": {
            "type": "object",
            "required": ["ttm_dsp", "svd_dsp"],
            "additionalProperties": {"type": "integer", "minimum": 0},
        },
    },
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "tuckerfx report",
    "type": "object",
    "required": ["schema_version", "command", "generated_at", "config"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "command": {"enum": ["decompose", "estimate", "compare"]},
        "generated_at": {"type": "string"},
        "config": {"type": "object"},
        "run": _RUN,
        "real": _RUN,
        "fixed": _RUN,
        "gap_percent_points": {"type": "number"},
        "cycles": _CYCLES,
        "outputs": {"type": "object", "additionalProperties": {"type": "string"}},
    },
    "allOf": [
        {"if": {"properties": {"command": {"const": "decompose"}}},
         "then": {"required": ["run", "cycles"]}},
        {"if": {"properties": {"command": {"const": "estimate"}}},
         "then": {"required": ["cycles"]}},
        {"if": {"properties": {"command": {"const": "compare"}}},
         "then": {"required": ["real", "fixed", "gap_percent_points"]}},
    ],
}

# keys that legitimately differ between otherwise identical runs
VOLATILE_KEYS = ("generated_at",)


def run_section(stats) -> dict:
    out = stats.to_dict()
    out["final_error_percent"] = stats.errors[-1]
    return out


def make_report(command: str, config: dict, **sections) -> dict:
    rep = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "generated_at": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "config": config,
    }
    rep.update({k: v for k, v in sections.items() if v is not None})
    return rep


def strip_volatile(rep: dict) -> dict:
    return {k: v for k, v in rep.items() if k not in VOLATILE_KEYS}


def dumps(rep: dict) -> str:
    return json.dumps(rep, indent=2, sort_keys=True) + "\n"


def write_json(path, rep: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(rep))


def validate(rep: dict) -> None:
    """Raise ``jsonschema.ValidationError`` if ``rep`` breaks the schema."""
    import jsonschema
    jsonschema.validate(rep, SCHEMA)


# --- error curves --------------------------------------------------------------


def curves_csv(curves: dict[str, Sequence[float]]) -> str:
    """One row per HOOI iteration, one column per named curve.

    Shorter curves (a run that converged early) leave trailing cells empty.
    """
    names = list(curves)
    n = max((len(c) for c in curves.values()), default=0)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration"] + [f"{name}_error_percent" for name in names])
    for i in range(n):
        row = [i + 1]
        for name in names:
            c = curves[name]
            row.append(repr(float(c[i])) if i < len(c) else "")
        w.writerow(row)
    return buf.getvalue()


def write_curves_csv(path, curves: dict[str, Sequence[float]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(curves_csv(curves))


def read_curves_csv(path) -> dict[str, list[float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    names = [h[: -len("_error_percent")] for h in rows[0][1:]]
    out: dict[str, list[float]] = {name: [] for name in names}
    for row in rows[1:]:
        for name, cell in zip(names, row[1:]):
            if cell:
                out[name].append(float(cell))
    return out


def plot_curves(path, curves: dict[str, Sequence[float]], title: Optional[str] = None) -> None:
    """Relative error per HOOI iteration, one line per curve, saved to ``path``."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    markers = "osd^v"
    for i, (name, c) in enumerate(curves.items()):
        ax.plot(range(1, len(c) + 1), c, marker=markers[i % len(markers)], ms=4, lw=1.2, label=name)
    ax.set_xlabel("HOOI iteration")
    ax.set_ylabel("relative error (%)")
    ax.xaxis.get_major_locator().set_params(integer=True)
    ax.grid(alpha=0.3)
    if title:
        ax.set_title(title, fontsize=10)
    if len(curves) > 1:
        ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(os.fspath(path), dpi=120, metadata={"Software": None})
    plt.close(fig)

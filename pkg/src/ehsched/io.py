"""Deterministic artifact writers: CSV and JSON with stable formatting.

Every writer produces byte-identical output for identical inputs — floats are
rendered with repr-shortest (JSON) or %.12g (CSV), keys are sorted, and
nothing here looks at the clock. That property is load-bearing: reruns of the
same seeded command are compared byte-for-byte.
"""

from __future__ import annotations

import csv
import io as _io
import json
from pathlib import Path

import numpy as np

from .mdp import MixedPolicy, PolicyEvaluation, SolveResult, TablePolicy
from .model import Model


def format_float(x: float) -> str:
    return f"{float(x):.12g}"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def dump_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(dump_json(obj))
    return path


def rows_to_csv(rows, fieldnames=None) -> str:
    """Render dict rows with %.12g floats; field order fixed by the first row
    unless given explicitly."""
    rows = list(rows)
    if fieldnames is None:
        fieldnames = list(rows[0]) if rows else []
    buf = _io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: format_float(v) if isinstance(v, (float, np.floating))
                         else v for k, v in row.items()})
    return buf.getvalue()


def write_csv(path, rows, fieldnames=None) -> Path:
    path = Path(path)
    path.write_text(rows_to_csv(rows, fieldnames))
    return path


# ---------------------------------------------------------------------------
# domain-object renderings


def policy_rows(policy: TablePolicy, model: Model, values=None) -> list[dict]:
    """One row per state: coordinates, chosen action, optionally the value."""
    space = model.space
    rows = []
    for i in range(space.n_states):
        x = space.state_of(i)
        row = {"state": i, "q": x.q, "h": x.h, "a": x.a, "e_b": x.e_b,
               "e": x.e, "r": int(policy.r[i]),
               "w": float(policy.w_quanta[i]) * policy.delta_e / policy.tau}
        if values is not None:
            row["value"] = float(values[i])
        rows.append(row)
    return rows


def evaluation_dict(ev: PolicyEvaluation) -> dict:
    return {
        "gain_j": ev.gain_j,
        "mean_queue_b": ev.mean_queue_b,
        "mean_grid_k": ev.mean_grid_k,
        "beta": ev.beta,
        "overflow_rate": ev.overflow_rate,
        "battery_spill_rate": ev.battery_spill_rate,
    }


def solve_trace_rows(result: SolveResult) -> list[dict]:
    rows = []
    for entry in result.trace:
        if len(entry) == 4:
            it, span, lo, hi = entry
            rows.append({"iteration": it, "span": span,
                         "gain_lower": lo, "gain_upper": hi})
        else:
            it, resid = entry
            rows.append({"iteration": it, "residual": resid})
    return rows


def search_trace_rows(trace) -> list[dict]:
    return [{"iteration": t.iteration, "beta": t.beta, "gain_j": t.gain_j,
             "mean_queue_b": t.mean_queue_b, "mean_grid_k": t.mean_grid_k}
            for t in trace]


def sim_result_dict(res) -> dict:
    return {
        "mean_queue": res.mean_queue,
        "mean_grid_power": res.mean_grid_power,
        "mean_queue_se": res.mean_queue_se,
        "mean_grid_power_se": res.mean_grid_power_se,
        "overflow_fraction": res.overflow_fraction,
        "overflow_rate": res.overflow_rate,
        "battery_spill_rate": res.battery_spill_rate,
        "max_grid_power": res.max_grid_power,
        "n_slots": res.n_slots,
        "warmup": res.warmup,
        "seed": res.seed,
    }


def sim_trace_rows(trace: dict) -> list[dict]:
    keys = list(trace)
    n = len(trace[keys[0]])
    return [{"slot": t, **{k: float(trace[k][t]) for k in keys}}
            for t in range(n)]


def write_policy_artifacts(out_dir: Path, policy, model: Model,
                           values=None) -> list[str]:
    """Write the policy table(s); mixed policies get one file per component
    plus the weight in the accompanying evaluation JSON."""
    written = []
    if isinstance(policy, MixedPolicy):
        write_csv(out_dir / "policy_plus.csv",
                  policy_rows(policy.policy_plus, model, values))
        write_csv(out_dir / "policy_minus.csv",
                  policy_rows(policy.policy_minus, model))
        written += ["policy_plus.csv", "policy_minus.csv"]
    else:
        write_csv(out_dir / "policy.csv", policy_rows(policy, model, values))
        written.append("policy.csv")
    return written

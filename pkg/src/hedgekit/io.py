"""
File formats: problem files, metrics CSV, solution and manifest documents,
and the reference-solution cache.

Problem file (JSON, ``"version": 1``), either explicit::

    {"version": 1,
     "layout": {"stage_dims": [2, 2]},
     "tree": {"probabilities": [0.5, 0.5],
              "partitions": [[[0, 1]], [[0], [1]]]},
     "scenarios": [{"Q": [[row, col, value], ...], "c": [...],
                    "A_eq": [[row, col, value], ...], "b_eq": [...],
                    "A_in": [...], "b_in": [...],
                    "lower": [...], "upper": [...]}, ...]}

or the hydro shorthand ``{"version": 1, "hydro": {...HydroParams...}}``.
Matrices are sparse ``(row, col, value)`` triplets; the row count of a
constraint block is the length of its right-hand side.  In bounds ``null``
stands for an infinite bound.  Omitted keys mean zero cost, no
constraints and free variables.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import math
from pathlib import Path

import numpy as np

from .algorithms import METRIC_COLUMNS, MetricsRow
from .hydro import HydroParams, ReferenceSolution, build_hydro, expected_objective, extensive_form
from .prox_qp import QpScenarioProblem
from .scenario_tree import ScenarioTree, TreeError

FORMAT_VERSION = 1


class ParseError(ValueError):
    """Malformed input document."""


# -- problem files ------------------------------------------------------


def _triplets(a) -> list:
    a = np.asarray(a)
    rows, cols = np.nonzero(a)
    return [[int(i), int(j), float(a[i, j])] for i, j in zip(rows, cols)]


def _dense(trip, shape, what):
    out = np.zeros(shape)
    for entry in trip:
        if len(entry) != 3:
            raise ParseError(f"{what}: triplets need three entries")
        i, j, v = entry
        if not (isinstance(i, int) and isinstance(j, int)):
            raise ParseError(f"{what}: indices must be integers")
        if not (0 <= i < shape[0] and 0 <= j < shape[1]):
            raise ParseError(f"{what}: entry ({i}, {j}) outside {shape}")
        out[i, j] += float(v)
    return out


def _bound_list(b, sign):
    return [None if math.isinf(v) and v * sign > 0 else float(v) for v in b]


def _bound_array(vals, n, fill, what):
    if vals is None:
        return np.full(n, fill)
    if len(vals) != n:
        raise ParseError(f"{what}: expected {n} entries")
    return np.array([fill if v is None else float(v) for v in vals])


def problem_to_dict(tree: ScenarioTree, problems) -> dict:
    scen = []
    for pb in problems:
        scen.append({
            "Q": _triplets(pb.Q),
            "c": [float(v) for v in pb.c],
            "A_eq": _triplets(pb.A_eq),
            "b_eq": [float(v) for v in pb.b_eq],
            "A_in": _triplets(pb.A_in),
            "b_in": [float(v) for v in pb.b_in],
            "lower": _bound_list(pb.lower, -1),
            "upper": _bound_list(pb.upper, +1),
        })
    return {
        "version": FORMAT_VERSION,
        "layout": {"stage_dims": list(tree.layout.stage_dims)},
        "tree": {
            "probabilities": [float(p) for p in tree.probabilities],
            "partitions": tree.partitions(),
        },
        "scenarios": scen,
    }


def problem_from_dict(doc: dict):
    """Build ``(tree, problems, hydro_params_or_None)`` from a parsed document."""
    if not isinstance(doc, dict):
        raise ParseError("problem document must be a JSON object")
    if doc.get("version") != FORMAT_VERSION:
        raise ParseError(f"unsupported problem file version {doc.get('version')!r}")
    try:
        if "hydro" in doc:
            params = HydroParams(**doc["hydro"])
            tree, problems = build_hydro(params)
            return tree, problems, params
        dims = doc["layout"]["stage_dims"]
        tree = ScenarioTree(doc["tree"]["probabilities"], doc["tree"]["partitions"], dims)
        scen = doc["scenarios"]
        if len(scen) != tree.S:
            raise ParseError(f"{len(scen)} scenario blocks for {tree.S} scenarios")
        n = tree.n
        problems = []
        for s, blk in enumerate(scen):
            what = f"scenario {s}"
            b_eq = np.asarray(blk.get("b_eq", []), dtype=float)
            b_in = np.asarray(blk.get("b_in", []), dtype=float)
            problems.append(QpScenarioProblem.create(
                n,
                Q=_dense(blk.get("Q", []), (n, n), what + " Q"),
                c=np.asarray(blk.get("c", np.zeros(n)), dtype=float),
                A_eq=_dense(blk.get("A_eq", []), (b_eq.size, n), what + " A_eq"),
                b_eq=b_eq,
                A_in=_dense(blk.get("A_in", []), (b_in.size, n), what + " A_in"),
                b_in=b_in,
                lower=_bound_array(blk.get("lower"), n, -np.inf, what + " lower"),
                upper=_bound_array(blk.get("upper"), n, np.inf, what + " upper"),
            ))
        return tree, problems, None
    except ParseError:
        raise
    except (KeyError, TypeError, ValueError, TreeError) as exc:
        raise ParseError(f"invalid problem file: {exc}") from exc


def load_problem(path):
    """Parse a problem file; returns ``(tree, problems, hydro_params_or_None)``."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return problem_from_dict(doc)


def save_problem(path, tree, problems):
    Path(path).write_text(json.dumps(problem_to_dict(tree, problems), indent=1) + "\n")


def save_hydro(path, params: HydroParams):
    Path(path).write_text(json.dumps({"version": FORMAT_VERSION, "hydro": params.to_dict()}, indent=1) + "\n")


def content_hash(tree, problems) -> str:
    """SHA-256 of the canonical explicit serialization."""
    blob = json.dumps(problem_to_dict(tree, problems), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# -- reference solutions ------------------------------------------------


def reference_to_dict(ref: ReferenceSolution) -> dict:
    return {
        "version": FORMAT_VERSION,
        "f_star": ref.f_star,
        "x": ref.x.tolist(),
        "iterations": ref.iterations,
        "meta": ref.meta,
    }


def reference_from_dict(doc, tree=None, problems=None) -> ReferenceSolution:
    try:
        x = np.asarray(doc["x"], dtype=float)
        f_star = float(doc["f_star"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"invalid reference: {exc}") from exc
    if tree is not None:
        if x.shape != (tree.S, tree.n):
            raise ParseError(f"reference has shape {x.shape}, expected {(tree.S, tree.n)}")
        if problems is not None and not math.isclose(
            expected_objective(x, tree, problems), f_star, rel_tol=1e-9, abs_tol=1e-12
        ):
            raise ParseError("reference objective does not match its point")
    return ReferenceSolution(x=x, f_star=f_star, iterations=int(doc.get("iterations", 0)), meta=doc.get("meta", {}))


def load_reference(path, tree=None, problems=None) -> ReferenceSolution:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return reference_from_dict(doc, tree, problems)


def cached_reference(problem_path, tree, problems) -> tuple[ReferenceSolution, bool]:
    """
    Extensive-form reference cached next to the problem file.

    The cache file is ``<problem>.ref-<hash>.json`` with the first 16 hex
    digits of :func:`content_hash`.  Returns ``(reference, cache_hit)``.
    """
    problem_path = Path(problem_path)
    digest = content_hash(tree, problems)[:16]
    cache = problem_path.with_name(f"{problem_path.name}.ref-{digest}.json")
    if cache.exists():
        try:
            return load_reference(cache, tree, problems), True
        except ParseError:
            pass
    ref = extensive_form(tree, problems)
    try:
        cache.write_text(json.dumps(reference_to_dict(ref)) + "\n")
    except OSError:
        pass
    return ref, False


# -- metrics and run outputs --------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def metrics_csv(rows) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for row in rows:
        w.writerow([_fmt(getattr(row, c)) for c in METRIC_COLUMNS])
    return buf.getvalue()


def write_metrics(path, rows):
    Path(path).write_text(metrics_csv(rows))


def read_metrics(path) -> list[MetricsRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != METRIC_COLUMNS:
            raise ParseError(f"unexpected metrics header {header}")
        out = []
        for rec in reader:
            if len(rec) != len(METRIC_COLUMNS):
                raise ParseError(f"bad metrics row {rec}")
            t, k, nsub, step, sub, feas = rec
            out.append(MetricsRow(
                float(t), int(k), int(nsub), float(step),
                float(sub) if sub else None, float(feas) if feas else None,
            ))
    return out


def solution_dict(record) -> dict:
    d = record.summary()
    d["x"] = record.x.tolist()
    if record.delays is not None:
        d["delays"] = record.delays.to_dict()
    if "eta" in record.extra:
        d["eta"] = record.extra["eta"]
    return d


def write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")

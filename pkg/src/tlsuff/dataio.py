"""CSV datasets, model files and ``key = value`` experiment configs.

Data files have a required header ``y,x1,...,xp`` followed by one sample per
line.  Model files hold ``B`` with header ``beta_1,...,beta_K`` and one row
per feature, plus a JSON sidecar (same stem, ``.json``) with fit diagnostics.
Floats are written with 17 significant digits, so a write/read cycle is exact.
"""

from __future__ import annotations

import csv
import io
import json
import os

import numpy as np

from .errors import ConfigError, SchemaError
from .glm_core import FitOptions, SourceDataset, SourceModel, TargetDataset
from .mc_harness import ExperimentConfig, atomic_write_text

SCHEMA_VERSION = 1


def _fmt(v) -> str:
    return format(float(v), ".17g")


def _matrix_csv(header, rows_iter):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows_iter:
        w.writerow(row)
    return buf.getvalue()


def _labeled_csv(X, y):
    p = X.shape[1]
    header = ["y"] + [f"x{j + 1}" for j in range(p)]
    return _matrix_csv(header, ([str(int(lab))] + [_fmt(v) for v in row]
                                for lab, row in zip(y, X)))


def write_target_csv(path, data: TargetDataset):
    atomic_write_text(path, _labeled_csv(data.X, data.y))


def write_source_csv(path, data: SourceDataset):
    atomic_write_text(path, _labeled_csv(data.Xs, data.ys))


def read_labeled_csv(path):
    """Parse a ``y,x1..xp`` file into ``(X, y)``; errors name the line."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise SchemaError(f"{path}: missing header row")
        header = [h.strip() for h in header]
        p = len(header) - 1
        expected = ["y"] + [f"x{j + 1}" for j in range(p)]
        if p < 1 or header != expected:
            raise SchemaError(
                f"{path}: line 1: header must be 'y,x1,...,xp', got {','.join(header)!r}"
            )
        labels, rows = [], []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != p + 1:
                raise SchemaError(
                    f"{path}: line {line}: expected {p + 1} fields, got {len(row)}"
                )
            try:
                labels.append(int(row[0]))
            except ValueError:
                raise SchemaError(
                    f"{path}: line {line}, column 1: label {row[0]!r} is not an integer"
                ) from None
            try:
                vals = [float(c) for c in row[1:]]
            except ValueError:
                bad = next(j for j, c in enumerate(row[1:]) if not _is_float(c))
                raise SchemaError(
                    f"{path}: line {line}, column {bad + 2}: {row[bad + 1]!r} is not a number"
                ) from None
            if not all(np.isfinite(vals)):
                raise SchemaError(f"{path}: line {line}: non-finite feature value")
            rows.append(vals)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return np.array(rows, dtype=np.float64), np.array(labels, dtype=np.int64)


def _is_float(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def read_target_csv(path) -> TargetDataset:
    X, y = read_labeled_csv(path)
    bad = np.flatnonzero((y != 0) & (y != 1))
    if bad.size:
        raise SchemaError(
            f"{path}: line {bad[0] + 2}: target label {y[bad[0]]} is not 0 or 1"
        )
    return TargetDataset(X, y)


def read_source_csv(path, K: int | None = None) -> SourceDataset:
    X, y = read_labeled_csv(path)
    if y.min() < 0:
        i = int(np.argmin(y))
        raise SchemaError(f"{path}: line {i + 2}: negative class label {y[i]}")
    top = int(y.max())
    if K is None:
        K = top
    elif top > K:
        i = int(np.argmax(y))
        raise SchemaError(f"{path}: line {i + 2}: class label {top} exceeds K={K}")
    if K < 1:
        raise SchemaError(f"{path}: need at least two classes")
    return SourceDataset(X, y, K)


def sidecar_path(model_path) -> str:
    stem, _ = os.path.splitext(model_path)
    return stem + ".json"


def write_model(path, model: SourceModel, meta: dict | None = None):
    K = model.K
    text = _matrix_csv([f"beta_{k + 1}" for k in range(K)],
                       ([_fmt(v) for v in row] for row in model.B))
    atomic_write_text(path, text)
    side = {
        "schema_version": SCHEMA_VERSION,
        "p": model.p,
        "K": K,
        "n_samples": model.n_samples,
        "diagnostics": model.diagnostics.to_dict() if model.diagnostics else None,
    }
    side.update(meta or {})
    atomic_write_text(sidecar_path(path), json.dumps(side, indent=2) + "\n")


def read_model(path) -> SourceModel:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise SchemaError(f"{path}: missing header row")
        K = len(header)
        if [h.strip() for h in header] != [f"beta_{k + 1}" for k in range(K)]:
            raise SchemaError(f"{path}: line 1: header must be 'beta_1,...,beta_K'")
        rows = []
        for row in reader:
            if not row:
                continue
            if len(row) != K:
                raise SchemaError(
                    f"{path}: line {reader.line_num}: expected {K} fields, got {len(row)}"
                )
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise SchemaError(f"{path}: line {reader.line_num}: non-numeric entry") from None
    if not rows:
        raise SchemaError(f"{path}: no coefficient rows")
    n_samples = None
    side = sidecar_path(path)
    if os.path.exists(side):
        with open(side) as fh:
            n_samples = json.load(fh).get("n_samples")
    return SourceModel(B=np.array(rows), n_samples=n_samples)


# --------------------------------------------------------------------------
# experiment configs


def parse_config_text(text: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment; keys are case sensitive."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}", "empty key")
        if key in out:
            raise ConfigError(key, f"duplicate key on line {lineno}")
        out[key] = value
    return out


def _to_bool(s):
    v = s.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _to_int(s):
    try:
        return int(s)
    except ValueError:
        v = float(s)  # allows "1e5"
    if not v.is_integer():
        raise ValueError(f"not an integer: {s!r}")
    return int(v)


def _float_list(s):
    return tuple(float(v) for v in s.split(",") if v.strip())


def _str_list(s):
    return tuple(v.strip() for v in s.split(",") if v.strip())


_EXPERIMENT_KEYS = {
    "kind": str,
    "n": _to_int,
    "p": _to_int,
    "N": _to_int,
    "K": _to_int,
    "B_reps": _to_int,
    "alpha": float,
    "delta_grid": _float_list,
    "estimators": _str_list,
    "base_seed": _to_int,
    "rho": float,
    "gamma": _float_list,
    "source_solver": str,
    "compute_T3": _to_bool,
    "trace_draws": _to_int,
    "max_fail_fraction": float,
}
_FIT_PARSERS = {"grad_tol": float, "rel_tol": float, "max_iter": _to_int, "ridge": float,
                "solver": str, "hessian_cap": _to_int, "history": _to_int,
                "max_halvings": _to_int, "chunk_rows": _to_int}


def build_experiment_config(raw: dict, **overrides) -> ExperimentConfig:
    kwargs, fit_kwargs = {}, {}
    for key, value in raw.items():
        if key in _EXPERIMENT_KEYS:
            target, parser = kwargs, _EXPERIMENT_KEYS[key]
        elif key in _FIT_PARSERS:
            target, parser = fit_kwargs, _FIT_PARSERS[key]
        else:
            raise ConfigError(key, "unknown configuration key")
        try:
            target[key] = parser(value)
        except ValueError as exc:
            raise ConfigError(key, str(exc)) from None
    for key in ("kind", "n", "p", "N"):
        if key not in kwargs and key not in overrides:
            raise ConfigError(key, "required key is missing")
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    try:
        kwargs["fit"] = FitOptions(**fit_kwargs)
    except ValueError as exc:
        field = next((k for k in fit_kwargs if k in str(exc)), "fit")
        raise ConfigError(field, str(exc)) from None
    return ExperimentConfig(**kwargs)


def load_experiment_config(path, **overrides) -> ExperimentConfig:
    with open(path) as fh:
        return build_experiment_config(parse_config_text(fh.read()), **overrides)

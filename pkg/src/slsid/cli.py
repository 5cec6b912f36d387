"""Command-line front end.

Each run is driven by one JSON config file (nested sections, matrices as
nested arrays); command-line flags override the matching config keys.  Every
command is a pure function of its config and input files, so reruns produce
byte-identical outputs: reports embed the fully resolved config and never
wall-clock data (timings go to stderr).

Commands and their config sections are documented in the README.  Exit
codes: 0 success, 2 invalid model, 3 I/O or config trouble, 4 dimension or
data-sufficiency errors, 5 numerical failures (singular Hankel, fixed-point
non-convergence, rank deficiency, no selection found, not isomorphic).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .algebra import Selection, Word, WordIndexedMatrixTable, enumerate_words
from .covariance import CovarianceTable, empirical_covariances, least_squares_covariances
from .errors import (
    DimensionError,
    InsufficientDataError,
    InvalidModeError,
    InvalidProbabilityError,
    MissingMarkovParameterError,
    ModelInvalidError,
    NotIsomorphicError,
    NumericalError,
    UndefinedBfrError,
)
from .identify import IdentConfig, identify, resolve_selections, validate_model
from .model import SwitchedModel, find_isomorphism, model_from_dict, transform_model
from .realize import FP_MAX_ITER, FP_TOL, covariance_realization
from .simulate import Dataset, SimConfig, simulate

__all__ = ["main"]

EXIT_OK = 0
EXIT_MODEL = 2
EXIT_IO = 3
EXIT_DIMENSION = 4
EXIT_NUMERICAL = 5


class ConfigError(Exception):
    """Malformed or incomplete run configuration (exit code 3)."""


def _fail_io(msg: str) -> "ConfigError":
    return ConfigError(msg)


def _load_json(path: Union[str, Path]) -> dict:
    path = Path(path)
    if not path.exists():
        raise _fail_io(f"file not found: {path}")
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise _fail_io(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}")


def _dump_json(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _canonical_sha256(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _require(cfg: dict, key: str, where: str):
    if key not in cfg:
        raise _fail_io(f"config section '{where}' is missing required key '{key}'")
    return cfg[key]


def _load_model(spec, base: Path) -> SwitchedModel:
    """Model from an inline dict or a path relative to the config file."""
    if isinstance(spec, dict):
        return model_from_dict(spec)
    return model_from_dict(_load_json(base / str(spec)))


def _load_dataset(spec, base: Path) -> Dataset:
    path = base / str(spec)
    if not path.exists():
        raise _fail_io(f"dataset not found: {path}")
    clean = path.with_name(path.stem + "_clean" + path.suffix)
    return Dataset.from_csv(path, clean_path=clean if clean.exists() else None)


def _selection_spec(spec, base: Path, n_modes: int, n_y: int, n_cols: int):
    """Decode a selection config value: "search", "file:PATH", or inline dict."""
    if spec == "search":
        return "search"
    if isinstance(spec, str) and spec.startswith("file:"):
        obj = _load_json(base / spec[len("file:"):])
        return Selection.from_jsonable(obj, n_modes, n_y, n_cols)
    if isinstance(spec, dict):
        return Selection.from_jsonable(spec, n_modes, n_y, n_cols)
    raise _fail_io(f"selection spec must be 'search', 'file:PATH', or an object, got {spec!r}")


def _stderr(msg: str) -> None:
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    cfg = _load_json(args.config)
    base = Path(args.config).parent
    model = _load_model(_require(cfg, "model", "simulate"), base)
    sim_section = dict(_require(cfg, "sim", "simulate"))
    if args.seed is not None:
        sim_section["seed"] = args.seed
    sim_cfg = SimConfig.from_jsonable(sim_section)
    out = Path(args.out)
    t0 = time.perf_counter()
    data = simulate(model, sim_cfg)
    out.mkdir(parents=True, exist_ok=True)
    data.to_csv(out / "data.csv")
    data.clean_to_csv(out / "data_clean.csv")
    manifest = {
        "command": "simulate",
        "effective_config": {"model": model.to_dict(), "sim": sim_cfg.to_jsonable()},
        "model_sha256": _canonical_sha256(model.to_dict()),
        "rows": len(data),
        "files": ["data.csv", "data_clean.csv"],
    }
    _dump_json(manifest, out / "manifest.json")
    _stderr(f"simulate: {len(data)} rows in {time.perf_counter() - t0:.2f}s -> {out}")
    return EXIT_OK


def _word_list(spec, n_modes: int):
    if isinstance(spec, dict) and "max_len" in spec:
        return list(enumerate_words(n_modes, int(spec["max_len"])))
    if isinstance(spec, list):
        return [Word.parse(str(s)) for s in spec]
    raise _fail_io("'words' must be a list of word strings or {\"max_len\": L}")


def _resolve_p_spec(spec, data: Dataset):
    if spec == "empirical" or spec is None:
        D = int(data.q.max())
        counts = np.bincount(data.q, minlength=D + 1)[1:].astype(float)
        if np.any(counts == 0.0):
            raise InvalidProbabilityError("some modes never occur; supply p explicitly")
        return counts / counts.sum()
    return np.asarray(spec, dtype=float)


def cmd_estimate(args) -> int:
    cfg = _load_json(args.config)
    base = Path(args.config).parent
    data = _load_dataset(_require(cfg, "data", "estimate"), base)
    p = _resolve_p_spec(cfg.get("p", "empirical"), data)
    estimator = args.estimator or cfg.get("estimator", "direct")
    words = _word_list(_require(cfg, "words", "estimate"), p.shape[0])
    t0 = time.perf_counter()
    if estimator == "direct":
        table = empirical_covariances(data, p, words)
    elif estimator == "ls":
        ordered = sorted(set(words), key=lambda w: w.sort_key)
        table = least_squares_covariances(data, p, ordered)
    else:
        raise _fail_io(f"unknown estimator {estimator!r}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    effective = {"data": str(cfg["data"]), "p": p.tolist(), "estimator": estimator,
                 "words": sorted(str(w) for w in words)}
    obj = table.to_jsonable()
    obj["effective_config"] = effective
    _dump_json(obj, out / "covariances.json")
    _stderr(f"estimate: {len(words)} words in {time.perf_counter() - t0:.2f}s -> {out}")
    return EXIT_OK


def cmd_realize(args) -> int:
    cfg = _load_json(args.config)
    base = Path(args.config).parent
    cov_obj = _load_json(base / str(_require(cfg, "covariances", "realize")))
    cov_obj.pop("effective_config", None)
    cov = CovarianceTable.from_jsonable(cov_obj)
    n_x = int(_require(cfg, "n_x", "realize"))
    n_bar = int(cfg.get("n_bar", n_x))
    D, n_y, n_u = cov.p.shape[0], cov.n_y, cov.n_u
    sel_spec = args.selection or cfg.get("selection", "search")
    sel = _selection_spec(sel_spec, base, D, n_y, n_u + n_y)
    sel_bar = _selection_spec(cfg.get("selection_bar", "search"), base, D, n_y, n_u)
    fp_tol = float(cfg.get("fp_tol", FP_TOL))
    fp_max_iter = int(cfg.get("fp_max_iter", FP_MAX_ITER))
    rank_tol = float(cfg.get("rank_tol", 1e-8))
    t0 = time.perf_counter()
    sel, sel_bar, search_diag = resolve_selections(
        cov, n_x, n_bar, sel, sel_bar,
        search_budget=int(cfg.get("search_budget", 50000)),
        rank_tol=rank_tol, fp_tol=fp_tol, fp_max_iter=fp_max_iter)
    model, diag = covariance_realization(cov, sel, sel_bar, max_iter=fp_max_iter,
                                         tol=fp_tol, rank_tol=rank_tol)
    diag.update(search_diag)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(model.to_dict(), out / "model.json")
    report = {
        "command": "realize",
        "effective_config": {
            "covariances": str(cfg["covariances"]),
            "n_x": n_x, "n_bar": n_bar,
            "selection": sel.to_jsonable(), "selection_bar": sel_bar.to_jsonable(),
            "fp_tol": fp_tol, "fp_max_iter": fp_max_iter, "rank_tol": rank_tol,
        },
        "diagnostics": _jsonable_diag(diag),
        "model_sha256": _canonical_sha256(model.to_dict()),
    }
    _dump_json(report, out / "report.json")
    _stderr(f"realize: n_x={model.n_x} in {time.perf_counter() - t0:.2f}s -> {out}")
    return EXIT_OK


def _jsonable_diag(diag: dict) -> dict:
    out = {}
    for k, v in diag.items():
        if isinstance(v, np.ndarray):
            out[k] = v.tolist()
        elif isinstance(v, (np.floating, np.integer)):
            out[k] = v.item()
        else:
            out[k] = v
    return out


def cmd_identify(args) -> int:
    cfg = _load_json(args.config)
    base = Path(args.config).parent
    data = _load_dataset(_require(cfg, "data", "identify"), base)
    section = dict(_require(cfg, "ident", "identify"))
    if args.estimator is not None:
        section["estimator"] = args.estimator
    if args.selection is not None:
        section["selection"] = args.selection
        section["selection_bar"] = args.selection
    n_x = int(_require(section, "n_x", "ident"))
    n_bar = int(section.get("n_bar", n_x))
    n_cols = data.n_u + data.n_y
    ident_cfg = IdentConfig(
        n_x=n_x,
        n_bar=n_bar,
        selection=_selection_spec(section.get("selection", "search"), base,
                                  int(data.q.max()), data.n_y, n_cols),
        selection_bar=_selection_spec(section.get("selection_bar", "search"), base,
                                      int(data.q.max()), data.n_y, data.n_u),
        estimator=section.get("estimator", "direct"),
        fp_tol=float(section.get("fp_tol", FP_TOL)),
        fp_max_iter=int(section.get("fp_max_iter", FP_MAX_ITER)),
        p=section.get("p", "empirical"),
        search_budget=int(section.get("search_budget", 50000)),
        rank_tol=float(section.get("rank_tol", 1e-8)),
    )
    t0 = time.perf_counter()
    model, diag = identify(data, ident_cfg)
    report: dict = {
        "command": "identify",
        "diagnostics": _jsonable_diag(diag),
        "model_sha256": _canonical_sha256(model.to_dict()),
    }

    val_section = cfg.get("validation")
    if val_section:
        exclude = int(val_section.get("exclude", 0))
        if "data" in val_section:
            val_data = _load_dataset(val_section["data"], base)
        elif "split" in val_section:
            n_val = int(val_section["split"])
            if n_val >= len(data):
                raise InsufficientDataError(
                    f"validation split {n_val} >= dataset length {len(data)}"
                )
            val_data = data.slice(len(data) - n_val, len(data))
        else:
            raise _fail_io("'validation' needs 'data' or 'split'")
        rep = validate_model(model, val_data, exclude=exclude)
        report["validation"] = rep.to_jsonable()
        _stderr(f"validation: BFR = {rep.bfr:.2f}% ({rep.runtime_seconds:.3f}s)")

    effective = {"data": str(cfg["data"]), "ident": {
        "n_x": n_x, "n_bar": n_bar,
        "selection": (ident_cfg.selection if isinstance(ident_cfg.selection, str)
                      else ident_cfg.selection.to_jsonable()),
        "selection_bar": (ident_cfg.selection_bar
                          if isinstance(ident_cfg.selection_bar, str)
                          else ident_cfg.selection_bar.to_jsonable()),
        "estimator": ident_cfg.estimator,
        "fp_tol": ident_cfg.fp_tol, "fp_max_iter": ident_cfg.fp_max_iter,
        "p": ident_cfg.p if isinstance(ident_cfg.p, str) else list(ident_cfg.p),
        "search_budget": ident_cfg.search_budget, "rank_tol": ident_cfg.rank_tol,
    }}
    if val_section:
        effective["validation"] = {k: (str(v) if k == "data" else v)
                                   for k, v in val_section.items()}
    report["effective_config"] = effective
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(model.to_dict(), out / "model.json")
    _dump_json(report, out / "report.json")
    _stderr(f"identify: n_x={model.n_x} in {time.perf_counter() - t0:.2f}s -> {out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _load_json(args.config)
    base = Path(args.config).parent
    model = _load_model(_require(cfg, "model", "validate"), base)
    data = _load_dataset(_require(cfg, "data", "validate"), base)
    y_ref = None
    if "reference" in cfg:
        from .simulate import load_series_csv

        y_ref = load_series_csv(base / str(cfg["reference"]))
    exclude = int(cfg.get("exclude", 0))
    rep = validate_model(model, data, y_ref=y_ref, exclude=exclude,
                         keep_predictions=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = {
        "command": "validate",
        "effective_config": {
            "model": str(cfg["model"]) if not isinstance(cfg["model"], dict) else "(inline)",
            "data": str(cfg["data"]),
            "exclude": exclude,
        },
        **rep.to_jsonable(),
    }
    _dump_json(report, out / "report.json")
    header = ",".join(["t"] + [f"yhat_{i + 1}" for i in range(rep.predictions.shape[1])])
    lines = [header]
    for t in range(rep.predictions.shape[0]):
        row = [str(t)] + [repr(float(v)) for v in rep.predictions[t]]
        lines.append(",".join(row))
    (out / "predictions.csv").write_text("\n".join(lines) + "\n")
    _stderr(f"validate: BFR = {rep.bfr:.2f}% ({rep.runtime_seconds:.3f}s) -> {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    m_a = model_from_dict(_load_json(args.model_a))
    m_b = model_from_dict(_load_json(args.model_b))
    T = find_isomorphism(m_a, m_b, tol=args.tol)
    moved = transform_model(m_a, T)
    worst = 0.0
    for s in range(m_a.n_modes):
        worst = max(worst,
                    float(np.max(np.abs(moved.A[s] - m_b.A[s]))),
                    float(np.max(np.abs(moved.B[s] - m_b.B[s]))),
                    float(np.max(np.abs(moved.K[s] - m_b.K[s]))))
    worst = max(worst, float(np.max(np.abs(moved.C - m_b.C))),
                float(np.max(np.abs(moved.Dmat - m_b.Dmat))))
    print("isomorphic: yes")
    print(f"worst residual: {worst:.3e}")
    print("T =")
    for row in T:
        print("  " + "  ".join(f"{v: .10e}" for v in row))
    return EXIT_OK


def cmd_transform(args) -> int:
    model = model_from_dict(_load_json(args.model))
    T = np.asarray(_load_json(args.matrix), dtype=float)
    out_model = transform_model(model, T)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(out_model.to_dict(), out / "model.json")
    _stderr(f"transform: wrote {out / 'model.json'}")
    return EXIT_OK


# ---------------------------------------------------------------- plumbing


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slsid",
        description="Simulation, covariance estimation, realization, and "
                    "identification of stationary linear switched systems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def with_common(p, selection=False, estimator=False, seed=False):
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", required=True, help="output directory")
        if seed:
            p.add_argument("--seed", type=int, default=None,
                           help="override the config seed")
        if estimator:
            p.add_argument("--estimator", choices=["direct", "ls"], default=None,
                           help="override the config estimator")
        if selection:
            p.add_argument("--selection", default=None,
                           help="'search' or 'file:PATH' (overrides the config)")
        return p

    p = with_common(sub.add_parser("simulate", help="simulate a model to CSV"),
                    seed=True)
    p.set_defaults(func=cmd_simulate)
    p = with_common(sub.add_parser("estimate", help="estimate a covariance table"),
                    estimator=True)
    p.set_defaults(func=cmd_estimate)
    p = with_common(sub.add_parser("realize", help="realize a model from covariances"),
                    selection=True)
    p.set_defaults(func=cmd_realize)
    p = with_common(sub.add_parser("identify", help="identify a model from data"),
                    selection=True, estimator=True)
    p.set_defaults(func=cmd_identify)
    p = with_common(sub.add_parser("validate", help="score a model on a dataset"))
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("compare", help="test two model files for isomorphism")
    p.add_argument("model_a")
    p.add_argument("model_b")
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("transform", help="apply a state-space change of basis")
    p.add_argument("model")
    p.add_argument("matrix", help="JSON file holding the square matrix T")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transform)
    return parser


def main(argv: Optional[list] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, OSError) as exc:
        _stderr(f"error: {exc}")
        return EXIT_IO
    except (ModelInvalidError, InvalidProbabilityError) as exc:
        _stderr(f"invalid model: {exc}")
        return EXIT_MODEL
    except NotIsomorphicError as exc:
        _stderr(f"not isomorphic: {exc}")
        if exc.residuals:
            for k, v in sorted(exc.residuals.items()):
                _stderr(f"  residual[{k}] = {v:.3e}")
        return EXIT_NUMERICAL
    except NumericalError as exc:
        _stderr(f"numerical failure: {exc}")
        return EXIT_NUMERICAL
    except (DimensionError, InsufficientDataError, InvalidModeError,
            MissingMarkovParameterError, UndefinedBfrError) as exc:
        _stderr(f"error: {exc}")
        return EXIT_DIMENSION
    except ValueError as exc:
        _stderr(f"error: {exc}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

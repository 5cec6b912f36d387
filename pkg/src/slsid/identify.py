"""End-to-end identification from a single trajectory, the innovation
predictor, the BFR fit metric, and the consistency-experiment harness.

Identification estimates the covariance table over the words demanded by the
chosen selections (or over all words up to a cap when selections are
searched) and hands it to the covariance realization pipeline; the result is
exactly a function of the covariance table.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .algebra import (
    EMPTY_WORD,
    Selection,
    Word,
    WordIndexedMatrixTable,
    enumerate_words,
    required_words,
)
from .covariance import (
    CovarianceTable,
    empirical_covariances,
    exact_covariances,
    least_squares_covariances,
)
from .errors import (
    DimensionError,
    InsufficientDataError,
    InvalidProbabilityError,
    ModelInvalidError,
    NonConvergenceError,
    NumericalError,
    UndefinedBfrError,
)
from .model import InnovationModel, SwitchedModel, markov_parameter
from .realize import (
    FP_MAX_ITER,
    FP_TOL,
    associated_dlss,
    covariance_realization,
    ho_kalman,
    iter_full_rank_selections,
    lambda_ydyd,
    psi_uy,
)
from .simulate import Dataset, SimConfig, simulate

__all__ = [
    "IdentConfig",
    "ValidationReport",
    "identify",
    "predict",
    "bfr",
    "validate_model",
    "consistency_experiment",
    "ConsistencyResult",
    "resolve_selections",
]


@dataclass
class IdentConfig:
    """Knobs of the identification pipeline.

    selection / selection_bar may be explicit Selection objects or the string
    "search" (deterministic enumeration of full-rank candidates).  p is the
    known mode-probability vector or "empirical" to use observed mode
    frequencies.  refine_hook, when set, is called as hook(model, data) after
    identification and must return a (possibly improved) model; none ships
    with the package.
    """

    n_x: int
    n_bar: Optional[int] = None
    selection: Union[Selection, str] = "search"
    selection_bar: Union[Selection, str] = "search"
    estimator: str = "direct"
    fp_tol: float = FP_TOL
    fp_max_iter: int = FP_MAX_ITER
    p: Union[Sequence[float], str] = "empirical"
    search_budget: int = 50000
    search_retries: int = 200
    rank_tol: float = 1e-8
    refine_hook: Optional[Callable] = None

    def __post_init__(self):
        if self.n_x < 1:
            raise DimensionError(f"n_x must be >= 1, got {self.n_x}")
        if self.n_bar is not None and self.n_bar < 1:
            raise DimensionError(f"n_bar must be >= 1, got {self.n_bar}")
        if self.estimator not in ("direct", "ls"):
            raise DimensionError(f"unknown estimator {self.estimator!r}")


@dataclass
class ValidationReport:
    """Prediction-quality summary of a model on one dataset."""

    bfr: float
    whiteness: Dict[int, float]
    n_excluded: int
    n_compared: int
    runtime_seconds: float
    predictions: Optional[np.ndarray] = None

    def to_jsonable(self, include_runtime: bool = False) -> dict:
        out = {
            "bfr": self.bfr,
            "whiteness": {str(s): v for s, v in sorted(self.whiteness.items())},
            "n_excluded": self.n_excluded,
            "n_compared": self.n_compared,
        }
        if include_runtime:
            out["runtime_seconds"] = self.runtime_seconds
        return out


def _resolve_p(data: Dataset, cfg: IdentConfig) -> np.ndarray:
    if isinstance(cfg.p, str):
        if cfg.p != "empirical":
            raise InvalidProbabilityError(f"unknown p mode {cfg.p!r}")
        D = int(data.q.max())
        counts = np.bincount(data.q, minlength=D + 1)[1:]
        if np.any(counts == 0):
            missing = [s + 1 for s in range(D) if counts[s] == 0]
            raise InvalidProbabilityError(
                f"modes {missing} never occur; cannot use empirical probabilities"
            )
        p = counts.astype(float)
        return p / p.sum()
    p = np.asarray(cfg.p, dtype=float)
    if np.any(p <= 0.0):
        raise InvalidProbabilityError(f"probabilities must be positive, got {p}")
    return p / p.sum()


def _estimate(data: Dataset, p: np.ndarray, words, cfg: IdentConfig) -> CovarianceTable:
    modes = list(range(1, p.shape[0] + 1))
    if cfg.estimator == "direct":
        return empirical_covariances(data, p, words, modes)
    ordered = sorted({Word(tuple(w)) for w in words} | {EMPTY_WORD},
                     key=lambda w: w.sort_key)
    return least_squares_covariances(data, p, ordered, modes=modes)


def _realizes_stable(sel: Selection, table: WordIndexedMatrixTable,
                     rank_tol: float) -> bool:
    """Whether the A-family realized through sel is mean-square stable.

    Table entries absorb sqrt(p), so the realized A_s are the deterministic
    ones and the relevant operator is sum_s A_s kron A_s.  Under estimation
    noise a full-rank selection can still realize an unstable family, which
    every later fixed point rejects; vetting here keeps the search moving.
    """
    from .algebra import build_hankel

    H, H_sigma, _, _ = build_hankel(sel, table)
    U, s, Vh = np.linalg.svd(H)
    if s[-1] <= rank_tol * s[0]:
        return False
    A = [Vh.T @ ((U.T @ Hs) / s[:, None]) for Hs in H_sigma]
    rho = float(np.max(np.abs(np.linalg.eigvals(sum(np.kron(a, a) for a in A)))))
    return rho < 1.0


def _search_vetted(table: WordIndexedMatrixTable, n: int, n_y: int, n_cols: int,
                   D: int, budget: int, rank_tol: float, skip: int,
                   retries: int) -> Selection:
    """(skip+1)-th full-rank selection whose realization is mean-square stable."""
    examined = 0
    accepted = 0
    for cand in iter_full_rank_selections(table, n, n_y, n_cols, D,
                                          budget=budget, rank_tol=rank_tol):
        if _realizes_stable(cand, table, rank_tol):
            if accepted == skip:
                return cand
            accepted += 1
        examined += 1
        if examined >= max(1, retries) + skip:
            break
    raise NonConvergenceError(
        f"{examined} full-rank selection(s) examined, none usable; "
        "more data or an explicit selection is needed"
    )


def resolve_selections(
    cov: CovarianceTable,
    n_x: int,
    n_bar: int,
    sel: Union[Selection, str],
    sel_bar: Union[Selection, str],
    search_budget: int = 50000,
    rank_tol: float = 1e-8,
    fp_tol: float = FP_TOL,
    fp_max_iter: int = FP_MAX_ITER,
    skip: int = 0,
    retries: int = 8,
) -> Tuple[Selection, Selection, dict]:
    """Turn "search" placeholders into concrete selections on a table.

    Explicit selections pass through untouched.  Searches run over whatever
    words the table holds; candidates needing absent words are skipped, as
    are full-rank candidates realizing mean-square unstable models (up to
    `retries` of them).  skip > 0 bypasses that many accepted hits, yielding
    the next distinct selection.
    """
    diag: dict = {}
    if isinstance(sel, Selection) and isinstance(sel_bar, Selection):
        return sel, sel_bar, diag
    D = cov.p.shape[0]
    modes = list(range(1, D + 1))
    words = set(cov.lambda_yu.words())
    psi = psi_uy(cov, words)
    if sel_bar == "search":
        sel_bar = _search_vetted(psi, n_bar, cov.n_y, cov.n_u, D,
                                 search_budget, rank_tol, skip, retries)
        diag["selection_bar_found"] = sel_bar.to_jsonable()
    if sel == "search":
        m_psi = ho_kalman(sel_bar, psi, psi[EMPTY_WORD], rank_tol=rank_tol)
        nonempty = sorted((words & set(cov.lambda_yy.words())) - {EMPTY_WORD},
                          key=lambda w: w.sort_key)
        lam_dd, _ = lambda_ydyd(m_psi, cov.q_u, cov.p, nonempty, modes,
                                tol=fp_tol, max_iter=fp_max_iter)
        M = WordIndexedMatrixTable((cov.n_y, cov.n_u + cov.n_y))
        for w in nonempty:
            M[w] = np.hstack([psi[w], cov.lambda_yy[w] - lam_dd[w]])
        sel = _search_vetted(M, n_x, cov.n_y, cov.n_u + cov.n_y, D,
                             search_budget, rank_tol, skip, retries)
        diag["selection_found"] = sel.to_jsonable()
    return sel, sel_bar, diag


def identify(data: Dataset, cfg: IdentConfig) -> Tuple[InnovationModel, dict]:
    """Estimate covariances from one trajectory and realize an innovation model.

    Returns (model, diagnostics).  With explicit selections only the words
    they require are estimated; with "search" the table covers all words up
    to 2*max(n_x, n_bar) + 2 and selections are found on the estimated Markov
    values before realization.
    """
    if len(data) < 3:
        raise InsufficientDataError(f"dataset of length {len(data)} is too short")
    p = _resolve_p(data, cfg)
    D = p.shape[0]
    if int(data.q.max()) > D:
        raise DimensionError(
            f"data uses mode {int(data.q.max())} but p has {D} entries"
        )
    n_bar = cfg.n_bar if cfg.n_bar is not None else cfg.n_x
    diagnostics: dict = {"p": p.tolist(), "estimator": cfg.estimator}

    searching = cfg.selection == "search" or cfg.selection_bar == "search"
    if searching:
        cap = 2 * max(cfg.n_x, n_bar) + 2
        words = set(enumerate_words(D, cap))
    else:
        words = (set(required_words(cfg.selection))
                 | set(required_words(cfg.selection_bar)) | {EMPTY_WORD})
    cov = _estimate(data, p, words, cfg)

    # a vetted selection can still trip the innovation-gain fixed point
    # (indefinite per-mode moments); bump the skip and re-resolve a few times
    attempts = 5 if searching else 1
    model = real_diag = None
    for attempt in range(attempts):
        try:
            sel, sel_bar, search_diag = resolve_selections(
                cov, cfg.n_x, n_bar, cfg.selection, cfg.selection_bar,
                search_budget=cfg.search_budget, rank_tol=cfg.rank_tol,
                fp_tol=cfg.fp_tol, fp_max_iter=cfg.fp_max_iter, skip=attempt,
                retries=cfg.search_retries)
            model, real_diag = covariance_realization(cov, sel, sel_bar,
                                                      max_iter=cfg.fp_max_iter,
                                                      tol=cfg.fp_tol,
                                                      rank_tol=cfg.rank_tol)
        except (NumericalError, ModelInvalidError):
            if attempt == attempts - 1:
                raise
            continue
        break
    diagnostics.update(search_diag)
    if searching:
        diagnostics["search_attempts"] = attempt + 1
    diagnostics.update(real_diag)
    diagnostics["N"] = len(data)
    diagnostics["N_0"] = cov.metadata.get("N_0")
    if cfg.refine_hook is not None:
        model = cfg.refine_hook(model, data)
        model.validate()
    return model, diagnostics


def predict(m: SwitchedModel, data: Dataset) -> np.ndarray:
    """One-step-ahead predictions of an innovation-form model on a dataset.

    Runs x(t+1) = (A_q - K_q C) x(t) + B_q u(t) + K_q (y(t) - D u(t)) from
    x(0) = 0 and returns yhat(t) = C x(t) + D u(t) aligned with the data.
    """
    if m.n_n != m.n_y or np.max(np.abs(m.F - np.eye(m.n_y))) != 0.0:
        raise ModelInvalidError("predictor needs an innovation-form model (F = I)")
    if data.n_u != m.n_u or data.n_y != m.n_y:
        raise DimensionError(
            f"data dimensions (n_u={data.n_u}, n_y={data.n_y}) do not match "
            f"model (n_u={m.n_u}, n_y={m.n_y})"
        )
    if int(data.q.max()) > m.n_modes:
        raise DimensionError(
            f"data uses mode {int(data.q.max())} but the model has {m.n_modes}"
        )
    closed = [np.asarray(m.A[s] - m.K[s] @ m.C) for s in range(m.n_modes)]
    B = [np.asarray(b) for b in m.B]
    K = [np.asarray(k) for k in m.K]
    C, Dm = m.C, m.Dmat
    T = len(data)
    yhat = np.empty((T, m.n_y))
    x = np.zeros(m.n_x)
    for t in range(T):
        s = data.q[t] - 1
        feed = Dm @ data.u[t]
        yhat[t] = C @ x + feed
        x = closed[s] @ x + B[s] @ data.u[t] + K[s] @ (data.y[t] - feed)
    return yhat


def bfr(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """Best fit rate: max(1 - ||y - yhat|| / ||y - mean(y)||, 0) * 100."""
    y_true = np.atleast_2d(np.asarray(y_true, dtype=float))
    y_pred = np.atleast_2d(np.asarray(y_pred, dtype=float))
    if y_true.shape[0] == 1 and np.asarray(y_true).ndim == 1:
        y_true = y_true.T
    if y_pred.shape[0] == 1 and np.asarray(y_pred).ndim == 1:
        y_pred = y_pred.T
    if y_true.shape != y_pred.shape:
        raise DimensionError(f"shape mismatch {y_true.shape} vs {y_pred.shape}")
    if y_true.shape[0] < 2:
        raise DimensionError("need at least two samples")
    centered = y_true - y_true.mean(axis=0)
    denom = float(np.sum(centered ** 2))
    if denom == 0.0:
        raise UndefinedBfrError("reference output is constant; BFR undefined")
    ratio = np.sqrt(float(np.sum((y_true - y_pred) ** 2)) / denom)
    return max(1.0 - ratio, 0.0) * 100.0


def _whiteness_scores(m: SwitchedModel, data: Dataset, residuals: np.ndarray) -> Dict[int, float]:
    from .covariance import _z_block

    scores = {}
    n0 = 2
    if len(data) <= n0:
        return scores
    for s in range(1, m.n_modes + 1):
        z = _z_block(data.y, data.q, m.p, Word((s,)), n0)
        scores[s] = float(np.linalg.norm(residuals[n0:].T @ z / (len(data) - n0)))
    return scores


def validate_model(m: SwitchedModel, data: Dataset,
                   y_ref: Optional[np.ndarray] = None,
                   exclude: int = 0,
                   keep_predictions: bool = False) -> ValidationReport:
    """Predict on a dataset and score the fit.

    y_ref defaults to the dataset's noise-free channel when present, else its
    y.  The first `exclude` samples are dropped from the BFR to suppress the
    predictor's zero-state transient (callers typically pass the longest word
    length used in identification).
    """
    start = time.perf_counter()
    yhat = predict(m, data)
    if y_ref is None:
        y_ref = data.y_clean if data.y_clean is not None else data.y
    y_ref = np.atleast_2d(np.asarray(y_ref, dtype=float))
    if y_ref.shape[0] == 1 and np.asarray(y_ref).ndim == 1:
        y_ref = y_ref.T
    if exclude >= len(data) - 1:
        raise InsufficientDataError(
            f"excluding {exclude} samples leaves too little validation data"
        )
    score = bfr(y_ref[exclude:], yhat[exclude:])
    whiteness = _whiteness_scores(m, data, data.y - yhat)
    return ValidationReport(
        bfr=score,
        whiteness=whiteness,
        n_excluded=exclude,
        n_compared=len(data) - exclude,
        runtime_seconds=time.perf_counter() - start,
        predictions=yhat if keep_predictions else None,
    )


@dataclass
class ConsistencyResult:
    rows: List[dict]
    medians: Dict[int, float]


def consistency_experiment(
    model: SwitchedModel,
    Ns: Sequence[int],
    seeds: Sequence[int],
    cfg: IdentConfig,
    use_oracle: bool = False,
    word_len: int = 3,
    sim_template: Optional[SimConfig] = None,
    markov_block: str = "full",
) -> ConsistencyResult:
    """Identification error versus data length over a seed ensemble.

    For each (N, seed) pair a fresh trajectory is simulated and identified;
    the error is the largest max-norm deviation of the identified model's
    Markov parameters (associated deterministic realization) from the
    generator's, over all words up to word_len.  Markov parameters are
    invariant under state isomorphism, so no basis alignment is needed.

    markov_block chooses the compared columns: "full" covers the joint
    input/noise parameters, "input" restricts to the input-to-output block.
    The noise block inherits the sampling noise of raw output covariances
    (per-entry standard error of order E[y^2]/sqrt(N)), so the input block
    is the sharper consistency probe at moderate N.

    A run whose realization fails numerically (noise can make the estimated
    Hankel realize an unusable model at small N) is recorded with infinite
    error and failed=True; medians take those at face value.

    With use_oracle=True the exact covariance table replaces estimation
    (errors then sit at solver tolerance).
    """
    if markov_block not in ("full", "input"):
        raise DimensionError(f"unknown markov_block {markov_block!r}")
    ref = associated_dlss(model)
    words = list(enumerate_words(model.n_modes, word_len))
    n_u = model.n_u

    def block(mat: np.ndarray) -> np.ndarray:
        return mat[:, :n_u] if markov_block == "input" else mat

    ref_values = {w: block(markov_parameter(ref, w)) for w in words}
    rows: List[dict] = []
    for N in Ns:
        for seed in seeds:
            failed = False
            try:
                if use_oracle:
                    n_bar = cfg.n_bar if cfg.n_bar is not None else cfg.n_x
                    cov = exact_covariances(model, 2 * max(cfg.n_x, n_bar) + 2)
                    sel, sel_bar = cfg.selection, cfg.selection_bar
                    if sel == "search" or sel_bar == "search":
                        raise DimensionError(
                            "oracle mode needs explicit selections in the config"
                        )
                    m_hat, _ = covariance_realization(cov, sel, sel_bar,
                                                      max_iter=cfg.fp_max_iter,
                                                      tol=cfg.fp_tol,
                                                      rank_tol=cfg.rank_tol)
                else:
                    if sim_template is None:
                        sim_cfg = SimConfig(seed=seed, length=int(N))
                    else:
                        sim_cfg = SimConfig(seed=seed, length=int(N),
                                            burn_in=sim_template.burn_in,
                                            input_dist=sim_template.input_dist,
                                            input_low=sim_template.input_low,
                                            input_high=sim_template.input_high)
                    data = simulate(model, sim_cfg)
                    m_hat, _ = identify(data, cfg)
                d_hat = associated_dlss(m_hat)
                err = max(float(np.max(np.abs(block(markov_parameter(d_hat, w))
                                              - ref_values[w])))
                          for w in words)
            except (NumericalError, ModelInvalidError):
                err = float("inf")
                failed = True
            rows.append({"N": int(N), "seed": int(seed), "error": err,
                         "failed": failed})
    medians = {}
    for N in Ns:
        errs = sorted(r["error"] for r in rows if r["N"] == int(N))
        medians[int(N)] = float(np.median(errs))
    return ConsistencyResult(rows=rows, medians=medians)

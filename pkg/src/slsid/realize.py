"""Realization engines: Ho-Kalman on selection-indexed Hankels, the
stochastic/deterministic model conversions with their fixed-point
recursions, and the minimal covariance realization pipeline.

Fixed-point conventions (all iterations start from zero and stop when the
max-norm step falls below tol):

* state second moment: P_s = p_s * sum_s1 (A_s1 P_s1 A_s1^T + K_s1 Q_v[s1] K_s1^T)
* input-part moment (on the sqrt(p)-absorbed dLSS): Pt_s = p_s * sum_s1
  ((1/p_s1) At_s1 Pt_s1 At_s1^T + Bt_s1 Q_u Bt_s1^T)
* innovation gain: with S_s = p_s T^{ys,ys}_{s,s},
      Q_s = S_s - C P_s C^T
      K_s = (sqrt(p_s) G_s - (1/sqrt(p_s)) At_s P_s C^T) Q_s^{-1}
      P_s <- p_s * sum_s1 ((1/p_s1) At_s1 P_s1 At_s1^T + K_s1 Q_s1 K_s1^T)
  whose limits are the innovation gain, p_s times the per-mode innovation
  second moment, and p_s times the predictor-state second moment.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .algebra import (
    EMPTY_WORD,
    Selection,
    Word,
    WordIndexedMatrixTable,
    build_hankel,
    enumerate_words,
    matrix_product_along_word,
    required_words,
)
from .covariance import CovarianceTable
from .errors import (
    DimensionError,
    MissingMarkovParameterError,
    ModelInvalidError,
    NonConvergenceError,
    NoSelectionFoundError,
    NotFullRankError,
    SingularHankelError,
)
from .model import (
    RANK_TOL,
    DeterministicModel,
    InnovationModel,
    SwitchedModel,
    numerical_rank,
)

__all__ = [
    "KQIterationState",
    "state_second_moment",
    "input_state_second_moment",
    "ho_kalman",
    "associated_dlss",
    "associated_slss",
    "psi_uy",
    "lambda_ydyd",
    "covariance_realization",
    "iter_full_rank_selections",
    "search_selection",
]

FP_TOL = 1e-10
FP_MAX_ITER = 5000


def _iterate_to_fixed_point(step: Callable, init, tol: float, max_iter: int,
                            label: str) -> Tuple[list, List[float]]:
    """Iterate P <- step(P) until the max-norm delta < tol; track deltas."""
    P = list(init)
    deltas: List[float] = []
    for _ in range(max_iter):
        P_next = step(P)
        delta = max(float(np.max(np.abs(a - b))) for a, b in zip(P_next, P))
        deltas.append(delta)
        P = P_next
        if delta < tol:
            return P, deltas
    raise NonConvergenceError(
        f"{label} did not converge in {max_iter} iterations (last delta {deltas[-1]:.3e})",
        last_delta=deltas[-1],
    )


def state_second_moment(m: SwitchedModel, tol: float = FP_TOL,
                        max_iter: int = FP_MAX_ITER) -> Tuple[np.ndarray, ...]:
    """Per-mode stationary second moments P_s = p_s E[x x^T] of the noise-driven state.

    Fixed point of P_s = p_s sum_s1 (A_s1 P_s1 A_s1^T + K_s1 Q_v[s1] K_s1^T)
    from P = 0; converges geometrically for stationary models.
    """
    D, n_x = m.n_modes, m.n_x
    const = sum(m.K[s] @ m.Q_v[s] @ m.K[s].T for s in range(D))

    def step(P):
        core = sum(m.A[s] @ P[s] @ m.A[s].T for s in range(D)) + const
        return [m.p[s] * core for s in range(D)]

    P, _ = _iterate_to_fixed_point(step, [np.zeros((n_x, n_x))] * D, tol, max_iter,
                                   "state second-moment iteration")
    return tuple((mat + mat.T) / 2.0 for mat in P)


def input_state_second_moment(
    m_d: DeterministicModel,
    q_u: np.ndarray,
    p: Sequence[float],
    tol: float = FP_TOL,
    max_iter: int = FP_MAX_ITER,
) -> Tuple[np.ndarray, ...]:
    """Per-mode second moments Pt_s of the input-driven state of a dLSS.

    Fixed point of
        Pt_s = p_s sum_s1 ( A_s1 Pt_s1 A_s1^T / p_s1 + B_s1 Q_u B_s1^T )
    from Pt = 0.
    """
    p = np.asarray(p, dtype=float)
    D = m_d.n_modes
    if p.shape != (D,):
        raise DimensionError(f"p must have {D} entries, got {p.shape}")
    q_u = np.atleast_2d(np.asarray(q_u, dtype=float))
    # the moment iteration contracts iff sum_s A_s kron A_s is Schur;
    # checking up front turns a slow NaN divergence into an immediate error
    rho = float(np.max(np.abs(np.linalg.eigvals(
        sum(np.kron(a, a) for a in m_d.A)))))
    if rho >= 1.0:
        raise NonConvergenceError(
            f"input-part realization is not mean-square stable "
            f"(spectral radius {rho:.4f} >= 1); the moment iteration diverges",
            last_delta=float("inf"),
        )
    const = [m_d.B[s] @ q_u @ m_d.B[s].T for s in range(D)]

    def step(P):
        core = sum((m_d.A[s] @ P[s] @ m_d.A[s].T) / p[s] + const[s] for s in range(D))
        return [p[s] * (core + core.T) / 2.0 for s in range(D)]

    P, _ = _iterate_to_fixed_point(step, [np.zeros((m_d.n_x, m_d.n_x))] * D,
                                   tol, max_iter, "input-part moment iteration")
    return tuple(P)


def ho_kalman(sel: Selection, M: WordIndexedMatrixTable, M_eps: np.ndarray,
              rank_tol: float = RANK_TOL) -> DeterministicModel:
    """Realize a dLSS from a Markov-function table through one selection.

    Builds the four Hankel matrices and returns
        A_s = H^{-1} H_s,  B_s = H^{-1} H_{alpha,s},  C = H_beta,  D = M_eps.
    The inversion is a rank-revealing solve: if the numerical rank of H is
    below n the selection cannot support dimension n and SingularHankelError
    reports the rank (choose a different selection).
    """
    H, H_sigma, H_alpha_sigma, H_beta = build_hankel(sel, M)
    n = sel.n
    U, s, Vh = np.linalg.svd(H)
    rank = int(np.sum(s > rank_tol * s[0])) if s[0] > 0 else 0
    if rank < n:
        raise SingularHankelError(
            f"Hankel matrix has numerical rank {rank} < n = {n}", rank=rank
        )

    def solve(rhs: np.ndarray) -> np.ndarray:
        return Vh.T @ ((U.T @ rhs) / s[:, None])

    A = tuple(solve(Hs) for Hs in H_sigma)
    B = tuple(solve(Has) for Has in H_alpha_sigma)
    M_eps = np.atleast_2d(np.asarray(M_eps, dtype=float))
    if M_eps.shape != M.shape:
        raise DimensionError(
            f"M_eps shape {M_eps.shape} does not match table shape {M.shape}"
        )
    return DeterministicModel(A=A, B=B, C=H_beta, Dmat=M_eps)


def associated_dlss(m: SwitchedModel, tol: float = FP_TOL,
                    max_iter: int = FP_MAX_ITER) -> DeterministicModel:
    """The deterministic realization of a stochastic model's covariances.

    Returns ({sqrt(p_s) A_s}, {[sqrt(p_s) B_s, G_s]}, C, [D, I]) with
    G_s = (1/sqrt(p_s)) (A_s P_s C^T + K_s Q_v[s] F^T) built on the
    stationary second moments P_s.  Its Markov parameters stack
    Lambda^{y,u}_w Q_u^{-1} and Lambda^{ys,ys}_w side by side.
    """
    m.validate()
    P = state_second_moment(m, tol=tol, max_iter=max_iter)
    D = m.n_modes
    sqrt_p = np.sqrt(m.p)
    G = [(m.A[s] @ P[s] @ m.C.T + m.K[s] @ m.Q_v[s] @ m.F.T) / sqrt_p[s]
         for s in range(D)]
    A = tuple(sqrt_p[s] * m.A[s] for s in range(D))
    B = tuple(np.hstack([sqrt_p[s] * m.B[s], G[s]]) for s in range(D))
    Dmat = np.hstack([m.Dmat, np.eye(m.n_y)])
    return DeterministicModel(A=A, B=B, C=m.C, Dmat=Dmat)


@dataclass
class KQIterationState:
    """Converged state of the innovation-gain fixed point (and its history)."""

    P: Tuple[np.ndarray, ...]
    Q: Tuple[np.ndarray, ...]
    K: Tuple[np.ndarray, ...]
    iterations: int
    last_delta: float
    deltas: List[float] = field(default_factory=list)


def _kq_iteration(A_hat: Sequence[np.ndarray], C_hat: np.ndarray,
                  G_hat: Sequence[np.ndarray], t_ys_sigma: Dict[int, np.ndarray],
                  p: np.ndarray, tol: float, max_iter: int) -> KQIterationState:
    D = len(A_hat)
    n_x = A_hat[0].shape[0]
    sqrt_p = np.sqrt(p)
    S = [p[s] * np.asarray(t_ys_sigma[s + 1], dtype=float) for s in range(D)]

    def kq_of(P):
        Q, K = [], []
        for s in range(D):
            Qs = S[s] - C_hat @ P[s] @ C_hat.T
            Qs = (Qs + Qs.T) / 2.0
            svals = np.linalg.svd(Qs, compute_uv=False)
            if svals[0] == 0.0 or svals[-1] < 1e-10 * svals[0]:
                raise NotFullRankError(
                    f"per-mode innovation moment for mode {s + 1} is numerically "
                    f"singular (smallest singular value {svals[-1]:.3e})"
                )
            rhs = sqrt_p[s] * G_hat[s] - (A_hat[s] @ P[s] @ C_hat.T) / sqrt_p[s]
            K.append(np.linalg.solve(Qs, rhs.T).T)
            Q.append(Qs)
        return Q, K

    P = [np.zeros((n_x, n_x))] * D
    deltas: List[float] = []
    for it in range(max_iter):
        Q, K = kq_of(P)
        core = sum((A_hat[s] @ P[s] @ A_hat[s].T) / p[s] + K[s] @ Q[s] @ K[s].T
                   for s in range(D))
        P_next = [p[s] * (core + core.T) / 2.0 for s in range(D)]
        delta = max(float(np.max(np.abs(a - b))) for a, b in zip(P_next, P))
        deltas.append(delta)
        P = P_next
        if delta < tol:
            Q, K = kq_of(P)
            return KQIterationState(P=tuple(P), Q=tuple(Q), K=tuple(K),
                                    iterations=it + 1, last_delta=delta, deltas=deltas)
    raise NonConvergenceError(
        f"innovation-gain iteration did not converge in {max_iter} iterations "
        f"(last delta {deltas[-1]:.3e})",
        last_delta=deltas[-1],
    )


def associated_slss(
    m_d: DeterministicModel,
    p: Sequence[float],
    t_ys_sigma: Dict[int, np.ndarray],
    max_iter: int = FP_MAX_ITER,
    tol: float = FP_TOL,
    q_u: Optional[np.ndarray] = None,
    return_state: bool = False,
):
    """Innovation-form stochastic model behind a [B | G]-split deterministic one.

    m_d must carry the stacked input/noise structure produced by
    associated_dlss or by Ho-Kalman on the joint Markov function: B blocks
    [B_hat | G_hat] with n_u = n_cols - n_y, D block [D | ~I].  Runs the
    innovation-gain fixed point and returns
    ({A_hat_s/sqrt(p_s), B_hat_s/sqrt(p_s), K_s}, C, D, F=I) with Q_v[s] the
    per-mode innovation moment limit.  q_u (default identity) only populates
    the model's input-covariance field.
    """
    p = np.asarray(p, dtype=float)
    D = m_d.n_modes
    if p.shape != (D,):
        raise DimensionError(f"p must have {D} entries, got {p.shape}")
    n_y = m_d.n_y
    n_u = m_d.n_u - n_y
    if n_u < 0:
        raise DimensionError(
            f"column count {m_d.n_u} below output dimension {n_y}; "
            "expected [B | G] stacked columns"
        )
    rho = float(np.max(np.abs(np.linalg.eigvals(
        sum(np.kron(a, a) for a in m_d.A)))))
    if rho >= 1.0:
        raise ModelInvalidError(
            f"sum of A_s kron A_s has spectral radius {rho:.6f} >= 1; "
            "the stochastic conversion needs a Schur matrix"
        )
    G_hat = [np.asarray(b)[:, n_u:] for b in m_d.B]
    state = _kq_iteration(list(m_d.A), m_d.C, G_hat, t_ys_sigma, p, tol, max_iter)
    sqrt_p = np.sqrt(p)
    if q_u is None:
        q_u = np.eye(n_u)
    model = InnovationModel.from_parts(
        A=tuple(m_d.A[s] / sqrt_p[s] for s in range(D)),
        B=tuple(np.asarray(m_d.B[s])[:, :n_u] / sqrt_p[s] for s in range(D)),
        K=state.K,
        C=m_d.C,
        Dmat=m_d.Dmat[:, :n_u],
        p=p,
        Q_u=q_u,
        Q_v=tuple(state.Q),
    ).validate()
    if return_state:
        return model, state
    return model


def psi_uy(cov: CovarianceTable, words: Iterable[Word]) -> WordIndexedMatrixTable:
    """Input-to-output Markov values Psi(w) = Lambda^{y,u}_w Q_u^{-1}."""
    q_u = cov.q_u
    svals = np.linalg.svd(q_u, compute_uv=False)
    if svals[0] == 0.0 or svals[-1] < 1e-10 * svals[0]:
        raise NotFullRankError("input covariance Q_u is numerically singular")
    out = WordIndexedMatrixTable((cov.n_y, cov.n_u))
    for w in words:
        out[w] = np.linalg.solve(q_u, cov.lambda_yu[w].T).T
    return out


def lambda_ydyd(
    m_d: DeterministicModel,
    q_u: np.ndarray,
    p: Sequence[float],
    words: Iterable[Word],
    modes: Sequence[int],
    tol: float = FP_TOL,
    max_iter: int = FP_MAX_ITER,
) -> Tuple[WordIndexedMatrixTable, Dict[int, np.ndarray]]:
    """Output covariances of the input-driven subsystem from its dLSS.

    m_d realizes Psi (the sqrt(p)-absorbed input-to-output Markov function).
    With Pt_s the fixed point of
        Pt_s = p_s sum_s1 ((1/p_s1) A_s1 Pt_s1 A_s1^T + B_s1 Q_u B_s1^T),
    the word-indexed covariances are, for w = s0 + rest,
        Lambda^{yd,yd}_w = C A_rest ((1/p_s0) A_s0 Pt_s0 C^T + B_s0 Q_u D^T)
    and the per-mode second moments
        T^{yd,yd}_{s,s} = (1/p_s) C Pt_s C^T + D Q_u D^T.
    The empty word, if requested, gets E[y_d y_d^T] = C (sum_s Pt_s) C^T + D Q_u D^T.
    """
    p = np.asarray(p, dtype=float)
    D = m_d.n_modes
    if p.shape != (D,):
        raise DimensionError(f"p must have {D} entries, got {p.shape}")
    q_u = np.atleast_2d(np.asarray(q_u, dtype=float))
    P = input_state_second_moment(m_d, q_u, p, tol=tol, max_iter=max_iter)
    C, Dm = m_d.C, m_d.Dmat
    cores = [(m_d.A[s] @ P[s] @ C.T) / p[s] + m_d.B[s] @ q_u @ Dm.T for s in range(D)]
    table = WordIndexedMatrixTable((m_d.n_y, m_d.n_y))
    for w in words:
        w = Word(tuple(w))
        if len(w) == 0:
            total = sum(P)
            table[w] = C @ total @ C.T + Dm @ q_u @ Dm.T
            continue
        s0 = w.letters[0]
        rest = Word(w.letters[1:])
        table[w] = C @ matrix_product_along_word(m_d.A, rest) @ cores[s0 - 1]
    t_dd = {}
    for s in modes:
        m = (C @ P[s - 1] @ C.T) / p[s - 1] + Dm @ q_u @ Dm.T
        t_dd[s] = (m + m.T) / 2.0
    return table, t_dd


def _stage(exc: Exception, stage: str) -> Exception:
    """Re-wrap an exception with the pipeline stage in its message."""
    cls = type(exc)
    try:
        out = cls(f"{stage}: {exc}")
    except TypeError:  # exception with a non-standard signature
        return exc
    for attr in ("rank", "last_delta", "residuals"):
        if hasattr(exc, attr):
            setattr(out, attr, getattr(exc, attr))
    return out


def covariance_realization(
    cov: CovarianceTable,
    sel: Selection,
    sel_bar: Selection,
    max_iter: int = FP_MAX_ITER,
    tol: float = FP_TOL,
    rank_tol: float = RANK_TOL,
) -> Tuple[InnovationModel, dict]:
    """Minimal innovation-form model from output/input covariances.

    The six steps: (1) Psi values from Lambda^{y,u}; (2) Ho-Kalman on Psi at
    sel_bar realizes the input-driven part; (3) its output covariances are
    subtracted from Lambda^{y,y} to expose the noise part; (4) both blocks
    assemble the joint Markov values M(w) = [Lambda^{y,u}_w Q_u^{-1},
    Lambda^{ys,ys}_w]; (5) Ho-Kalman at sel realizes the joint model; (6) the
    innovation-gain fixed point on the leftover per-mode moments
    T^{yy}_{s,s} - T^{yd,yd}_{s,s} yields K and the innovation moments.

    Returns (model, diagnostics); failures carry the step that raised them.
    """
    cov.validate()
    diagnostics: dict = {
        "selection": sel.to_jsonable(),
        "selection_bar": sel_bar.to_jsonable(),
        "estimator": cov.metadata.get("estimator"),
        "warnings": list(cov.metadata.get("degenerate_words", [])),
    }
    D = sel.n_modes
    modes = list(range(1, D + 1))

    words_bar = required_words(sel_bar)
    try:
        psi = psi_uy(cov, words_bar)
        psi_eps = np.linalg.solve(cov.q_u, cov.lambda_yu[EMPTY_WORD].T).T
    except Exception as exc:  # noqa: BLE001 - re-tagged below
        raise _stage(exc, "step 1 (input Markov values)") from exc
    try:
        m_psi = ho_kalman(sel_bar, psi, psi_eps, rank_tol=rank_tol)
    except Exception as exc:
        raise _stage(exc, "step 2 (input-part realization)") from exc
    diagnostics["n_bar"] = m_psi.n_x

    words_full = required_words(sel)
    try:
        lam_dd, t_dd = lambda_ydyd(m_psi, cov.q_u, cov.p, words_full, modes,
                                   tol=tol, max_iter=max_iter)
        psi_full = psi_uy(cov, words_full)
        M = WordIndexedMatrixTable((sel.n_y, sel.n_cols))
        for w in words_full:
            M[w] = np.hstack([psi_full[w], cov.lambda_yy[w] - lam_dd[w]])
        M_eps = np.hstack([psi_eps, np.eye(sel.n_y)])
    except Exception as exc:
        raise _stage(exc, "steps 3-4 (noise-part covariances)") from exc
    try:
        m_full = ho_kalman(sel, M, M_eps, rank_tol=rank_tol)
    except Exception as exc:
        raise _stage(exc, "step 5 (joint realization)") from exc

    t_ys = {}
    for s in modes:
        leftover = cov.t_yy_sigma[s] - t_dd[s]
        t_ys[s] = (leftover + leftover.T) / 2.0
    try:
        model, state = associated_slss(m_full, cov.p, t_ys, max_iter=max_iter,
                                       tol=tol, q_u=cov.q_u, return_state=True)
    except Exception as exc:
        raise _stage(exc, "step 6 (innovation conversion)") from exc

    diagnostics["kq_iterations"] = state.iterations
    diagnostics["kq_last_delta"] = state.last_delta
    diagnostics["n_x"] = model.n_x
    return model, diagnostics


def iter_full_rank_selections(
    M: Union[WordIndexedMatrixTable, Callable[[Word], np.ndarray]],
    n: int,
    n_y: int,
    n_cols: int,
    n_modes: int,
    budget: int = 50000,
    word_cap: Optional[int] = None,
    rank_tol: float = RANK_TOL,
) -> Iterator[Selection]:
    """Yield selections with full-rank main Hankel, in deterministic order.

    Row and column pools follow length-then-lex word order crossed with index
    order (empty words included); alpha combinations vary slowest and beta
    combinations fastest.  Every evaluated candidate counts against the
    budget; exhausting it raises NoSelectionFoundError mid-iteration.

    M may be a word-indexed table (missing words skip the candidate) or a
    callable returning the Markov value of a word.
    """
    if n < 1:
        raise DimensionError(f"target dimension must be >= 1, got {n}")
    cap = min(n, word_cap) if word_cap is not None else n
    if isinstance(M, WordIndexedMatrixTable):
        table = M

        def lookup(w: Word) -> Optional[np.ndarray]:
            return table[w] if w in table else None
    else:
        fn = M
        cache: Dict[Word, Optional[np.ndarray]] = {}

        def lookup(w: Word) -> Optional[np.ndarray]:
            if w not in cache:
                try:
                    cache[w] = np.asarray(fn(w), dtype=float)
                except MissingMarkovParameterError:
                    cache[w] = None
            return cache[w]

    word_pool = list(enumerate_words(n_modes, cap))
    alpha_pool = [(w, k) for w in word_pool for k in range(1, n_y + 1)]
    beta_pool = [(s, w, l) for w in word_pool for s in range(1, n_modes + 1)
                 for l in range(1, n_cols + 1)]
    evaluated = 0
    for alpha in combinations(alpha_pool, n):
        for beta in combinations(beta_pool, n):
            if evaluated >= budget:
                raise NoSelectionFoundError(
                    f"no rank-{n} selection within budget {budget} "
                    "(larger budget, different n, or more data may help)"
                )
            evaluated += 1
            H = np.empty((n, n))
            ok = True
            for j, (s, v, l) in enumerate(beta):
                head = Word((s,)) + v
                for i, (u, k) in enumerate(alpha):
                    val = lookup(head + u)
                    if val is None:
                        ok = False
                        break
                    H[i, j] = val[k - 1, l - 1]
                if not ok:
                    break
            if not ok:
                continue
            rank, _ = numerical_rank(H, rank_tol)
            if rank == n:
                yield Selection(alpha=tuple(alpha), beta=tuple(beta),
                                n_modes=n_modes, n_y=n_y, n_cols=n_cols)


def search_selection(
    M: Union[WordIndexedMatrixTable, Callable[[Word], np.ndarray]],
    n: int,
    n_y: int,
    n_cols: int,
    n_modes: int,
    budget: int = 50000,
    word_cap: Optional[int] = None,
    rank_tol: float = RANK_TOL,
    skip: int = 0,
) -> Selection:
    """First selection whose main Hankel has full numerical rank n.

    See iter_full_rank_selections for the deterministic enumeration order
    and budget semantics.  skip > 0 returns the (skip+1)-th hit instead of
    the first; running out of hits raises NoSelectionFoundError.
    """
    hits = iter_full_rank_selections(M, n, n_y, n_cols, n_modes,
                                     budget=budget, word_cap=word_cap,
                                     rank_tol=rank_tol)
    found = 0
    for cand in hits:
        if found == skip:
            return cand
        found += 1
    raise NoSelectionFoundError(
        f"selection pools exhausted without {skip + 1} rank-{n} hits"
    )

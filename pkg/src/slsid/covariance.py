"""Covariance calculus: z-processes, empirical estimators, exact oracle.

For a word w = s_1...s_k the z-process of a signal b is
    z^b_w(t) = b(t - k) * prod_i chi(q(t - k + i - 1) = s_i) / sqrt(p_w)
(z^b_e(t) = b(t) for the empty word): the signal value k steps back, kept
only when the observed modes spell w, normalized so the indicator has unit
second moment.  Covariances are Lambda^{r,b}_w = E[r(t) z^b_w(t)^T] and
T^{r,b}_{s,s} = E[z^r_s(t) z^b_s(t)^T].

The estimators average over t = N_0 .. T-1 with N_0 = (max word length) + 1
so every z value is in range, dividing by the number of retained samples.
Both estimators produce the same sums: the least-squares route recovers them
from the normal equations of a linear regression, which is the identity the
tests pin down.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .algebra import (
    EMPTY_WORD,
    Word,
    WordIndexedMatrixTable,
    enumerate_words,
    word_probability,
)
from .errors import (
    DimensionError,
    IllConditionedRegressorError,
    InsufficientDataError,
    ModelInvalidError,
)
from .model import SwitchedModel, numerical_rank
from .simulate import Dataset

__all__ = [
    "CovarianceTable",
    "z_process",
    "empirical_covariances",
    "least_squares_covariances",
    "exact_covariances",
]


@dataclass
class CovarianceTable:
    """The covariance data consumed by the realization algorithm.

    lambda_yu[w] = Lambda^{y,u}_w (n_y x n_u, includes the empty word),
    lambda_yy[w] = Lambda^{y,y}_w (n_y x n_y),
    t_yy_sigma[s] = T^{y,y}_{s,s} for modes s in {1..D},
    q_u = E[u u^T], p = mode probabilities.
    metadata records provenance (estimator, sample counts, warnings).
    """

    lambda_yu: WordIndexedMatrixTable
    lambda_yy: WordIndexedMatrixTable
    t_yy_sigma: Dict[int, np.ndarray]
    q_u: np.ndarray
    p: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.q_u = np.atleast_2d(np.asarray(self.q_u, dtype=float))
        self.p = np.atleast_1d(np.asarray(self.p, dtype=float))
        self.t_yy_sigma = {int(s): np.atleast_2d(np.asarray(m, dtype=float))
                           for s, m in self.t_yy_sigma.items()}

    @property
    def n_y(self) -> int:
        return self.lambda_yy.shape[0]

    @property
    def n_u(self) -> int:
        return self.lambda_yu.shape[1]

    def validate(self) -> "CovarianceTable":
        n_y, n_u = self.n_y, self.n_u
        if self.lambda_yu.shape != (n_y, n_u):
            raise DimensionError("lambda_yu shape mismatch")
        if self.q_u.shape != (n_u, n_u):
            raise DimensionError(f"q_u must be {n_u}x{n_u}, got {self.q_u.shape}")
        for s, m in self.t_yy_sigma.items():
            if m.shape != (n_y, n_y):
                raise DimensionError(f"T_yy[{s}] must be {n_y}x{n_y}, got {m.shape}")
            if np.max(np.abs(m - m.T)) > 1e-10 * max(1.0, float(np.max(np.abs(m)))):
                raise DimensionError(f"T_yy[{s}] is not symmetric")
            eigmin = float(np.linalg.eigvalsh(m).min())
            if eigmin < -1e-8 * max(1.0, float(np.max(np.abs(m)))):
                raise DimensionError(f"T_yy[{s}] has negative eigenvalue {eigmin:.3e}")
        if np.any(self.p <= 0.0) or abs(float(self.p.sum()) - 1.0) > 1e-8:
            raise DimensionError(f"invalid probability vector {self.p}")
        return self

    def to_jsonable(self) -> dict:
        return {
            "n_y": self.n_y,
            "n_u": self.n_u,
            "p": self.p.tolist(),
            "q_u": self.q_u.tolist(),
            "lambda_yu": {str(w): m.tolist() for w, m in self.lambda_yu.items()},
            "lambda_yy": {str(w): m.tolist() for w, m in self.lambda_yy.items()},
            "t_yy_sigma": {str(s): m.tolist() for s, m in sorted(self.t_yy_sigma.items())},
            "metadata": self.metadata,
        }

    @classmethod
    def from_jsonable(cls, obj: dict) -> "CovarianceTable":
        n_y, n_u = int(obj["n_y"]), int(obj["n_u"])
        lam_yu = WordIndexedMatrixTable((n_y, n_u))
        for text, m in obj["lambda_yu"].items():
            lam_yu[Word.parse(text)] = np.asarray(m, dtype=float)
        lam_yy = WordIndexedMatrixTable((n_y, n_y))
        for text, m in obj["lambda_yy"].items():
            lam_yy[Word.parse(text)] = np.asarray(m, dtype=float)
        t_yy = {int(s): np.asarray(m, dtype=float) for s, m in obj["t_yy_sigma"].items()}
        return cls(lambda_yu=lam_yu, lambda_yy=lam_yy, t_yy_sigma=t_yy,
                   q_u=np.asarray(obj["q_u"], dtype=float),
                   p=np.asarray(obj["p"], dtype=float),
                   metadata=dict(obj.get("metadata", {})))


def z_process(b: np.ndarray, q: np.ndarray, p: Sequence[float], w: Word, t: int) -> np.ndarray:
    """Evaluate z^b_w(t) for one time index.

    b is a T x n_b array, q the aligned mode series, and t a 0-based index.
    Returns b(t) for the empty word; otherwise b(t-|w|) scaled by the mode
    indicator product and 1/sqrt(p_w) (zero when the modes mismatch).
    """
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if b.shape[0] == 1 and np.asarray(b).ndim == 1:
        b = b.T
    q = np.asarray(q, dtype=int)
    k = len(w)
    if t < k or t >= b.shape[0]:
        raise IndexError(f"time {t} out of range for |w| = {k} and {b.shape[0]} samples")
    if k == 0:
        return b[t].copy()
    for i, s in enumerate(w):
        if q[t - k + i] != s:
            return np.zeros(b.shape[1])
    return b[t - k] / np.sqrt(word_probability(p, w))


def _z_block(b: np.ndarray, q: np.ndarray, p, w: Word, n0: int) -> np.ndarray:
    """Rows z^b_w(t)^T for t = n0 .. T-1 (vectorized)."""
    T = b.shape[0]
    k = len(w)
    if k == 0:
        return b[n0:]
    ind = np.ones(T - n0, dtype=bool)
    for i, s in enumerate(w):
        ind &= q[n0 - k + i:T - k + i] == s
    return (b[n0 - k:T - k] * ind[:, None]) / np.sqrt(word_probability(p, w))


def _prepare(data: Dataset, words: Iterable[Word], modes: Sequence[int]):
    words = sorted({Word(tuple(w)) for w in words}, key=lambda w: w.sort_key)
    max_len = max([len(w) for w in words] + [1 if modes else 0])
    n0 = max_len + 1
    n_eff = len(data) - n0
    if n_eff <= 0:
        raise InsufficientDataError(
            f"need more than {n0} samples for words up to length {max_len}, got {len(data)}"
        )
    return words, n0, n_eff


def _moment_parts(data: Dataset, p, modes: Sequence[int], n0: int, n_eff: int):
    """T^{y,y}_{s,s} and q_u sums shared by both estimators."""
    t_yy: Dict[int, np.ndarray] = {}
    for s in modes:
        z = _z_block(data.y, data.q, p, Word((s,)), n0)
        m = z.T @ z / n_eff
        t_yy[s] = (m + m.T) / 2.0
    u_block = data.u[n0:]
    q_u = u_block.T @ u_block / n_eff
    q_u = (q_u + q_u.T) / 2.0
    return t_yy, q_u


def empirical_covariances(
    data: Dataset,
    p: Sequence[float],
    words: Iterable[Word],
    modes: Optional[Sequence[int]] = None,
) -> CovarianceTable:
    """Direct averaging estimator of the covariance table.

    Fills Lambda^{y,u}_w and Lambda^{y,y}_w for every requested word (the
    empty word contributes only to Lambda^{y,u}), T^{y,y}_{s,s} for the
    requested modes, and the empirical q_u.  A word pattern that never occurs
    in the data yields a zero estimate plus a warning recorded under
    metadata["degenerate_words"].
    """
    p = np.asarray(p, dtype=float)
    if modes is None:
        modes = list(range(1, p.shape[0] + 1))
    words, n0, n_eff = _prepare(data, words, modes)
    y_block = data.y[n0:]
    lam_yu = WordIndexedMatrixTable((data.n_y, data.n_u))
    lam_yy = WordIndexedMatrixTable((data.n_y, data.n_y))
    degenerate: List[str] = []
    for w in words:
        z_u = _z_block(data.u, data.q, p, w, n0)
        lam_yu[w] = y_block.T @ z_u / n_eff
        if len(w) > 0:
            z_y = _z_block(data.y, data.q, p, w, n0)
            lam_yy[w] = y_block.T @ z_y / n_eff
            if not np.any(z_y):
                degenerate.append(str(w))
                warnings.warn(f"word '{w}' never occurs in the data; covariance set to 0")
    t_yy, q_u = _moment_parts(data, p, modes, n0, n_eff)
    meta = {"estimator": "direct", "N": len(data), "N_0": n0, "n_eff": n_eff,
            "degenerate_words": degenerate}
    return CovarianceTable(lambda_yu=lam_yu, lambda_yy=lam_yy, t_yy_sigma=t_yy,
                           q_u=q_u, p=p, metadata=meta)


def least_squares_covariances(
    data: Dataset,
    p: Sequence[float],
    words_full: Sequence[Word],
    words_y: Optional[Sequence[Word]] = None,
    modes: Optional[Sequence[int]] = None,
) -> CovarianceTable:
    """Covariances recovered through the normal equations of a regression.

    y(t) is regressed on the stacked z^u columns of words_full and,
    separately, on the z^y columns of words_y (a prefix of words_full;
    defaults to all its nonempty words).  With Theta the least-squares
    coefficients, (Phi^T Phi) Theta / n_eff reproduces the direct covariance
    sums Phi^T R / n_eff, which is how the table is filled.
    """
    p = np.asarray(p, dtype=float)
    if modes is None:
        modes = list(range(1, p.shape[0] + 1))
    words_full = [Word(tuple(w)) for w in words_full]
    if words_y is None:
        words_y = [w for w in words_full if len(w) > 0]
    else:
        words_y = [Word(tuple(w)) for w in words_y]
        probe = [w for w in words_full if w in set(words_y)]
        if probe != words_y:
            raise DimensionError("words_y must be an ordered sub-list of words_full")
    _, n0, n_eff = _prepare(data, words_full, modes)
    R = data.y[n0:]

    def regress(b: np.ndarray, word_list: Sequence[Word]):
        blocks = [_z_block(b, data.q, p, w, n0) for w in word_list]
        phi = np.hstack(blocks) if blocks else np.empty((n_eff, 0))
        if phi.shape[1] == 0:
            return {}, phi
        if n_eff <= phi.shape[1]:
            raise InsufficientDataError(
                f"{n_eff} samples cannot support {phi.shape[1]} regressor columns"
            )
        rank, _ = numerical_rank(phi)
        if rank < phi.shape[1]:
            raise IllConditionedRegressorError(
                f"regressor matrix has rank {rank} < {phi.shape[1]} columns; "
                "use longer data or fewer words"
            )
        theta, *_ = np.linalg.lstsq(phi, R, rcond=None)
        gram_theta = phi.T @ (phi @ theta) / n_eff
        n_b = b.shape[1]
        out = {}
        for j, w in enumerate(word_list):
            out[w] = gram_theta[j * n_b:(j + 1) * n_b, :].T
        return out, phi

    lam_u_entries, _ = regress(data.u, words_full)
    lam_y_entries, _ = regress(data.y, words_y)
    lam_yu = WordIndexedMatrixTable((data.n_y, data.n_u))
    for w, m in lam_u_entries.items():
        lam_yu[w] = m
    lam_yy = WordIndexedMatrixTable((data.n_y, data.n_y))
    for w, m in lam_y_entries.items():
        lam_yy[w] = m
    t_yy, q_u = _moment_parts(data, p, modes, n0, n_eff)
    meta = {"estimator": "ls", "N": len(data), "N_0": n0, "n_eff": n_eff,
            "degenerate_words": []}
    return CovarianceTable(lambda_yu=lam_yu, lambda_yy=lam_yy, t_yy_sigma=t_yy,
                           q_u=q_u, p=p, metadata=meta)


def exact_covariances(
    model: SwitchedModel,
    max_len: int,
    tol: float = 1e-12,
    max_iter: int = 10000,
) -> CovarianceTable:
    """Ground-truth covariance table of a known model, all words |w| <= max_len.

    Reads the Markov parameters of the model's associated deterministic
    realization: the first block column gives Lambda^{y,u}_w = block * Q_u,
    the second gives the noise-part output covariances.  The input-part
    covariances come from the stationary state second moment of the
    input-driven subsystem, and the per-mode second moments add up as
    T^{y,y}_{s,s} = T^{y_d,y_d}_{s,s} + (1/p_s)(C P_s C^T + F Q_v[s] F^T).
    """
    from .realize import associated_dlss, lambda_ydyd, state_second_moment

    model.validate()
    d_assoc = associated_dlss(model, tol=tol, max_iter=max_iter)
    D, n_u, n_y = model.n_modes, model.n_u, model.n_y
    words = list(enumerate_words(D, max_len))
    from .model import markov_parameter

    lam_yu = WordIndexedMatrixTable((n_y, n_u))
    lam_ys = {}
    for w in words:
        Mw = markov_parameter(d_assoc, w)
        lam_yu[w] = Mw[:, :n_u] @ model.Q_u
        if len(w) > 0:
            lam_ys[w] = Mw[:, n_u:]

    from .model import DeterministicModel

    sqrt_p = np.sqrt(model.p)
    m_tilde = DeterministicModel(
        A=tuple(sqrt_p[s] * model.A[s] for s in range(D)),
        B=tuple(sqrt_p[s] * model.B[s] for s in range(D)),
        C=model.C,
        Dmat=model.Dmat,
    )
    nonempty = [w for w in words if len(w) > 0]
    modes = list(range(1, D + 1))
    lam_dd, t_dd = lambda_ydyd(m_tilde, model.Q_u, model.p, nonempty, modes,
                               tol=tol, max_iter=max_iter)

    lam_yy = WordIndexedMatrixTable((n_y, n_y))
    for w in nonempty:
        lam_yy[w] = lam_ys[w] + lam_dd[w]

    P = state_second_moment(model, tol=tol, max_iter=max_iter)
    t_yy = {}
    for s in modes:
        t_ys = (model.C @ P[s - 1] @ model.C.T
                + model.F @ model.Q_v[s - 1] @ model.F.T) / model.p[s - 1]
        m = t_dd[s] + t_ys
        t_yy[s] = (m + m.T) / 2.0

    meta = {"estimator": "exact", "max_len": max_len}
    return CovarianceTable(lambda_yu=lam_yu, lambda_yy=lam_yy, t_yy_sigma=t_yy,
                           q_u=model.Q_u.copy(), p=model.p.copy(), metadata=meta).validate()

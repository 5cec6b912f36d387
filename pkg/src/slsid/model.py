"""Model types and structural tests: stability, Markov parameters, ranks,
state-space isomorphism.

Two families of models appear here.  A DeterministicModel (dLSS) is the
noise-free switched system carrying a Markov function M(w).  A SwitchedModel
(sLSS) is the stochastic model
    x(t+1) = A_{q(t)} x(t) + B_{q(t)} u(t) + K_{q(t)} v(t)
    y(t)   = C x(t) + D u(t) + F v(t)
with i.i.d. switching q, white input u with E[u u^T] = Q_u, and per-mode
noise second moments stored as Q_v[s] = p_s * E[v v^T | q = s].  An
InnovationModel is a SwitchedModel with F = I whose noise is the one-step
prediction error.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .algebra import Word, enumerate_words, matrix_product_along_word
from .errors import (
    DimensionError,
    InvalidModeError,
    ModelInvalidError,
    NotIsomorphicError,
)

__all__ = [
    "DeterministicModel",
    "SwitchedModel",
    "InnovationModel",
    "numerical_rank",
    "stability_margin",
    "markov_parameter",
    "reach_obs_ranks",
    "find_isomorphism",
    "transform_model",
    "model_from_dict",
]

RANK_TOL = 1e-8  # singular values above RANK_TOL * s_max count toward rank


def numerical_rank(mat: np.ndarray, tol_factor: float = RANK_TOL) -> Tuple[int, float]:
    """Rank by singular-value thresholding.

    Returns (rank, threshold) where threshold = tol_factor * largest singular
    value; a zero matrix has rank 0 and threshold 0.
    """
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    if mat.size == 0:
        return 0, 0.0
    s = np.linalg.svd(mat, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0, 0.0
    thr = tol_factor * float(s[0])
    return int(np.sum(s > thr)), thr


def _freeze(a) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.flags.writeable = False
    return out


def _as_matrix_family(mats, name: str) -> Tuple[np.ndarray, ...]:
    fam = tuple(_freeze(m) for m in mats)
    if not fam:
        raise ModelInvalidError(f"{name} family is empty")
    return fam


@dataclass(frozen=True)
class DeterministicModel:
    """Noise-free switched model ({A_s}, {B_s}, C, Dmat); carrier of M(w)."""

    A: Tuple[np.ndarray, ...]
    B: Tuple[np.ndarray, ...]
    C: np.ndarray
    Dmat: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "A", _as_matrix_family(self.A, "A"))
        object.__setattr__(self, "B", _as_matrix_family(self.B, "B"))
        object.__setattr__(self, "C", _freeze(np.atleast_2d(self.C)))
        object.__setattr__(self, "Dmat", _freeze(np.atleast_2d(self.Dmat)))
        n_x = self.A[0].shape[0]
        if len(self.A) != len(self.B):
            raise ModelInvalidError("A and B must list the same number of modes")
        for m in self.A:
            if m.shape != (n_x, n_x):
                raise ModelInvalidError(f"A matrices must be {n_x}x{n_x}, got {m.shape}")
        for m in self.B:
            if m.shape[0] != n_x:
                raise ModelInvalidError(f"B matrices must have {n_x} rows, got {m.shape}")
        if self.C.shape[1] != n_x:
            raise ModelInvalidError(f"C must have {n_x} columns, got {self.C.shape}")
        if self.Dmat.shape != (self.C.shape[0], self.B[0].shape[1]):
            raise ModelInvalidError(
                f"Dmat must be {self.C.shape[0]}x{self.B[0].shape[1]}, got {self.Dmat.shape}"
            )

    @property
    def n_modes(self) -> int:
        return len(self.A)

    @property
    def n_x(self) -> int:
        return self.A[0].shape[0]

    @property
    def n_u(self) -> int:
        return self.B[0].shape[1]

    @property
    def n_y(self) -> int:
        return self.C.shape[0]

    def to_dict(self) -> dict:
        return {
            "type": "deterministic",
            "A": [m.tolist() for m in self.A],
            "B": [m.tolist() for m in self.B],
            "C": self.C.tolist(),
            "D": self.Dmat.tolist(),
        }


def _check_spd(mat: np.ndarray, name: str) -> None:
    scale = max(1.0, float(np.max(np.abs(mat))))
    if np.max(np.abs(mat - mat.T)) > 1e-10 * scale:
        raise ModelInvalidError(f"{name} is not symmetric")
    eigmin = float(np.linalg.eigvalsh(mat).min())
    if eigmin <= 0.0:
        raise ModelInvalidError(f"{name} is not positive definite (min eig {eigmin:.3e})")


@dataclass(frozen=True)
class SwitchedModel:
    """Stochastic switched model with i.i.d. switching; see module docstring.

    Q_v[s] stores p_s * E[v(t) v(t)^T | q(t) = s], the quantity the
    realization recursions consume directly; divide by p_s for the
    per-mode conditional covariance.
    """

    A: Tuple[np.ndarray, ...]
    B: Tuple[np.ndarray, ...]
    K: Tuple[np.ndarray, ...]
    C: np.ndarray
    Dmat: np.ndarray
    F: np.ndarray
    p: np.ndarray
    Q_u: np.ndarray
    Q_v: Tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "A", _as_matrix_family(self.A, "A"))
        object.__setattr__(self, "B", _as_matrix_family(self.B, "B"))
        object.__setattr__(self, "K", _as_matrix_family(self.K, "K"))
        object.__setattr__(self, "C", _freeze(np.atleast_2d(self.C)))
        object.__setattr__(self, "Dmat", _freeze(np.atleast_2d(self.Dmat)))
        object.__setattr__(self, "F", _freeze(np.atleast_2d(self.F)))
        object.__setattr__(self, "p", _freeze(np.atleast_1d(self.p)))
        object.__setattr__(self, "Q_u", _freeze(np.atleast_2d(self.Q_u)))
        object.__setattr__(self, "Q_v", _as_matrix_family(self.Q_v, "Q_v"))

    @property
    def n_modes(self) -> int:
        return len(self.A)

    @property
    def n_x(self) -> int:
        return self.A[0].shape[0]

    @property
    def n_u(self) -> int:
        return self.B[0].shape[1]

    @property
    def n_y(self) -> int:
        return self.C.shape[0]

    @property
    def n_n(self) -> int:
        return self.K[0].shape[1]

    def validate(self) -> "SwitchedModel":
        """Raise ModelInvalidError on any violated invariant; return self."""
        D, n_x, n_u, n_y, n_n = self.n_modes, self.n_x, self.n_u, self.n_y, self.n_n
        families = {"A": (self.A, (n_x, n_x)), "B": (self.B, (n_x, n_u)),
                    "K": (self.K, (n_x, n_n)), "Q_v": (self.Q_v, (n_n, n_n))}
        for name, (fam, shape) in families.items():
            if len(fam) != D:
                raise ModelInvalidError(f"{name} must list {D} modes, got {len(fam)}")
            for m in fam:
                if m.shape != shape:
                    raise ModelInvalidError(f"{name} matrices must be {shape}, got {m.shape}")
        if self.C.shape != (n_y, n_x):
            raise ModelInvalidError(f"C must be {(n_y, n_x)}, got {self.C.shape}")
        if self.Dmat.shape != (n_y, n_u):
            raise ModelInvalidError(f"D must be {(n_y, n_u)}, got {self.Dmat.shape}")
        if self.F.shape != (n_y, n_n):
            raise ModelInvalidError(f"F must be {(n_y, n_n)}, got {self.F.shape}")
        if self.p.shape != (D,):
            raise ModelInvalidError(f"p must have {D} entries, got {self.p.shape}")
        if np.any(self.p <= 0.0):
            raise ModelInvalidError("mode probabilities must be positive")
        if abs(float(self.p.sum()) - 1.0) > 1e-12:
            raise ModelInvalidError(f"mode probabilities sum to {self.p.sum()!r}, not 1")
        _check_spd(self.Q_u, "Q_u")
        for s, q in enumerate(self.Q_v, start=1):
            _check_spd(q, f"Q_v[{s}]")
        margin = stability_margin(self.A, self.p)
        if margin >= 1.0:
            raise ModelInvalidError(
                f"not stationary: spectral radius of sum p_s (A_s kron A_s) = {margin:.6f} >= 1"
            )
        return self

    def to_dict(self) -> dict:
        return {
            "type": self._type_tag(),
            "A": [m.tolist() for m in self.A],
            "B": [m.tolist() for m in self.B],
            "K": [m.tolist() for m in self.K],
            "C": self.C.tolist(),
            "D": self.Dmat.tolist(),
            "F": self.F.tolist(),
            "p": self.p.tolist(),
            "Q_u": self.Q_u.tolist(),
            "Q_v": [m.tolist() for m in self.Q_v],
        }

    def _type_tag(self) -> str:
        return "switched"


class InnovationModel(SwitchedModel):
    """SwitchedModel whose noise is the one-step prediction error: F = I."""

    def validate(self) -> "InnovationModel":
        super().validate()
        if self.n_n != self.n_y:
            raise ModelInvalidError(
                f"innovation form needs n_n = n_y, got {self.n_n} != {self.n_y}"
            )
        if np.max(np.abs(self.F - np.eye(self.n_y))) != 0.0:
            raise ModelInvalidError("innovation form requires F = I exactly")
        return self

    def _type_tag(self) -> str:
        return "innovation"

    @classmethod
    def from_parts(cls, A, B, K, C, Dmat, p, Q_u, Q_v) -> "InnovationModel":
        C = np.atleast_2d(C)
        return cls(A=tuple(A), B=tuple(B), K=tuple(K), C=C, Dmat=Dmat,
                   F=np.eye(C.shape[0]), p=p, Q_u=Q_u, Q_v=tuple(Q_v))


def model_from_dict(d: dict):
    """Inverse of the models' to_dict()."""
    kind = d.get("type", "switched")
    if kind == "deterministic":
        return DeterministicModel(A=tuple(d["A"]), B=tuple(d["B"]), C=d["C"], Dmat=d["D"])
    cls = InnovationModel if kind == "innovation" else SwitchedModel
    return cls(A=tuple(d["A"]), B=tuple(d["B"]), K=tuple(d["K"]), C=d["C"],
               Dmat=d["D"], F=d["F"], p=d["p"], Q_u=d["Q_u"], Q_v=tuple(d["Q_v"]))


def stability_margin(A: Sequence[np.ndarray], p: Sequence[float]) -> float:
    """Spectral radius of sum_s p_s (A_s kron A_s).

    The switched model is wide-sense stationary iff this is < 1.
    """
    A = [np.asarray(m, dtype=float) for m in A]
    p = np.asarray(p, dtype=float)
    if len(A) != p.shape[0]:
        raise DimensionError(f"{len(A)} matrices but {p.shape[0]} probabilities")
    acc = sum(p[s] * np.kron(A[s], A[s]) for s in range(len(A)))
    return float(np.max(np.abs(np.linalg.eigvals(acc))))


def markov_parameter(m: DeterministicModel, w: Word) -> np.ndarray:
    """M(e) = Dmat; M(w) = C A_rest B_{s0} with s0 the first letter of w."""
    if len(w) == 0:
        return m.Dmat
    s0 = w.letters[0]
    if not 1 <= s0 <= m.n_modes:
        raise InvalidModeError(f"letter {s0} outside alphabet {{1..{m.n_modes}}}")
    rest = Word(w.letters[1:])
    return m.C @ matrix_product_along_word(m.A, rest) @ m.B[s0 - 1]


def _reach_matrix(m: DeterministicModel, depth: int) -> np.ndarray:
    cols = []
    for w in enumerate_words(m.n_modes, depth - 1):
        Aw = matrix_product_along_word(m.A, w)
        for s in range(m.n_modes):
            cols.append(Aw @ m.B[s])
    return np.hstack(cols)


def _obs_matrix(m: DeterministicModel, depth: int) -> np.ndarray:
    rows = []
    for w in enumerate_words(m.n_modes, depth - 1):
        rows.append(m.C @ matrix_product_along_word(m.A, w))
    return np.vstack(rows)


def reach_obs_ranks(
    m: DeterministicModel, depth: int | None = None, tol_factor: float = RANK_TOL
) -> Tuple[int, int]:
    """Numerical ranks of the reachability and observability span matrices.

    Columns A_w B_s and rows C A_w over all words with |w| < depth; depth
    defaults to n_x, which suffices for the minimality test (both ranks
    equal n_x iff the model is minimal).
    """
    if depth is None:
        depth = m.n_x
    if depth < m.n_x:
        raise DimensionError(f"depth {depth} below state dimension {m.n_x}")
    reach, _ = numerical_rank(_reach_matrix(m, depth), tol_factor)
    obs, _ = numerical_rank(_obs_matrix(m, depth), tol_factor)
    return reach, obs


def transform_model(m: SwitchedModel, T: np.ndarray) -> SwitchedModel:
    """Apply the state isomorphism x -> T x: (TAT^-1, TB, TK, CT^-1, D, F)."""
    T = np.asarray(T, dtype=float)
    if T.shape != (m.n_x, m.n_x):
        raise DimensionError(f"T must be {m.n_x}x{m.n_x}, got {T.shape}")
    Tinv = np.linalg.inv(T)
    cls = type(m)
    return cls(
        A=tuple(T @ a @ Tinv for a in m.A),
        B=tuple(T @ b for b in m.B),
        K=tuple(T @ k for k in m.K),
        C=m.C @ Tinv,
        Dmat=m.Dmat,
        F=m.F,
        p=m.p,
        Q_u=m.Q_u,
        Q_v=m.Q_v,
    )


def find_isomorphism(m1: SwitchedModel, m2: SwitchedModel, tol: float = 1e-6) -> np.ndarray:
    """Recover the state isomorphism T with m2 = transform_model(m1, T).

    Both models must be minimal and in innovation form (caller's
    responsibility).  T is computed by matching the reachability spans of the
    two associated deterministic models column for column, then verified on
    all five defining relations (A, B, K, C, D) in max-norm.  Raises
    NotIsomorphicError carrying per-relation residuals when verification
    fails.
    """
    from .realize import associated_dlss  # local import: realize depends on model

    for name in ("n_modes", "n_x", "n_u", "n_y", "n_n"):
        if getattr(m1, name) != getattr(m2, name):
            raise DimensionError(
                f"{name} mismatch: {getattr(m1, name)} vs {getattr(m2, name)}"
            )
    if np.max(np.abs(m1.p - m2.p)) > 1e-9:
        raise NotIsomorphicError(
            "mode probability vectors differ; no isomorphism relates the models",
            residuals={"p": float(np.max(np.abs(m1.p - m2.p)))},
        )
    d1, d2 = associated_dlss(m1), associated_dlss(m2)
    R1, R2 = _reach_matrix(d1, m1.n_x), _reach_matrix(d2, m2.n_x)
    rank1, _ = numerical_rank(R1)
    if rank1 < m1.n_x:
        raise NotIsomorphicError(
            f"first model's reachability span has rank {rank1} < {m1.n_x}; "
            "isomorphism matching needs minimal models"
        )
    T = R2 @ np.linalg.pinv(R1)
    rank_T, _ = numerical_rank(T)
    residuals: Dict[str, float] = {}
    if rank_T < m1.n_x:
        raise NotIsomorphicError("candidate transformation is singular", residuals)
    Tinv = np.linalg.inv(T)
    for s in range(m1.n_modes):
        residuals[f"A_{s + 1}"] = float(np.max(np.abs(T @ m1.A[s] @ Tinv - m2.A[s])))
        residuals[f"B_{s + 1}"] = float(np.max(np.abs(T @ m1.B[s] - m2.B[s])))
        residuals[f"K_{s + 1}"] = float(np.max(np.abs(T @ m1.K[s] - m2.K[s])))
    residuals["C"] = float(np.max(np.abs(m1.C @ Tinv - m2.C)))
    residuals["D"] = float(np.max(np.abs(m1.Dmat - m2.Dmat)))
    worst = max(residuals.values())
    if worst > tol:
        raise NotIsomorphicError(
            f"best candidate leaves residual {worst:.3e} > tol {tol:.1e}", residuals
        )
    return T

"""Words over the mode alphabet, products along words, selections, Hankels.

Conventions used throughout the package:

* Modes are 1-based: the alphabet is {1..D}.
* A word w = s_1 s_2 ... s_k lists modes in time order; the matrix product
  along w multiplies on the LEFT as the word is read, i.e.
  ``A_w = A_{s_k} @ ... @ A_{s_1}`` and ``A_e = I`` for the empty word.
  Consequently ``product(v + w) = product(w) @ product(v)``.
* Markov parameters parse a nonempty word as w = s0 + rest with s0 the FIRST
  letter: ``M(w) = C @ A_rest @ B_{s0}``.  Hankel indexing below composes
  three words under this convention.
* Words serialize as digit strings when every letter is a single digit
  ("121" means s_1=1, s_2=2, s_3=1) and as comma-separated integers
  otherwise ("1,12,3").  The empty word serializes as "e".
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product as _cartesian
from typing import Dict, Iterable, Iterator, List, Sequence, Tuple

import numpy as np

from .errors import (
    DimensionError,
    InvalidModeError,
    InvalidProbabilityError,
    MissingMarkovParameterError,
)

__all__ = [
    "Word",
    "EMPTY_WORD",
    "Selection",
    "WordIndexedMatrixTable",
    "matrix_product_along_word",
    "word_probability",
    "enumerate_words",
    "required_words",
    "build_hankel",
]


@dataclass(frozen=True)
class Word:
    """A finite sequence of modes, each in {1..D}; may be empty."""

    letters: Tuple[int, ...] = ()

    def __post_init__(self):
        letters = tuple(int(s) for s in self.letters)
        if any(s < 1 for s in letters):
            raise InvalidModeError(f"modes are 1-based, got {letters}")
        object.__setattr__(self, "letters", letters)

    @classmethod
    def parse(cls, text: str) -> "Word":
        """Inverse of str(): digit string, comma-separated ints, or 'e'/''. """
        text = text.strip()
        if text in ("", "e", "eps"):
            return cls(())
        if "," in text:
            return cls(tuple(int(part) for part in text.split(",")))
        if not text.isdigit():
            raise InvalidModeError(f"cannot parse word {text!r}")
        return cls(tuple(int(ch) for ch in text))

    def __str__(self) -> str:
        if not self.letters:
            return "e"
        if max(self.letters) <= 9:
            return "".join(str(s) for s in self.letters)
        return ",".join(str(s) for s in self.letters)

    def __len__(self) -> int:
        return len(self.letters)

    def __add__(self, other: "Word") -> "Word":
        """Concatenation: (self + other) plays self first, then other."""
        return Word(self.letters + other.letters)

    def __iter__(self) -> Iterator[int]:
        return iter(self.letters)

    @property
    def sort_key(self) -> Tuple[int, Tuple[int, ...]]:
        """Length-then-lexicographic order, the canonical enumeration order."""
        return (len(self.letters), self.letters)


EMPTY_WORD = Word(())


def _check_letters(w: Word, n_modes: int) -> None:
    for s in w:
        if not 1 <= s <= n_modes:
            raise InvalidModeError(f"letter {s} outside alphabet {{1..{n_modes}}}")


def matrix_product_along_word(matrices: Sequence[np.ndarray], w: Word) -> np.ndarray:
    """Product of square matrices along a word.

    Parameters
    ----------
    matrices : sequence of D arrays, each n x n; entry i-1 is the matrix of
        mode i.
    w : Word over {1..D}.

    Returns
    -------
    A_{s_k} @ ... @ A_{s_1} for w = s_1...s_k; the identity for the empty word.
    """
    mats = [np.asarray(m, dtype=float) for m in matrices]
    n = mats[0].shape[0]
    for m in mats:
        if m.shape != (n, n):
            raise DimensionError(f"expected square {n}x{n} family, got {m.shape}")
    _check_letters(w, len(mats))
    out = np.eye(n)
    for s in w:
        out = mats[s - 1] @ out
    return out


def word_probability(p: Sequence[float], w: Word) -> float:
    """Product of mode probabilities along a word; 1.0 for the empty word."""
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0.0):
        raise InvalidProbabilityError(f"probabilities must be positive, got {p}")
    if abs(float(p.sum()) - 1.0) > 1e-8:
        raise InvalidProbabilityError(f"probabilities sum to {p.sum()!r}, not 1")
    _check_letters(w, len(p))
    out = 1.0
    for s in w:
        out *= float(p[s - 1])
    return out


def enumerate_words(n_modes: int, max_len: int, min_len: int = 0) -> Iterator[Word]:
    """All words with min_len <= |w| <= max_len in length-then-lex order."""
    if n_modes < 1:
        raise InvalidModeError("need at least one mode")
    for k in range(min_len, max_len + 1):
        for letters in _cartesian(range(1, n_modes + 1), repeat=k):
            yield Word(letters)


@dataclass(frozen=True)
class Selection:
    """Row/column index sets for the reduced Hankel matrices.

    alpha holds n pairs (u_i, k_i): word u_i and a row index k_i in {1..n_y}.
    beta holds n triples (sigma_j, v_j, l_j): a mode, a word, and a column
    index l_j in {1..n_cols}.  Indices are 1-based to match the conventions
    of the rest of the package.  Empty words are allowed in either list
    (A_e = I extends every index formula).
    """

    alpha: Tuple[Tuple[Word, int], ...]
    beta: Tuple[Tuple[int, Word, int], ...]
    n_modes: int
    n_y: int
    n_cols: int

    def __post_init__(self):
        alpha = tuple((Word(tuple(u)), int(k)) for (u, k) in self.alpha)
        beta = tuple((int(s), Word(tuple(v)), int(l)) for (s, v, l) in self.beta)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        n = len(alpha)
        if len(beta) != n or n == 0:
            raise DimensionError(
                f"alpha and beta must have equal positive length, got {n} and {len(beta)}"
            )
        for u, k in alpha:
            _check_letters(u, self.n_modes)
            if len(u) > n:
                raise DimensionError(f"|{u}| = {len(u)} exceeds n = {n}")
            if not 1 <= k <= self.n_y:
                raise DimensionError(f"row index {k} outside 1..{self.n_y}")
        for s, v, l in beta:
            if not 1 <= s <= self.n_modes:
                raise InvalidModeError(f"mode {s} outside 1..{self.n_modes}")
            _check_letters(v, self.n_modes)
            if len(v) > n:
                raise DimensionError(f"|{v}| = {len(v)} exceeds n = {n}")
            if not 1 <= l <= self.n_cols:
                raise DimensionError(f"column index {l} outside 1..{self.n_cols}")

    @property
    def n(self) -> int:
        return len(self.alpha)

    def to_jsonable(self) -> dict:
        return {
            "alpha": [[str(u), k] for u, k in self.alpha],
            "beta": [[s, str(v), l] for s, v, l in self.beta],
        }

    @classmethod
    def from_jsonable(cls, obj: dict, n_modes: int, n_y: int, n_cols: int) -> "Selection":
        alpha = tuple((Word.parse(u), int(k)) for u, k in obj["alpha"])
        beta = tuple((int(s), Word.parse(v), int(l)) for s, v, l in obj["beta"])
        return cls(alpha, beta, n_modes, n_y, n_cols)


class WordIndexedMatrixTable:
    """Map from Word to matrices of one fixed shape.

    Shape mismatches are rejected at insertion; looking up a missing word
    raises MissingMarkovParameterError rather than returning a default.
    """

    def __init__(self, shape: Tuple[int, int], entries: Dict[Word, np.ndarray] | None = None):
        rows, cols = int(shape[0]), int(shape[1])
        if rows < 1 or cols < 1:
            raise DimensionError(f"table shape must be positive, got {shape}")
        self.shape = (rows, cols)
        self._data: Dict[Word, np.ndarray] = {}
        if entries:
            for w, m in entries.items():
                self[w] = m

    def __setitem__(self, w: Word, value: np.ndarray) -> None:
        value = np.asarray(value, dtype=float)
        if value.shape != self.shape:
            raise DimensionError(
                f"matrix for word '{w}' has shape {value.shape}, table holds {self.shape}"
            )
        self._data[Word(tuple(w))] = value

    def __getitem__(self, w: Word) -> np.ndarray:
        try:
            return self._data[Word(tuple(w))]
        except KeyError:
            raise MissingMarkovParameterError(str(w)) from None

    def __contains__(self, w: Word) -> bool:
        return Word(tuple(w)) in self._data

    def __len__(self) -> int:
        return len(self._data)

    def words(self) -> List[Word]:
        """Stored words in length-then-lex order."""
        return sorted(self._data, key=lambda w: w.sort_key)

    def items(self) -> Iterable[Tuple[Word, np.ndarray]]:
        for w in self.words():
            yield w, self._data[w]


def required_words(sel: Selection) -> frozenset:
    """Every word whose Markov value appears in one of the four Hankels.

    The templates are u_i, sigma_j v_j, sigma_j v_j u_i,
    sigma_j v_j sigma u_i, and sigma u_i with sigma ranging over the whole
    alphabet.  Words compose in time order: the sigma_j letter plays first,
    then v_j, then (for the shifted matrices) sigma, then u_i.  The result
    never contains the empty word: each template starts with a letter, and
    u_i alone is included only when u_i is nonempty.
    """
    out = set()
    sigmas = [Word((s,)) for s in range(1, sel.n_modes + 1)]
    for u, _ in sel.alpha:
        if len(u) > 0:
            out.add(u)
        for sig in sigmas:
            out.add(sig + u)
    for s, v, _ in sel.beta:
        head = Word((s,)) + v
        out.add(head)
        for u, _ in sel.alpha:
            out.add(head + u)
            for sig in sigmas:
                out.add(head + sig + u)
    return frozenset(out)


def build_hankel(
    sel: Selection, M: WordIndexedMatrixTable
) -> Tuple[np.ndarray, List[np.ndarray], List[np.ndarray], np.ndarray]:
    """Assemble the four Hankel matrices of a Markov-function table.

    Returns (H, H_sigma, H_alpha_sigma, H_beta) with

      H[i, j]             = M(sigma_j v_j u_i)[k_i, l_j]          (n x n)
      H_sigma[s][i, j]    = M(sigma_j v_j (s+1) u_i)[k_i, l_j]    (n x n)
      H_alpha_sigma[s][i] = M((s+1) u_i)[k_i, :]                  (n x n_cols)
      H_beta[:, j]        = M(sigma_j v_j)[:, l_j]                (n_y x n)

    where s is the 0-based list position of mode s+1.  Missing words raise
    MissingMarkovParameterError naming the word.
    """
    if M.shape != (sel.n_y, sel.n_cols):
        raise DimensionError(
            f"table shape {M.shape} does not match selection ({sel.n_y}, {sel.n_cols})"
        )
    n = sel.n
    H = np.empty((n, n))
    H_sigma = [np.empty((n, n)) for _ in range(sel.n_modes)]
    H_alpha_sigma = [np.empty((n, sel.n_cols)) for _ in range(sel.n_modes)]
    H_beta = np.empty((sel.n_y, n))
    for j, (s, v, l) in enumerate(sel.beta):
        head = Word((s,)) + v
        H_beta[:, j] = M[head][:, l - 1]
        for i, (u, k) in enumerate(sel.alpha):
            H[i, j] = M[head + u][k - 1, l - 1]
            for sig in range(1, sel.n_modes + 1):
                H_sigma[sig - 1][i, j] = M[head + Word((sig,)) + u][k - 1, l - 1]
    for i, (u, k) in enumerate(sel.alpha):
        for sig in range(1, sel.n_modes + 1):
            H_alpha_sigma[sig - 1][i, :] = M[Word((sig,)) + u][k - 1, :]
    return H, H_sigma, H_alpha_sigma, H_beta

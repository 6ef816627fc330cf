"""Single-qubit Pauli matrices, Pauli words and measurement eigenbases."""

from __future__ import annotations

import itertools
from functools import reduce

import numpy as np

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)

PAULI = {"I": I2, "X": X, "Y": Y, "Z": Z}

# Columns are the (+1, -1) eigenvectors of each measurement axis, in (up, down) ordering.
EIGENBASIS = {
    "X": np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2),
    "Y": np.array([[1, 1], [1j, -1j]], dtype=complex) / np.sqrt(2),
    "Z": np.eye(2, dtype=complex),
}


def validate_word(word: str, length: int | None = None, alphabet: str = "IXYZ") -> str:
    """Return ``word`` upper-cased after checking its alphabet and length."""
    if not isinstance(word, str):
        raise ValueError(f"Pauli word must be a string, got {type(word).__name__}")
    w = word.upper()
    bad = set(w) - set(alphabet)
    if bad:
        raise ValueError(f"malformed Pauli word {word!r}: letters {sorted(bad)} not in {alphabet}")
    if length is not None and len(w) != length:
        raise ValueError(f"Pauli word {word!r} has length {len(w)}, expected {length}")
    return w


def word_matrix(word: str) -> np.ndarray:
    """Dense ``2^k x 2^k`` matrix of a Pauli word; the first letter is the most significant qubit."""
    w = validate_word(word)
    return reduce(np.kron, (PAULI[c] for c in w), np.eye(1, dtype=complex))


def all_words(k: int, alphabet: str = "IXYZ") -> list[str]:
    return ["".join(p) for p in itertools.product(alphabet, repeat=k)]

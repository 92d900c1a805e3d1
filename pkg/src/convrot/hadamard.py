"""Hadamard matrix constructions, discrepancy metrics and the FWHT.

Matrices are kept as unnormalized int8 sign arrays so every identity
(orthogonality, column sums) can be checked in exact integer arithmetic.
Normalization by ``1/sqrt(n)`` happens where the matrix is used as a rotation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from convrot.errors import InvalidOrderError, InvalidValueError

MAX_ORDER = 4096

# Seed matrix for the regular construction: every row and column sums to +2.
H4_REGULAR = np.array(
    [
        [1, 1, 1, -1],
        [1, 1, -1, 1],
        [1, -1, 1, 1],
        [-1, 1, 1, 1],
    ],
    dtype=np.int8,
)

Kind = Literal["sylvester", "regular", "custom"]


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def is_power_of_four(n: int) -> bool:
    return is_power_of_two(n) and (n.bit_length() - 1) % 2 == 0


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class HadamardMatrix:
    """Unnormalized {-1, +1} matrix with ``H @ H.T == n * I``."""

    order: int
    kind: Kind
    entries: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if self.entries.shape != (self.order, self.order):
            raise InvalidOrderError(
                f"entries shape {self.entries.shape} does not match order {self.order}"
            )
        if self.entries.dtype != np.int8 or self.entries.flags.writeable:
            object.__setattr__(self, "entries", _readonly(self.entries.astype(np.int8)))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, HadamardMatrix):
            return NotImplemented
        return (
            self.order == other.order
            and self.kind == other.kind
            and np.array_equal(self.entries, other.entries)
        )

    __hash__ = None  # type: ignore[assignment]

    @classmethod
    def from_entries(cls, entries: np.ndarray, kind: Kind = "custom") -> HadamardMatrix:
        """Wrap an arbitrary sign matrix after verifying it is Hadamard."""
        a = np.asarray(entries)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
            raise InvalidOrderError(f"expected a non-empty square matrix, got shape {a.shape}")
        if not np.all(np.abs(a) == 1):
            raise InvalidValueError("Hadamard entries must all be +1 or -1")
        h = cls(a.shape[0], kind, np.array(a, dtype=np.int8))
        if not is_hadamard(h.entries):
            raise InvalidValueError("rows are not mutually orthogonal (H @ H.T != n I)")
        return h

    def normalized(self) -> np.ndarray:
        """Orthonormal float64 copy, ``H / sqrt(n)``."""
        return self.entries.astype(np.float64) / np.sqrt(self.order)

    def row_sums(self) -> np.ndarray:
        return self.entries.sum(axis=1, dtype=np.int64)

    def column_sums(self) -> np.ndarray:
        return self.entries.sum(axis=0, dtype=np.int64)

    def to_text(self) -> str:
        """Sign grid, one row per line, ``+`` for +1 and ``-`` for -1."""
        chars = np.where(self.entries > 0, "+", "-")
        return "".join("".join(row) + "\n" for row in chars)

    @classmethod
    def from_text(cls, text: str, kind: Kind = "custom") -> HadamardMatrix:
        rows = [line.strip() for line in text.splitlines() if line.strip()]
        if any(set(r) - {"+", "-"} for r in rows):
            raise InvalidValueError("sign grid may only contain '+' and '-'")
        entries = np.array([[1 if c == "+" else -1 for c in r] for r in rows], dtype=np.int8)
        return cls.from_entries(entries, kind=kind)


@dataclass(frozen=True, eq=False)
class OrthogonalMatrix:
    order: int
    entries: np.ndarray = field(repr=False)
    seed: int = 0


@dataclass(frozen=True)
class DiscrepancySummary:
    column_sums: tuple[int, ...]
    discrepancy: int
    sum_of_squares: int


def gram(entries: np.ndarray) -> np.ndarray:
    """``H @ H.T`` as int64.

    The product runs through float64 BLAS: entries are +-1 and every partial
    sum is an integer of magnitude <= n <= 4096, so the result is exact.
    """
    f = np.asarray(entries, dtype=np.float64)
    return (f @ f.T).astype(np.int64)


def is_hadamard(entries: np.ndarray) -> bool:
    a = np.asarray(entries)
    n = a.shape[0]
    if a.ndim != 2 or a.shape != (n, n) or not np.all(np.abs(a) == 1):
        return False
    return bool(np.array_equal(gram(a), n * np.eye(n, dtype=np.int64)))


def _check_order(n: int) -> None:
    if not isinstance(n, (int, np.integer)) or isinstance(n, bool):
        raise InvalidOrderError(f"order must be an integer, got {n!r}")
    if n < 1 or n > MAX_ORDER:
        raise InvalidOrderError(f"order must lie in [1, {MAX_ORDER}], got {n}")


def sylvester(n: int) -> HadamardMatrix:
    """Sylvester recursion ``H_2n = [[H, H], [H, -H]]`` starting from ``[1]``."""
    _check_order(n)
    if not is_power_of_two(n):
        raise InvalidOrderError(f"sylvester order must be a power of two, got {n}")
    h = np.ones((1, 1), dtype=np.int8)
    while h.shape[0] < n:
        h = np.block([[h, h], [h, -h]])
    return HadamardMatrix(n, "sylvester", _readonly(h))


def regular(n: int) -> HadamardMatrix:
    """Regular Hadamard matrix of order ``4**k`` built as Kronecker powers of H4.

    All row and column sums equal ``+sqrt(n)``.
    """
    _check_order(n)
    if n < 4 or not is_power_of_four(n):
        raise InvalidOrderError(f"regular order must be 4**k with k >= 1, got {n}")
    h = H4_REGULAR
    while h.shape[0] < n:
        h = np.kron(h, H4_REGULAR)
    return HadamardMatrix(n, "regular", _readonly(np.array(h, dtype=np.int8)))


def kronecker(a: HadamardMatrix, b: HadamardMatrix) -> HadamardMatrix:
    """``a ⊗ b``; entry ``[i*nb + p, j*nb + q] = a[i, j] * b[p, q]``."""
    n = a.order * b.order
    _check_order(n)
    kind: Kind = a.kind if a.kind == b.kind and a.kind != "custom" else "custom"
    return HadamardMatrix(n, kind, _readonly(np.kron(a.entries, b.entries).astype(np.int8)))


def signed_variant(h: HadamardMatrix, seed: int) -> HadamardMatrix:
    """Random row/column sign flips and permutations of ``h``; still Hadamard."""
    rng = np.random.Generator(np.random.PCG64(seed))
    n = h.order
    rs = rng.choice(np.array([-1, 1], dtype=np.int8), size=n)
    cs = rng.choice(np.array([-1, 1], dtype=np.int8), size=n)
    e = h.entries[rng.permutation(n)][:, rng.permutation(n)]
    e = (e * rs[:, None] * cs[None, :]).astype(np.int8)
    return HadamardMatrix(n, "custom", _readonly(e))


def discrepancy_summary(h: HadamardMatrix) -> DiscrepancySummary:
    """Column sums, their max magnitude, and their sum of squares.

    For a valid Hadamard matrix the sum of squares is ``n**2`` and the
    discrepancy lies in ``[sqrt(n), n]``.
    """
    sums = h.column_sums()
    return DiscrepancySummary(
        column_sums=tuple(int(s) for s in sums),
        discrepancy=int(np.abs(sums).max()),
        sum_of_squares=int((sums * sums).sum()),
    )


def fwht(x: np.ndarray) -> np.ndarray:
    """Unnormalized fast Walsh-Hadamard transform along the last axis.

    Equals ``x @ sylvester(n).entries``. Integer inputs stay in int64 and
    the result is exact; float inputs are transformed in float64.
    """
    a = np.asarray(x)
    n = a.shape[-1] if a.ndim else 0
    if not is_power_of_two(n):
        raise InvalidOrderError(f"fwht length must be a power of two, got {n}")
    if np.issubdtype(a.dtype, np.integer) or a.dtype == np.bool_:
        out = a.astype(np.int64)
    else:
        out = a.astype(np.float64)
    lead = out.shape[:-1]
    h = 1
    while h < n:
        v = out.reshape(*lead, n // (2 * h), 2, h)
        lo, hi = v[..., 0, :], v[..., 1, :]
        out = np.stack((lo + hi, lo - hi), axis=-2).reshape(*lead, n)
        h *= 2
    return out


def random_orthogonal(n: int, seed: int) -> OrthogonalMatrix:
    """Haar-style random orthogonal matrix, deterministic in ``(n, seed)``.

    Gaussian fill from PCG64(seed), QR, then columns rescaled so the
    triangular factor has a positive diagonal.
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise InvalidOrderError(f"order must be a positive integer, got {n!r}")
    if not 0 <= seed < 2**64:
        raise InvalidValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    rng = np.random.Generator(np.random.PCG64(seed))
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    return OrthogonalMatrix(n, _readonly(q * signs[None, :]), seed)

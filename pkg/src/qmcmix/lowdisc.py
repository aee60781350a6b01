"""Digital binary sequences in the unit cube.

Points are produced by multiplying per-dimension binary matrices with the
base-2 digit vector of the point index, yielding low-discrepancy sequences
(van der Corput in one dimension, Sobol-style in several).  Matrices are
stored column-wise as unsigned integers, one bit per row with the most
significant bit corresponding to row 1.  All matrices here are upper
triangular with ones on the diagonal, which guarantees that every prefix of
``2**m`` points equidistributes dyadic boxes (see :func:`is_net`).

The default direction numbers cover dimensions 1-16 and follow the common
``d s a m_1 ... m_s`` text format: dimension index, primitive-polynomial
degree, encoded inner polynomial coefficients, and the initial odd direction
integers.  Dimension 1 is the implicit identity matrix.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from itertools import combinations

import numpy as np

__all__ = [
    "GeneratingMatrix",
    "DigitalSequence",
    "ParseError",
    "point_at",
    "block",
    "is_net",
    "load_direction_numbers",
    "default_sequence",
    "t_parameter_bound",
]

DEFAULT_PRECISION = 52  # bits; points remain exactly representable as doubles


class ParseError(ValueError):
    """Raised for malformed direction-number tables."""


@dataclass(frozen=True)
class GeneratingMatrix:
    """Square binary matrix stored as packed columns.

    ``columns[j]`` holds column ``j+1``; bit ``precision - i`` of the packed
    integer is the entry in row ``i``.  The matrix must be upper triangular
    with ones on the diagonal.
    """

    columns: tuple[int, ...]
    precision: int = DEFAULT_PRECISION

    def __post_init__(self):
        w = self.precision
        if len(self.columns) != w:
            raise ValueError(
                f"need {w} columns for precision {w}, got {len(self.columns)}"
            )
        for k, col in enumerate(self.columns, start=1):
            if not 0 <= col < (1 << w):
                raise ValueError(f"column {k} does not fit in {w} bits")
            if not (col >> (w - k)) & 1:
                raise ValueError(f"column {k} has a zero diagonal entry")
            if col & ((1 << (w - k)) - 1):
                raise ValueError(f"column {k} has entries below the diagonal")

    @classmethod
    def identity(cls, precision: int = DEFAULT_PRECISION) -> "GeneratingMatrix":
        return cls(tuple(1 << (precision - k) for k in range(1, precision + 1)), precision)

    @classmethod
    def from_direction_integers(
        cls, m: list[int], precision: int = DEFAULT_PRECISION
    ) -> "GeneratingMatrix":
        """Build columns from odd direction integers ``m_k < 2**k``."""
        if len(m) != precision:
            raise ValueError("need one direction integer per column")
        return cls(tuple(mk << (precision - k) for k, mk in enumerate(m, start=1)), precision)


@dataclass(frozen=True)
class DigitalSequence:
    """A digital sequence: one generating matrix per coordinate."""

    matrices: tuple[GeneratingMatrix, ...]

    def __post_init__(self):
        if not self.matrices:
            raise ValueError("sequence needs at least one dimension")
        w = self.matrices[0].precision
        if any(mat.precision != w for mat in self.matrices):
            raise ValueError("all matrices must share one precision")

    @property
    def dim(self) -> int:
        return len(self.matrices)

    @property
    def precision(self) -> int:
        return self.matrices[0].precision


def point_at(seq: DigitalSequence, n: int) -> np.ndarray:
    """Return the ``n``-th point of the sequence as a float vector in [0,1)^s.

    Coordinate ``j`` is the binary fraction obtained from the matrix-vector
    product of matrix ``j`` with the base-2 digits of ``n`` (arithmetic
    modulo 2).  Deterministic and stateless.
    """
    w = seq.precision
    if n < 0:
        raise ValueError("index must be non-negative")
    if n >= (1 << w):
        raise OverflowError(f"index {n} needs more than {w} digits")
    scale = 2.0 ** -w
    coords = np.empty(seq.dim)
    for j, mat in enumerate(seq.matrices):
        y = 0
        nn = n
        k = 0
        while nn:
            if nn & 1:
                y ^= mat.columns[k]
            nn >>= 1
            k += 1
        coords[j] = y * scale
    return coords


def block(seq: DigitalSequence, start: int, count: int) -> np.ndarray:
    """Points ``start .. start+count-1`` as a ``(count, dim)`` array.

    Vectorized over the index range; bit-identical to calling
    :func:`point_at` repeatedly.
    """
    w = seq.precision
    if start < 0 or count <= 0:
        raise ValueError("need start >= 0 and count >= 1")
    if start + count > (1 << w):
        raise OverflowError(f"indices past 2**{w} are not representable")
    n = np.arange(start, start + count, dtype=np.uint64)
    nbits = int(start + count - 1).bit_length()
    out = np.empty((count, seq.dim))
    scale = 2.0 ** -w
    for j, mat in enumerate(seq.matrices):
        cols = np.asarray(mat.columns, dtype=np.uint64)
        y = np.zeros(count, dtype=np.uint64)
        for b in range(nbits):
            mask = (n >> np.uint64(b)) & np.uint64(1)
            y ^= cols[b] * mask
        out[:, j] = y.astype(np.float64) * scale
    return out


def _compositions(total: int, parts: int):
    """All tuples of ``parts`` non-negative integers summing to ``total``."""
    for cuts in combinations(range(total + parts - 1), parts - 1):
        prev = -1
        comp = []
        for c in cuts:
            comp.append(c - prev - 1)
            prev = c
        comp.append(total + parts - 2 - prev)
        yield tuple(comp)


def is_net(points, m: int, t: int) -> bool:
    """Check the dyadic equidistribution property of ``2**m`` points.

    True iff for every split ``(d_1, ..., d_s)`` with ``sum d_j = m - t``
    each box ``prod [a_j/2^d_j, (a_j+1)/2^d_j)`` contains exactly ``2**t``
    of the points.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] != (1 << m):
        raise ValueError(f"expected {1 << m} points, got {pts.shape[0]}")
    if not 0 <= t <= m:
        raise ValueError("need 0 <= t <= m")
    s = pts.shape[1]
    target = 1 << t
    for shape in _compositions(m - t, s):
        idx = np.zeros(pts.shape[0], dtype=np.int64)
        stride = 1
        for j in range(s):
            d = shape[j]
            cells = np.floor(pts[:, j] * (1 << d)).astype(np.int64)
            idx += cells * stride
            stride *= 1 << d
        counts = np.bincount(idx, minlength=stride)
        if not np.all(counts == target):
            return False
    return True


# Direction numbers for dimensions 2-16 in the `d s a m_1 ... m_s` format
# (dimension 1 is the implicit identity).  Values follow the widely used
# primitive-polynomial tables for Sobol sequences.
_DEFAULT_TABLE = """\
# d s a m_1 ... m_s
2 1 0 1
3 2 1 1 3
4 3 1 1 3 1
5 3 2 1 1 1
6 4 1 1 1 3 3
7 4 4 1 3 5 13
8 5 2 1 1 5 5 17
9 5 4 1 1 5 5 5
10 5 7 1 1 7 11 19
11 5 11 1 1 5 1 1
12 5 13 1 1 1 3 11
13 5 14 1 3 5 5 31
14 6 1 1 3 3 9 7 49
15 6 13 1 1 1 15 21 21
16 6 16 1 3 1 13 27 49
"""

_POLY_DEGREES = {1: 1}  # filled while parsing; dimension 1 acts like degree 1


def _expand_direction_integers(degree: int, a: int, m_init: list[int], w: int) -> list[int]:
    """Extend the initial direction integers to ``w`` values.

    For ``k > degree`` the recurrence is
    ``m_k = m_{k-degree} ^ (m_{k-degree} << degree)
    ^ XOR_{i=1..degree-1} bit_{degree-1-i}(a) * (m_{k-i} << i)``.
    """
    m = [0] + list(m_init)  # 1-based
    for k in range(degree + 1, w + 1):
        val = m[k - degree] ^ (m[k - degree] << degree)
        for i in range(1, degree):
            if (a >> (degree - 1 - i)) & 1:
                val ^= m[k - i] << i
        m.append(val)
    return m[1 : w + 1]


def load_direction_numbers(source, precision: int = DEFAULT_PRECISION) -> DigitalSequence:
    """Build a digital sequence from a direction-number table.

    ``source`` may be text, bytes, or a file-like object with lines
    ``d s a m_1 ... m_s``; ``#`` starts a comment.  Dimension 1 (identity) is
    implicit, so a table with no data lines yields a one-dimensional
    sequence.  Malformed input raises :class:`ParseError` naming the line.
    """
    if isinstance(source, bytes):
        text = source.decode("ascii")
    elif isinstance(source, str):
        text = source
    else:
        text = source.read()
        if isinstance(text, bytes):
            text = text.decode("ascii")

    matrices = [GeneratingMatrix.identity(precision)]
    degrees = [1]
    expected_dim = 2
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            values = [int(tok) for tok in tokens]
        except ValueError:
            raise ParseError(f"line {lineno}: non-integer token in {line!r}") from None
        if len(values) < 4:
            raise ParseError(f"line {lineno}: expected `d s a m_1 ... m_s`")
        d, s, a = values[0], values[1], values[2]
        m_init = values[3:]
        if d != expected_dim:
            raise ParseError(f"line {lineno}: dimension {d}, expected {expected_dim}")
        if s < 1:
            raise ParseError(f"line {lineno}: polynomial degree must be positive")
        if len(m_init) != s:
            raise ParseError(
                f"line {lineno}: degree {s} needs {s} initial integers, got {len(m_init)}"
            )
        if not 0 <= a < (1 << max(s - 1, 1)):
            raise ParseError(f"line {lineno}: coefficient integer {a} out of range")
        for k, mk in enumerate(m_init, start=1):
            if mk % 2 == 0 or not 0 < mk < (1 << k):
                raise ParseError(
                    f"line {lineno}: direction integer m_{k}={mk} must be odd and < 2^{k}"
                )
        m_full = _expand_direction_integers(s, a, m_init, precision)
        matrices.append(GeneratingMatrix.from_direction_integers(m_full, precision))
        degrees.append(s)
        expected_dim += 1
    seq = DigitalSequence(tuple(matrices))
    _POLY_DEGREES.update({j + 1: deg for j, deg in enumerate(degrees)})
    return seq


_DEFAULT_SEQUENCE: DigitalSequence | None = None


def default_sequence(dim: int) -> DigitalSequence:
    """The shipped sequence truncated to ``dim`` coordinates (1 <= dim <= 16)."""
    global _DEFAULT_SEQUENCE
    if _DEFAULT_SEQUENCE is None:
        _DEFAULT_SEQUENCE = load_direction_numbers(_DEFAULT_TABLE)
    full = _DEFAULT_SEQUENCE
    if not 1 <= dim <= full.dim:
        raise ValueError(f"shipped table covers dimensions 1..{full.dim}")
    return DigitalSequence(full.matrices[:dim])


def t_parameter_bound(dim: int) -> int:
    """Quality-parameter bound for the shipped sequence in ``dim`` coordinates.

    Equals the sum of (polynomial degree - 1) over the first ``dim``
    dimensions, the published bound for Sobol-style constructions.
    """
    default_sequence(dim)  # ensure the table is parsed
    return sum(_POLY_DEGREES[j] - 1 for j in range(1, dim + 1))

"""Sparse algebra over weighted sums of Pauli strings.

A string on ``L`` sites is stored as a pair of bit masks: ``x_mask`` marks
sites carrying an X factor, ``z_mask`` sites carrying a Z factor, and a site
present in both masks is a Y. Coefficients always multiply the hermitian
letters I/X/Y/Z; the internal X-then-Z ordered products only appear while
multiplying, where every phase is an integer power of i tracked exactly.
Products therefore reduce to mask XORs plus a phase exponent, which keeps
nested commutator chains cheap.

Site 0 is the leftmost Kronecker factor everywhere in this package, i.e. the
most significant bit of a computational basis index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping

import numpy as np

from .errors import DimensionError

DEFAULT_PRUNE_TOL = 1e-14
DENSE_SITE_CAP = 10

_LETTER_MATRICES = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex),
    "Y": np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex),
    "Z": np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex),
}

_I_POWERS = (1.0 + 0.0j, 1.0j, -1.0 + 0.0j, -1.0j)


def _popcount(n: int) -> int:
    return bin(n).count("1")


def _check_mask(mask: int, num_sites: int, name: str) -> None:
    if mask < 0 or mask >> num_sites:
        raise ValueError(f"{name} has bits outside the {num_sites}-site register")


@dataclass(frozen=True)
class PauliTerm:
    """A single weighted Pauli string.

    ``coefficient`` multiplies the hermitian word built from the masks, e.g.
    masks ``(1, 1)`` with coefficient ``-1j`` is the operator ``-i*Y0``,
    which equals the ordered product ``X0*Z0``.
    """

    num_sites: int
    x_mask: int
    z_mask: int
    coefficient: complex

    def __post_init__(self) -> None:
        _check_mask(self.x_mask, self.num_sites, "x_mask")
        _check_mask(self.z_mask, self.num_sites, "z_mask")

    @property
    def word(self) -> str:
        letters = []
        for site in range(self.num_sites):
            x = (self.x_mask >> site) & 1
            z = (self.z_mask >> site) & 1
            letters.append("IXZY"[x + 2 * z])
        return "".join(letters)


def term_multiply(a: PauliTerm, b: PauliTerm) -> PauliTerm:
    """Exact operator product of two Pauli terms.

    The phase is a power of i: converting each hermitian word to its X-then-Z
    ordered form, commuting the inner Z past the inner X, and converting back
    contributes ``i**(ya + yb - yc) * (-1)**overlap`` with ``y*`` the Y counts
    and ``overlap`` the number of sites where ``a``'s Z meets ``b``'s X.
    """
    if a.num_sites != b.num_sites:
        raise DimensionError(
            f"cannot multiply terms on {a.num_sites} and {b.num_sites} sites"
        )
    x_mask, z_mask, phase = _product_masks(a.x_mask, a.z_mask, b.x_mask, b.z_mask)
    return PauliTerm(a.num_sites, x_mask, z_mask, a.coefficient * b.coefficient * phase)


def _product_masks(xa: int, za: int, xb: int, zb: int) -> tuple[int, int, complex]:
    xc = xa ^ xb
    zc = za ^ zb
    exponent = (
        _popcount(xa & za)
        + _popcount(xb & zb)
        - _popcount(xc & zc)
        + 2 * _popcount(za & xb)
    ) % 4
    return xc, zc, _I_POWERS[exponent]


def _anticommutes(xa: int, za: int, xb: int, zb: int) -> bool:
    # Symplectic form: strings anticommute iff the X/Z overlaps have odd parity.
    return (_popcount(xa & zb) + _popcount(za & xb)) % 2 == 1


class PauliOperator:
    """Immutable weighted sum of Pauli strings on a fixed register.

    Terms are keyed by the mask pair and merged additively; coefficients with
    magnitude below ``prune_tol`` are dropped so commutator chains do not
    accumulate exact-zero debris. Instances are safe to share across threads.
    """

    __slots__ = ("num_sites", "_terms", "_plan")

    def __init__(
        self,
        num_sites: int,
        terms: Mapping[tuple[int, int], complex] | Iterable[tuple[tuple[int, int], complex]] = (),
        *,
        prune_tol: float = DEFAULT_PRUNE_TOL,
    ) -> None:
        if num_sites < 1:
            raise ValueError("num_sites must be >= 1")
        items = terms.items() if isinstance(terms, Mapping) else terms
        merged: dict[tuple[int, int], complex] = {}
        for (x, z), coeff in items:
            _check_mask(x, num_sites, "x_mask")
            _check_mask(z, num_sites, "z_mask")
            merged[(x, z)] = merged.get((x, z), 0.0) + complex(coeff)
        self.num_sites = num_sites
        self._terms = {
            key: c for key, c in merged.items() if abs(c) > prune_tol
        }
        self._plan = None  # lazily built state-application plan

    # -- constructors ------------------------------------------------------

    @classmethod
    def zero(cls, num_sites: int) -> "PauliOperator":
        return cls(num_sites)

    @classmethod
    def identity(cls, num_sites: int, coeff: complex = 1.0) -> "PauliOperator":
        return cls(num_sites, {(0, 0): coeff})

    @classmethod
    def from_label(cls, label: str, coeff: complex = 1.0) -> "PauliOperator":
        """Operator from a word such as ``"XIZY"`` (site 0 is the first letter)."""
        x = z = 0
        for site, ch in enumerate(label.upper()):
            if ch == "X":
                x |= 1 << site
            elif ch == "Z":
                z |= 1 << site
            elif ch == "Y":
                x |= 1 << site
                z |= 1 << site
            elif ch != "I":
                raise ValueError(f"invalid Pauli letter {ch!r} in {label!r}")
        return cls(len(label), {(x, z): coeff})

    @classmethod
    def single_site(cls, num_sites: int, site: int, axis: str, coeff: complex = 1.0) -> "PauliOperator":
        if not 0 <= site < num_sites:
            raise ValueError(f"site {site} outside register of {num_sites}")
        axis = axis.lower()
        bit = 1 << site
        masks = {"x": (bit, 0), "y": (bit, bit), "z": (0, bit)}
        if axis not in masks:
            raise ValueError(f"axis must be x, y, or z, got {axis!r}")
        return cls(num_sites, {masks[axis]: coeff})

    # -- inspection --------------------------------------------------------

    @property
    def terms(self) -> dict[tuple[int, int], complex]:
        return dict(self._terms)

    @property
    def num_terms(self) -> int:
        return len(self._terms)

    @property
    def one_norm(self) -> float:
        return sum(abs(c) for c in self._terms.values())

    def is_zero(self) -> bool:
        return not self._terms

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        # Hermitian letter words demand real coefficients; imaginary parts
        # beyond tol are genuine anti-hermitian content.
        return all(abs(c.imag) <= tol for c in self._terms.values())

    def coefficient(self, x_mask: int, z_mask: int) -> complex:
        return self._terms.get((x_mask, z_mask), 0.0 + 0.0j)

    def __iter__(self) -> Iterator[PauliTerm]:
        for (x, z), c in self._terms.items():
            yield PauliTerm(self.num_sites, x, z, c)

    def __repr__(self) -> str:
        return f"PauliOperator(L={self.num_sites}, terms={self.num_terms})"

    # -- algebra -----------------------------------------------------------

    def _require_same_register(self, other: "PauliOperator") -> None:
        if self.num_sites != other.num_sites:
            raise DimensionError(
                f"operators act on {self.num_sites} and {other.num_sites} sites"
            )

    def __add__(self, other: "PauliOperator") -> "PauliOperator":
        self._require_same_register(other)
        out = dict(self._terms)
        for key, c in other._terms.items():
            out[key] = out.get(key, 0.0) + c
        return PauliOperator(self.num_sites, out)

    def __sub__(self, other: "PauliOperator") -> "PauliOperator":
        return self + (-1.0) * other

    def __mul__(self, scalar: complex) -> "PauliOperator":
        scalar = complex(scalar)
        return PauliOperator(
            self.num_sites, {key: scalar * c for key, c in self._terms.items()}
        )

    __rmul__ = __mul__

    def __neg__(self) -> "PauliOperator":
        return (-1.0) * self

    def __matmul__(self, other: "PauliOperator") -> "PauliOperator":
        """Operator product, term by term with exact phases."""
        self._require_same_register(other)
        out: dict[tuple[int, int], complex] = {}
        for (xa, za), ca in self._terms.items():
            for (xb, zb), cb in other._terms.items():
                x, z, phase = _product_masks(xa, za, xb, zb)
                out[(x, z)] = out.get((x, z), 0.0) + ca * cb * phase
        return PauliOperator(self.num_sites, out)

    def adjoint(self) -> "PauliOperator":
        return PauliOperator(
            self.num_sites, {key: c.conjugate() for key, c in self._terms.items()}
        )

    # -- dense rendering and state application ------------------------------

    def to_dense(self, site_cap: int = DENSE_SITE_CAP) -> np.ndarray:
        """Exact dense matrix; site 0 is the leftmost Kronecker factor."""
        if self.num_sites > site_cap:
            raise DimensionError(
                f"dense rendering capped at {site_cap} sites, got {self.num_sites}"
            )
        dim = 1 << self.num_sites
        out = np.zeros((dim, dim), dtype=complex)
        for term in self:
            mat = np.array([[term.coefficient]])
            for ch in term.word:
                mat = np.kron(mat, _LETTER_MATRICES[ch])
            out += mat
        return out

    def _build_plan(self) -> list[tuple[int, np.ndarray]]:
        """Group terms by flip mask; weight vectors fold Z signs and Y phases.

        For basis index b (site 0 = MSB), the word with masks (x, z) maps
        |b> -> i**|x&z| * (-1)**|zr & b| |b ^ xr>, with xr/zr the masks
        reflected into index bit order.
        """
        L = self.num_sites
        dim = 1 << L
        idx = np.arange(dim, dtype=np.uint64)
        groups: dict[int, np.ndarray] = {}
        for (x, z), c in self._terms.items():
            xr = _reflect_mask(x, L)
            zr = _reflect_mask(z, L)
            phase = c * _I_POWERS[_popcount(x & z) % 4]
            parity = np.bitwise_count(idx & np.uint64(zr)) & np.uint64(1)
            weights = np.where(parity.astype(bool), -phase, phase)
            if xr in groups:
                groups[xr] = groups[xr] + weights
            else:
                groups[xr] = weights.astype(complex)
        return [(xr, w) for xr, w in groups.items()]

    def apply(self, amplitudes: np.ndarray) -> np.ndarray:
        """Apply the operator to a state-vector amplitude array."""
        dim = 1 << self.num_sites
        if amplitudes.shape != (dim,):
            raise DimensionError(
                f"state has {amplitudes.shape[0]} amplitudes, operator needs {dim}"
            )
        if self._plan is None:
            self._plan = self._build_plan()
        out = np.zeros(dim, dtype=complex)
        idx = np.arange(dim)
        for xr, weights in self._plan:
            v = weights * amplitudes
            out += v[idx ^ xr] if xr else v
        return out

    # -- text serialization --------------------------------------------------

    def to_text(self) -> str:
        """Debug dump, one line per term: ``coeff_re coeff_im pauli_word``."""
        lines = []
        for (x, z), c in sorted(self._terms.items()):
            word = PauliTerm(self.num_sites, x, z, c).word
            lines.append(f"{c.real:.17g} {c.imag:.17g} {word}")
        return "\n".join(lines)

    @classmethod
    def from_text(cls, text: str) -> "PauliOperator":
        terms = []
        num_sites = None
        for line in text.strip().splitlines():
            if not line.strip():
                continue
            re_s, im_s, word = line.split()
            if num_sites is None:
                num_sites = len(word)
            elif len(word) != num_sites:
                raise DimensionError("inconsistent word lengths in operator dump")
            single = cls.from_label(word, complex(float(re_s), float(im_s)))
            terms.extend(single._terms.items())
        if num_sites is None:
            raise ValueError("empty operator dump")
        return cls(num_sites, terms)


def _reflect_mask(mask: int, num_sites: int) -> int:
    """Map site-indexed mask bits onto basis-index bits (site 0 -> MSB)."""
    out = 0
    for site in range(num_sites):
        if (mask >> site) & 1:
            out |= 1 << (num_sites - 1 - site)
    return out


def commutator(a: PauliOperator, b: PauliOperator) -> PauliOperator:
    """``ab - ba`` with merged, pruned terms.

    Pauli words either commute or anticommute, so only anticommuting pairs
    contribute, each with twice their product.
    """
    a._require_same_register(b)
    out: dict[tuple[int, int], complex] = {}
    for (xa, za), ca in a._terms.items():
        for (xb, zb), cb in b._terms.items():
            if not _anticommutes(xa, za, xb, zb):
                continue
            x, z, phase = _product_masks(xa, za, xb, zb)
            out[(x, z)] = out.get((x, z), 0.0) + 2.0 * ca * cb * phase
    return PauliOperator(a.num_sites, out)


def operator_distance(a: PauliOperator, b: PauliOperator) -> float:
    """Largest coefficient mismatch between two operators."""
    a._require_same_register(b)
    keys = set(a._terms) | set(b._terms)
    if not keys:
        return 0.0
    return max(abs(a.coefficient(*k) - b.coefficient(*k)) for k in keys)


def support_span(term: PauliTerm) -> int:
    """Length of the shortest contiguous arc on the ring covering the term.

    The minimal arc is the ring minus its largest unoccupied gap.
    """
    sites = sorted(
        j
        for j in range(term.num_sites)
        if ((term.x_mask | term.z_mask) >> j) & 1
    )
    if not sites:
        return 0
    L = term.num_sites
    gaps = [b - a for a, b in zip(sites, sites[1:])]
    gaps.append(L - sites[-1] + sites[0])
    return L - max(gaps) + 1


def random_hermitian_operator(
    num_sites: int, num_terms: int, rng: np.random.Generator
) -> PauliOperator:
    """Random real-coefficient operator; handy for property tests."""
    terms: dict[tuple[int, int], complex] = {}
    for _ in range(num_terms):
        x = int(rng.integers(0, 1 << num_sites))
        z = int(rng.integers(0, 1 << num_sites))
        terms[(x, z)] = terms.get((x, z), 0.0) + complex(rng.normal())
    return PauliOperator(num_sites, terms)

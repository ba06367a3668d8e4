"""Determinants as (alpha, beta) occupation bitmasks and the particle-sector space.

Bitstring convention used throughout the package: ASCII '0'/'1', the leftmost
character is spin-orbital 0. In the default *blocked* layout characters
``[0, n_spatial)`` are alpha orbitals and ``[n_spatial, 2*n_spatial)`` are beta
orbitals. The *interleaved* layout (alpha p at ``2p``, beta p at ``2p+1``) is
accepted on input for externally produced data.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass

import numpy as np

MAX_SPATIAL = 64

PROVENANCES = ("hardware", "perturbative", "generated", "reference")


@dataclass(frozen=True)
class OrbitalBasis:
    n_spatial: int
    n_alpha: int
    n_beta: int

    def __post_init__(self):
        if not 0 < self.n_spatial <= MAX_SPATIAL:
            raise ValueError(
                f"n_spatial must be in [1, {MAX_SPATIAL}], got {self.n_spatial}"
            )
        if not (0 <= self.n_alpha <= self.n_spatial and 0 <= self.n_beta <= self.n_spatial):
            raise ValueError(
                f"electron counts ({self.n_alpha}, {self.n_beta}) do not fit "
                f"in {self.n_spatial} spatial orbitals"
            )

    @property
    def n_spin_orbitals(self) -> int:
        return 2 * self.n_spatial

    @property
    def reference(self) -> Determinant:
        """Aufbau (Hartree-Fock) determinant: lowest orbitals filled."""
        return Determinant((1 << self.n_alpha) - 1, (1 << self.n_beta) - 1)

    def occupied_spin_orbitals(self) -> list[int]:
        n = self.n_spatial
        return list(range(self.n_alpha)) + [n + p for p in range(self.n_beta)]

    def virtual_spin_orbitals(self) -> list[int]:
        n = self.n_spatial
        return list(range(self.n_alpha, n)) + [n + p for p in range(self.n_beta, n)]


@dataclass(frozen=True, order=True)
class Determinant:
    """One configuration. Bit p of ``alpha`` set means alpha orbital p is occupied."""

    alpha: int
    beta: int

    def occupied(self) -> tuple[list[int], list[int]]:
        return _bits(self.alpha), _bits(self.beta)

    def in_sector(self, basis: OrbitalBasis) -> bool:
        return (
            self.alpha.bit_count() == basis.n_alpha
            and self.beta.bit_count() == basis.n_beta
            and self.alpha >> basis.n_spatial == 0
            and self.beta >> basis.n_spatial == 0
        )

    def spin_orbital_mask(self, n_spatial: int) -> int:
        """Single integer over 2*n_spatial spin orbitals, blocked layout."""
        return self.alpha | (self.beta << n_spatial)

    @classmethod
    def from_spin_orbital_mask(cls, mask: int, n_spatial: int) -> Determinant:
        low = (1 << n_spatial) - 1
        return cls(mask & low, mask >> n_spatial)


def _bits(mask: int) -> list[int]:
    out = []
    p = 0
    while mask:
        if mask & 1:
            out.append(p)
        mask >>= 1
        p += 1
    return out


def make_determinant(
    alpha_occupied: Iterable[int], beta_occupied: Iterable[int], basis: OrbitalBasis
) -> Determinant:
    masks = []
    for label, occ in (("alpha", list(alpha_occupied)), ("beta", list(beta_occupied))):
        if len(set(occ)) != len(occ):
            raise ValueError(f"duplicate {label} orbital index in {occ}")
        mask = 0
        for p in occ:
            if not 0 <= p < basis.n_spatial:
                raise ValueError(
                    f"{label} orbital index {p} out of range for n_spatial={basis.n_spatial}"
                )
            mask |= 1 << p
        masks.append(mask)
    return Determinant(*masks)


def excitation_rank(d: Determinant, reference: Determinant) -> int:
    """Number of hole-particle pairs separating ``d`` from ``reference``."""
    xa = (d.alpha ^ reference.alpha).bit_count()
    xb = (d.beta ^ reference.beta).bit_count()
    if (
        d.alpha.bit_count() != reference.alpha.bit_count()
        or d.beta.bit_count() != reference.beta.bit_count()
    ):
        raise ValueError(
            "asymmetric excitation: determinants belong to different particle sectors"
        )
    return (xa + xb) // 2


# ---------------------------------------------------------------------------
# bitstrings


def determinant_to_bitstring(
    d: Determinant, basis: OrbitalBasis, interleaved: bool = False
) -> str:
    n = basis.n_spatial
    chars = ["0"] * (2 * n)
    for p in range(n):
        a = "1" if d.alpha >> p & 1 else "0"
        b = "1" if d.beta >> p & 1 else "0"
        if interleaved:
            chars[2 * p], chars[2 * p + 1] = a, b
        else:
            chars[p], chars[n + p] = a, b
    return "".join(chars)


def bitstring_to_determinant(
    bits: str, basis: OrbitalBasis, interleaved: bool = False
) -> Determinant:
    n = basis.n_spatial
    if len(bits) != 2 * n:
        raise ValueError(f"bitstring {bits!r} has length {len(bits)}, expected {2 * n}")
    if set(bits) - {"0", "1"}:
        raise ValueError(f"bitstring {bits!r} contains characters other than 0/1")
    if interleaved:
        a_chars, b_chars = bits[0::2], bits[1::2]
    else:
        a_chars, b_chars = bits[:n], bits[n:]
    alpha = sum(1 << p for p, ch in enumerate(a_chars) if ch == "1")
    beta = sum(1 << p for p, ch in enumerate(b_chars) if ch == "1")
    return Determinant(alpha, beta)


def determinants_to_bits(dets: Iterable[Determinant], basis: OrbitalBasis) -> np.ndarray:
    """Stack determinants into a (N, M) uint8 matrix in the blocked layout."""
    dets = list(dets)
    n = basis.n_spatial
    out = np.zeros((len(dets), 2 * n), dtype=np.uint8)
    shifts = np.arange(n, dtype=np.uint64)
    if dets:
        alpha = np.array([d.alpha for d in dets], dtype=np.uint64)
        beta = np.array([d.beta for d in dets], dtype=np.uint64)
        out[:, :n] = (alpha[:, None] >> shifts) & np.uint64(1)
        out[:, n:] = (beta[:, None] >> shifts) & np.uint64(1)
    return out


def bits_to_determinants(bits: np.ndarray, basis: OrbitalBasis) -> list[Determinant]:
    n = basis.n_spatial
    weights = np.uint64(1) << np.arange(n, dtype=np.uint64)
    b = np.asarray(bits, dtype=np.uint64)
    alpha = (b[:, :n] * weights).sum(axis=1)
    beta = (b[:, n:] * weights).sum(axis=1)
    return [Determinant(int(a), int(c)) for a, c in zip(alpha, beta)]


# ---------------------------------------------------------------------------
# configuration sets


class ConfigurationSet:
    """Ordered, duplicate-free collection of determinants of one particle sector.

    Each member carries a provenance tag and an observed frequency (1 unless the
    set was built from sampled data). Instances are not mutated after
    construction; combining operations return new sets.
    """

    __slots__ = ("basis", "_members")

    def __init__(
        self,
        basis: OrbitalBasis,
        determinants: Iterable[Determinant] = (),
        provenance: str = "generated",
        frequencies: Mapping[Determinant, int] | None = None,
    ):
        if provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {provenance!r}")
        self.basis = basis
        self._members: dict[Determinant, tuple[str, int]] = {}
        for d in determinants:
            if d not in self._members:
                freq = frequencies.get(d, 1) if frequencies is not None else 1
                self._members[d] = (provenance, freq)

    @classmethod
    def _from_members(cls, basis, members):
        out = cls.__new__(cls)
        out.basis = basis
        out._members = members
        return out

    def __len__(self) -> int:
        return len(self._members)

    def __iter__(self) -> Iterator[Determinant]:
        return iter(self._members)

    def __contains__(self, d: object) -> bool:
        return d in self._members

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ConfigurationSet):
            return NotImplemented
        return self.basis == other.basis and list(self._members) == list(other._members)

    def __repr__(self) -> str:
        return f"ConfigurationSet(n={len(self)}, basis={self.basis})"

    @property
    def determinants(self) -> list[Determinant]:
        return list(self._members)

    def provenance(self, d: Determinant) -> str:
        return self._members[d][0]

    def frequency(self, d: Determinant) -> int:
        return self._members[d][1]

    def provenance_counts(self) -> dict[str, int]:
        return dict(Counter(tag for tag, _ in self._members.values()))

    def union(self, *others: ConfigurationSet) -> ConfigurationSet:
        """Ordered union; first occurrence wins for provenance and frequency."""
        members = dict(self._members)
        for other in others:
            if other.basis != self.basis:
                raise ValueError(f"sector mismatch: {self.basis} vs {other.basis}")
            for d, tag in other._members.items():
                members.setdefault(d, tag)
        return ConfigurationSet._from_members(self.basis, members)

    def with_determinant(self, d: Determinant, provenance: str) -> ConfigurationSet:
        if d in self._members:
            return self
        members = dict(self._members)
        members[d] = (provenance, 1)
        return ConfigurationSet._from_members(self.basis, members)

    def select(self, keep: Iterable[Determinant]) -> ConfigurationSet:
        """Sub-collection in this set's order restricted to ``keep``."""
        keep = set(keep)
        members = {d: t for d, t in self._members.items() if d in keep}
        return ConfigurationSet._from_members(self.basis, members)

    def difference(self, drop: Iterable[Determinant]) -> ConfigurationSet:
        drop = set(drop)
        members = {d: t for d, t in self._members.items() if d not in drop}
        return ConfigurationSet._from_members(self.basis, members)

    def sorted(self) -> ConfigurationSet:
        members = {d: self._members[d] for d in sorted(self._members)}
        return ConfigurationSet._from_members(self.basis, members)


def symmetry_filter(
    raw_bitstrings: Mapping[str, int] | Iterable[str],
    basis: OrbitalBasis,
    interleaved: bool = False,
    provenance: str = "hardware",
) -> ConfigurationSet:
    """Keep sector-conserving bitstrings, deduplicated, with their frequencies.

    ``raw_bitstrings`` is either a mapping bitstring -> count or an iterable of
    bitstrings (a multiset).
    """
    if isinstance(raw_bitstrings, Mapping):
        counts = Counter(dict(raw_bitstrings))
    else:
        counts = Counter(raw_bitstrings)
    freq: dict[Determinant, int] = {}
    for bits, n in counts.items():
        d = bitstring_to_determinant(bits, basis, interleaved)
        if n > 0 and d.in_sector(basis):
            freq[d] = freq.get(d, 0) + n
    return ConfigurationSet(basis, freq, provenance=provenance, frequencies=freq)


def symmetry_space_dimension(basis: OrbitalBasis) -> int:
    return math.comb(basis.n_spatial, basis.n_alpha) * math.comb(
        basis.n_spatial, basis.n_beta
    )


def _sector_masks(n: int, k: int) -> list[int]:
    return sorted(sum(1 << p for p in c) for c in itertools.combinations(range(n), k))


def enumerate_symmetry_space(basis: OrbitalBasis, cap: int = 10**6) -> Iterator[Determinant]:
    """Every sector determinant once, ordered by (alpha_mask, beta_mask)."""
    dim = symmetry_space_dimension(basis)
    if dim > cap:
        raise ValueError(f"symmetry space dimension {dim} exceeds cap {cap}")
    alphas = _sector_masks(basis.n_spatial, basis.n_alpha)
    betas = _sector_masks(basis.n_spatial, basis.n_beta)
    for a in alphas:
        for b in betas:
            yield Determinant(a, b)


def random_sector_bits(basis: OrbitalBasis, count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draws from the symmetry space as a (count, M) uint8 matrix."""
    n = basis.n_spatial
    out = np.zeros((count, 2 * n), dtype=np.uint8)
    if count == 0:
        return out
    ka = np.argsort(rng.random((count, n)), axis=1)[:, : basis.n_alpha]
    kb = np.argsort(rng.random((count, n)), axis=1)[:, : basis.n_beta]
    rows = np.arange(count)[:, None]
    out[rows, ka] = 1
    out[rows, n + kb] = 1
    return out

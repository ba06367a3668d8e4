"""Molecular integrals: FCIDUMP ingestion, spin-orbital lookups and MP2.

Spatial two-electron integrals are stored in chemists' notation ``(pq|rs)``.
Spin orbitals follow the blocked layout of :mod:`sqdgen.fermion`: index ``p``
for ``p < n_spatial`` is alpha orbital ``p``, index ``n_spatial + p`` is beta
orbital ``p``.
"""

from __future__ import annotations

import io
import os
import re
from dataclasses import dataclass, field
from typing import TextIO

import numpy as np

from .fermion import OrbitalBasis

DEGENERATE_DENOMINATOR = 1e-12


class FCIDUMPError(ValueError):
    pass


class DegenerateDenominatorError(ArithmeticError):
    pass


@dataclass(frozen=True)
class IntegralSet:
    n_spatial: int
    h: np.ndarray
    v: np.ndarray
    e_core: float
    eps: np.ndarray | None = None
    n_electrons: int | None = None
    ms2: int = 0
    notation: str = "chemist"

    def __post_init__(self):
        n = self.n_spatial
        if self.h.shape != (n, n) or self.v.shape != (n, n, n, n):
            raise ValueError("integral array shapes do not match n_spatial")
        if self.notation != "chemist":
            raise ValueError("only chemists' notation (pq|rs) is stored")

    def default_basis(self) -> OrbitalBasis:
        if self.n_electrons is None:
            raise ValueError("electron count unknown; build the OrbitalBasis explicitly")
        n_alpha = (self.n_electrons + self.ms2) // 2
        return OrbitalBasis(self.n_spatial, n_alpha, self.n_electrons - n_alpha)

    def with_orbital_energies(self, n_alpha: int, n_beta: int) -> IntegralSet:
        return IntegralSet(
            self.n_spatial, self.h, self.v, self.e_core,
            orbital_energies(self, n_alpha, n_beta), self.n_electrons, self.ms2,
        )

    def spin_orbital_energies(self) -> np.ndarray:
        if self.eps is None:
            raise ValueError("orbital energies not populated")
        return np.concatenate([self.eps, self.eps])


_HEADER_KEY = re.compile(r"([A-Za-z0-9_]+)\s*=\s*([^=]*?)(?=,?\s*[A-Za-z0-9_]+\s*=|$)")


def _parse_header(text: str) -> dict[str, list[int]]:
    body = re.sub(r"&FCI|&END|/", " ", text, flags=re.IGNORECASE).replace("\n", " ")
    fields: dict[str, list[int]] = {}
    for key, raw in _HEADER_KEY.findall(body.strip()):
        values = [tok for tok in re.split(r"[,\s]+", raw.strip()) if tok]
        try:
            fields[key.upper()] = [int(tok) for tok in values]
        except ValueError as exc:
            raise FCIDUMPError(f"non-integer value in header field {key}: {raw!r}") from exc
    return fields


def parse_fcidump(source: str | os.PathLike | TextIO) -> IntegralSet:
    """Read an FCIDUMP file (path or open text stream).

    Integral lines are ``value p q r s`` with 1-based orbital indices;
    ``p q 0 0`` is a one-electron integral and ``0 0 0 0`` the core energy.
    Eight-fold permutational symmetry of real orbitals is applied.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source) as fh:
            text = fh.read()
    else:
        text = source.read()

    match = re.search(r"(&END|^\s*/\s*$)", text, flags=re.IGNORECASE | re.MULTILINE)
    if match is None or "&FCI" not in text[: match.start()].upper():
        raise FCIDUMPError("malformed header: expected '&FCI ... &END'")
    header = _parse_header(text[: match.start()])
    if "NORB" not in header or len(header["NORB"]) != 1:
        raise FCIDUMPError("malformed header: NORB missing")
    norb = header["NORB"][0]
    if norb <= 0:
        raise FCIDUMPError(f"malformed header: NORB={norb}")
    nelec = header.get("NELEC", [None])[0]
    ms2 = header.get("MS2", [0])[0]

    h = np.zeros((norb, norb))
    v = np.zeros((norb, norb, norb, norb))
    e_core = 0.0
    for lineno, line in enumerate(text[match.end():].splitlines(), start=1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 5:
            raise FCIDUMPError(f"integral line {lineno}: expected 5 fields, got {line!r}")
        try:
            value = float(parts[0].replace("D", "E").replace("d", "e"))
            p, q, r, s = (int(x) for x in parts[1:])
        except ValueError as exc:
            raise FCIDUMPError(f"integral line {lineno}: non-numeric field in {line!r}") from exc
        if max(p, q, r, s) > norb or min(p, q, r, s) < 0:
            raise FCIDUMPError(f"integral line {lineno}: index exceeds NORB={norb}")
        if p == q == r == s == 0:
            e_core = value
        elif q == r == s == 0:
            # orbital energy lines (p 0 0 0) are recomputed from h and v
            continue
        elif r == 0 and s == 0:
            if p == 0 or q == 0:
                raise FCIDUMPError(f"integral line {lineno}: bad one-electron indices")
            h[p - 1, q - 1] = h[q - 1, p - 1] = value
        elif 0 in (p, q, r, s):
            raise FCIDUMPError(f"integral line {lineno}: zero index in a two-electron entry")
        else:
            p, q, r, s = p - 1, q - 1, r - 1, s - 1
            for a, b, c, d in (
                (p, q, r, s), (q, p, r, s), (p, q, s, r), (q, p, s, r),
                (r, s, p, q), (s, r, p, q), (r, s, q, p), (s, r, q, p),
            ):
                v[a, b, c, d] = value

    out = IntegralSet(norb, h, v, e_core, None, nelec, ms2)
    if nelec is not None and nelec % 2 == 0 and ms2 == 0:
        out = out.with_orbital_energies(nelec // 2, nelec // 2)
    return out


def parse_fcidump_text(text: str) -> IntegralSet:
    return parse_fcidump(io.StringIO(text))


def orbital_energies(s: IntegralSet, n_alpha: int, n_beta: int) -> np.ndarray:
    """Canonical closed-shell Fock diagonal h_pp + sum_i [2 (pp|ii) - (pi|ip)]."""
    if n_alpha != n_beta:
        raise ValueError("orbital energies are only defined for closed-shell occupations")
    occ = np.arange(n_alpha)
    v = s.v
    coulomb = np.einsum("ppii->p", v[:, :, occ][:, :, :, occ]) if n_alpha else 0.0
    exchange = np.einsum("piip->p", v[:, occ][:, :, occ]) if n_alpha else 0.0
    return np.diag(s.h) + 2.0 * coulomb - exchange


# ---------------------------------------------------------------------------
# spin-orbital quantities


def antisymmetrized(s: IntegralSet, p: int, q: int, r: int, t: int) -> float:
    """<pq||rs> = <pq|rs> - <pq|sr> over spin orbitals."""
    n = s.n_spatial
    sp, sq, sr, st = p // n, q // n, r // n, t // n
    P, Q, R, T = p % n, q % n, r % n, t % n
    direct = s.v[P, R, Q, T] if (sp == sr and sq == st) else 0.0
    exchange = s.v[P, T, Q, R] if (sp == st and sq == sr) else 0.0
    return float(direct - exchange)


def antisymmetrized_block(s: IntegralSet, p, q, r, t) -> np.ndarray:
    """Dense block <pq||rs> for index arrays p, q, r, s (spin orbitals)."""
    n = s.n_spatial
    p, q, r, t = (np.asarray(x, dtype=int) for x in (p, q, r, t))
    sp, sq, sr, st = (x // n for x in (p, q, r, t))
    P, Q, R, T = (x % n for x in (p, q, r, t))
    direct = s.v[np.ix_(P, R, Q, T)].transpose(0, 2, 1, 3)
    direct = direct * (sp[:, None, None, None] == sr[None, None, :, None])
    direct = direct * (sq[None, :, None, None] == st[None, None, None, :])
    exchange = s.v[np.ix_(P, T, Q, R)].transpose(0, 2, 3, 1)
    exchange = exchange * (sp[:, None, None, None] == st[None, None, None, :])
    exchange = exchange * (sq[None, :, None, None] == sr[None, None, :, None])
    return direct - exchange


@dataclass
class AmplitudeTensor:
    """Pruned MP2 amplitudes keyed (i, j, a, b) with i < j occupied, a < b virtual."""

    entries: dict[tuple[int, int, int, int], float] = field(default_factory=dict)
    threshold: float = 0.0

    def __len__(self) -> int:
        return len(self.entries)

    def keys(self):
        return self.entries.keys()


def mp2_amplitudes(s: IntegralSet, basis: OrbitalBasis, eps_int: float) -> AmplitudeTensor:
    """t_ij^ab = <ij||ab> / (e_i + e_j - e_a - e_b), keeping |t| > eps_int."""
    occ = np.array(basis.occupied_spin_orbitals(), dtype=int)
    vir = np.array(basis.virtual_spin_orbitals(), dtype=int)
    if len(occ) < 2 or len(vir) < 2:
        return AmplitudeTensor({}, eps_int)
    if s.eps is None:
        s = s.with_orbital_energies(basis.n_alpha, basis.n_beta)
    e = s.spin_orbital_energies()
    g = antisymmetrized_block(s, occ, occ, vir, vir)
    denom = e[occ][:, None, None, None] + e[occ][None, :, None, None] \
        - e[vir][None, None, :, None] - e[vir][None, None, None, :]
    io_, jo = np.triu_indices(len(occ), k=1)
    av, bv = np.triu_indices(len(vir), k=1)
    g = g[io_, jo][:, av, bv]
    denom = denom[io_, jo][:, av, bv]

    bad = (np.abs(denom) < DEGENERATE_DENOMINATOR) & (np.abs(g) > eps_int)
    if bad.any():
        x, y = np.argwhere(bad)[0]
        quad = (int(occ[io_[x]]), int(occ[jo[x]]), int(vir[av[y]]), int(vir[bv[y]]))
        raise DegenerateDenominatorError(f"vanishing MP2 denominator for (i,j,a,b)={quad}")
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(np.abs(g) > 0.0, g / denom, 0.0)
    keep = np.argwhere(np.abs(t) > eps_int)
    entries = {
        (int(occ[io_[x]]), int(occ[jo[x]]), int(vir[av[y]]), int(vir[bv[y]])): float(t[x, y])
        for x, y in keep
    }
    return AmplitudeTensor(entries, eps_int)


def mp2_energy(t: AmplitudeTensor, s: IntegralSet) -> float:
    return float(sum(amp * antisymmetrized(s, *key) for key, amp in t.entries.items()))


def dense_amplitudes(t: AmplitudeTensor, occ: list[int], vir: list[int]) -> np.ndarray:
    """Fully antisymmetric (o, o, v, v) array from the pruned sparse store."""
    oi = {p: k for k, p in enumerate(occ)}
    vi = {p: k for k, p in enumerate(vir)}
    out = np.zeros((len(occ), len(occ), len(vir), len(vir)))
    for (i, j, a, b), val in t.entries.items():
        I, J, A, B = oi[i], oi[j], vi[a], vi[b]
        out[I, J, A, B] = out[J, I, B, A] = val
        out[J, I, A, B] = out[I, J, B, A] = -val
    return out

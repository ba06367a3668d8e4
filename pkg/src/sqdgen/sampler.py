"""Measurement stand-in: shot sampling from a CI state and counts files.

Counts files are plain text, one ``bitstring count`` pair per line, with
``#`` starting a comment. Bitstrings use the blocked layout (alpha orbitals
first, leftmost character is spin orbital 0).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import TextIO

import numpy as np

from .fermion import (
    ConfigurationSet,
    OrbitalBasis,
    determinants_to_bits,
    symmetry_filter,
)
from .hamiltonian import CIVector


class CountsFormatError(ValueError):
    pass


@dataclass
class Counts:
    entries: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        lengths = {len(b) for b in self.entries}
        if len(lengths) > 1:
            raise CountsFormatError(f"inconsistent bitstring lengths {sorted(lengths)}")
        for b, n in self.entries.items():
            if set(b) - {"0", "1"}:
                raise CountsFormatError(f"not a bitstring: {b!r}")
            if n < 0:
                raise CountsFormatError(f"negative count for {b}")

    @property
    def n_shots(self) -> int:
        return sum(self.entries.values())

    @property
    def width(self) -> int | None:
        return len(next(iter(self.entries))) if self.entries else None

    def probabilities(self) -> dict[str, float]:
        total = self.n_shots
        return {b: n / total for b, n in self.entries.items()} if total else {}


@dataclass(frozen=True)
class NoiseSpec:
    bitflip_p: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.bitflip_p <= 1.0:
            raise ValueError("bitflip_p must lie in [0, 1]")


def _rows_to_strings(bits: np.ndarray) -> list[str]:
    chars = np.where(bits.astype(bool), "1", "0")
    return ["".join(row) for row in chars]


def sample_from_state(
    v: CIVector, c: ConfigurationSet, n_shots: int = 100_000, noise: NoiseSpec = NoiseSpec()
) -> Counts:
    """Draw ``n_shots`` determinants with probability |c_mu|^2, then flip bits."""
    coeffs = np.asarray(v.coefficients, dtype=float)
    if len(coeffs) != len(c):
        raise ValueError("CI vector is not aligned with the configuration set")
    if n_shots < 0:
        raise ValueError("n_shots must be non-negative")
    rng = np.random.default_rng(noise.seed)
    prob = coeffs**2
    prob = prob / prob.sum()
    per_det = rng.multinomial(n_shots, prob)
    bits = np.repeat(determinants_to_bits(c.determinants, c.basis), per_det, axis=0)
    if noise.bitflip_p > 0 and len(bits):
        bits ^= (rng.random(bits.shape) < noise.bitflip_p).astype(np.uint8)
    strings, freq = np.unique(np.array(_rows_to_strings(bits), dtype=object), return_counts=True)
    return Counts({str(s): int(n) for s, n in zip(strings, freq)})


def load_counts(source: str | os.PathLike | TextIO) -> Counts:
    if isinstance(source, (str, os.PathLike)):
        with open(source) as fh:
            lines = fh.read().splitlines()
    else:
        lines = source.read().splitlines()
    entries: dict[str, int] = {}
    for lineno, line in enumerate(lines, start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        parts = body.split()
        if len(parts) != 2 or set(parts[0]) - {"0", "1"}:
            raise CountsFormatError(f"line {lineno}: expected 'bitstring count', got {line!r}")
        try:
            n = int(parts[1])
        except ValueError as exc:
            raise CountsFormatError(f"line {lineno}: count is not an integer") from exc
        if n < 0:
            raise CountsFormatError(f"line {lineno}: negative count")
        entries[parts[0]] = entries.get(parts[0], 0) + n
    return Counts(entries)


def save_counts(k: Counts, target: str | os.PathLike | TextIO) -> None:
    """Write counts sorted by bitstring so output is byte-stable."""
    lines = [f"# shots {k.n_shots}"]
    lines.extend(f"{b} {n}" for b, n in sorted(k.entries.items()))
    text = "\n".join(lines) + "\n"
    if isinstance(target, (str, os.PathLike)):
        with open(target, "w") as fh:
            fh.write(text)
    else:
        target.write(text)


def counts_to_configurations(k: Counts, basis: OrbitalBasis, interleaved: bool = False
                             ) -> ConfigurationSet:
    if k.width is not None and k.width != basis.n_spin_orbitals:
        raise ValueError(
            f"bitstring length {k.width} does not match {basis.n_spin_orbitals} spin orbitals"
        )
    return symmetry_filter(k.entries, basis, interleaved, provenance="hardware")

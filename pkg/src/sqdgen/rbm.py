"""Restricted Boltzmann machine over occupation bitstrings.

Visible units are the M spin orbitals in the blocked layout of
:mod:`sqdgen.fermion`; hidden units default to the same count. The energy is

    E(g, h) = -g.W.h - y.h - u.g

with visible bias ``u`` and hidden bias ``y``. Training is minibatch CD-k and
generation is plain block Gibbs sampling followed by a particle-sector filter.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, TextIO

import numpy as np
from scipy.special import expit

from .fermion import (
    ConfigurationSet,
    Determinant,
    OrbitalBasis,
    bits_to_determinants,
    determinants_to_bits,
    random_sector_bits,
)
from .hamiltonian import CIVector

CHECKPOINT_MAGIC = "# sqdgen-rbm v1"


@dataclass
class RBMModel:
    weights: np.ndarray
    visible_bias: np.ndarray
    hidden_bias: np.ndarray
    rng_seed: int = 0

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=float)
        self.visible_bias = np.array(self.visible_bias, dtype=float)
        self.hidden_bias = np.array(self.hidden_bias, dtype=float)
        d, j = self.weights.shape
        if self.visible_bias.shape != (d,) or self.hidden_bias.shape != (j,):
            raise ValueError("bias lengths do not match the weight matrix")
        self.check_finite()

    @property
    def d_visible(self) -> int:
        return self.weights.shape[0]

    @property
    def d_hidden(self) -> int:
        return self.weights.shape[1]

    def check_finite(self) -> None:
        for name in ("weights", "visible_bias", "hidden_bias"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise FloatingPointError(f"non-finite RBM parameter in {name}")

    def copy(self) -> RBMModel:
        return RBMModel(self.weights, self.visible_bias, self.hidden_bias, self.rng_seed)

    def parameters_equal(self, other: RBMModel) -> bool:
        return (
            np.array_equal(self.weights, other.weights)
            and np.array_equal(self.visible_bias, other.visible_bias)
            and np.array_equal(self.hidden_bias, other.hidden_bias)
        )


def init_model(d_visible: int, d_hidden: int | None = None, seed: int = 0,
               scale: float = 0.01) -> RBMModel:
    """Weights uniform in (-scale, scale), biases zero."""
    d_hidden = d_visible if d_hidden is None else d_hidden
    if d_visible <= 0 or d_hidden <= 0:
        raise ValueError("layer sizes must be positive")
    rng = np.random.default_rng(seed)
    w = rng.uniform(-scale, scale, size=(d_visible, d_hidden))
    return RBMModel(w, np.zeros(d_visible), np.zeros(d_hidden), seed)


def _as_units(x, n: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != n:
        raise ValueError(f"{what} length {x.shape[-1]} does not match layer size {n}")
    return x


def rbm_energy(g, h, m: RBMModel) -> float:
    g = _as_units(g, m.d_visible, "visible")
    h = _as_units(h, m.d_hidden, "hidden")
    return float(-(g @ m.weights @ h) - m.hidden_bias @ h - m.visible_bias @ g)


def hidden_conditional(g, m: RBMModel) -> np.ndarray:
    """p(h_j = 1 | g) for one visible vector or a batch (rows)."""
    g = _as_units(g, m.d_visible, "visible")
    return expit(g @ m.weights + m.hidden_bias)


def visible_conditional(h, m: RBMModel) -> np.ndarray:
    """p(g_i = 1 | h) for one hidden vector or a batch (rows)."""
    h = _as_units(h, m.d_hidden, "hidden")
    return expit(h @ m.weights.T + m.visible_bias)


def _bernoulli(p: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return (rng.random(p.shape) < p).astype(float)


def _gibbs_chain(g: np.ndarray, m: RBMModel, steps: int, rng: np.random.Generator) -> np.ndarray:
    for _ in range(steps):
        h = _bernoulli(hidden_conditional(g, m), rng)
        g = _bernoulli(visible_conditional(h, m), rng)
    return g


@dataclass
class TrainingStats:
    """Elementary multiply-add counts of the weight-matrix products."""

    multiply_adds: int = 0
    updates: int = 0


@dataclass
class TrainingDistribution:
    """Multiset of training bitstrings, one row per draw."""

    samples: np.ndarray
    determinants: list[Determinant] = field(default_factory=list)

    def __len__(self) -> int:
        return self.samples.shape[0]

    def distinct(self) -> dict[Determinant, int]:
        out: dict[Determinant, int] = {}
        for d in self.determinants:
            out[d] = out.get(d, 0) + 1
        return out


def _samples(data) -> np.ndarray:
    x = data.samples if isinstance(data, TrainingDistribution) else data
    return np.asarray(x, dtype=float)


def cd_gradient(m: RBMModel, batch: np.ndarray, k_gibbs: int, rng: np.random.Generator,
                stats: TrainingStats | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """CD-k estimate of the log-likelihood gradient (dW, du, dy) over a batch.

    The positive phase uses hidden probabilities on the data; the negative
    phase runs ``k_gibbs`` sampled sweeps from the data and again uses hidden
    probabilities at the chain end.
    """
    g0 = np.asarray(batch, dtype=float)
    ph0 = hidden_conditional(g0, m)
    gk = _gibbs_chain(g0, m, k_gibbs, rng)
    phk = hidden_conditional(gk, m)
    n = g0.shape[0]
    dw = (g0.T @ ph0 - gk.T @ phk) / n
    du = (g0 - gk).mean(axis=0)
    dy = (ph0 - phk).mean(axis=0)
    if stats is not None:
        # two products per sweep plus the two phase products and the outer products
        stats.multiply_adds += n * m.d_visible * m.d_hidden * (2 * k_gibbs + 4)
    return dw, du, dy


def cd_train(m: RBMModel, data, epochs: int = 3, k_gibbs: int = 20, lr: float = 0.001,
             batch_size: int = 10, rng: np.random.Generator | None = None,
             stats: TrainingStats | None = None) -> RBMModel:
    """Minibatch CD-k; returns a new model and leaves ``m`` untouched.

    Each epoch visits the training rows in a fresh random order. Without an
    explicit ``rng`` the stream is seeded from ``m.rng_seed``.
    """
    x = _samples(data)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("training data is empty")
    if x.shape[1] != m.d_visible:
        raise ValueError("training bitstrings do not match the visible layer")
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    rng = np.random.default_rng(m.rng_seed) if rng is None else rng
    out = m.copy()
    for _ in range(epochs):
        order = rng.permutation(x.shape[0])
        for start in range(0, len(order), batch_size):
            batch = x[order[start:start + batch_size]]
            dw, du, dy = cd_gradient(out, batch, k_gibbs, rng, stats)
            out.weights += lr * dw
            out.visible_bias += lr * du
            out.hidden_bias += lr * dy
            if stats is not None:
                stats.updates += 1
        out.check_finite()
    return out


def gibbs_generate(m: RBMModel, seeds, steps: int = 1,
                   rng: np.random.Generator | None = None) -> np.ndarray:
    """Run ``steps`` alternating sweeps from every seed row; 0 steps is the identity."""
    g = np.asarray(seeds)
    if g.ndim != 2 or g.shape[0] == 0:
        raise ValueError("seeds must be a non-empty (N, D) array")
    if steps == 0:
        return g.astype(np.uint8)
    rng = np.random.default_rng(m.rng_seed) if rng is None else rng
    return _gibbs_chain(_as_units(g, m.d_visible, "visible"), m, steps, rng).astype(np.uint8)


class EmptyTrainingSetError(ValueError):
    pass


def build_training_distribution(
    v: CIVector,
    c: ConfigurationSet,
    eps_coeff: float,
    target_size: int = 4000,
    reference: Determinant | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[TrainingDistribution, list[Determinant]]:
    """Multinomial draws with probability proportional to |c_mu| above ``eps_coeff``.

    Returns the training multiset and the sorted list of sub-threshold
    determinants (candidates for the blacklist). The reference determinant is
    never drawn and never reported as sub-threshold.
    """
    coeffs = np.abs(np.asarray(v.coefficients, dtype=float))
    dets = c.determinants
    if len(coeffs) != len(dets):
        raise ValueError("CI vector is not aligned with the configuration set")
    reference = c.basis.reference if reference is None else reference
    keep = coeffs > eps_coeff
    below = sorted(d for d, k in zip(dets, keep) if not k and d != reference)
    idx = [i for i, (d, k) in enumerate(zip(dets, keep)) if k and d != reference]
    if not idx:
        raise EmptyTrainingSetError("no non-reference configuration exceeds eps_coeff")
    weights = coeffs[idx] / coeffs[idx].sum()
    rng = np.random.default_rng(0) if rng is None else rng
    counts = rng.multinomial(target_size, weights)
    chosen = [dets[i] for i, n in zip(idx, counts) for _ in range(n)]
    samples = determinants_to_bits(chosen, c.basis)
    return TrainingDistribution(samples, chosen), below


@dataclass
class GenerationResult:
    configurations: ConfigurationSet
    shortfall: int
    n_valid: int
    n_proposed: int

    @property
    def acceptance(self) -> float:
        return self.n_valid / self.n_proposed if self.n_proposed else 0.0


def _in_sector(bits: np.ndarray, basis: OrbitalBasis) -> np.ndarray:
    n = basis.n_spatial
    return (bits[:, :n].sum(axis=1) == basis.n_alpha) & (bits[:, n:].sum(axis=1) == basis.n_beta)


def symmetry_constrained_generate(
    m: RBMModel,
    basis: OrbitalBasis,
    n_gen: int,
    rng: np.random.Generator | None = None,
    steps: int = 1,
    retry_cap: int = 10,
    pool: Callable[[OrbitalBasis, int, np.random.Generator], np.ndarray] = random_sector_bits,
) -> GenerationResult:
    """Gibbs-sample from sector seeds and keep only sector-conserving outputs.

    Rejected slots are re-seeded and re-sampled for at most ``retry_cap``
    extra rounds; unfilled slots are reported as ``shortfall``. Duplicate
    outputs collapse in the returned set, so its size may be below the
    number of valid draws.
    """
    if n_gen < 1:
        raise ValueError("n_gen must be at least 1")
    if m.d_visible != basis.n_spin_orbitals:
        raise ValueError("visible layer does not match the spin-orbital count")
    rng = np.random.default_rng(m.rng_seed) if rng is None else rng
    accepted = []
    missing = n_gen
    proposed = 0
    for _ in range(retry_cap + 1):
        if missing == 0:
            break
        out = gibbs_generate(m, pool(basis, missing, rng), steps, rng)
        proposed += missing
        ok = out[_in_sector(out, basis)]
        accepted.append(ok)
        missing -= ok.shape[0]
    bits = np.concatenate(accepted) if accepted else np.zeros((0, m.d_visible), np.uint8)
    dets = bits_to_determinants(bits, basis) if len(bits) else []
    freq: dict[Determinant, int] = {}
    for d in dets:
        freq[d] = freq.get(d, 0) + 1
    configs = ConfigurationSet(basis, freq, provenance="generated", frequencies=freq)
    return GenerationResult(configs, missing, len(dets), proposed)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(m: RBMModel, target: str | os.PathLike | TextIO) -> None:
    """Text layout: magic line, ``D J seed``, then u, y and the D rows of W.

    Floats are written with 17 significant digits so a reload is bit-exact.
    """
    lines = [CHECKPOINT_MAGIC, f"{m.d_visible} {m.d_hidden} {m.rng_seed}"]
    fmt = lambda row: " ".join(f"{x:.17g}" for x in row)  # noqa: E731
    lines.append(fmt(m.visible_bias))
    lines.append(fmt(m.hidden_bias))
    lines.extend(fmt(row) for row in m.weights)
    text = "\n".join(lines) + "\n"
    if isinstance(target, (str, os.PathLike)):
        with open(target, "w") as fh:
            fh.write(text)
    else:
        target.write(text)


def load_checkpoint(source: str | os.PathLike | TextIO) -> RBMModel:
    if isinstance(source, (str, os.PathLike)):
        with open(source) as fh:
            text = fh.read()
    else:
        text = source.read()
    lines = text.splitlines()
    if not lines or lines[0].strip() != CHECKPOINT_MAGIC:
        raise ValueError("not an RBM checkpoint")
    try:
        d, j, seed = (int(x) for x in lines[1].split())
        u = np.array(lines[2].split(), dtype=float)
        y = np.array(lines[3].split(), dtype=float)
        w = np.array([row.split() for row in lines[4:4 + d]], dtype=float)
    except (ValueError, IndexError) as exc:
        raise ValueError(f"malformed RBM checkpoint: {exc}") from exc
    if w.shape != (d, j):
        raise ValueError("malformed RBM checkpoint: weight matrix shape")
    return RBMModel(w, u, y, seed)

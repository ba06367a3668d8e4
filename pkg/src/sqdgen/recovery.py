"""Self-consistent configuration recovery.

Each macro cycle diagonalizes the current subspace, moves configurations
whose CI coefficient magnitude falls to ``eps_coeff`` or below onto a
permanent blacklist, trains the RBM on the survivors (micro cycle), generates
new sector-conserving configurations, screens them against the blacklist and
grows the subspace. The loop stops when the energy change between successive
diagonalizations drops below ``eps_e``, when two consecutive cycles add no new
configuration, or after ``max_macro`` cycles.
"""

from __future__ import annotations

import bisect
import csv
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable

import numpy as np
from scipy.stats import gaussian_kde

from .fermion import (
    ConfigurationSet,
    Determinant,
    OrbitalBasis,
    bits_to_determinants,
    determinant_to_bitstring,
    random_sector_bits,
    symmetry_space_dimension,
)
from .hamiltonian import CIVector, ground_state
from .integrals import IntegralSet
from .rbm import (
    RBMModel,
    build_training_distribution,
    cd_train,
    init_model,
    save_checkpoint,
    symmetry_constrained_generate,
)
from .seeds import derive_rng, derive_seed

CHEMICAL_ACCURACY = 1.6e-3


@dataclass
class RecoveryConfig:
    eps_coeff: float = 1e-10
    eps_e: float = 1e-5
    x_percent: float = 2.0
    min_generate: int = 8
    epochs: int = 3
    k_gibbs: int = 20
    lr: float = 0.001
    batch_size: int = 10
    target_size: int = 4000
    gibbs_steps: int = 1
    retry_cap: int = 10
    max_macro: int = 100
    idle_limit: int = 2
    warm_start: bool = True
    davidson_tol: float = 1e-8
    seed: int = 0
    reference_energy: float | None = None

    def n_generate(self, basis: OrbitalBasis) -> int:
        d_q = symmetry_space_dimension(basis)
        return max(self.min_generate, math.ceil(self.x_percent * d_q / 100.0))


class Blacklist:
    """Sorted determinant list with binary-search membership."""

    def __init__(self, dets: Iterable[Determinant] = ()):
        self._items: list[Determinant] = sorted(set(dets))

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def __contains__(self, d: Determinant) -> bool:
        k = bisect.bisect_left(self._items, d)
        return k < len(self._items) and self._items[k] == d

    def add(self, dets: Iterable[Determinant]) -> None:
        for d in dets:
            k = bisect.bisect_left(self._items, d)
            if k == len(self._items) or self._items[k] != d:
                self._items.insert(k, d)

    def copy(self) -> Blacklist:
        out = Blacklist()
        out._items = list(self._items)
        return out


def blacklist_screen(candidates: ConfigurationSet, blacklist: Blacklist) -> ConfigurationSet:
    """Candidates not on the blacklist, in their original order."""
    if not len(blacklist):
        return candidates
    return candidates.select(d for d in candidates if d not in blacklist)


@dataclass
class CycleRecord:
    macro: int
    energy: float
    n_det: int
    n_dominant: int
    blacklist_size: int
    search_size: int
    n_generated: int
    n_new: int
    shortfall: int
    delta_ref: float | None = None


@dataclass
class RecoveryState:
    subspace: ConfigurationSet
    blacklist: Blacklist = field(default_factory=Blacklist)
    ci: CIVector | None = None
    diagonalized: ConfigurationSet | None = None
    history: list[CycleRecord] = field(default_factory=list)
    searched: set[Determinant] = field(default_factory=set)
    idle_cycles: int = 0

    @property
    def basis(self) -> OrbitalBasis:
        return self.subspace.basis

    @property
    def search_size(self) -> int:
        return len(self.searched)


def initialize_state(hardware: ConfigurationSet, perturbative: ConfigurationSet) -> RecoveryState:
    """Ordered union of both supports with the reference determinant ensured."""
    if hardware.basis != perturbative.basis:
        raise ValueError(f"sector mismatch: {hardware.basis} vs {perturbative.basis}")
    basis = hardware.basis
    subspace = ConfigurationSet(basis, [basis.reference], provenance="reference")
    subspace = subspace.union(hardware, perturbative)
    return RecoveryState(subspace, searched=set(subspace))


Generator = Callable[[RecoveryState, RBMModel, list, int, np.random.Generator], tuple]


def _split(ci: CIVector, configs: ConfigurationSet, eps_coeff: float, reference: Determinant):
    mags = np.abs(ci.coefficients)
    below = [d for d, c in zip(configs, mags) if c <= eps_coeff and d != reference]
    return below


def _cycle(st: RecoveryState, s: IntegralSet, model: RBMModel, cfg: RecoveryConfig,
           generate: Generator) -> tuple[RecoveryState, RBMModel]:
    if not len(st.subspace):
        raise ValueError("subspace is empty")
    basis = st.basis
    ref = basis.reference
    k = len(st.history)
    configs = st.subspace
    ci = ground_state(configs, s, tol=cfg.davidson_tol)
    search_at_diag = len(st.searched | set(configs))

    below = _split(ci, configs, cfg.eps_coeff, ref)
    blacklist = st.blacklist.copy()
    blacklist.add(below)
    dominant = configs.difference(below)
    if not len(dominant):
        raise ValueError("no configuration survives the coefficient filter")

    n_gen = cfg.n_generate(basis)
    model, generated, shortfall = generate(st, model, (ci, configs), n_gen,
                                           derive_rng(cfg.seed, "cycle", k))
    survivors = blacklist_screen(generated, blacklist)
    new = survivors.difference(dominant)
    subspace = dominant.union(new).with_determinant(ref, "reference")

    searched = st.searched | set(configs) | set(generated)
    delta = None if cfg.reference_energy is None else ci.energy - cfg.reference_energy
    record = CycleRecord(
        macro=k,
        energy=ci.energy,
        n_det=len(configs),
        n_dominant=len(dominant),
        blacklist_size=len(blacklist),
        search_size=search_at_diag,
        n_generated=len(generated),
        n_new=len(new),
        shortfall=shortfall,
        delta_ref=delta,
    )
    out = RecoveryState(
        subspace=subspace,
        blacklist=blacklist,
        ci=ci,
        diagonalized=configs,
        history=st.history + [record],
        searched=searched,
        idle_cycles=st.idle_cycles + 1 if len(new) == 0 else 0,
    )
    return out, model


def _rbm_generator(s: IntegralSet, cfg: RecoveryConfig) -> Generator:
    def generate(st, model, diag, n_gen, rng):
        ci, configs = diag
        k = len(st.history)
        if not cfg.warm_start:
            model = init_model(model.d_visible, model.d_hidden, derive_seed(cfg.seed, "rbm", k))
        mags = np.abs(ci.coefficients)
        trainable = any(
            c > cfg.eps_coeff and d != st.basis.reference for d, c in zip(configs, mags)
        )
        if trainable:
            data, _ = build_training_distribution(
                ci, configs, cfg.eps_coeff, cfg.target_size, st.basis.reference, rng
            )
            model = cd_train(model, data, cfg.epochs, cfg.k_gibbs, cfg.lr, cfg.batch_size, rng)
        result = symmetry_constrained_generate(
            model, st.basis, n_gen, rng, cfg.gibbs_steps, cfg.retry_cap
        )
        return model, result.configurations, result.shortfall

    return generate


def _random_generator(st, model, diag, n_gen, rng):
    bits = random_sector_bits(st.basis, n_gen, rng)
    dets = bits_to_determinants(bits, st.basis)
    return model, ConfigurationSet(st.basis, dets, provenance="generated"), 0


def macro_cycle(st: RecoveryState, s: IntegralSet, model: RBMModel, cfg: RecoveryConfig
                ) -> tuple[RecoveryState, RBMModel]:
    return _cycle(st, s, model, cfg, _rbm_generator(s, cfg))


def random_baseline_cycle(st: RecoveryState, s: IntegralSet, cfg: RecoveryConfig
                          ) -> RecoveryState:
    """Same bookkeeping as :func:`macro_cycle` with uniform sector draws."""
    out, _ = _cycle(st, s, None, cfg, _random_generator)
    return out


@dataclass
class RecoveryReport:
    final_energy: float
    converged: bool
    stop_reason: str
    cycles: list[CycleRecord]
    configurations: ConfigurationSet
    ci: CIVector
    d_q: int
    reference_energy: float | None = None
    model: RBMModel | None = None

    @property
    def n_det(self) -> int:
        return len(self.configurations)

    def first_crossing(self, reference: float | None = None,
                       threshold: float = CHEMICAL_ACCURACY) -> CycleRecord | None:
        reference = self.reference_energy if reference is None else reference
        if reference is None:
            raise ValueError("a reference energy is needed to locate the crossing")
        for row in self.cycles:
            if row.energy - reference < threshold:
                return row
        return None

    def histogram(self, bins: int = 40) -> dict:
        """Histogram and Gaussian KDE of log10|c| over the final CI vector."""
        mags = np.abs(self.ci.coefficients)
        logs = np.log10(mags[mags > 0])
        lo, hi = (float(logs.min()), float(logs.max())) if len(logs) else (0.0, 0.0)
        if hi == lo:
            lo, hi = lo - 0.5, hi + 0.5
        counts, edges = np.histogram(logs, bins=bins, range=(lo, hi))
        grid = np.linspace(lo, hi, 200)
        if len(logs) > 1 and np.ptp(logs) > 0:
            density = gaussian_kde(logs)(grid)
        else:
            density = np.zeros_like(grid)
        return {
            "bin_edges": edges.tolist(),
            "counts": counts.tolist(),
            "kde_grid": grid.tolist(),
            "kde_density": density.tolist(),
        }

    def summary(self) -> dict:
        return {
            "final_energy": self.final_energy,
            "converged": self.converged,
            "stop_reason": self.stop_reason,
            "n_cycles": len(self.cycles),
            "n_det": self.n_det,
            "d_q": self.d_q,
            "search_size": self.cycles[-1].search_size if self.cycles else 0,
            "blacklist_size": self.cycles[-1].blacklist_size if self.cycles else 0,
            "reference_energy": self.reference_energy,
            "error_vs_reference": (
                None if self.reference_energy is None
                else self.final_energy - self.reference_energy
            ),
            "provenance": self.configurations.provenance_counts(),
            "histogram": self.histogram(),
        }

    def cycles_csv(self) -> str:
        buf = io.StringIO()
        names = list(CycleRecord.__dataclass_fields__)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(names)
        for row in self.cycles:
            d = asdict(row)
            w.writerow(["" if d[n] is None else (repr(d[n]) if isinstance(d[n], float) else d[n])
                        for n in names])
        return buf.getvalue()

    def coeffs_csv(self) -> str:
        """Final determinants sorted by ascending |c|, with the signed value."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["abs_coefficient", "coefficient", "bitstring", "provenance"])
        basis = self.configurations.basis
        rows = sorted(
            zip(self.ci.coefficients.tolist(), self.configurations.determinants),
            key=lambda t: (abs(t[0]), t[1]),
        )
        for c, d in rows:
            w.writerow([repr(abs(c)), repr(c), determinant_to_bitstring(d, basis),
                        self.configurations.provenance(d)])
        return buf.getvalue()

    def write(self, outdir: str | os.PathLike) -> None:
        os.makedirs(outdir, exist_ok=True)
        with open(os.path.join(outdir, "report.json"), "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(os.path.join(outdir, "cycles.csv"), "w") as fh:
            fh.write(self.cycles_csv())
        with open(os.path.join(outdir, "coeffs.csv"), "w") as fh:
            fh.write(self.coeffs_csv())
        if self.model is not None:
            save_checkpoint(self.model, os.path.join(outdir, "rbm_checkpoint.txt"))


def run_recovery(
    state: RecoveryState,
    s: IntegralSet,
    cfg: RecoveryConfig = RecoveryConfig(),
    model: RBMModel | None = None,
    baseline: bool = False,
    stop_at: float | None = None,
) -> RecoveryReport:
    """Iterate macro cycles to convergence.

    ``baseline`` swaps RBM generation for uniform sector draws. ``stop_at``
    ends the run early once an energy falls below that value (used to locate
    the first chemical-accuracy crossing cheaply).
    """
    basis = state.basis
    if model is None:
        model = init_model(basis.n_spin_orbitals, seed=derive_seed(cfg.seed, "rbm", "init"))
    stop_reason = "max_macro"
    converged = False
    prev = None
    for _ in range(cfg.max_macro):
        if baseline:
            state = random_baseline_cycle(state, s, cfg)
        else:
            state, model = macro_cycle(state, s, model, cfg)
        energy = state.history[-1].energy
        if prev is None and math.isinf(cfg.eps_e):
            stop_reason, converged = "energy", True
            break
        if prev is not None and abs(energy - prev) < cfg.eps_e:
            stop_reason, converged = "energy", True
            break
        if state.idle_cycles >= cfg.idle_limit:
            stop_reason, converged = "no_new_states", True
            break
        if stop_at is not None and energy < stop_at:
            stop_reason = "target"
            break
        prev = energy
    return RecoveryReport(
        final_energy=state.history[-1].energy,
        converged=converged,
        stop_reason=stop_reason,
        cycles=state.history,
        configurations=state.diagonalized,
        ci=state.ci,
        d_q=symmetry_space_dimension(basis),
        reference_energy=cfg.reference_energy,
        model=None if baseline else model,
    )

from __future__ import annotations

import json
import math

import numpy as np
import pytest

from sqdgen import recovery
from sqdgen.fermion import (
    ConfigurationSet,
    Determinant,
    OrbitalBasis,
    enumerate_symmetry_space,
    symmetry_space_dimension,
)
from sqdgen.hamiltonian import subspace_energy_dense
from sqdgen.rbm import GenerationResult, init_model, load_checkpoint
from sqdgen.recovery import (
    Blacklist,
    RecoveryConfig,
    blacklist_screen,
    initialize_state,
    macro_cycle,
    random_baseline_cycle,
    run_recovery,
)
from sqdgen.sampler import NoiseSpec, counts_to_configurations, sample_from_state
from sqdgen.screening import perturbative_support

from conftest import fci, system


def _empty(basis):
    return ConfigurationSet(basis, [], provenance="hardware")


def _hf_only(basis):
    return ConfigurationSet(basis, [basis.reference], provenance="reference")


def _pipeline_state(name, shots=100_000, p=0.01, seed=0, n_max=4):
    s, b = system(name)
    _, v, cs = fci(name)
    k = sample_from_state(v, cs, shots, NoiseSpec(p, seed))
    return s, b, initialize_state(counts_to_configurations(k, b),
                                  perturbative_support(s, b, 1e-10, n_max))


def _run_cycles(state, s, cfg, n_cycles, baseline=False):
    """Step the loop by hand and keep every diagonalized subspace."""
    model = init_model(state.basis.n_spin_orbitals, seed=cfg.seed)
    seen = []
    for _ in range(n_cycles):
        if baseline:
            state = random_baseline_cycle(state, s, cfg)
        else:
            state, model = macro_cycle(state, s, model, cfg)
        seen.append(state)
    return seen


class TestBlacklist:
    def test_membership_and_order(self):
        dets = [Determinant(a, b) for a, b in [(3, 1), (1, 3), (2, 2), (1, 3)]]
        bl = Blacklist(dets)
        assert len(bl) == 3 and list(bl) == sorted(set(dets))
        assert Determinant(2, 2) in bl and Determinant(2, 1) not in bl
        bl.add([Determinant(0, 0), Determinant(2, 2)])
        assert list(bl) == sorted(set(dets) | {Determinant(0, 0)})

    def test_screen_empty_blacklist_identity(self):
        b = OrbitalBasis(4, 2, 2)
        cs = ConfigurationSet(b, list(enumerate_symmetry_space(b))[::-1])
        assert blacklist_screen(cs, Blacklist()) == cs

    def test_screen_subset_empty(self):
        b = OrbitalBasis(4, 2, 2)
        dets = list(enumerate_symmetry_space(b))
        assert len(blacklist_screen(ConfigurationSet(b, dets[:10]), Blacklist(dets))) == 0

    @pytest.mark.parametrize("n_black, n_cand", [(10_000, 10_000), (100_000, 10_000)])
    def test_screen_matches_set_difference(self, n_black, n_cand):
        rng = np.random.default_rng(n_black)
        b = OrbitalBasis(40, 20, 20)
        pool = rng.integers(0, 2**40, size=(n_black + n_cand, 2))
        dets = [Determinant(int(x), int(y)) for x, y in pool]
        black = dets[:n_black]
        cand = ConfigurationSet(b, dets[n_black // 2: n_black // 2 + n_cand])
        got = blacklist_screen(cand, Blacklist(black))
        black_set = set(black)
        assert got.determinants == [d for d in cand if d not in black_set]


class TestInitializeState:
    basis = OrbitalBasis(4, 2, 2)

    def test_disjoint_union(self):
        dets = [self.basis.reference] + [
            d for d in enumerate_symmetry_space(self.basis) if d != self.basis.reference
        ]
        hw = ConfigurationSet(self.basis, dets[:10], provenance="hardware")
        pt = ConfigurationSet(self.basis, dets[10:25], provenance="perturbative")
        st = initialize_state(hw, pt)
        assert len(st.subspace) == 25 and len(st.blacklist) == 0 and st.ci is None

    def test_identical_sets(self):
        dets = list(enumerate_symmetry_space(self.basis))[:8] + [self.basis.reference]
        hw = ConfigurationSet(self.basis, dets, provenance="hardware")
        assert len(initialize_state(hw, hw).subspace) == len(hw)

    def test_reference_added(self):
        st = initialize_state(_empty(self.basis), _empty(self.basis))
        assert st.subspace.determinants == [self.basis.reference]

    def test_sector_mismatch(self):
        with pytest.raises(ValueError):
            initialize_state(_empty(self.basis), _empty(OrbitalBasis(4, 1, 1)))

    def test_pure_classical_mode_runs(self):
        s, b = system("h4")
        st = initialize_state(_empty(b), perturbative_support(s, b, 1e-10, 4))
        rep = run_recovery(st, s, RecoveryConfig(seed=1))
        assert rep.final_energy == pytest.approx(fci("h4")[0], abs=1e-6)


class TestMacroCycle:
    @pytest.mark.parametrize("seed", range(8))
    def test_h2_from_reference(self, seed):
        s, b = system("h2")
        st = initialize_state(_empty(b), _hf_only(b))
        states = _run_cycles(st, s, RecoveryConfig(seed=seed), 3)
        energies = [x.history[-1].energy for x in states]
        assert min(energies) == pytest.approx(fci("h2")[0], abs=1e-8)

    def test_fixed_point_stationary(self):
        s, b = system("h2")
        full = ConfigurationSet(b, enumerate_symmetry_space(b), provenance="perturbative")
        states = _run_cycles(initialize_state(_empty(b), full), s, RecoveryConfig(seed=2), 4)
        later = states[1:]
        assert all(x.history[-1].n_new == 0 for x in later)
        assert len({x.history[-1].energy for x in later}) == 1
        assert len({tuple(x.subspace) for x in later}) == 1

    def test_injected_blacklisted_config_is_screened(self, monkeypatch):
        s, b = system("h2")
        full = ConfigurationSet(b, enumerate_symmetry_space(b), provenance="perturbative")
        st = initialize_state(_empty(b), full)
        cfg = RecoveryConfig(seed=0)
        model = init_model(b.n_spin_orbitals)
        st, model = macro_cycle(st, s, model, cfg)
        assert len(st.blacklist) > 0
        bad = list(st.blacklist)

        def fake(m, basis, n_gen, rng=None, *args, **kwargs):
            cs = ConfigurationSet(basis, bad, provenance="generated")
            return GenerationResult(cs, 0, len(cs), len(cs))

        monkeypatch.setattr(recovery, "symmetry_constrained_generate", fake)
        nxt, _ = macro_cycle(st, s, model, cfg)
        assert not set(bad) & set(nxt.subspace)
        assert nxt.history[-1].n_new == 0

    def test_empty_subspace_rejected(self):
        s, b = system("h2")
        st = recovery.RecoveryState(ConfigurationSet(b))
        with pytest.raises(ValueError):
            macro_cycle(st, s, init_model(4), RecoveryConfig())

    def test_generation_budget(self):
        cfg = RecoveryConfig()
        assert cfg.n_generate(OrbitalBasis(2, 1, 1)) == 8
        assert cfg.n_generate(OrbitalBasis(6, 4, 4)) == 8
        assert cfg.n_generate(OrbitalBasis(8, 5, 5)) == math.ceil(0.02 * 3136)


@pytest.fixture(scope="module")
def h2o_states():
    s, b, st = _pipeline_state("h2o_stretched", shots=2000, p=0.02, seed=3, n_max=2)
    return s, b, _run_cycles(st, s, RecoveryConfig(seed=4), 12)


class TestLoopInvariants:

    def test_blacklist_disjoint_and_no_resurrection(self, h2o_states):
        _, _, states = h2o_states
        for k, x in enumerate(states):
            black = set(x.blacklist)
            assert not black & set(x.subspace)
            for later in states[k + 1:]:
                assert not black & set(later.diagonalized)

    def test_reference_always_present(self, h2o_states):
        _, b, states = h2o_states
        assert all(b.reference in x.diagonalized and b.reference in x.subspace for x in states)

    def test_search_size_non_decreasing(self, h2o_states):
        _, _, states = h2o_states
        sizes = [row.search_size for row in states[-1].history]
        assert sizes == sorted(sizes)
        assert all(x.search_size >= len(set(x.subspace) | set(x.blacklist)) for x in states)

    def test_energy_is_subspace_minimum(self, h2o_states):
        s, _, states = h2o_states
        for x in states:
            assert x.history[-1].energy == pytest.approx(
                subspace_energy_dense(x.diagonalized, s), abs=1e-9
            )

    def test_blacklist_soundness(self):
        s, b, st = _pipeline_state("h4_stretched")
        cfg = RecoveryConfig(seed=1)
        rep = run_recovery(st, s, cfg)
        assert rep.converged
        _, v, cs = fci("h4_stretched")
        big = {d for d, c in zip(cs, v.coefficients) if abs(c) > 100 * cfg.eps_coeff}
        states = _run_cycles(st, s, cfg, len(rep.cycles))
        assert not big & set(states[-1].blacklist)

    def test_deterministic_rerun(self):
        s, _, st = _pipeline_state("lih", shots=5000)
        a = run_recovery(st, s, RecoveryConfig(seed=7))
        b = run_recovery(st, s, RecoveryConfig(seed=7))
        assert a.cycles_csv() == b.cycles_csv() and a.coeffs_csv() == b.coeffs_csv()


class TestRunRecovery:
    def test_h4_pipeline_reaches_fci(self):
        s, _, st = _pipeline_state("h4")
        rep = run_recovery(st, s, RecoveryConfig(seed=0))
        assert rep.converged
        assert abs(rep.final_energy - fci("h4")[0]) < 1e-6

    def test_infinite_energy_threshold_single_cycle(self):
        s, _, st = _pipeline_state("h4")
        rep = run_recovery(st, s, RecoveryConfig(eps_e=math.inf))
        assert len(rep.cycles) == 1 and rep.converged

    def test_stretched_h4_below_full_dimension(self):
        s, b, st = _pipeline_state("h4_stretched")
        rep = run_recovery(st, s, RecoveryConfig(seed=2))
        assert rep.converged and rep.n_det < symmetry_space_dimension(b)
        assert abs(rep.final_energy - fci("h4_stretched")[0]) < 1e-6

    def test_max_macro_flags_non_convergence(self):
        s, b = system("h2o_stretched")
        st = initialize_state(_empty(b), _hf_only(b))
        rep = run_recovery(st, s, RecoveryConfig(seed=0, eps_e=0.0, idle_limit=1000, max_macro=2))
        assert not rep.converged and rep.stop_reason == "max_macro" and len(rep.cycles) == 2

    def test_cold_start_runs(self):
        s, _, st = _pipeline_state("h4", shots=500)
        rep = run_recovery(st, s, RecoveryConfig(seed=0, warm_start=False))
        assert abs(rep.final_energy - fci("h4")[0]) < 1e-6


class TestRandomBaseline:
    def test_full_budget_from_support_reaches_fci(self):
        # starting from the reference alone, dets whose coefficient vanishes in an
        # early partial subspace are blacklisted for good, so start from the support
        s, b = system("h4_stretched")
        cfg = RecoveryConfig(seed=0, x_percent=100.0)
        st = initialize_state(_empty(b), perturbative_support(s, b, 1e-10, 4))
        rep = run_recovery(st, s, cfg, baseline=True)
        assert rep.converged and len(rep.cycles) <= 20
        assert abs(rep.final_energy - fci("h4_stretched")[0]) < 1e-6

    def test_draws_in_sector(self):
        s, b = system("h2o")
        st = initialize_state(_empty(b), _hf_only(b))
        states = _run_cycles(st, s, RecoveryConfig(seed=3), 3, baseline=True)
        assert all(d.in_sector(b) for x in states for d in x.subspace)


class TestReport:
    def test_outputs(self, tmp_path):
        s, _, st = _pipeline_state("h4")
        e0 = fci("h4")[0]
        rep = run_recovery(st, s, RecoveryConfig(seed=0, reference_energy=e0))
        rep.write(tmp_path)
        summary = json.loads((tmp_path / "report.json").read_text())
        assert summary["n_cycles"] == len(rep.cycles)
        assert summary["error_vs_reference"] == pytest.approx(rep.final_energy - e0)
        rows = (tmp_path / "cycles.csv").read_text().splitlines()
        assert len(rows) == len(rep.cycles) + 1
        coeffs = (tmp_path / "coeffs.csv").read_text().splitlines()[1:]
        mags = [float(line.split(",")[0]) for line in coeffs]
        assert mags == sorted(mags) and len(mags) == rep.n_det
        hist = summary["histogram"]
        assert sum(hist["counts"]) == int(np.count_nonzero(rep.ci.coefficients))
        assert len(hist["kde_grid"]) == len(hist["kde_density"])
        model = load_checkpoint(tmp_path / "rbm_checkpoint.txt")
        assert model.parameters_equal(rep.model)

    def test_first_crossing(self):
        s, _, st = _pipeline_state("h4")
        e0 = fci("h4")[0]
        rep = run_recovery(st, s, RecoveryConfig(seed=0, reference_energy=e0))
        row = rep.first_crossing()
        assert row is not None and row.energy - e0 < 1.6e-3
        with pytest.raises(ValueError):
            run_recovery(st, s, RecoveryConfig(seed=0)).first_crossing()

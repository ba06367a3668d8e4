"""Perturbative configuration screening by symbolic index joins.

Doubles come straight from the pruned MP2 amplitudes. Triples and quadruples
are never evaluated numerically: a scatterer (a rank-two operator of net
excitation rank one, patterns v_ij^am and v_ie^ab) is joined with a lower-rank
excitation whenever their contractible index sets intersect in exactly one
value, and only the outer indices of the composition are kept.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .fermion import ConfigurationSet, Determinant, OrbitalBasis
from .integrals import (
    AmplitudeTensor,
    DEGENERATE_DENOMINATOR,
    DegenerateDenominatorError,
    IntegralSet,
    antisymmetrized_block,
    dense_amplitudes,
    mp2_amplitudes,
)

MATCH_RULES = ("exactly_one", "at_least_one")


@dataclass(frozen=True, order=True)
class ExcitationSignature:
    holes: tuple[int, ...]
    particles: tuple[int, ...]

    def __post_init__(self):
        if len(self.holes) != len(self.particles):
            raise ValueError("holes and particles must have equal length")
        if list(self.holes) != sorted(set(self.holes)) or list(self.particles) != sorted(
            set(self.particles)
        ):
            raise ValueError("holes and particles must be strictly increasing")

    @property
    def rank(self) -> int:
        return len(self.holes)

    def apply(self, reference: Determinant, n_spatial: int) -> Determinant:
        mask = reference.spin_orbital_mask(n_spatial)
        for h in self.holes:
            mask ^= 1 << h
        for p in self.particles:
            mask ^= 1 << p
        return Determinant.from_spin_orbital_mask(mask, n_spatial)


def _signature(holes: Iterable[int], particles: Iterable[int], rank: int):
    hs, ps = sorted(set(holes)), sorted(set(particles))
    if len(hs) != rank or len(ps) != rank:
        return None  # Pauli exclusion
    return ExcitationSignature(tuple(hs), tuple(ps))


@dataclass
class ScattererSet:
    """Pruned scatterers.

    ``hole_type`` holds (i, j, a, m) with i < j for |<ij||am>| > eps_int and
    ``particle_type`` holds (i, e, a, b) with a < b for |<ie||ab>| > eps_int.
    The grouped views map the outer indices (i, j, a) resp. (i, a, b) to the
    set of contractible values m resp. e.
    """

    hole_type: list[tuple[int, int, int, int]] = field(default_factory=list)
    particle_type: list[tuple[int, int, int, int]] = field(default_factory=list)
    threshold: float = 0.0

    def __len__(self) -> int:
        return len(self.hole_type) + len(self.particle_type)

    @property
    def hole_groups(self) -> dict[tuple[int, int, int], frozenset[int]]:
        groups: dict[tuple, set] = defaultdict(set)
        for i, j, a, m in self.hole_type:
            groups[(i, j, a)].add(m)
        return {k: frozenset(v) for k, v in sorted(groups.items())}

    @property
    def particle_groups(self) -> dict[tuple[int, int, int], frozenset[int]]:
        groups: dict[tuple, set] = defaultdict(set)
        for i, e, a, b in self.particle_type:
            groups[(i, a, b)].add(e)
        return {k: frozenset(v) for k, v in sorted(groups.items())}


def build_scatterers(s: IntegralSet, basis: OrbitalBasis, eps_int: float) -> ScattererSet:
    """Collect hole- and particle-type scatterers, per spin channel.

    Each channel (alpha-alpha, beta-beta and the two mixed orderings) is
    enumerated from its own spatial block so spin-forbidden tuples are never
    visited.
    """
    n = s.n_spatial
    occ_sp = {0: np.arange(basis.n_alpha), 1: np.arange(basis.n_beta)}
    vir_sp = {0: np.arange(basis.n_alpha, n), 1: np.arange(basis.n_beta, n)}
    hole, particle = [], []
    for s1 in (0, 1):
        for s2 in (0, 1):
            # hole-type <ij||am>: i (s1), j (s2), a and m span the same two spins
            i_so = occ_sp[s1] + s1 * n
            j_so = occ_sp[s2] + s2 * n
            for sa in {s1, s2}:
                sm = s2 if sa == s1 else s1
                if sorted((sa, sm)) != sorted((s1, s2)):
                    continue
                a_so = vir_sp[sa] + sa * n
                m_so = occ_sp[sm] + sm * n
                block = antisymmetrized_block(s, i_so, j_so, a_so, m_so)
                for x, y, z, w in np.argwhere(np.abs(block) > eps_int):
                    i, j = int(i_so[x]), int(j_so[y])
                    if i < j:
                        hole.append((i, j, int(a_so[z]), int(m_so[w])))
            # particle-type <ie||ab>: i (s1), e (s2)
            i_so = occ_sp[s1] + s1 * n
            e_so = vir_sp[s2] + s2 * n
            for sa in {s1, s2}:
                sb = s2 if sa == s1 else s1
                if sorted((sa, sb)) != sorted((s1, s2)):
                    continue
                a_so = vir_sp[sa] + sa * n
                b_so = vir_sp[sb] + sb * n
                block = antisymmetrized_block(s, i_so, e_so, a_so, b_so)
                for x, y, z, w in np.argwhere(np.abs(block) > eps_int):
                    a, b = int(a_so[z]), int(b_so[w])
                    if a < b:
                        particle.append((int(i_so[x]), int(e_so[y]), a, b))
    return ScattererSet(sorted(set(hole)), sorted(set(particle)), eps_int)


def select_doubles(t: AmplitudeTensor) -> list[ExcitationSignature]:
    return sorted(ExcitationSignature((i, j), (a, b)) for i, j, a, b in t.keys())


@dataclass
class JoinCounter:
    """Elementary operation counts of the symbolic joins."""

    triples: int = 0
    quadruples: int = 0


def _join(
    outer_groups: dict[tuple, frozenset[int]],
    inner_groups: dict[tuple, frozenset[int]],
    rule: str,
) -> tuple[list[tuple[tuple, tuple]], int]:
    """Pair outer-index groups whose contractible sets share one value.

    Returns the matched (outer_key, inner_key) pairs and the number of
    elementary index comparisons (one per scatterer-element / inner-element
    pair probed through the contractible-value index).
    """
    by_value: dict[int, list[tuple]] = defaultdict(list)
    for key, values in inner_groups.items():
        for e in values:
            by_value[e].append(key)
    ops = 0
    pairs = []
    for okey, ovalues in outer_groups.items():
        shared: dict[tuple, int] = defaultdict(int)
        for e in sorted(ovalues):
            bucket = by_value.get(e, ())
            ops += len(bucket)
            for ikey in bucket:
                shared[ikey] += 1
        for ikey, count in shared.items():
            if count == 1 or (rule == "at_least_one" and count > 1):
                pairs.append((okey, ikey))
    return pairs, ops


def _double_groups(doubles: Iterable[ExcitationSignature]):
    """Views of the doubles with one hole (resp. one particle) left open."""
    by_hole: dict[tuple, set] = defaultdict(set)
    by_particle: dict[tuple, set] = defaultdict(set)
    for d in doubles:
        (m, k), (b, c) = d.holes, d.particles
        by_hole[(k, b, c)].add(m)
        by_hole[(m, b, c)].add(k)
        by_particle[(m, k, c)].add(b)
        by_particle[(m, k, b)].add(c)
    return (
        {k: frozenset(v) for k, v in sorted(by_hole.items())},
        {k: frozenset(v) for k, v in sorted(by_particle.items())},
    )


def _compose_triples(sc: ScattererSet, doubles, rule: str):
    by_hole, by_particle = _double_groups(doubles)
    out = set()
    pairs, ops_h = _join(sc.hole_groups, by_hole, rule)
    for (i, j, a), (k, b, c) in pairs:
        sig = _signature((i, j, k), (a, b, c), 3)
        if sig is not None:
            out.add(sig)
    pairs, ops_p = _join(sc.particle_groups, by_particle, rule)
    for (i, a, b), (j, k, c) in pairs:
        sig = _signature((i, j, k), (a, b, c), 3)
        if sig is not None:
            out.add(sig)
    return out, ops_h + ops_p


def select_triples_symbolic(
    sc: ScattererSet,
    doubles: Iterable[ExcitationSignature],
    rule: str = "exactly_one",
    counter: JoinCounter | None = None,
) -> list[ExcitationSignature]:
    """Rank-3 signatures reachable by one scatterer acting on a selected double.

    Covers both shapes v_ij^am t_mk^bc (contracted hole m) and
    v_ie^ab t_jk^ec (contracted particle e).
    """
    if rule not in MATCH_RULES:
        raise ValueError(f"unknown match rule {rule!r}")
    triples, ops = _compose_triples(sc, list(doubles), rule)
    if counter is not None:
        counter.triples += ops
    return sorted(triples)


def select_quadruples_symbolic(
    sc: ScattererSet,
    doubles: Iterable[ExcitationSignature],
    rule: str = "exactly_one",
    counter: JoinCounter | None = None,
) -> list[ExcitationSignature]:
    """Rank-4 signatures from a scatterer acting on a scatterer-double intermediate.

    The seven contraction shapes for quadruples all factor as
    S_outer * (S_inner * T)_c, where the bracket is a triple intermediate
    with one index left open for the outer contraction: a hole for the
    hole-type outer scatterer, a particle for the particle-type one.
    """
    if rule not in MATCH_RULES:
        raise ValueError(f"unknown match rule {rule!r}")
    doubles = list(doubles)
    intermediates, ops_x = _compose_triples(sc, doubles, rule)
    open_hole: dict[tuple, set] = defaultdict(set)
    open_particle: dict[tuple, set] = defaultdict(set)
    for x in intermediates:
        for h in x.holes:
            rest = tuple(q for q in x.holes if q != h)
            open_hole[rest + x.particles].add(h)
        for p in x.particles:
            rest = tuple(q for q in x.particles if q != p)
            open_particle[x.holes + rest].add(p)
    open_hole_g = {k: frozenset(v) for k, v in sorted(open_hole.items())}
    open_particle_g = {k: frozenset(v) for k, v in sorted(open_particle.items())}

    out = set()
    pairs, ops_h = _join(sc.hole_groups, open_hole_g, rule)
    for (i, j, a), (k, l, b, c, d) in pairs:
        sig = _signature((i, j, k, l), (a, b, c, d), 4)
        if sig is not None:
            out.add(sig)
    pairs, ops_p = _join(sc.particle_groups, open_particle_g, rule)
    for (i, a, b), (j, k, l, c, d) in pairs:
        sig = _signature((i, j, k, l), (a, b, c, d), 4)
        if sig is not None:
            out.add(sig)
    if counter is not None:
        counter.quadruples += ops_x + ops_h + ops_p
    return sorted(out)


def select_singles(
    s: IntegralSet, basis: OrbitalBasis, t: AmplitudeTensor, eps_int: float
) -> list[ExcitationSignature]:
    """Singles whose second-order measure exceeds eps_int.

    c_i^a = (e_i - e_a)^-1 [sum_{mn,e} <ie||mn> t_mn^ae + sum_{m,ef} <ef||am> t_im^ef]
    """
    occ = basis.occupied_spin_orbitals()
    vir = basis.virtual_spin_orbitals()
    if not occ or not vir:
        return []
    if s.eps is None:
        s = s.with_orbital_energies(basis.n_alpha, basis.n_beta)
    e = s.spin_orbital_energies()
    tt = dense_amplitudes(t, occ, vir)
    g_ovoo = antisymmetrized_block(s, occ, vir, occ, occ)
    g_vvvo = antisymmetrized_block(s, vir, vir, vir, occ)
    numer = np.einsum("iemn,mnae->ia", g_ovoo, tt) + np.einsum("efam,imef->ia", g_vvvo, tt)
    denom = e[occ][:, None] - e[vir][None, :]
    bad = (np.abs(denom) < DEGENERATE_DENOMINATOR) & (np.abs(numer) > eps_int)
    if bad.any():
        x, y = np.argwhere(bad)[0]
        raise DegenerateDenominatorError(
            f"vanishing singles denominator for (i,a)=({occ[x]},{vir[y]})"
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(np.abs(numer) > 0.0, numer / denom, 0.0)
    return sorted(
        ExcitationSignature((occ[x],), (vir[y],)) for x, y in np.argwhere(np.abs(c) > eps_int)
    )


@dataclass
class PerturbativeSelection:
    support: ConfigurationSet
    singles: list[ExcitationSignature]
    doubles: list[ExcitationSignature]
    triples: list[ExcitationSignature]
    quadruples: list[ExcitationSignature]
    scatterers: ScattererSet
    counter: JoinCounter

    def rank_counts(self) -> dict[str, int]:
        return {
            "reference": 1,
            "singles": len(self.singles),
            "doubles": len(self.doubles),
            "triples": len(self.triples),
            "quadruples": len(self.quadruples),
            "total": len(self.support),
        }


def perturbative_selection(
    s: IntegralSet,
    basis: OrbitalBasis,
    eps_int: float = 1e-10,
    n_max: int = 4,
    rule: str = "exactly_one",
) -> PerturbativeSelection:
    if n_max not in (2, 3, 4):
        raise ValueError(f"n_max must be 2, 3 or 4, got {n_max}")
    t = mp2_amplitudes(s, basis, eps_int)
    doubles = select_doubles(t)
    sc = build_scatterers(s, basis, eps_int)
    counter = JoinCounter()
    singles: list = []
    triples: list = []
    quads: list = []
    if n_max >= 3:
        singles = select_singles(s, basis, t, eps_int)
        triples = select_triples_symbolic(sc, doubles, rule, counter)
    if n_max == 4:
        quads = select_quadruples_symbolic(sc, doubles, rule, counter)
    ref = basis.reference
    dets = [ref] + [
        sig.apply(ref, basis.n_spatial) for sig in (*doubles, *singles, *triples, *quads)
    ]
    support = ConfigurationSet(basis, dets, provenance="perturbative")
    return PerturbativeSelection(support, singles, doubles, triples, quads, sc, counter)


def perturbative_support(
    s: IntegralSet, basis: OrbitalBasis, eps_int: float = 1e-10, n_max: int = 4,
    rule: str = "exactly_one",
) -> ConfigurationSet:
    return perturbative_selection(s, basis, eps_int, n_max, rule).support


def operation_count_report(
    sc: ScattererSet,
    doubles: list[ExcitationSignature],
    basis: OrbitalBasis,
    counter: JoinCounter,
) -> dict[str, int | float]:
    """Flat cost record comparing measured join counts with worst-case bounds."""
    n_s, n_d = len(sc), len(doubles)
    n_o = basis.n_alpha + basis.n_beta
    n_v = 2 * basis.n_spatial - n_o
    dense = n_o**3 * n_v**3
    return {
        "n_scatterers": n_s,
        "n_doubles": n_d,
        "triples_ops": counter.triples,
        "quadruples_ops": counter.quadruples,
        "triples_bound": n_s * n_d,
        "quadruples_bound": n_s * n_s * n_d,
        "dense_triples": dense,
        "triples_to_dense": counter.triples / dense if dense else 0.0,
    }

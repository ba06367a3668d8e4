"""Projected Hamiltonians over determinant subspaces and their ground states."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh

from .fermion import (
    ConfigurationSet,
    Determinant,
    OrbitalBasis,
    enumerate_symmetry_space,
    symmetry_space_dimension,
)
from .integrals import IntegralSet, antisymmetrized_block

log = logging.getLogger(__name__)

DEFAULT_FCI_CAP = 20000


class DavidsonError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


def _parity(mask: int, p: int, q: int) -> int:
    """Sign of moving an electron p -> q within one spin string."""
    lo, hi = (p, q) if p < q else (q, p)
    between = mask & (((1 << hi) - 1) ^ ((1 << (lo + 1)) - 1))
    return -1 if between.bit_count() & 1 else 1


def _bit_list(mask: int) -> list[int]:
    out = []
    while mask:
        low = mask & -mask
        out.append(low.bit_length() - 1)
        mask ^= low
    return out


def _diagonal(a: Determinant, s: IntegralSet) -> float:
    occ_a = _bit_list(a.alpha)
    occ_b = _bit_list(a.beta)
    h, v = s.h, s.v
    e = sum(h[p, p] for p in occ_a) + sum(h[p, p] for p in occ_b)
    for occ in (occ_a, occ_b):
        for x, p in enumerate(occ):
            for q in occ[:x]:
                e += v[p, p, q, q] - v[p, q, q, p]
    for p in occ_a:
        for q in occ_b:
            e += v[p, p, q, q]
    return float(e)


def _single(mask_same: int, mask_other: int, p: int, q: int, s: IntegralSet) -> float:
    """<...q...|H|...p...> for p -> q in one spin channel, without the sign."""
    v = s.v
    val = s.h[p, q]
    for k in _bit_list(mask_same):
        val += v[p, q, k, k] - v[p, k, k, q]
    for k in _bit_list(mask_other):
        val += v[p, q, k, k]
    return float(val)


def slater_condon_element(a: Determinant, b: Determinant, s: IntegralSet) -> float:
    """<a|H|b> (electronic part, without the core energy)."""
    if (
        a.alpha.bit_count() != b.alpha.bit_count()
        or a.beta.bit_count() != b.beta.bit_count()
    ):
        raise ValueError("determinants belong to different particle sectors")
    da = a.alpha ^ b.alpha
    db = a.beta ^ b.beta
    na, nb = da.bit_count() // 2, db.bit_count() // 2
    rank = na + nb
    if rank == 0:
        return _diagonal(a, s)
    if rank > 2:
        return 0.0
    v = s.v
    if rank == 1:
        if na == 1:
            p = (b.alpha & da).bit_length() - 1
            q = (a.alpha & da).bit_length() - 1
            return _parity(b.alpha, p, q) * _single(b.alpha, b.beta, p, q, s)
        p = (b.beta & db).bit_length() - 1
        q = (a.beta & db).bit_length() - 1
        return _parity(b.beta, p, q) * _single(b.beta, b.alpha, p, q, s)
    if na == 1 and nb == 1:
        p = (b.alpha & da).bit_length() - 1
        r = (a.alpha & da).bit_length() - 1
        q = (b.beta & db).bit_length() - 1
        t = (a.beta & db).bit_length() - 1
        sign = _parity(b.alpha, p, r) * _parity(b.beta, q, t)
        return float(sign * v[p, r, q, t])
    if na == 2:
        src, dst, diff = b.alpha, a.alpha, da
    else:
        src, dst, diff = b.beta, a.beta, db
    p, q = _bit_list(src & diff)
    r, t = _bit_list(dst & diff)
    sign = _parity(src, p, r)
    mid = src ^ (1 << p) ^ (1 << r)
    sign *= _parity(mid, q, t)
    return float(sign * (v[p, r, q, t] - v[p, t, q, r]))


@dataclass
class CIVector:
    coefficients: np.ndarray
    energy: float
    residual: float = 0.0
    iterations: int = 0
    near_degenerate: bool = False

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)


@dataclass
class SparseSubspaceHamiltonian:
    """Symmetric CSR matrix over ``basis_order`` with the core energy on the diagonal."""

    matrix: sp.csr_matrix
    diagonal: np.ndarray
    basis_order: list[Determinant]

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def row(self, i: int) -> list[tuple[int, float]]:
        start, stop = self.matrix.indptr[i], self.matrix.indptr[i + 1]
        return list(zip(self.matrix.indices[start:stop].tolist(),
                        self.matrix.data[start:stop].tolist()))

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def dump(self, path) -> None:
        """Coordinate text dump, one ``i j value`` line per stored entry."""
        coo = self.matrix.tocoo()
        with open(path, "w") as fh:
            for i, j, x in sorted(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist())):
                fh.write(f"{i} {j} {x!r}\n")


def project_hamiltonian(c: ConfigurationSet, s: IntegralSet) -> SparseSubspaceHamiltonian:
    dets = c.determinants
    n = len(dets)
    if n == 0:
        raise ValueError("cannot project onto an empty configuration set")
    alpha = np.array([d.alpha for d in dets], dtype=np.uint64)
    beta = np.array([d.beta for d in dets], dtype=np.uint64)
    rows, cols, vals = [], [], []
    diag = np.empty(n)
    for i, di in enumerate(dets):
        diag[i] = _diagonal(di, s) + s.e_core
        if i + 1 == n:
            break
        xor = np.bitwise_count(alpha[i + 1:] ^ alpha[i]) + np.bitwise_count(beta[i + 1:] ^ beta[i])
        for j in (np.nonzero(xor <= 4)[0] + i + 1).tolist():
            x = slater_condon_element(di, dets[j], s)
            if x != 0.0:
                rows += [i, j]
                cols += [j, i]
                vals += [x, x]
    rows += range(n)
    cols += range(n)
    vals += diag.tolist()
    m = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    m.sort_indices()
    return SparseSubspaceHamiltonian(m, diag, dets)


def davidson_ground_state(
    h: SparseSubspaceHamiltonian,
    guess: CIVector | None = None,
    tol: float = 1e-8,
    max_iter: int = 200,
    max_subspace: int = 40,
) -> CIVector:
    """Lowest eigenpair by Davidson iteration with a diagonal preconditioner.

    ``tol`` bounds the residual norm ||Hx - Ex||. The default start vector is
    the unit vector on the lowest diagonal element.
    """
    n = h.dimension
    a = h.matrix
    diag = h.diagonal
    if n == 1:
        return CIVector(np.ones(1), float(diag[0]))
    if guess is not None:
        x = np.array(guess.coefficients, dtype=float)
        if x.shape != (n,):
            raise ValueError("guess vector does not match the Hamiltonian dimension")
        x /= np.linalg.norm(x)
    else:
        x = np.zeros(n)
        x[int(np.argmin(diag))] = 1.0

    V = x[:, None]
    AV = (a @ x)[:, None]
    residual = np.inf
    for it in range(max_iter):
        T = V.T @ AV
        T = 0.5 * (T + T.T)
        theta, y = np.linalg.eigh(T)
        x = V @ y[:, 0]
        ax = AV @ y[:, 0]
        r = ax - theta[0] * x
        residual = float(np.linalg.norm(r))
        if residual <= tol:
            gap = theta[1] - theta[0] if len(theta) > 1 else np.inf
            return CIVector(x, float(theta[0]), residual, it, bool(gap < 1e-6))
        if V.shape[1] >= min(max_subspace, n):
            # restart on the current Ritz vector and the next one
            keep = y[:, : min(2, y.shape[1])]
            V = V @ keep
            AV = AV @ keep
            V, R = np.linalg.qr(V)
            AV = np.linalg.solve(R.T, AV.T).T
        denom = theta[0] - diag
        denom[np.abs(denom) < 1e-8] = 1e-8
        t = r / denom
        for _ in range(2):
            t -= V @ (V.T @ t)
        norm = np.linalg.norm(t)
        if norm < 1e-12:
            t = r - V @ (V.T @ r)
            norm = np.linalg.norm(t)
            if norm < 1e-14:
                raise DavidsonError("Davidson correction vanished before convergence", residual)
        t /= norm
        V = np.hstack([V, t[:, None]])
        AV = np.hstack([AV, (a @ t)[:, None]])
    raise DavidsonError(
        f"Davidson did not converge in {max_iter} iterations (residual {residual:.3e})",
        residual,
    )


def ground_state(configs: ConfigurationSet, s: IntegralSet, **kwargs) -> CIVector:
    return davidson_ground_state(project_hamiltonian(configs, s), **kwargs)


# ---------------------------------------------------------------------------
# exact reference over the whole sector


def _apply_hamiltonian(state: int, h_so: np.ndarray, g: np.ndarray, m: int):
    """Second-quantized H|state> as {state': amplitude}.

    One-body part: sum_pr h_pr a+_p a_r. Two-body part:
    sum_{p<q, r<s} <pq||rs> a+_p a+_q a_s a_r.
    """
    out: dict[int, float] = {}
    occ = [k for k in range(m) if state >> k & 1]

    def sign(st: int, k: int) -> int:
        return -1 if (st & ((1 << k) - 1)).bit_count() & 1 else 1

    for r in occ:
        s1 = sign(state, r)
        st1 = state ^ (1 << r)
        for p in range(m):
            if st1 >> p & 1 or h_so[p, r] == 0.0:
                continue
            st2 = st1 | (1 << p)
            out[st2] = out.get(st2, 0.0) + s1 * sign(st1, p) * h_so[p, r]
    for x, r in enumerate(occ):
        for t in occ[x + 1:]:
            # a_t a_r |state>
            s1 = sign(state, r)
            st1 = state ^ (1 << r)
            s2 = sign(st1, t)
            st2 = st1 ^ (1 << t)
            empty = [k for k in range(m) if not st2 >> k & 1]
            for y, p in enumerate(empty):
                for q in empty[y + 1:]:
                    val = g[p, q, r, t]
                    if val == 0.0:
                        continue
                    # a+_p a+_q acting on st2: create q first, then p
                    s3 = sign(st2, q)
                    st3 = st2 | (1 << q)
                    s4 = sign(st3, p)
                    st4 = st3 | (1 << p)
                    out[st4] = out.get(st4, 0.0) + s1 * s2 * s3 * s4 * val
    return out


def sector_hamiltonian_by_operators(
    basis: OrbitalBasis, s: IntegralSet, dets: list[Determinant] | None = None
) -> tuple[np.ndarray, list[Determinant]]:
    """Dense H over ``dets`` (default: the whole sector) by explicit operator action.

    Independent of the Slater-Condon route: builds the full spin-orbital
    Hamiltonian and applies creation/annihilation strings to each
    occupation-number state. Includes the core energy on the diagonal.
    """
    n = basis.n_spatial
    m = 2 * n
    if dets is None:
        dets = list(enumerate_symmetry_space(basis))
    so = np.arange(m)
    g = antisymmetrized_block(s, so, so, so, so)
    h_so = np.zeros((m, m))
    h_so[:n, :n] = s.h
    h_so[n:, n:] = s.h
    index = {d.spin_orbital_mask(n): k for k, d in enumerate(dets)}
    dense = np.zeros((len(dets), len(dets)))
    for k, d in enumerate(dets):
        for st, amp in _apply_hamiltonian(d.spin_orbital_mask(n), h_so, g, m).items():
            j = index.get(st)
            if j is not None:
                dense[j, k] += amp
    dense += s.e_core * np.eye(len(dets))
    return dense, dets


def dense_fci_oracle(
    basis: OrbitalBasis, s: IntegralSet, cap: int = DEFAULT_FCI_CAP
) -> tuple[float, CIVector, ConfigurationSet]:
    """Exact lowest eigenpair over the full symmetry space.

    Returns the energy, the CI vector and the (lexicographically ordered)
    configuration set the vector is aligned with.
    """
    dim = symmetry_space_dimension(basis)
    if dim > cap:
        raise ValueError(f"symmetry space dimension {dim} exceeds FCI cap {cap}")
    dense, dets = sector_hamiltonian_by_operators(basis, s)
    if dim <= 3000:
        w, u = np.linalg.eigh(dense)
        e0, c0 = float(w[0]), u[:, 0]
    else:
        w, u = eigsh(sp.csr_matrix(dense), k=1, which="SA", tol=1e-12)
        e0, c0 = float(w[0]), u[:, 0]
    ref = dets.index(basis.reference) if basis.reference in dets else int(np.argmax(np.abs(c0)))
    if c0[ref] < 0:
        c0 = -c0
    configs = ConfigurationSet(basis, dets, provenance="reference")
    return e0, CIVector(c0, e0), configs


def subspace_energy_dense(configs: ConfigurationSet, s: IntegralSet) -> float:
    """Lowest eigenvalue over ``configs`` via the operator route and LAPACK."""
    dense, _ = sector_hamiltonian_by_operators(configs.basis, s, configs.determinants)
    return float(np.linalg.eigvalsh(dense)[0])

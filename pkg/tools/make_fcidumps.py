"""Regenerate the golden FCIDUMP files and reference energies under tests/data.

Needs PySCF, which is not a runtime dependency of the package. Run once:

    python tools/make_fcidumps.py
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from pyscf import ao2mo, fci, gto, mcscf, mp, scf
from pyscf.tools import fcidump

OUT = Path(__file__).resolve().parents[1] / "tests" / "data"


def h2o(scale: float) -> str:
    r = 0.958 * scale
    theta = np.deg2rad(104.4776 / 2)
    return (
        f"O 0 0 0; H 0 {r * np.sin(theta):.10f} {r * np.cos(theta):.10f}; "
        f"H 0 {-r * np.sin(theta):.10f} {r * np.cos(theta):.10f}"
    )


def chain(n: int, spacing: float) -> str:
    return "; ".join(f"H 0 0 {k * spacing:.10f}" for k in range(n))


SYSTEMS = {
    "h2": dict(atom="H 0 0 0; H 0 0 0.74", ncore=0),
    "h4": dict(atom=chain(4, 0.90), ncore=0),
    "h4_stretched": dict(atom=chain(4, 1.80), ncore=0),
    "lih": dict(atom="Li 0 0 0; H 0 0 1.595", ncore=0),
    "h2o": dict(atom=h2o(1.0), ncore=1),
    "h2o_stretched": dict(atom=h2o(2.0), ncore=1),
    "n2": dict(atom="N 0 0 0; N 0 0 1.10", ncore=2),
}


def build(name: str, atom: str, ncore: int) -> dict:
    mol = gto.M(atom=atom, basis="sto-3g", symmetry=True, verbose=0)
    mf = scf.RHF(mol)
    mf.conv_tol = 1e-13
    mf.conv_tol_grad = 1e-9
    mf.max_cycle = 500
    mf.kernel()
    if not mf.converged:
        raise RuntimeError(f"{name}: RHF not converged")
    norb = mol.nao - ncore
    nelec = mol.nelectron - 2 * ncore
    cas = mcscf.CASCI(mf, norb, nelec)
    cas.ncore = ncore
    h1, ecore = cas.get_h1eff()
    eri = ao2mo.restore(1, cas.get_h2eff(), norb)
    orbsym = [int(s) for s in mf.mo_coeff.orbsym[ncore:]] if hasattr(mf.mo_coeff, "orbsym") else None
    fcidump.from_integrals(
        str(OUT / f"{name}.fcidump"), h1, eri, norb, nelec, nuc=ecore, ms=0, tol=1e-15
    )
    e_fci, _ = fci.direct_spin1.kernel(h1, eri, norb, nelec, ecore=ecore, conv_tol=1e-14)
    pt = mp.MP2(mf, frozen=ncore if ncore else None)
    e_mp2, _ = pt.kernel()
    return {
        "norb": norb,
        "nelec": nelec,
        "e_hf": float(mf.e_tot),
        "e_mp2_corr": float(e_mp2),
        "e_fci": float(e_fci),
        "mo_energy": [float(x) for x in mf.mo_energy[ncore:]],
        "orbsym": orbsym,
    }


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    refs = {name: build(name, **spec) for name, spec in SYSTEMS.items()}
    (OUT / "reference.json").write_text(json.dumps(refs, indent=2) + "\n")
    for name, r in refs.items():
        print(f"{name:14s} norb={r['norb']:2d} nelec={r['nelec']:2d} "
              f"HF={r['e_hf']:.10f} MP2c={r['e_mp2_corr']:.10f} FCI={r['e_fci']:.10f}")


if __name__ == "__main__":
    main()

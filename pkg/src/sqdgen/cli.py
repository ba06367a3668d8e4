"""Command-line driver.

Subcommands: ``run`` (full pipeline), ``fci``, ``mp2``, ``sample``,
``support`` and ``report``. Every subcommand accepts ``--config FILE`` plus
per-field overrides; command-line flags win over the file, which wins over
built-in defaults.

Exit codes: 0 success, 2 configuration error, 3 I/O or input-format error,
4 numerical failure, 5 recovery loop not converged (outputs still written).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import fields

import numpy as np

from .config import ConfigError, RunConfig, merge, parse_config, serialize_config
from .fermion import (
    ConfigurationSet,
    OrbitalBasis,
    determinant_to_bitstring,
    excitation_rank,
    symmetry_space_dimension,
)
from .hamiltonian import DavidsonError, dense_fci_oracle
from .integrals import (
    DegenerateDenominatorError,
    FCIDUMPError,
    IntegralSet,
    mp2_amplitudes,
    mp2_energy,
    parse_fcidump,
)
from .recovery import initialize_state, run_recovery
from .sampler import (
    CountsFormatError,
    NoiseSpec,
    counts_to_configurations,
    load_counts,
    sample_from_state,
    save_counts,
)
from .screening import perturbative_selection

log = logging.getLogger("sqdgen")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERICAL, EXIT_NOT_CONVERGED = 0, 2, 3, 4, 5


class InputError(Exception):
    pass


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value configuration file")
    for f in fields(RunConfig):
        if f.name == "cold_start":
            p.add_argument(_flag(f.name), dest=f.name, action="store_const", const="true",
                           default=argparse.SUPPRESS, help="retrain the RBM from scratch each cycle")
        else:
            p.add_argument(_flag(f.name), dest=f.name, default=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sqdgen", description="Configuration recovery for sample-based diagonalization"
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "full pipeline: sample or ingest, filter, support, recovery loop"),
        ("fci", "dense exact diagonalization over the symmetry space"),
        ("mp2", "MP2 correlation energy and amplitude count"),
        ("sample", "simulate measurement counts from the exact ground state"),
        ("support", "perturbative configuration support with per-rank counts"),
    ):
        _add_config_flags(sub.add_parser(name, help=help_text))
    rep = sub.add_parser("report", help="print the summary of a finished run")
    rep.add_argument("directory", help="output directory of a previous run")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        try:
            cfg = parse_config(args.config)
        except OSError as exc:
            raise InputError(f"cannot read config: {exc}") from exc
    overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig) if hasattr(args, f.name)}
    return merge(cfg, overrides).validate()


def _load_system(cfg: RunConfig) -> tuple[IntegralSet, OrbitalBasis]:
    if cfg.fcidump is None:
        raise ConfigError("fcidump is required")
    try:
        s = parse_fcidump(cfg.fcidump)
    except OSError as exc:
        raise InputError(f"cannot read FCIDUMP: {exc}") from exc
    if cfg.n_alpha is not None:
        basis = OrbitalBasis(s.n_spatial, cfg.n_alpha, cfg.n_beta)
    else:
        basis = s.default_basis()
    if s.eps is None and basis.n_alpha == basis.n_beta:
        s = s.with_orbital_energies(basis.n_alpha, basis.n_beta)
    return s, basis


def _simulated_counts(cfg: RunConfig, s: IntegralSet, basis: OrbitalBasis):
    dim = symmetry_space_dimension(basis)
    if dim > cfg.fci_cap:
        raise ConfigError(
            f"simulation needs the exact state but d_Q={dim} exceeds fci_cap={cfg.fci_cap}; "
            "supply a counts file"
        )
    _, v, configs = dense_fci_oracle(basis, s, cfg.fci_cap)
    return sample_from_state(v, configs, cfg.effective_shots,
                             NoiseSpec(cfg.bitflip_p, cfg.sampler_seed()))


def _hardware_set(cfg: RunConfig, s: IntegralSet, basis: OrbitalBasis) -> ConfigurationSet:
    if cfg.counts is not None:
        try:
            k = load_counts(cfg.counts)
        except OSError as exc:
            raise InputError(f"cannot read counts: {exc}") from exc
    elif cfg.effective_shots > 0:
        k = _simulated_counts(cfg, s, basis)
    else:
        return ConfigurationSet(basis, [], provenance="hardware")
    return counts_to_configurations(k, basis)


def _write_text(path: str, text: str) -> None:
    try:
        with open(path, "w") as fh:
            fh.write(text)
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc}") from exc


def cmd_run(cfg: RunConfig) -> int:
    s, basis = _load_system(cfg)
    hardware = _hardware_set(cfg, s, basis)
    support = perturbative_selection(s, basis, cfg.eps_int, cfg.n_max).support
    state = initialize_state(hardware, support)
    log.info("initial subspace %d (hardware %d, perturbative %d)",
             len(state.subspace), len(hardware), len(support))
    report = run_recovery(state, s, cfg.recovery_config())
    try:
        report.write(cfg.output)
    except OSError as exc:
        raise InputError(f"cannot write outputs: {exc}") from exc
    _write_text(os.path.join(cfg.output, "config.txt"), serialize_config(cfg))
    print(f"final energy {report.final_energy!r} after {len(report.cycles)} cycles "
          f"({report.stop_reason}); N_det {report.n_det} of d_Q {report.d_q}")
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def cmd_fci(cfg: RunConfig) -> int:
    s, basis = _load_system(cfg)
    dim = symmetry_space_dimension(basis)
    if dim > cfg.fci_cap:
        raise ConfigError(f"d_Q={dim} exceeds fci_cap={cfg.fci_cap}")
    e0, v, configs = dense_fci_oracle(basis, s, cfg.fci_cap)
    os.makedirs(cfg.output, exist_ok=True)
    _write_text(os.path.join(cfg.output, "fci.json"),
                json.dumps({"energy": e0, "d_q": dim}, indent=2, sort_keys=True) + "\n")
    rows = ["bitstring,coefficient"] + [
        f"{determinant_to_bitstring(d, basis)},{c!r}"
        for d, c in zip(configs, v.coefficients.tolist())
    ]
    _write_text(os.path.join(cfg.output, "fci_vector.csv"), "\n".join(rows) + "\n")
    print(f"FCI energy {e0!r} over d_Q {dim}")
    return EXIT_OK


def cmd_mp2(cfg: RunConfig) -> int:
    s, basis = _load_system(cfg)
    t = mp2_amplitudes(s, basis, cfg.eps_int)
    out = {"mp2_correlation": mp2_energy(t, s), "n_amplitudes": len(t)}
    print(json.dumps(out, sort_keys=True))
    return EXIT_OK


def cmd_sample(cfg: RunConfig) -> int:
    if cfg.counts is not None:
        raise ConfigError("sample simulates counts; do not pass a counts file")
    s, basis = _load_system(cfg)
    k = _simulated_counts(cfg, s, basis)
    os.makedirs(cfg.output, exist_ok=True)
    path = os.path.join(cfg.output, "counts.txt")
    try:
        save_counts(k, path)
    except OSError as exc:
        raise InputError(f"cannot write counts: {exc}") from exc
    print(f"wrote {k.n_shots} shots ({len(k.entries)} distinct) to {path}")
    return EXIT_OK


def cmd_support(cfg: RunConfig) -> int:
    s, basis = _load_system(cfg)
    sel = perturbative_selection(s, basis, cfg.eps_int, cfg.n_max)
    ref = basis.reference
    print(json.dumps(sel.rank_counts(), sort_keys=True))
    for d in sel.support:
        print(determinant_to_bitstring(d, basis), excitation_rank(d, ref))
    return EXIT_OK


def cmd_report(directory: str) -> int:
    try:
        with open(os.path.join(directory, "report.json")) as fh:
            summary = json.load(fh)
        with open(os.path.join(directory, "cycles.csv")) as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise InputError(f"cannot read report: {exc}") from exc
    print(f"{'cycle':>5} {'energy':>20} {'N_det':>7} {'blacklist':>9} {'search':>7} {'new':>5}")
    for r in rows:
        print(f"{r['macro']:>5} {float(r['energy']):>20.12f} {r['n_det']:>7} "
              f"{r['blacklist_size']:>9} {r['search_size']:>7} {r['n_new']:>5}")
    err = summary.get("error_vs_reference")
    tail = "" if err is None else f", error vs reference {err:.3e}"
    print(f"final {summary['final_energy']:.12f} ({summary['stop_reason']}), "
          f"N_det {summary['n_det']} / d_Q {summary['d_q']}{tail}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "fci": cmd_fci, "mp2": cmd_mp2, "sample": cmd_sample,
            "support": cmd_support}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "report":
            return cmd_report(args.directory)
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InputError, FCIDUMPError, CountsFormatError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DavidsonError, DegenerateDenominatorError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

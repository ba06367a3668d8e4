from __future__ import annotations

import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sqdgen.cli import main
from sqdgen.config import (
    ConfigError,
    RunConfig,
    coerce,
    merge,
    parse_config,
    parse_config_text,
    serialize_config,
)
from sqdgen.hamiltonian import dense_fci_oracle
from sqdgen.integrals import mp2_amplitudes, mp2_energy

from conftest import DATA, fci, system

H2 = str(DATA / "h2.fcidump")

positive = st.floats(min_value=1e-12, max_value=1e3, allow_nan=False, allow_infinity=False)


@st.composite
def run_configs(draw):
    return RunConfig(
        fcidump=draw(st.one_of(st.none(), st.sampled_from(["a.fcidump", "dir/b.fcidump"]))),
        eps_int=draw(positive),
        eps_coeff=draw(positive),
        eps_e=draw(positive),
        n_max=draw(st.sampled_from([2, 3, 4])),
        x_percent=draw(positive),
        epochs=draw(st.integers(1, 50)),
        lr=draw(positive),
        shots=draw(st.one_of(st.none(), st.integers(0, 10**6))),
        bitflip_p=draw(st.floats(0.0, 1.0)),
        seed=draw(st.integers(0, 2**31)),
        cold_start=draw(st.booleans()),
        reference_energy=draw(st.one_of(st.none(), st.floats(-200, 0))),
    )


class TestConfigFile:
    @settings(max_examples=100, deadline=None)
    @given(run_configs())
    def test_round_trip(self, cfg):
        assert parse_config_text(serialize_config(cfg)) == cfg

    def test_comments_and_dashes(self):
        cfg = parse_config_text("# header\n\nn-max = 3  # ranks\nlr=0.01\n")
        assert cfg.n_max == 3 and cfg.lr == 0.01

    @pytest.mark.parametrize("text", ["bogus = 1\n", "n_max 3\n", "epochs = two\n",
                                      "cold_start = maybe\n", "eps_e = \n"])
    def test_malformed(self, text):
        with pytest.raises(ConfigError):
            parse_config_text(text)

    def test_file(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("seed = 9\nshots = 50\n")
        cfg = parse_config(path)
        assert cfg.seed == 9 and cfg.shots == 50 and cfg.effective_shots == 50


class TestValidation:
    @pytest.mark.parametrize("overrides", [
        {"eps_int": "0"}, {"eps_e": "-1"}, {"n_max": "5"}, {"bitflip_p": "1.5"},
        {"shots": "-3"}, {"epochs": "0"}, {"n_alpha": "2"}, {"seed": "-1"},
        {"shots": "10", "counts": "k.txt"},
    ])
    def test_rejected(self, overrides):
        with pytest.raises(ConfigError):
            merge(RunConfig(), overrides).validate()

    def test_defaults_valid(self):
        cfg = RunConfig().validate()
        assert cfg.effective_shots == 100_000 and cfg.n_max == 4

    def test_counts_disable_simulation(self):
        assert RunConfig(counts="k.txt").validate().effective_shots == 0

    def test_precedence_flag_over_file_over_default(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("seed = 4\nepochs = 7\n")
        cfg = merge(parse_config(path), {"seed": "11"})
        assert cfg.seed == 11 and cfg.epochs == 7 and cfg.k_gibbs == RunConfig().k_gibbs

    def test_coerce_types(self):
        assert coerce("eps_e", "inf") == math.inf
        assert coerce("cold_start", "yes") is True
        assert coerce("shots", "none") is None

    def test_recovery_seeds_differ_from_sampler(self):
        cfg = RunConfig(seed=3)
        assert cfg.recovery_config().seed != cfg.sampler_seed()
        assert cfg.recovery_config().seed == RunConfig(seed=3).recovery_config().seed


def _run(argv, capsys=None):
    code = main(argv)
    out = capsys.readouterr().out if capsys is not None else ""
    return code, out


class TestCLI:
    def test_run_h2_reaches_fci(self, tmp_path, capsys):
        out = tmp_path / "o"
        code, _ = _run(["run", "--fcidump", H2, "--shots", "2000", "--output", str(out)], capsys)
        assert code == 0
        summary = json.loads((out / "report.json").read_text())
        assert abs(summary["final_energy"] - fci("h2")[0]) < 1e-8
        assert (out / "cycles.csv").exists() and (out / "coeffs.csv").exists()
        assert parse_config(out / "config.txt").shots == 2000

    def test_run_reruns_are_byte_identical(self, tmp_path, capsys):
        dirs = [tmp_path / "a", tmp_path / "b"]
        for d in dirs:
            assert _run(["run", "--fcidump", str(DATA / "h4.fcidump"), "--shots", "3000",
                         "--bitflip-p", "0.02", "--seed", "5", "--output", str(d)], capsys)[0] == 0
        for name in ("report.json", "cycles.csv", "coeffs.csv"):
            assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes()

    def test_missing_fcidump(self, tmp_path, capsys):
        out = tmp_path / "o"
        code, _ = _run(["run", "--fcidump", str(tmp_path / "nope"), "--output", str(out)], capsys)
        assert code == 3 and not out.exists()

    def test_missing_fcidump_key(self, tmp_path, capsys):
        assert _run(["mp2"], capsys)[0] == 2

    def test_config_file_and_flag(self, tmp_path, capsys):
        cfg = tmp_path / "c.txt"
        cfg.write_text(f"fcidump = {H2}\neps_int = 1e-10\n")
        code, out = _run(["mp2", "--config", str(cfg), "--eps-int", "0.5"], capsys)
        assert code == 0 and json.loads(out)["n_amplitudes"] == 0

    def test_bad_config_exit_code(self, tmp_path, capsys):
        assert _run(["run", "--fcidump", H2, "--n-max", "7"], capsys)[0] == 2
        assert _run(["run", "--fcidump", H2, "--shots", "5", "--counts", "k"], capsys)[0] == 2

    def test_mp2(self, capsys):
        code, out = _run(["mp2", "--fcidump", H2], capsys)
        s, b = system("h2")
        want = mp2_energy(mp2_amplitudes(s, b, 1e-10), s)
        assert code == 0 and abs(json.loads(out)["mp2_correlation"] - want) < 1e-8

    def test_fci(self, tmp_path, capsys):
        out = tmp_path / "f"
        assert _run(["fci", "--fcidump", H2, "--output", str(out)], capsys)[0] == 0
        e = json.loads((out / "fci.json").read_text())["energy"]
        assert abs(e - fci("h2")[0]) < 1e-10
        assert len((out / "fci_vector.csv").read_text().splitlines()) == 5

    def test_fci_cap(self, tmp_path, capsys):
        args = ["fci", "--fcidump", str(DATA / "h2o.fcidump"), "--fci-cap", "100",
                "--output", str(tmp_path / "f")]
        assert _run(args, capsys)[0] == 2

    def test_support_zero_integrals(self, tmp_path, capsys):
        path = tmp_path / "zero.fcidump"
        path.write_text("&FCI NORB=4, NELEC=4, MS2=0,\n ORBSYM=1,1,1,1,\n ISYM=1,\n&END\n"
                        " 0.0 0 0 0 0\n")
        code, out = _run(["support", "--fcidump", str(path), "--n-max", "2"], capsys)
        lines = out.splitlines()
        assert code == 0 and json.loads(lines[0])["total"] == 1
        assert lines[1:] == ["11001100 0"]

    def test_sample_then_counts_run(self, tmp_path, capsys):
        h4 = str(DATA / "h4.fcidump")
        sim = tmp_path / "sim"
        assert _run(["sample", "--fcidump", h4, "--shots", "4000", "--bitflip-p", "0.01",
                     "--seed", "2", "--output", str(sim)], capsys)[0] == 0
        a, b = tmp_path / "a", tmp_path / "b"
        assert _run(["run", "--fcidump", h4, "--shots", "4000", "--bitflip-p", "0.01",
                     "--seed", "2", "--output", str(a)], capsys)[0] == 0
        assert _run(["run", "--fcidump", h4, "--counts", str(sim / "counts.txt"),
                     "--seed", "2", "--output", str(b)], capsys)[0] == 0
        ea = json.loads((a / "report.json").read_text())["final_energy"]
        eb = json.loads((b / "report.json").read_text())["final_energy"]
        assert ea == eb

    def test_malformed_counts(self, tmp_path, capsys):
        bad = tmp_path / "k.txt"
        bad.write_text("0101 x\n")
        assert _run(["run", "--fcidump", H2, "--counts", str(bad),
                     "--output", str(tmp_path / "o")], capsys)[0] == 3

    def test_report(self, tmp_path, capsys):
        out = tmp_path / "o"
        e0 = fci("h2")[0]
        _run(["run", "--fcidump", H2, "--shots", "500", "--reference-energy", repr(e0),
              "--output", str(out)], capsys)
        code, text = _run(["report", str(out)], capsys)
        assert code == 0 and "error vs reference" in text
        assert _run(["report", str(tmp_path / "missing")], capsys)[0] == 3

    def test_not_converged_exit(self, tmp_path, capsys):
        args = ["run", "--fcidump", str(DATA / "h2o_stretched.fcidump"), "--shots", "200",
                "--n-max", "2", "--max-macro", "1", "--eps-e", "1e-300",
                "--output", str(tmp_path / "o")]
        code, _ = _run(args, capsys)
        summary = json.loads((tmp_path / "o" / "report.json").read_text())
        assert code == 5 and not summary["converged"]

    def test_oracle_consistency(self):
        s, b = system("h2")
        assert dense_fci_oracle(b, s)[0] == pytest.approx(fci("h2")[0], abs=1e-14)

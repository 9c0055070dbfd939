import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mixneedlets import cli, formats
from mixneedlets.errors import FormatError, InvalidSpectraError
from mixneedlets.harmonics import AlmSet
from mixneedlets.needlet import build_bank, build_filter, level_bandlimit, needlet_analyze
from mixneedlets.sht import make_grid, synthesize
from mixneedlets.stochastic import PowerSpectra, RegularSpectrumModel


class TestAlmFormat:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(-3, 3), st.integers(3, 12), st.integers(0, 2 ** 32 - 1))
    def test_round_trip_is_bit_identical(self, tmp_path_factory, s, L, seed):
        a = AlmSet.random(s, L, np.random.default_rng(seed))
        p = tmp_path_factory.mktemp("alm") / "a.bin"
        formats.write_alm(p, a)
        b = formats.read_alm(p)
        assert (b.spin, b.lmax) == (s, L)
        assert a.flat().tobytes() == b.flat().tobytes()

    def test_layout(self, tmp_path):
        a = AlmSet.single(1, 2, 2, -1, 0.5 - 2j)
        p = formats.write_alm(tmp_path / "a.bin", a)
        raw = p.read_bytes()
        assert raw[:8] == b"NDLALM1\0"
        assert struct.unpack("<iI", raw[8:16]) == (1, 2)
        vals = np.frombuffer(raw[16:], "<f8").reshape(-1, 2)
        assert vals.shape[0] == 3 + 5
        # l = 1 block first (m = -1..1), then l = 2 with m = -1 at position 1
        assert tuple(vals[3 + 1]) == (0.5, -2.0)

    def test_rejects_bad_files(self, tmp_path):
        p = formats.write_alm(tmp_path / "a.bin", AlmSet.zeros(2, 4))
        raw = p.read_bytes()
        (tmp_path / "magic.bin").write_bytes(b"XXXXXXXX" + raw[8:])
        (tmp_path / "short.bin").write_bytes(raw[:-16])
        (tmp_path / "head.bin").write_bytes(raw[:12])
        for name in ("magic.bin", "short.bin", "head.bin", "missing.bin"):
            with pytest.raises(FormatError):
                formats.read_alm(tmp_path / name)


class TestSpectraFormat:
    def test_round_trip(self, tmp_path):
        sp = RegularSpectrumModel().spectra(20)
        p = formats.write_spectra(tmp_path / "s.csv", sp)
        assert p.read_text().splitlines()[0] == "l,C_T,C_E,C_M,C_TE,C_TM"
        back = formats.read_spectra(p)
        for name in ("C_T", "C_E", "C_M", "C_TE", "C_TM"):
            assert np.array_equal(getattr(back, name), getattr(sp, name))

    def test_inadmissible_row_reports_degree(self, tmp_path):
        rows = [[l, 1.0, 1.0, 1.0, 2.0 if l == 4 else 0.1, 0.0] for l in range(8)]
        formats.write_csv(tmp_path / "bad.csv", formats.SPECTRA_HEADER, rows)
        with pytest.raises(InvalidSpectraError) as info:
            formats.read_spectra(tmp_path / "bad.csv")
        assert info.value.l == 4

    def test_malformed(self, tmp_path):
        (tmp_path / "h.csv").write_text("l,T\n0,1\n")
        (tmp_path / "order.csv").write_text("l,C_T,C_E,C_M,C_TE,C_TM\n1,1,1,1,0,0\n")
        (tmp_path / "num.csv").write_text("l,C_T,C_E,C_M,C_TE,C_TM\n0,x,1,1,0,0\n")
        for name in ("h.csv", "order.csv", "num.csv"):
            with pytest.raises(FormatError):
                formats.read_spectra(tmp_path / name)


class TestMapFormat:
    def test_round_trip(self, tmp_path, rng):
        m = synthesize(AlmSet.random(2, 9, rng), make_grid(9))
        back = formats.read_map(formats.write_map(tmp_path / "m.csv", m), 2)
        assert back.grid.bandlimit == 9
        assert np.array_equal(back.values, m.values)

    def test_wrong_row_count(self, tmp_path):
        rows = [[1.0, 0.0, 0.0, 0.0]] * 5
        formats.write_csv(tmp_path / "m.csv", formats.MAP_HEADER, rows)
        with pytest.raises(FormatError):
            formats.read_map(tmp_path / "m.csv", 0)


class TestCoeffArchive:
    def test_level_three_point_count(self, tmp_path, filt, rng):
        bank = build_bank(filt, 2, 3, 3)
        c = needlet_analyze(AlmSet.random(2, 15, rng), bank, "mixed")
        p = formats.write_coeffs(tmp_path / "c.jsonl", c, bank)
        lines = [json.loads(x) for x in p.read_text().splitlines()]
        L3 = level_bandlimit(3, 2, filt)
        assert L3 == 15
        assert lines[0]["levels"] == [{"j": 3, "L": 15, "npoints": 16 * 31}]
        assert lines[1] == {"level": 3, "L": 15, "npoints": 496}
        assert len(lines) == 2 + 496
        assert set(lines[2]) == {"k", "theta", "phi", "lambda", "re", "im"}

    def test_round_trip(self, tmp_path, bank16, rng):
        c = needlet_analyze(AlmSet.random(2, 16, rng), bank16, "spin")
        back, bank = formats.read_coeffs(formats.write_coeffs(tmp_path / "c.jsonl", c, bank16))
        assert (back.kind, back.spin, back.lmax) == ("spin", 2, 16)
        assert bank.js == bank16.js
        for j in c.js:
            assert np.array_equal(back[j], c[j])

    def test_corrupted_archives(self, tmp_path, bank16, rng):
        c = needlet_analyze(AlmSet.random(2, 16, rng), bank16, "mixed")
        lines = formats.write_coeffs(tmp_path / "c.jsonl", c, bank16).read_text().splitlines()
        head = json.loads(lines[0])
        bad_version = dict(head, version=99)
        (tmp_path / "v.jsonl").write_text("\n".join([json.dumps(bad_version)] + lines[1:]))
        (tmp_path / "short.jsonl").write_text("\n".join(lines[:-1]))
        (tmp_path / "extra.jsonl").write_text("\n".join(lines + [lines[-1]]))
        (tmp_path / "fmt.jsonl").write_text(json.dumps({"format": "other"}))
        (tmp_path / "junk.jsonl").write_text("{not json")
        for name in ("v.jsonl", "short.jsonl", "extra.jsonl", "fmt.jsonl", "junk.jsonl"):
            with pytest.raises(FormatError):
                formats.read_coeffs(tmp_path / name)


def run_cli(capsys, *argv):
    code = cli.run([str(a) for a in argv])
    out, err = capsys.readouterr()
    summary = json.loads(out.splitlines()[-1]) if out.strip() else None
    return code, summary, err


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert cli.run(["simulate", "--out", str(out), "--seed", "4",
                    "--set", "lmax=16", "--set", "s=2"]) == 0
    return out


class TestCli:
    def test_usage_on_empty_argv(self, capsys):
        code, _, err = run_cli(capsys)
        assert code == 2 and "usage" in err

    def test_unknown_command_and_keys(self, capsys, tmp_path):
        assert run_cli(capsys, "frobnicate")[0] == 2
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"B": 2.0, "colour": "red"}))
        code, _, err = run_cli(capsys, "filter-table", "--config", cfg, "--out", tmp_path)
        assert code == 2 and "colour" in err
        cfg.write_text(json.dumps({"B": 0.5}))
        assert run_cli(capsys, "filter-table", "--config", cfg, "--out", tmp_path)[0] == 2
        cfg.write_text("[1, 2]")
        assert run_cli(capsys, "filter-table", "--config", cfg, "--out", tmp_path)[0] == 2
        assert run_cli(capsys, "make-bank", "--set", "lmax=1.5", "--out", tmp_path)[0] == 2
        assert run_cli(capsys, "make-bank", "--set", "lmax", "--out", tmp_path)[0] == 2
        assert run_cli(capsys, "analyze", "--set", "alm=/nonexistent.bin", "--out", tmp_path)[0] == 2

    def test_filter_table(self, capsys, tmp_path):
        code, summary, _ = run_cli(capsys, "filter-table", "--out", tmp_path)
        assert code == 0 and summary["status"] == "ok"
        a = np.loadtxt(tmp_path / "filter_table.csv", delimiter=",", skiprows=1)
        assert a.shape == (10000, 4)
        assert a[:, 3].max() < 1e-12
        assert summary["results"]["max_partition_residual"] < 1e-12

    def test_make_bank(self, capsys, tmp_path):
        code, summary, _ = run_cli(capsys, "make-bank", "--set", "lmax=32", "--out", tmp_path)
        assert code == 0
        rows = np.loadtxt(tmp_path / "bank.csv", delimiter=",", skiprows=1)
        assert list(rows[:, 1].astype(int)) == [level_bandlimit(j, 2, build_filter()) for j in rows[:, 0].astype(int)]
        assert summary["results"]["j_max"] == int(rows[-1, 0])

    def test_simulate_outputs(self, simulated):
        for name in ("spectra.csv", "alm_T.bin", "alm_spin.bin", "map_T.csv", "map_spin.csv"):
            assert (simulated / name).is_file()
        assert formats.read_alm(simulated / "alm_spin.bin").spin == 2
        assert formats.read_alm(simulated / "alm_T.bin").spin == 0

    @pytest.mark.parametrize("kind", ["spin", "mixed"])
    def test_analyze_then_synthesize_round_trip(self, capsys, tmp_path, simulated, kind):
        code, summary, _ = run_cli(capsys, "analyze", "--set", f"map={simulated / 'map_spin.csv'}",
                                   "--set", f"kind={kind}", "--out", tmp_path)
        assert code == 0 and summary["results"]["frame_residual"] < 1e-10
        code, summary, _ = run_cli(capsys, "synthesize", "--set", f"coeffs={tmp_path / 'coeffs.jsonl'}",
                                   "--set", f"reference={simulated / 'alm_spin.bin'}", "--out", tmp_path)
        assert code == 0 and summary["results"]["roundtrip_rel_error"] < 1e-8
        assert (tmp_path / "map_out.csv").is_file()
        assert len(summary["inputs"]) == 2

    def test_oracle_flag_agrees(self, capsys, tmp_path, simulated):
        outs = []
        for flag in ([], ["--oracle"]):
            d = tmp_path / ("o" if flag else "f")
            assert run_cli(capsys, "analyze", "--set", f"alm={simulated / 'alm_spin.bin'}",
                           "--out", d, *flag)[0] == 0
            c, _ = formats.read_coeffs(d / "coeffs.jsonl")
            outs.append(c)
        for j in outs[0].js:
            assert np.max(np.abs(outs[0][j] - outs[1][j])) < 1e-12

    def test_besov(self, capsys, tmp_path, simulated):
        code, summary, _ = run_cli(capsys, "besov", "--set", f"alm={simulated / 'alm_spin.bin'}",
                                   "--set", "p=1", "--out", tmp_path)
        assert code == 0
        ratio = np.loadtxt(tmp_path / "besov_levels.csv", delimiter=",", skiprows=1)[:, 3]
        assert np.all((ratio > 0.1) & (ratio < 10))
        assert summary["results"]["besov_norm_spin"] > summary["results"]["lp_norm"]

    def test_estimate(self, capsys, tmp_path, simulated):
        code, _, _ = run_cli(capsys, "estimate", "--set", f"alm={simulated / 'alm_spin.bin'}",
                             "--set", f"alm_T={simulated / 'alm_T.bin'}",
                             "--set", f"spectra={simulated / 'spectra.csv'}", "--out", tmp_path)
        assert code == 0
        text = (tmp_path / "estimate.csv").read_text().splitlines()
        assert text[0] == "j,mode,gamma_hat,mean,var,z"
        assert len(text) > 4

    def test_uncorrelation(self, capsys, tmp_path):
        code, summary, _ = run_cli(capsys, "uncorrelation", "--set", "lmax=128", "--out", tmp_path)
        assert code == 0
        levels = summary["results"]["levels"]
        assert sorted(levels) == ["3", "4", "5", "6"]
        assert all(v["max_scaled"] < 10 for v in levels.values())

    def test_clt(self, capsys, tmp_path):
        code, summary, _ = run_cli(capsys, "clt", "--set", "lmax=16", "--set", "j=2",
                                   "--set", "n_reps=100", "--seed", "3", "--out", tmp_path)
        assert code == 0
        assert np.loadtxt(tmp_path / "clt_samples.csv", delimiter=",", skiprows=1).shape == (100, 3)
        assert abs(summary["results"]["skewness"]) < 1.5
        assert run_cli(capsys, "clt", "--set", "n_reps=10", "--out", tmp_path)[0] == 2

    def test_denoise(self, capsys, tmp_path, simulated):
        code, summary, _ = run_cli(capsys, "denoise", "--set", f"alm={simulated / 'alm_spin.bin'}",
                                   "--out", tmp_path)
        assert code == 0 and summary["results"]["noiseless_rel_error"] < 1e-6
        code, summary, _ = run_cli(capsys, "denoise", "--set", f"observations={tmp_path / 'observations.csv'}",
                                   "--set", "lmax=16", "--set", "c=3", "--set", "t_n=0.01",
                                   "--out", tmp_path / "again")
        assert code == 0
        assert formats.read_alm(tmp_path / "again" / "alm_denoised.bin").spin == 2

    def test_contract_violation_exit_code(self, capsys, tmp_path, simulated):
        code, summary, err = run_cli(capsys, "denoise", "--set", f"alm={simulated / 'alm_spin.bin'}",
                                     "--tolerance", "1e-300", "--out", tmp_path)
        assert code == 3
        assert summary["status"] == "contract-violation" and "exceeds tolerance" in err

    @pytest.mark.parametrize("argv", [
        ["simulate", "--set", "lmax=12"],
        ["analyze", "--set", "alm={sim}/alm_spin.bin"],
        ["denoise", "--set", "alm={sim}/alm_spin.bin", "--set", "noise_sigma=0.05", "--set", "t_n=0.02"],
        ["clt", "--set", "lmax=16", "--set", "j=2", "--set", "n_reps=100"],
    ])
    def test_byte_identical_reruns(self, capsys, tmp_path, simulated, argv):
        argv = [a.replace("{sim}", str(simulated)) for a in argv]
        digests = []
        for rep in range(2):
            d = tmp_path / f"r{rep}"
            assert run_cli(capsys, *argv, "--seed", "17", "--out", d)[0] == 0
            digests.append({p.name: formats.sha256_file(p) for p in sorted(d.iterdir())})
        assert digests[0] == digests[1] and digests[0]


def test_atomic_write_leaves_no_temporaries(tmp_path):
    formats.atomic_write(tmp_path / "x.txt", "hello")
    formats.atomic_write(tmp_path / "x.txt", b"bytes")
    assert [p.name for p in tmp_path.iterdir()] == ["x.txt"]
    assert (tmp_path / "x.txt").read_bytes() == b"bytes"


def test_spectra_flat_helper_writes(tmp_path):
    p = formats.write_spectra(tmp_path / "f.csv", PowerSpectra.flat(3, TE=0.5))
    assert len(p.read_text().splitlines()) == 5

"""Command line: report contents, exit codes and reproducibility."""
import csv
import io
import math
import subprocess
import sys

import pytest

from qnd_lab.cli import EXIT_INPUT, EXIT_NUMERIC, EXIT_OK, fmt, run

R2 = "0.7071067811865476"

VIOLATION = f"""\
system.sigma_x = {R2}
system.sigma_k = {R2}
prep.delta_k = 1
prep.delta_tilde_x = 1
prep.r = -0.4
"""

MINIMAL = f"""\
system.sigma_x = {R2}
system.sigma_k = {R2}
probe_x.delta = 0.5
probe_k.delta = 0.5
"""

SATURATION = MINIMAL + "coupling.ordering = joint\n"

JOINT_CORRELATED = VIOLATION.replace("-0.4", "0.5") + "coupling.ordering = joint\n"


@pytest.fixture
def cfg(tmp_path):
    def write(text, name="s.cfg"):
        path = tmp_path / name
        path.write_text(text)
        return str(path)
    return write


def invoke(capsys, *argv):
    code = run(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def rows(text):
    lines = text.splitlines()
    body = list(csv.reader(io.StringIO("\n".join(lines[1:]))))
    return lines[0], body[0], {r[0]: r[1:] for r in body[1:]}


class TestFormat:
    def test_fmt(self):
        assert fmt(0.243975018237) == "0.24398"
        assert fmt(1.0) == "1.0" and fmt(None) == ""
        assert fmt(float("nan")) == "nan"


class TestPredict:
    def test_violation(self, capsys, cfg):
        code, out, _ = invoke(capsys, "predict", "--config", cfg(VIOLATION))
        assert code == EXIT_OK
        header, cols, r = rows(out)
        assert header == "# qnd-lab,v1,predict"
        assert cols == ["quantity", "value", "status"]
        assert "heisenberg_product,0.24398,violated" in out.splitlines()
        assert float(r["eta2_k_given_x"][0]) == pytest.approx(0.2, abs=1e-5)

    def test_minimal_holds(self, capsys, cfg):
        code, out, _ = invoke(capsys, "predict", "--config", cfg(MINIMAL))
        assert code == EXIT_OK
        assert "heisenberg_product,0.5,holds" in out.splitlines()

    def test_joint_saturation(self, capsys, cfg):
        code, out, _ = invoke(capsys, "predict", "--config", cfg(SATURATION))
        assert code == EXIT_OK
        assert "arthurs_kelly,1.0,holds" in out.splitlines()

    def test_ordering_flag_overrides_config(self, capsys, cfg):
        code, out, _ = invoke(capsys, "predict", "--config", cfg(MINIMAL), "--ordering", "joint")
        assert code == EXIT_OK and "ordering,joint," in out

    def test_reduction_status(self, capsys, cfg):
        text = VIOLATION.replace("-0.4", "-0.9")
        code, out, _ = invoke(capsys, "predict", "--config", cfg(text))
        _, _, r = rows(out)
        assert code == EXIT_OK and r["eta2_k_given_x"][1] == "reduction"

    def test_set_override(self, capsys, cfg):
        code, out, _ = invoke(capsys, "predict", "--config", cfg(VIOLATION), "--set", "prep.r=0")
        assert code == EXIT_OK and "heisenberg_product,0.5,holds" in out.splitlines()

    def test_cauchy_schwarz_exit(self, capsys, cfg):
        code, out, err = invoke(capsys, "predict", "--config", cfg(MINIMAL + "cross.kappa = 2\n"))
        assert code == EXIT_INPUT and out == "" and "cauchy_schwarz_kappa" in err

    def test_unknown_key_exit(self, capsys, cfg):
        code, _, err = invoke(capsys, "predict", "--config", cfg(MINIMAL + "probe_z.delta = 1\n"))
        assert code == EXIT_INPUT and "probe_z.delta" in err and "line 5" in err


class TestOracle:
    @pytest.mark.parametrize("text", [MINIMAL, VIOLATION, JOINT_CORRELATED],
                             ids=["uncorrelated", "correlated", "joint"])
    def test_agreement(self, capsys, cfg, text):
        code, out, _ = invoke(capsys, "oracle", "--config", cfg(text))
        assert code == EXIT_OK
        header, cols, r = rows(out)
        assert header == "# qnd-lab,v1,oracle"
        assert cols == ["quantity", "analytic", "oracle", "rel_deviation", "status"]
        assert float(r["max_rel_deviation"][2]) < 5e-3

    def test_no_interaction(self, capsys, cfg):
        code, out, _ = invoke(capsys, "oracle", "--config", cfg(VIOLATION), "--no-interaction")
        assert code == EXIT_OK
        _, _, r = rows(out)
        assert set(r) == {"var_x", "var_k", "var_j_x", "var_j_k", "max_rel_deviation"}
        assert float(r["max_rel_deviation"][2]) < 1e-6

    def test_under_resolved(self, capsys, cfg):
        code, out, err = invoke(capsys, "oracle", "--config", cfg(MINIMAL), "--grid-n", "16")
        assert code == EXIT_NUMERIC and out == ""
        assert "need n >=" in err

    def test_tolerance_failure_still_reports(self, capsys, cfg, tmp_path):
        out_path = tmp_path / "o.csv"
        code, _, err = invoke(capsys, "oracle", "--config", cfg(VIOLATION),
                              "--tolerance", "1e-20", "--out", str(out_path))
        assert code == EXIT_NUMERIC and "exceeds tolerance" in err
        _, _, r = rows(out_path.read_text())
        assert r["max_rel_deviation"][3] == "fail"


class TestSample:
    def test_violation_large_n(self, capsys, cfg):
        code, out, _ = invoke(capsys, "sample", "--config", cfg(VIOLATION), "--samples", "100000")
        assert code == EXIT_OK
        header, cols, r = rows(out)
        assert header == "# qnd-lab,v1,sample"
        assert cols == ["quantity", "estimate", "stderr", "target"]
        est, se = float(r["epsilon_eta"][0]), float(r["epsilon_eta"][1])
        assert 0.5 - est > 3 * se
        prod, prod_se = float(r["epsilon2_eta2"][0]), float(r["epsilon2_eta2"][1])
        assert abs(prod - 0.25 * 0.2 / 0.84) < 3 * prod_se

    def test_small_n_wider(self, capsys, cfg):
        path = cfg(VIOLATION)
        _, big, _ = invoke(capsys, "sample", "--config", path, "--samples", "100000")
        _, small, _ = invoke(capsys, "sample", "--config", path, "--samples", "1000")
        se_big = float(rows(big)[2]["epsilon2_eta2"][1])
        est, se_small = (float(x) for x in rows(small)[2]["epsilon2_eta2"][:2])
        assert se_small > 5 * se_big
        assert abs(est - 0.25 * 0.2 / 0.84) < 3 * se_small

    def test_byte_identical(self, capsys, cfg, tmp_path):
        path = cfg(VIOLATION + "run.seed = 17\n")
        outs = []
        for name in ("a", "b"):
            p = tmp_path / f"{name}.csv"
            batch = tmp_path / f"{name}_pairs.csv"
            assert run(["sample", "--config", path, "--samples", "5000",
                        "--out", str(p), "--batch-out", str(batch)]) == EXIT_OK
            outs.append((p.read_bytes(), batch.read_bytes()))
        assert outs[0] == outs[1]
        lines = outs[0][1].decode().splitlines()
        assert lines[0] == "index,mu_x,mu_k" and len(lines) == 5001
        _, other, _ = invoke(capsys, "sample", "--config", path, "--samples", "5000", "--seed", "18")
        assert other.encode() != outs[0][0]

    def test_ordering_rejected(self, capsys, cfg):
        code, _, err = invoke(capsys, "sample", "--config", cfg(MINIMAL + "coupling.ordering = kx\n"))
        assert code == EXIT_INPUT and "xk" in err


class TestScan:
    def test_t1_boundaries(self, capsys):
        code, out, _ = invoke(capsys, "scan", "--t-range", "1:1", "--r-range=-0.75:0.25",
                              "--steps", "1,5")
        assert code == EXIT_OK
        header, cols, _ = rows(out)
        assert header == "# qnd-lab,v1,scan"
        assert cols == ["t", "r", "epsilon2", "eta2", "product", "classification"]
        table = list(csv.reader(io.StringIO("\n".join(out.splitlines()[2:]))))
        cls = {float(r[1]): r[5] for r in table}
        assert cls == {-0.75: "reduction", -0.5: "violated", -0.25: "violated",
                       0.0: "holds", 0.25: "holds"}
        at_boundary = next(r for r in table if float(r[1]) == -0.5)
        assert float(at_boundary[4]) == 0.0

    def test_r0_column(self, capsys):
        code, out, _ = invoke(capsys, "scan", "--t-range", "0.25:4", "--r-range=0:0",
                              "--steps", "9,1")
        assert code == EXIT_OK
        table = list(csv.reader(io.StringIO("\n".join(out.splitlines()[2:]))))
        assert len(table) == 9
        assert all(math.isclose(float(r[4]), 0.25, abs_tol=1e-12) for r in table)

    @pytest.mark.parametrize("argv", [
        ("--t-range", "2:1"), ("--r-range=0.5:-0.5",), ("--steps", "0"),
        ("--t-range", "a:b"), ("--steps", "x")])
    def test_bad_ranges(self, capsys, argv):
        code, out, _ = invoke(capsys, "scan", *argv)
        assert code == EXIT_INPUT and out == ""


class TestCheckInstruments:
    def test_dim2(self, capsys):
        code, out, _ = invoke(capsys, "check-instruments")
        assert code == EXIT_OK
        _, _, r = rows(out)
        assert float(r["product"][0]) < 1e-12 and float(r["product"][1]) < 1e-12
        assert float(r["maximally_entangled"][0]) == pytest.approx(0.25, abs=1e-5)
        assert float(r["maximally_entangled"][1]) == pytest.approx(1.0, abs=1e-5)
        assert r["axioms_100_states"][2] == "ok"

    def test_bad_dim(self, capsys):
        assert invoke(capsys, "check-instruments", "--dim", "9")[0] == EXIT_INPUT


class TestArguments:
    def test_missing_file(self, capsys, tmp_path):
        code, _, err = invoke(capsys, "predict", "--config", str(tmp_path / "nope.cfg"))
        assert code == EXIT_INPUT and "cannot read" in err

    @pytest.mark.parametrize("argv", [[], ["frobnicate"], ["predict"],
                                      ["predict", "--config", "x", "--format", "json"]])
    def test_argparse_errors(self, capsys, argv):
        assert invoke(capsys, *argv)[0] == EXIT_INPUT

    def test_bad_set(self, capsys, cfg):
        assert invoke(capsys, "predict", "--config", cfg(MINIMAL), "--set", "oops")[0] == EXIT_INPUT

    def test_out_file(self, capsys, cfg, tmp_path):
        out_path = tmp_path / "p.csv"
        code, out, _ = invoke(capsys, "predict", "--config", cfg(MINIMAL), "--out", str(out_path))
        assert code == EXIT_OK and out == ""
        assert out_path.read_text().startswith("# qnd-lab,v1,predict\n")

    def test_module_entry_point(self, cfg):
        proc = subprocess.run([sys.executable, "-m", "qnd_lab", "predict", "--config", cfg(MINIMAL)],
                              capture_output=True, text=True, check=False)
        assert proc.returncode == 0
        assert "heisenberg_product,0.5,holds" in proc.stdout.splitlines()

import json
import subprocess
import sys

import numpy as np
import pytest

from ielseg import fileio
from ielseg.cli import VARIANTS, build_parser, dispatch
from ielseg.curvemotion import CurveMotionConfig, run_curve_motion_iels
from ielseg.diffusion import DiffusionConfig, apply_iels
from ielseg.field import Field, LabelMask
from ielseg.oracles import concave_brute_force

from fixtures import l_shape


def run(capsys, *argv):
    code = dispatch(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def config_of(err):
    line = next(l for l in err.splitlines() if l.startswith("config: "))
    return json.loads(line[len("config: "):])


def test_usage_errors(capsys):
    assert run(capsys, "evolve", "--mode", "iel", "--pde", "heat", "--bogus", "1", "--in", "a", "--out", "b")[0] == 2
    assert run(capsys, "nosuch")[0] == 2
    assert run(capsys)[0] == 2
    assert run(capsys, "convexity", "--in", "a", "--radii", "5,3", "--out", "b")[0] == 2
    assert run(capsys, "evolve", "--mode", "iel", "--pde", "heat", "--dt", "0", "--in", "a", "--out", "b")[0] == 2
    assert run(capsys, "verify", "--suite", "nope")[0] == 2


def test_help_lists_defaults(capsys):
    parser = build_parser()
    sub = parser._subparsers._group_actions[0].choices
    assert set(sub) == {"gen-data", "inject-noise", "evolve", "convexity", "verify", "train", "eval", "bench-merge"}
    for name, sp in sub.items():
        text = sp.format_help()
        for action in sp._actions:
            if action.option_strings and not action.required and action.default not in (None, "==SUPPRESS=="):
                assert "default:" in (action.help or ""), (name, action.dest)
        assert "usage: ielseg " + name in text
    assert dispatch(["train", "--help"]) == 0
    assert "--preprocess-steps" in capsys.readouterr().out


def test_evolve_heat_matches_library(tmp_path, capsys):
    U = Field(np.random.default_rng(0).standard_normal((2, 12, 10)))
    fileio.write_fld(tmp_path / "in.fld", [U, U])
    code, _, err = run(capsys, "evolve", "--mode", "iel", "--pde", "heat", "--dt", "0.1", "--steps", "20",
                       "--in", str(tmp_path / "in.fld"), "--out", str(tmp_path / "out.fld"))
    assert code == 0
    cfg = config_of(err)
    assert (cfg["mode"], cfg["pde"], cfg["dt"], cfg["steps"]) == ("iel", "heat", 0.1, 20)
    out = fileio.read_fld_records(tmp_path / "out.fld")
    assert len(out) == 2 and out[0] == apply_iels(U, DiffusionConfig(0.1, 20))


def test_evolve_curve_matches_library(tmp_path, capsys):
    f, _ = l_shape()
    U = Field(np.where(f > 0, 1.0, -1.0))
    fileio.write_fld(tmp_path / "in.fld", U)
    code, _, err = run(capsys, "evolve", "--mode", "iel", "--pde", "curve", "--dt", "0.1", "--steps", "20",
                       "--radii", "5,10,15", "--dilation", "3", "--in", str(tmp_path / "in.fld"), "--out", str(tmp_path / "o.fld"))
    assert code == 0 and config_of(err)["radii"] == [5, 10, 15]
    expected = run_curve_motion_iels(U, 0, CurveMotionConfig(0.1, 20, 3, (5, 10, 15)))
    assert fileio.read_fld(tmp_path / "o.fld") == expected
    code, _, _ = run(capsys, "evolve", "--mode", "fel", "--pde", "curve", "--in", str(tmp_path / "in.fld"), "--out", str(tmp_path / "x.fld"))
    assert code == 2
    code, _, _ = run(capsys, "evolve", "--mode", "iel", "--pde", "curve", "--channel", "3",
                     "--in", str(tmp_path / "in.fld"), "--out", str(tmp_path / "x.fld"))
    assert code == 2


def test_convexity_command(tmp_path, capsys):
    f, _ = l_shape()
    fileio.write_pgm(tmp_path / "m.pgm", LabelMask(f * 3, 4))
    code, out, _ = run(capsys, "convexity", "--in", str(tmp_path / "m.pgm"), "--radii", "5,10", "--out", str(tmp_path / "v.pgm"))
    assert code == 0
    got = fileio.read_pgm(tmp_path / "v.pgm").ids.astype(bool)
    assert np.array_equal(got, concave_brute_force(f, [5, 10]))
    assert out.startswith(f"{int(got.sum())} violating pixels")


def test_missing_input_is_failure(tmp_path, capsys):
    code, _, err = run(capsys, "convexity", "--in", str(tmp_path / "nope.pgm"), "--out", str(tmp_path / "o.pgm"))
    assert code == 1 and "FileNotFoundError" in err
    (tmp_path / "bad.fld").write_bytes(b"nonsense")
    code, _, err = run(capsys, "evolve", "--mode", "iel", "--pde", "heat", "--in", str(tmp_path / "bad.fld"), "--out", str(tmp_path / "o"))
    assert code == 1 and "byte 0" in err


def test_verify_exit_codes(capsys, monkeypatch):
    code, out, _ = run(capsys, "verify", "--suite", "energy")
    assert code == 0 and "suite energy: PASS" in out
    from ielseg import verify

    def broken(**kw):
        r = verify.SuiteResult("energy")
        r.add("forced", False)
        return r

    monkeypatch.setitem(verify.SUITE_FUNCS, "energy", broken)
    code, out, _ = run(capsys, "verify", "--suite", "energy")
    assert code == 1 and "[FAIL]" in out


def test_bench_merge_prints_csv(capsys):
    code, out, err = run(capsys, "bench-merge", "--layers", "4", "--size", "16", "--repeats", "3")
    assert code == 0
    header, row = out.strip().splitlines()
    assert header == "layers,dt,size,sequential_s,merged_s,ratio,max_rel_diff"
    assert row.startswith("4,0.1,16,") and float(row.split(",")[-1]) <= 1e-4
    assert config_of(err)["repeats"] == 3


def test_data_pipeline_train_eval(tmp_path, capsys):
    d, dn, out = tmp_path / "d", tmp_path / "dn", tmp_path / "run"
    code, _, err = run(capsys, "gen-data", "--n", "4", "--size", "16", "--seed", "3", "--out", str(d))
    assert code == 0 and config_of(err)["n_val"] is None
    assert (d / "train" / "meta.json").exists() and (d / "val" / "meta.json").exists()
    code, _, _ = run(capsys, "inject-noise", "--in", str(d), "--window", "2", "--fraction", "0.25", "--seed", "1", "--out", str(dn))
    assert code == 0
    assert fileio.load_dataset(dn / "train").noisy_masks is not None
    assert run(capsys, "inject-noise", "--in", str(d / "val"), "--out", str(tmp_path / "x"))[0] == 1
    assert run(capsys, "inject-noise", "--in", str(d), "--fraction", "2", "--out", str(tmp_path / "x"))[0] == 2

    code, stdout, err = run(capsys, "train", "--variant", "iel-heat", "--layers", "3", "--epochs", "2",
                            "--data", str(dn), "--out", str(out))
    assert code == 0
    cfg = config_of(err)
    assert cfg["lr"] == 0.05 and cfg["seed"] == 7 and cfg["batch"] == 4
    rows = fileio.read_metrics_csv(out / "metrics.csv")
    assert [r["split"] for r in rows] == ["val", "val", "val", "train"]
    assert json.loads((out / "variant.json").read_text())["tag"] == "iel_heat"
    first = (out / "metrics.csv").read_bytes()
    assert run(capsys, "train", "--variant", "iel-heat", "--layers", "3", "--epochs", "2",
               "--data", str(dn), "--out", str(out))[0] == 0
    assert (out / "metrics.csv").read_bytes() == first

    code, stdout, _ = run(capsys, "eval", "--params", str(out / "params.fld"), "--data", str(dn))
    assert code == 0
    header, row = stdout.strip().splitlines()
    assert header.startswith("epoch,split,variant") and row.startswith(",val,iel_heat,")
    # eval-mode metrics match the last val row written during training
    assert row.split(",")[3] == f"{rows[2]['dice']:.6f}"


@pytest.mark.parametrize("variant", sorted(VARIANTS))
def test_every_train_variant_runs(tmp_path, capsys, variant):
    d = tmp_path / "d"
    assert run(capsys, "gen-data", "--n", "2", "--n-val", "1", "--size", "8", "--out", str(d))[0] == 0
    code, _, err = run(capsys, "train", "--variant", variant, "--layers", "2", "--epochs", "1",
                       "--radii", "1,2", "--dilation", "1", "--data", str(d), "--out", str(tmp_path / "r"))
    assert code == 0
    if variant in ("grad-loss", "l2"):
        assert config_of(err)["lam"] is None  # resolved default recorded in variant.json
        lam = json.loads((tmp_path / "r" / "variant.json").read_text())["lam"]
        assert lam == {"grad-loss": 1.0, "l2": 0.1}[variant]


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "ielseg", "verify", "--suite", "adjoint"], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert res.stderr.startswith("config: ")

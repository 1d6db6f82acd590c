import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from mlekit import cubeio
from mlekit.cli import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, main
from mlekit.statkit import FAMILY_COLUMNS
from mlekit.synthlab import KINDS


def run(*argv):
    return main([str(a) for a in argv])


def _tree(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def _summary(d):
    return json.loads((d / "summary.json").read_text())


# --- synth and determinism


@pytest.mark.parametrize("kind", KINDS)
def test_synth_byte_identical(tmp_path, kind):
    params = json.dumps({"shape": [32, 32], "frames": 3}) if kind in ("speckle_flow", "vessel_sequence") else "{}"
    for name in ("a", "b"):
        assert run("synth", "--kind", kind, "--seed", 7, "--params", params, "--out-dir", tmp_path / name) == 0
    a, b = _tree(tmp_path / "a"), _tree(tmp_path / "b")
    assert a == b and len(a) >= 3


def test_synth_seed_matters(tmp_path):
    run("synth", "--kind", "speckle_flow", "--seed", 1, "--out-dir", tmp_path / "a")
    run("synth", "--kind", "speckle_flow", "--seed", 2, "--out-dir", tmp_path / "b")
    assert (tmp_path / "a/frames.mlec").read_bytes() != (tmp_path / "b/frames.mlec").read_bytes()


def test_global_flags_before_or_after_subcommand(tmp_path):
    assert run("--out-dir", tmp_path / "a", "--seed", 5, "synth", "--kind", "macbeth") == 0
    assert run("synth", "--kind", "macbeth", "--out-dir", tmp_path / "b", "--seed", 5) == 0
    assert _summary(tmp_path / "a")["seed"] == 5
    assert _tree(tmp_path / "a") == _tree(tmp_path / "b")


def _pipeline(root):
    """Every subcommand once, chained on synthetic data."""
    s = root / "synth"
    codes = [
        run("synth", "--kind", "lambertian_surface", "--seed", 7, "--out-dir", s / "surf"),
        run("pse", "--in", s / "surf", "--out-dir", root / "pse"),
        run("synth", "--kind", "spectral_scene", "--seed", 7, "--params", '{"thb": 1e-5, "noise": 0.01}',
            "--out-dir", s / "spec"),
        run("sto2", "--cube", s / "spec/cube.mlec", "--roi", "16,16,8", "--out-dir", root / "sto2"),
        run("synth", "--kind", "vessel_sequence", "--seed", 7, "--params", '{"frames": 5, "shape": [48, 48]}',
            "--out-dir", s / "vessel"),
        run("lsci", "--frames", s / "vessel/frames.mlec", "--color", s / "vessel/color.mlec", "--temporal", 3,
            "--roi-a", s / "vessel/vessel_mask.mlec", "--roi-b", s / "vessel/background_mask.mlec",
            "--median-display", "--threads", 2, "--out-dir", root / "lsci"),
        run("synth", "--kind", "macbeth", "--params", '{"patch": 8}', "--out-dir", s / "chart"),
        run("render", "wle", "--cube", s / "chart/cube.mlec", "--out-dir", root / "wle"),
        run("render", "nbi", "--cube", s / "chart/cube.mlec", "--out-dir", root / "nbi"),
        run("acqsim", "--frames", 120, "--hexdump", "--seed", 3, "--out-dir", root / "acq"),
    ]
    h, w = 8, 16
    planes = np.full((8, h, w), 0.4)
    planes[5, :, w // 2 :] = 0.7
    from mlekit.imgcore import SpectralCube

    cubeio.save_spectral_cube(root / "two.mlec", SpectralCube(planes, (406, 446, 468, 522, 543, 562, 635, 657)))
    normal = np.zeros((h, w))
    normal[:, : w // 2] = 1
    cubeio.write_cube(root / "normal.mlec", normal)
    cubeio.write_cube(root / "lesion.mlec", 1 - normal)
    codes += [
        run("optimize-se", "--cube", root / "two.mlec", "--normal-mask", root / "normal.mlec", "--lesion-mask",
            root / "lesion.mlec", "--pixels", 20, "--iters", 5, "--out-dir", root / "se"),
        run("render", "se", "--cube", root / "two.mlec", "--response", root / "se/se_response.csv",
            "--out-dir", root / "se_render"),
    ]
    return codes


def test_every_pipeline_reproducible(tmp_path):
    codes_a = _pipeline(tmp_path / "a")
    codes_b = _pipeline(tmp_path / "b")
    assert codes_a == codes_b == [0] * len(codes_a)
    a, b = _tree(tmp_path / "a"), _tree(tmp_path / "b")
    assert a.keys() == b.keys()
    assert [k for k in a if a[k] != b[k]] == []


def test_pipeline_outputs(tmp_path):
    _pipeline(tmp_path)
    assert _summary(tmp_path / "pse")["height_mae_vs_truth"] < 1e-3
    sto2 = _summary(tmp_path / "sto2")
    assert abs(sto2["sto2_mean"] - 0.5) < 0.02
    lines = (tmp_path / "lsci/rms_vs_window.csv").read_text().splitlines()
    assert lines[0] == "window,frames_used,rms_contrast" and len(lines) == 4
    se = _summary(tmp_path / "se")
    assert se["final_de00"] >= se["initial_de00"]
    acq = _summary(tmp_path / "acq")
    assert acq["sync_delay"] == 23 and acq["dropped"] == 0
    hexd = (tmp_path / "acq/packets.hex").read_text().splitlines()
    assert len(hexd) == 120 * 4 and hexd[0].startswith("0000: 00 00 00 00")
    log = list(csv.reader((tmp_path / "acq/acq_log.csv").read_text().splitlines()))
    assert log[0] == ["frame_id", "diode", "pulse_us", "mean_intensity", "dropped"] and len(log) == 121


def test_outputs_stay_in_out_dir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    run("synth", "--kind", "macbeth", "--out-dir", "o")
    assert sorted(p.name for p in tmp_path.iterdir()) == ["o"]


def test_json_summary_on_stdout(tmp_path, capsys):
    assert run("acqsim", "--frames", 60, "--format", "json", "--out-dir", tmp_path) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["command"] == "acqsim" and out == _summary(tmp_path)


# --- statistics


def _rms_table(path):
    rng = np.random.default_rng(0)
    rows = ["sample_id,group,value"]
    base = rng.uniform(0.05, 0.15, 12)
    for g, shift in (("wle_hue", 0.0), ("se_hue", 0.12), ("height", 0.04), ("flow", 0.0)):
        vals = base + shift + rng.normal(0, 0.02, 12)
        rows += [f"s{i},{g},{v:.5f}" for i, v in enumerate(vals)]
    path.write_text("\n".join(rows) + "\n")


def test_stats_family_table(tmp_path):
    _rms_table(tmp_path / "rms.csv")
    assert run("stats", "--table", tmp_path / "rms.csv", "--family", "wle_hue", "--out-dir", tmp_path / "o") == 0
    rows = list(csv.reader((tmp_path / "o/wle_hue_family.csv").read_text().splitlines()))
    assert tuple(rows[0]) == FAMILY_COLUMNS
    assert [r[1] for r in rows[1:]] == ["flow", "height", "se_hue"]
    p_raw = [float(r[8]) for r in rows[1:]]
    p_adj = [float(r[9]) for r in rows[1:]]
    assert all(a >= r - 5e-4 for a, r in zip(p_adj, p_raw))


def test_stats_ancova(tmp_path):
    from mlekit.synthlab import flow_sweep

    with open(tmp_path / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["contrast", "velocity", "exposure"])
        for r in flow_sweep():
            w.writerow([r["k_channel"], r["velocity"], r["exposure"]])
    assert run("stats", "--ancova", tmp_path / "sweep.csv", "--out-dir", tmp_path / "o") == 0
    a = _summary(tmp_path / "o")["ancova"]
    assert (a["df_num"], a["df_den"]) == (5, 48) and a["p"] < 0.001


# --- exit codes


def test_exit_codes(tmp_path):
    assert run("--help") == EXIT_OK
    assert run("nonsense") == EXIT_INVALID
    assert run("synth", "--kind", "teapot") == EXIT_INVALID
    assert run("sto2", "--cube", tmp_path / "missing.mlec", "--out-dir", tmp_path) == EXIT_INVALID
    (tmp_path / "junk.mlec").write_bytes(b"not a cube")
    assert run("sto2", "--cube", tmp_path / "junk.mlec", "--out-dir", tmp_path) == EXIT_INVALID
    (tmp_path / "bad.json").write_text('{"bogus": 1}')
    assert run("acqsim", "--config", tmp_path / "bad.json", "--out-dir", tmp_path) == EXIT_INVALID
    (tmp_path / "neg.json").write_text('{"buffer_depth": 0}')
    assert run("acqsim", "--config", tmp_path / "neg.json", "--out-dir", tmp_path) == EXIT_INVALID
    assert run("stats", "--out-dir", tmp_path) == EXIT_INVALID
    assert run("acqsim", "--threads", 0, "--out-dir", tmp_path) == EXIT_INVALID


def test_runtime_failure_exit_code(tmp_path, monkeypatch):
    import mlekit.cli as cli

    def boom(args):
        raise RuntimeError("solver exploded")

    monkeypatch.setattr(cli, "cmd_acqsim", boom)
    assert run("acqsim", "--out-dir", tmp_path) == EXIT_RUNTIME


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "mlekit.cli", "synth", "--kind", "macbeth", "--format", "json",
                           "--out-dir", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout)["kind"] == "macbeth"

import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from filmrecover import fileio
from filmrecover.cli import main
from filmrecover.imagecore import MapField, Role

SMALL = {"out_h": 128, "out_w": 128, "grid_n": 33,
         "camera": {"footprint_px": [82.0, 92.0], "principal_jitter": 2.0}}


@pytest.fixture(scope="module")
def gen_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen", "--n", "3", "--seed", "7", "--out", str(root / "g"), "--jobs", "1"]) == 0
    return root / "g"


def tree(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_gen_deterministic(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(SMALL))
    for name, jobs in (("g1", "1"), ("g2", "2")):
        assert main(["gen", "--config", str(cfg), "--n", "3", "--seed", "7", "--out", str(tmp_path / name),
                     "--jobs", jobs]) == 0
    assert tree(tmp_path / "g1") == tree(tmp_path / "g2")
    echo = json.loads((tmp_path / "g1" / "run_config.json").read_text())
    assert echo["command"] == "gen" and echo["seed"] == 7 and echo["config"]["out_h"] == 128


def test_gen_zero_and_errors(tmp_path, capsys):
    assert main(["gen", "--n", "0", "--out", str(tmp_path / "z")]) == 0
    assert json.loads((tmp_path / "z" / "manifest.json").read_text())["samples"] == []
    assert main(["gen", "--n", "1", "--out", str(tmp_path / "missing" / "x")]) == 3
    assert str(tmp_path / "missing") in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text('{"warp": {"bogus": 1}}')
    assert main(["gen", "--config", str(bad), "--out", str(tmp_path / "b")]) == 2
    assert main(["gen", "--unknown-flag"]) == 2


def test_dewarp_gt_maps(tmp_path, gen_dir):
    out = tmp_path / "d"
    assert main(["dewarp", str(gen_dir), "--index", "1", "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["psnr"] >= 30.0
    assert (out / "dewarped.png").exists() and (out / "run_config.json").exists()
    assert fileio.read_fmap(out / "backward.fmap").role is Role.BACKWARD
    assert json.loads((out / "backward.json").read_text())["filled_fraction"] == rep["filled_fraction"]
    assert main(["dewarp", str(gen_dir), "--index", "1", "--no-merge", "--out", str(tmp_path / "d2")]) == 0
    assert (out / "dewarped.png").read_bytes() == (tmp_path / "d2" / "dewarped.png").read_bytes()


def test_dewarp_errors(tmp_path, gen_dir, capsys):
    assert main(["dewarp", str(gen_dir), "--uv", str(tmp_path / "nope.fmap"), "--out", str(tmp_path / "o")]) == 2
    assert "nope.fmap" in capsys.readouterr().err
    bad = tmp_path / "bad.fmap"
    raw = bytearray((gen_dir / "0000_uv.fmap").read_bytes())
    raw[:4] = b"JUNK"
    bad.write_bytes(bytes(raw))
    assert main(["dewarp", str(gen_dir), "--uv", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "bad magic" in capsys.readouterr().err


def test_eval_identical_and_shifted(tmp_path, gen_dir, capsys):
    pred = tmp_path / "pred"
    pred.mkdir()
    for i in range(3):
        uv = fileio.read_fmap(gen_dir / f"000{i}_uv.fmap")
        d = uv.data + np.array([3.0 / 178, -2.0 / 178])
        ok = uv.valid & np.all((d >= 0) & (d <= 1), axis=2)
        fileio.write_fmap(pred / f"000{i}_uv.fmap", MapField(np.clip(d, 0, 1), Role.UV, ok))
    same = tmp_path / "same"
    same.mkdir()
    for p in gen_dir.glob("*_uv.fmap"):
        shutil.copy(p, same / p.name)
    assert main(["--json", "eval", str(same), str(gen_dir), "--out", str(tmp_path / "e0")]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["aggregate"]["vs_gt_dewarp"]["psnr"]["median"] == 99.0
    assert rep["aggregate"]["vs_gt_dewarp"]["ssim"]["mean"] == pytest.approx(1.0)
    assert main(["eval", str(pred), str(gen_dir), "--deshift", "map", "--out", str(tmp_path / "e1")]) == 0
    rep = json.loads((tmp_path / "e1" / "metrics.json").read_text())
    for s in rep["samples"]:
        assert s["vs_texture"]["deshifted"]["psnr"] >= s["vs_texture"]["psnr"]
        assert set(s["vs_texture"]) >= {"mode", "psnr", "ssim", "ms_ssim", "filled_fraction"}
    (pred / "0002_uv.fmap").unlink()
    assert main(["eval", str(pred), str(gen_dir), "--out", str(tmp_path / "e2")]) == 2


def test_fit_command(tmp_path, gen_dir):
    cfg = tmp_path / "fit.json"
    truth = json.loads((gen_dir / "0000_meta.json").read_text())["params"]["curl"]
    cfg.write_text(json.dumps({"free": ["curl"], "init": {"curl": truth * 0.5}}))
    assert main(["fit", str(gen_dir), "--config", str(cfg), "--out", str(tmp_path / "f")]) == 0
    res = json.loads((tmp_path / "f" / "fit_result.json").read_text())
    trace = [v for _, v in res["loss_trace"]]
    assert all(b <= a for a, b in zip(trace, trace[1:]))
    assert abs(res["values"][0] - truth) <= 0.05 * abs(truth)
    assert (tmp_path / "f" / "fitted_dewarp.png").exists()
    cfg.write_text(json.dumps({"free": ["curl"], "nope": 1}))
    assert main(["fit", str(gen_dir), "--config", str(cfg), "--out", str(tmp_path / "f2")]) == 2


def test_restore_command(tmp_path, gen_dir):
    assert main(["dewarp", str(gen_dir), "--out", str(tmp_path / "d")]) == 0
    img = tmp_path / "d" / "dewarped.png"
    assert main(["restore", str(img), "--meta", str(gen_dir / "0000_meta.json"), "--flatfield", "16",
                 "--out", str(tmp_path / "r")]) == 0
    header, slices = fileio.read_hu_raw(tmp_path / "r" / "restored_hu.raw")
    assert header["window"] == {"ww": 80.0, "wl": 40.0}
    assert slices[0].min() >= 0 and slices[0].max() <= 80
    meta = tmp_path / "m.json"
    meta.write_text("{}")
    assert main(["restore", str(img), "--meta", str(meta), "--out", str(tmp_path / "r2")]) == 2


def test_restore_round_trip_unlit_display(tmp_path, gen_dir):
    # An unlit display of a slice comes back to HU within the quantization bound on in-window values.
    from filmrecover.imagecore import ImageGrid
    from filmrecover.synthgen import window_map

    _, slices = fileio.read_hu_raw(gen_dir / "0000_hu.raw")
    hu = slices[0]
    fileio.write_png(tmp_path / "slice.png", window_map(hu, 80, 40))
    assert main(["restore", str(tmp_path / "slice.png"), "--meta", str(gen_dir / "0000_meta.json"),
                 "--out", str(tmp_path / "r")]) == 0
    _, back = fileio.read_hu_raw(tmp_path / "r" / "restored_hu.raw")
    inside = (hu >= 0) & (hu <= 80)
    assert inside.sum() > 1000
    assert np.abs(back[0].astype(int) - hu)[inside].max() <= int(np.ceil(80 / 510))


def test_radiomics_command(tmp_path, gen_dir, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir(), b.mkdir()
    for p in gen_dir.glob("*_hu.raw"):
        shutil.copy(p, a / p.name)
        shutil.copy(p, b / p.name)
    assert main(["--json", "radiomics", str(a), str(b), "--out", str(tmp_path / "r")]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert all(f["t_score"] == 0.0 for f in rep["features"].values())
    c = rep["counts_below"]
    assert c[0] <= c[1] <= c[2]
    assert (tmp_path / "r" / "features_pred.csv").read_text().startswith("sample_id,source,")
    one = tmp_path / "one"
    one.mkdir()
    fileio.write_hu_raw(one / "x.raw", [np.zeros((16, 16), np.int16)])
    assert main(["radiomics", str(one), str(one), "--out", str(tmp_path / "r1")]) == 2
    assert "at least 2" in capsys.readouterr().err


def test_selftest_and_injection(capsys):
    assert main(["selftest"]) == 0
    assert main(["selftest", "--inject-failure", "metrics"]) != 0
    assert "metrics" in capsys.readouterr().err
    assert main(["selftest", "--inject-failure", "nosuch"]) == 2


def test_console_script_json_stdout(tmp_path):
    exe = shutil.which("filmrecover")
    cmd = [exe] if exe else [sys.executable, "-m", "filmrecover.cli"]
    res = subprocess.run(cmd + ["--json", "gen", "--n", "0", "--out", str(tmp_path / "o")],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert json.loads(res.stdout)["count"] == 0

import json
import time

import numpy as np
import pytest

from flangecal import io
from flangecal.circle_fit import extract_rim, ransac_circle
from flangecal.cli import main, parse_args, parse_range
from flangecal.se3 import H_TRUE


def gt_translation_mm(results, key):
    blk = results["vs_ground_truth"][key]
    return float(np.linalg.norm([blk["x_mm"], blk["y_mm"], blk["z_mm"]]))


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def clean_set(work):
    assert main(["gen-flange", "--dataset-poses", "20", "--sigma", "0.1", "--units", "mm", "--out", str(work / "clean")]) == 0
    return work / "clean" / "manifest.json"


@pytest.fixture(scope="module")
def dirty_set(work):
    argv = ["gen-flange", "--dataset-poses", "20", "--outliers", "3", "--sigma", "0.1", "--out", str(work / "dirty")]
    assert main(argv) == 0
    return work / "dirty" / "manifest.json"


def test_gen_flange_defaults(tmp_path):
    out = tmp_path / "f.ply"
    assert main(["gen-flange", "--out", str(out)]) == 0
    cloud = io.read_cloud(out)
    meta = json.loads(out.with_suffix(".json").read_text())
    assert len(cloud) > 10_000 and meta["points"] == len(cloud)
    assert np.allclose(meta["tcp"], [0.0, 0.0, 0.6])


def test_gen_flange_noiseless_tcp(tmp_path):
    out = tmp_path / "f.ply"
    assert main(["gen-flange", "--pose", "20,-10,550,0.2,-0.1,0.4", "--out", str(out)]) == 0
    fit = ransac_circle(extract_rim(io.read_cloud(out)))
    assert np.linalg.norm(fit.center - [0.02, -0.01, 0.55]) < 1e-6


def test_gen_flange_bytes_reproducible(tmp_path):
    a, b = tmp_path / "a.ply", tmp_path / "b.ply"
    for f in (a, b):
        assert main(["gen-flange", "--sigma", "0.2", "--seed", "3", "--out", str(f)]) == 0
    assert a.read_bytes() == b.read_bytes()
    main(["gen-flange", "--sigma", "0.2", "--seed", "4", "--out", str(b)])
    assert a.read_bytes() != b.read_bytes()


def test_prints_resolved_config(tmp_path, capsys):
    main(["gen-flange", "--sigma", "0.5", "--out", str(tmp_path / "f.ply")])
    line = capsys.readouterr().out.splitlines()[0]
    cfg = json.loads(line.removeprefix("config: "))
    assert cfg["command"] == "gen-flange" and cfg["sigma"] == 0.5 and cfg["seed"] == 0


def test_parse_range():
    assert np.allclose(parse_range("0.2:0.2:1"), [0.2, 0.4, 0.6, 0.8, 1.0])
    assert np.allclose(parse_range("1:1:1"), [1.0])
    assert len(parse_range("0.2:0.2:10")) == 50


@pytest.mark.parametrize("argv", [
    ["sim-calib", "--sigma-range", "3:1:1"],
    ["sim-calib", "--sigma-range", "1:0:2"],
    ["sim-calib", "--sigma-range", "a:b:c"],
    ["sim-calib", "--bogus"],
    ["frobnicate"],
    ["calibrate", "--out", "x.json"],
])
def test_usage_errors_exit_2(argv):
    assert main(argv) == 2


def test_sim_calib_smoke(tmp_path):
    t0 = time.time()
    assert main(["sim-calib", "--sigma-range", "1:1:2", "--realizations", "1", "--out-dir", str(tmp_path)]) == 0
    assert time.time() - t0 < 10
    header, rows = io.read_csv_table(tmp_path / "sweep.csv")
    assert header == list(io.SWEEP_HEADER) and len(rows) == 2 * 2 * 2
    header, rows = io.read_csv_table(tmp_path / "convergence.csv")
    assert header == list(io.CONVERGENCE_HEADER)
    assert (tmp_path / "sweep.csv").read_text().startswith("# seed=0, config=")


def test_sim_calib_seeded_outputs(tmp_path):
    for d in ("a", "b"):
        assert main(["sim-calib", "--realizations", "2", "--seed", "5", "--out-dir", str(tmp_path / d)]) == 0
    for f in ("sweep.csv", "convergence.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_calibrate_recovers_ground_truth(clean_set, work):
    out = work / "clean.json"
    assert main(["calibrate", "--manifest", str(clean_set), "--history", str(work / "h.csv"), "--out", str(out)]) == 0
    res = io.read_results(out)
    assert gt_translation_mm(res, "H_optimal") < 0.3
    header, rows = io.read_csv_table(work / "h.csv")
    assert header == list(io.HISTORY_HEADER) and len(rows) == res["iterations_used"] + 1


def test_calibrate_rejects_false_segmentations(dirty_set, work):
    out = work / "dirty.json"
    assert main(["calibrate", "--manifest", str(dirty_set), "--out", str(out)]) == 0
    res = io.read_results(out)
    assert gt_translation_mm(res, "H_optimal") < 0.5
    assert gt_translation_mm(res, "all_points") > 5.0


def test_calibrate_k_max_zero(clean_set, work):
    out = work / "k0.json"
    assert main(["calibrate", "--manifest", str(clean_set), "--k-max", "0", "--out", str(out)]) == 0
    res = io.read_results(out)
    assert res["iterations_used"] == 0 and len(res["pool"]) == 4


def test_verify_ground_truth(clean_set, work, capsys):
    h = work / "gt.json"
    h.write_text(json.dumps({"H": io.transform_to_matrix(H_TRUE)}))
    out = work / "v.json"
    assert main(["verify", "--H", str(h), "--manifest-verification", str(clean_set), "--out", str(out)]) == 0
    assert io.read_results(out)["cost_mm"] < 0.3


def test_verify_disjoint_exit_3(clean_set, work):
    far = H_TRUE.as_matrix()
    far[:3, 3] += [0.5, 0, 0]
    h = work / "far.json"
    h.write_text(json.dumps(far.tolist()))
    out = work / "vf.json"
    assert main(["verify", "--H", str(h), "--manifest", str(clean_set), "--out", str(out)]) == 3
    assert io.read_results(out)["failed"] is True


def test_compensate_identity_unchanged(work):
    h = work / "h0.json"
    h.write_text(json.dumps({"H": io.transform_to_matrix(H_TRUE)}))
    e = work / "e0.json"
    e.write_text(json.dumps({"error": dict.fromkeys(io.ERROR_KEYS, 0.0)}))
    out = work / "hc.json"
    assert main(["compensate", "--H", str(h), "--error", str(e), "--out", str(out)]) == 0
    assert np.array_equal(io.read_transform(out).as_matrix(), H_TRUE.as_matrix())


def test_compensate_failed_error_exit_3(work):
    h = work / "h1.json"
    h.write_text(json.dumps({"H": io.transform_to_matrix(H_TRUE)}))
    e = work / "e1.json"
    e.write_text(json.dumps({"error": None}))
    assert main(["compensate", "--H", str(h), "--error", str(e), "--out", str(work / "x.json")]) == 3


def test_missing_manifest_exit_2(work):
    assert main(["calibrate", "--manifest", str(work / "nope.json"), "--out", str(work / "o.json")]) == 2


def test_sim_weld_straight(tmp_path, capsys):
    out = tmp_path / "w.csv"
    assert main(["sim-weld", "--every", "100", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    refined = float(text.split("refined path RMS to seam: ")[1].split()[0])
    planned = float(text.split("planned path RMS to seam: ")[1].split()[0])
    assert "status: completed" in text and refined < planned
    header, rows = io.read_csv_table(out)
    assert header == list(io.WELD_HEADER) and len(rows) > 100


def test_sim_weld_singularity_exit_3():
    argv = ["sim-weld", "--seam", "arc", "--arc-radius", "15", "--arc-sweep", "2.5", "--lead", "100", "--vision-noise", "0"]
    assert main(argv) == 3


def test_sim_weld_contact_lost_exit_4():
    assert main(["sim-weld", "--length", "50", "--max-engagement", "1", "--vision-noise", "3", "--seed", "1"]) in (4,)


def test_sim_weld_degenerate_servo(tmp_path):
    out = tmp_path / "w.csv"
    assert main(["sim-weld", "--length", "60", "--vision-noise", "0", "--delta-d", "0", "--out", str(out)]) == 0
    header, rows = io.read_csv_table(out)
    y = np.array([float(r[header.index("P_t_y")]) for r in rows])
    assert np.max(np.abs(y)) < 1e-9


def test_config_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# sweep settings\nrealizations = 7\nsigma-range = 0.5:0.5:1\n")
    args = parse_args(["sim-calib", "--config", str(cfg)])
    assert args.realizations == 7 and np.allclose(args.sigma_range, [0.5, 1.0])
    args = parse_args(["sim-calib", "--config", str(cfg), "--realizations", "3"])
    assert args.realizations == 3
    assert parse_args(["sim-calib"]).realizations == 100


def test_config_unknown_key_exit_2(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = blue\n")
    assert main(["sim-calib", "--config", str(cfg)]) == 2

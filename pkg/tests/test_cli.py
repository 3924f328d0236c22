"""End-to-end tests of the command-line interface and its exit codes."""

import importlib.resources
import json

import numpy as np

from feklab.cli import main
from feklab.mma import GemmShape, hand_tuned_mapping_25x5x4, load_mapping, save_mapping


def shipped_mapping_path():
    return str(importlib.resources.files("feklab") / "mappings" / "m25n5k4.map")


# ---------------------------------------------------------------------------
# cost
# ---------------------------------------------------------------------------


def test_cost_production_row(capsys):
    assert main(["cost", "25x5x4"]) == 0
    out = capsys.readouterr().out
    assert "9000" in out and "1960" in out and "1000" in out
    assert "0.11" in out and "4.6" in out


def test_cost_trivial_rows(capsys):
    assert main(["cost", "8x8x4", "1x1x1"]) == 0
    out = capsys.readouterr().out
    assert "4608" in out and "1024" in out and "512" in out
    assert "24" in out and "1.0" in out


def test_cost_malformed_shape():
    assert main(["cost", "25by5"]) == 2


def test_cost_json_and_csv(tmp_path, capsys):
    jpath, cpath = tmp_path / "c.json", tmp_path / "c.csv"
    assert main(["cost", "25x5x4", "--json", str(jpath), "--csv", str(cpath)]) == 0
    capsys.readouterr()
    doc = json.loads(jpath.read_text())
    assert doc[0]["smem_bytes_mma"] == 1960
    assert cpath.read_text().splitlines()[1].startswith("25x5x4,9000")


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def test_verify_shipped_mapping(capsys):
    assert main(["verify", shipped_mapping_path()]) == 0
    out = capsys.readouterr().out
    assert "conflict_free: True" in out


def test_verify_diagram(capsys):
    assert main(["verify", shipped_mapping_path(), "--diagram"]) == 0
    out = capsys.readouterr().out
    assert "banks 0-31" in out


def test_verify_corrupted_mapping_exits_1(tmp_path, capsys):
    mapping = hand_tuned_mapping_25x5x4()
    # swapping the first two column slots restores the colliding order
    mapping.f_n[1], mapping.f_n[2] = mapping.f_n[2], mapping.f_n[1]
    path = tmp_path / "bad.map"
    save_mapping(mapping, path)
    assert main(["verify", str(path)]) == 1
    out = capsys.readouterr().out
    assert "conflict_free: False" in out
    assert "histogram" in out


def test_verify_missing_file(capsys):
    assert main(["verify", "/nonexistent/foo.map"]) == 2


def test_verify_garbage_file(tmp_path):
    path = tmp_path / "junk.map"
    path.write_text("this is not a mapping\n")
    assert main(["verify", str(path)]) == 2


# ---------------------------------------------------------------------------
# search
# ---------------------------------------------------------------------------


def test_search_writes_verified_mapping(tmp_path, capsys):
    out_path = tmp_path / "m16n5k4.map"
    assert main(["search", "16x5x4", "-o", str(out_path)]) == 0
    capsys.readouterr()
    mapping = load_mapping(out_path)
    assert mapping.shape == GemmShape(16, 5, 4)
    assert main(["verify", str(out_path)]) == 0


def test_search_identity_for_aligned_shape(tmp_path, capsys):
    out_path = tmp_path / "m8n8k4.map"
    assert main(["search", "8x8x4", "-o", str(out_path)]) == 0
    capsys.readouterr()
    mapping = load_mapping(out_path)
    assert np.array_equal(mapping.f_n, np.arange(8))


def test_search_budget_exhaustion_exit_3(capsys):
    assert main(["search", "1000x1000x1000", "--budget", "1"]) == 3
    err = capsys.readouterr().err
    assert "NOT_FOUND" in err


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------


def test_compare_deviations_and_ratio(tmp_path, capsys):
    jpath = tmp_path / "cmp.json"
    assert main(["compare", "--no-timing", "--json", str(jpath)]) == 0
    capsys.readouterr()
    doc = json.loads(jpath.read_text())
    assert doc["max_pairwise_rel_deviation"] <= 1e-10
    assert doc["d_read_ratio_pa_over_fusedpa"] == 2.0
    assert len(doc["variants"]) == 6


def test_compare_all_variants(tmp_path, capsys):
    jpath = tmp_path / "cmp.json"
    assert main(
        ["compare", "--all", "--nx", "1", "--ny", "1", "--nz", "1",
         "--no-timing", "--json", str(jpath)]
    ) == 0
    capsys.readouterr()
    doc = json.loads(jpath.read_text())
    assert len(doc["variants"]) == 8
    assert doc["max_pairwise_rel_deviation"] <= 1e-10


def test_compare_zero_coupling_outputs_zero(tmp_path, capsys):
    jpath = tmp_path / "cmp.json"
    assert main(
        ["compare", "--nx", "1", "--ny", "1", "--nz", "1",
         "--coupling-scale", "0.0", "--no-timing", "--json", str(jpath)]
    ) == 0
    capsys.readouterr()
    doc = json.loads(jpath.read_text())
    assert doc["max_pairwise_rel_deviation"] == 0.0


def test_compare_deterministic_output(tmp_path, capsys):
    j1, j2 = tmp_path / "a.json", tmp_path / "b.json"
    main(["compare", "--nx", "1", "--ny", "1", "--nz", "1", "--no-timing", "--json", str(j1)])
    main(["compare", "--nx", "1", "--ny", "1", "--nz", "1", "--no-timing", "--json", str(j2)])
    capsys.readouterr()
    assert j1.read_bytes() == j2.read_bytes()


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------


def test_solve_zero_run(capsys):
    assert main(["solve", "nx=1", "ny=1", "nz=1", "num_steps=3"]) == 0
    out = capsys.readouterr().out
    assert "energy=0.000000000000e+00" in out


def test_solve_standing_wave_energy_series(tmp_path, capsys):
    jpath = tmp_path / "run.json"
    assert main(
        ["solve", "--json", str(jpath), "initial=standing_wave",
         "num_steps=10", "nx=1", "ny=1", "nz=1"]
    ) == 0
    capsys.readouterr()
    doc = json.loads(jpath.read_text())
    e = doc["energies"]
    assert abs(e[-1] - e[0]) / e[0] < 1e-7
    assert doc["config"]["initial"] == "standing_wave"


def test_solve_forced_run_is_finite(capsys):
    assert main(
        ["solve", "nx=1", "ny=1", "nz=1", "num_steps=10",
         "forcing=bottom_piston", "forcing_amplitude=0.5"]
    ) == 0
    out = capsys.readouterr().out
    assert "final max|p|" in out
    val = float(out.strip().splitlines()[-1].split("max|p|=")[1].split()[0])
    assert np.isfinite(val) and val > 0


def test_solve_config_file_with_override(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"nx": 1, "ny": 1, "nz": 1, "num_steps": 2}))
    assert main(["solve", "--config", str(cfg), "num_steps=1"]) == 0
    out = capsys.readouterr().out
    assert out.count("energy=") == 2  # initial + one step


def test_solve_unknown_key_usage_error(capsys):
    assert main(["solve", "warp_speed=9"]) == 2
    assert "unknown config keys" in capsys.readouterr().err


def test_solve_missing_config_usage_error(capsys):
    assert main(["solve", "--config", "/nope/missing.json"]) == 2


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def test_report_covers_production_shapes(tmp_path, capsys):
    path = tmp_path / "report.json"
    assert main(["report", "-o", str(path)]) == 0
    capsys.readouterr()
    doc = json.loads(path.read_text())
    assert len(doc["cost"]) == 7
    assert len(doc["mappings"]) == 7
    assert all(entry["found"] and entry["conflict_free"] for entry in doc["mappings"])

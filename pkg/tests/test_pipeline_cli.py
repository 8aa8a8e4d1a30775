import json
import subprocess
import sys

import numpy as np
import pytest

from sartomo.cli import main
from sartomo.config import PRESETS, SCHEMA, PipelineConfig, fourier_iso_grid, load_config, preset, save_config
from sartomo.errors import ArtifactError, ConfigError, StageError
from sartomo.network import load_network
from sartomo.pipeline import ARTIFACTS, ablation_report, env_threads, run_grid, run_pipeline

TINY = {
    "name": "tiny",
    "scene.n_scatterers": 200,
    "geometry.azimuth_stop_deg": 20.0,
    "geometry.n_pulses": 88,
    "geometry.n_frequencies": 16,
    "geometry.elevations_deg": [30.0, 30.2],
    "inversion.max_dim": 12,
    "inversion.iters": 20,
    "network.n_layers": 3,
    "network.width": 16,
    "network.skip_layer": 1,
    "train.epochs": 40,
    "train.lr": 1e-2,
    "train.batch_size": 128,
    "train.iso_refresh": 5,
    "train.iso_target": 150,
    "mesh.resolution": 16,
    "validate.n_samples": 150,
}


def tiny(**extra):
    changes = {k: v for k, v in TINY.items() if k != "name"}
    cfg = preset("sphere-small", **{**changes, **extra})
    cfg.name = "tiny"
    return cfg


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    metrics = run_pipeline(tiny(), out)
    return out, metrics


class TestConfig:
    def test_presets_load(self):
        for name in ("sphere-small", "box-small", "vehicle-proxy"):
            cfg = preset(name)
            assert cfg.name == name and cfg.seed == 0

    def test_roundtrip(self, tmp_path):
        cfg = tiny()
        save_config(tmp_path / "c.json", cfg)
        assert load_config(tmp_path / "c.json").to_dict() == cfg.to_dict()

    def test_schema_and_seed_required(self):
        d = preset("sphere-small").to_dict()
        for broken in ({**d, "schema": "other/0"}, {k: v for k, v in d.items() if k != "seed"},
                       {**d, "seed": 1.5}, {**d, "extra": 1}):
            with pytest.raises(ConfigError):
                PipelineConfig.from_dict(broken)

    def test_unknown_section_keys(self):
        d = preset("sphere-small").to_dict()
        d["train"]["optimiser"] = "adam"
        with pytest.raises(ConfigError, match="optimiser"):
            PipelineConfig.from_dict(d)

    def test_bad_values(self):
        with pytest.raises(ConfigError):
            tiny(**{"inversion.method": "fft"})
        with pytest.raises(ConfigError):
            tiny(**{"geometry.subaperture_span_deg": 90.0})
        with pytest.raises(ConfigError):
            tiny(**{"cloud.tau": 1.0})

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            preset("sphere-huge")

    def test_fourier_iso_grid(self):
        grid = fourier_iso_grid(preset("box-small"))
        assert [c.name for c in grid] == ["box-small-nf6-isoon", "box-small-nf6-isooff",
                                          "box-small-nf9-isoon", "box-small-nf9-isooff"]
        assert [(c.network.n_features, c.train.iso_enabled) for c in grid] == \
            [(6, True), (6, False), (9, True), (9, False)]

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="missing"):
            load_config(tmp_path / "none.json")
        (tmp_path / "bad.json").write_text("{")
        with pytest.raises(ConfigError, match="invalid JSON"):
            load_config(tmp_path / "bad.json")

    def test_env_threads(self, monkeypatch):
        monkeypatch.delenv("SARTOMO_THREADS", raising=False)
        assert env_threads(3) == 3
        monkeypatch.setenv("SARTOMO_THREADS", "2")
        assert env_threads(3) == 2
        monkeypatch.setenv("SARTOMO_THREADS", "x")
        with pytest.raises(ConfigError):
            env_threads()


class TestPipeline:
    def test_all_artifacts(self, tiny_run):
        out, metrics = tiny_run
        for names in ARTIFACTS.values():
            for name in names:
                assert (out / name).stat().st_size > 0, name
        suffixes = {p.suffix for p in out.iterdir()}
        assert {".ph", ".vox", ".ply", ".sdfnet", ".obj", ".csv", ".json"} <= suffixes
        for key in ("chamfer", "on_surface_rms", "eikonal_mean", "normal_angle_rms_deg", "cloud_chamfer"):
            assert np.isfinite(metrics[key]) and metrics[key] >= 0

    def test_rerun_identical(self, tiny_run, tmp_path):
        out, _ = tiny_run
        run_pipeline(tiny(), tmp_path)
        assert (tmp_path / "metrics.json").read_bytes() == (out / "metrics.json").read_bytes()

    def test_resume_matches_full_run(self, tiny_run, tmp_path):
        out, _ = tiny_run
        assert run_pipeline(tiny(), tmp_path, stop_after="cloud") is None
        assert not (tmp_path / "model.sdfnet").exists()
        run_pipeline(tiny(), tmp_path, resume=True)
        assert (tmp_path / "metrics.json").read_bytes() == (out / "metrics.json").read_bytes()

    def test_resume_rejects_changed_config(self, tiny_run, tmp_path):
        run_pipeline(tiny(), tmp_path, stop_after="simulate")
        with pytest.raises(ConfigError):
            run_pipeline(tiny(seed=5), tmp_path, resume=True)

    def test_stage_error_names_stage(self, tmp_path):
        cfg = tiny(**{"cloud.quantile": None, "cloud.tau": 1e30})
        with pytest.raises(StageError, match="stage cloud") as info:
            run_pipeline(cfg, tmp_path)
        assert info.value.code == "E_EMPTY_POINT_CLOUD"
        assert (tmp_path / "fused.vox").exists()

    def test_seed_changes_results(self, tiny_run, tmp_path):
        out, _ = tiny_run
        run_pipeline(tiny(seed=1), tmp_path, stop_after="simulate")
        assert (tmp_path / "phase_history.ph").read_bytes() != (out / "phase_history.ph").read_bytes()


class TestReport:
    def test_identical_runs_zero_deltas(self, tiny_run, tmp_path):
        out, _ = tiny_run
        report = ablation_report([out, out], tmp_path / "r")
        assert report["differing_keys"] == []
        for row in report["runs"]:
            assert all(row[k] in (0, 0.0) for k in row if k.startswith("delta_"))
        assert (tmp_path / "r.csv").exists() and (tmp_path / "r.json").exists()

    def test_iso_on_off_rows(self, tmp_path):
        cfgs = fourier_iso_grid(tiny(), n_features=(6,))
        dirs = run_grid(cfgs, tmp_path)
        report = ablation_report(dirs)
        assert report["differing_keys"] == ["train.iso_enabled"]
        assert all(np.isfinite(r["chamfer"]) for r in report["runs"])
        # shared upstream stages are copied byte for byte
        assert (dirs[0] / "cloud.ply").read_bytes() == (dirs[1] / "cloud.ply").read_bytes()

    def test_missing_metrics(self, tiny_run, tmp_path):
        out, _ = tiny_run
        with pytest.raises(ArtifactError, match="metrics.json"):
            ablation_report([out, tmp_path])

    def test_needs_two_runs(self, tiny_run):
        with pytest.raises(ConfigError):
            ablation_report([tiny_run[0]])


def cli(*args):
    return main([str(a) for a in args])


class TestCli:
    def test_stagewise_commands(self, tmp_path, capsys):
        save_config(tmp_path / "c.json", tiny())
        c = ("--config", tmp_path / "c.json")
        assert cli("simulate", *c, "--out", tmp_path / "s.ph") == 0
        assert cli("invert", *c, "--ph", tmp_path / "s.ph", "--out", tmp_path / "f.vox") == 0
        assert cli("cloud", *c, "--vox", tmp_path / "f.vox", "--out", tmp_path / "c.ply") == 0
        assert cli("train", *c, "--cloud", tmp_path / "c.ply", "--out", tmp_path / "m.sdfnet") == 0
        assert cli("mesh", "--model", tmp_path / "m.sdfnet", "--res", 16, "--out", tmp_path / "m.obj") == 0
        assert cli("isopoints", "--model", tmp_path / "m.sdfnet", "--count", 100,
                   "--out", tmp_path / "iso.ply") == 0
        assert cli("validate", *c, "--model", tmp_path / "m.sdfnet", "--out", tmp_path / "v.json") == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 7 and all(json.loads(line) is not None for line in lines)
        assert (tmp_path / "m_history.csv").exists()
        load_network(tmp_path / "m.sdfnet")

    def test_cli_matches_pipeline(self, tiny_run, tmp_path):
        out, _ = tiny_run
        save_config(tmp_path / "c.json", tiny())
        assert cli("run", "--config", tmp_path / "c.json", "--out", tmp_path / "run") == 0
        assert (tmp_path / "run" / "metrics.json").read_bytes() == (out / "metrics.json").read_bytes()
        assert cli("run", "--config", tmp_path / "c.json", "--out", tmp_path / "run", "--resume") == 0

    def test_report_command(self, tiny_run, tmp_path, capsys):
        out, _ = tiny_run
        assert cli("report", out, out, "--out", tmp_path / "r") == 0
        assert json.loads(capsys.readouterr().out)["runs"] == 2

    def test_config_command(self, tmp_path, capsys):
        assert cli("config", "--config", "preset:box-small", "--seed", 7) == 0
        d = json.loads(capsys.readouterr().out)
        assert d["seed"] == 7 and d["schema"] == SCHEMA and d["name"] == "box-small"

    @pytest.mark.parametrize("argv, code, status", [
        ([], "E_USAGE", 2),
        (["simulate"], "E_USAGE", 2),
        (["frobnicate"], "E_USAGE", 2),
        (["config", "--config", "preset:nope"], "E_CONFIG", 2),
        (["mesh", "--model", "/nonexistent.sdfnet", "--out", "x.ply"], "E_ARTIFACT", 1),
        (["report", "/nonexistent-a", "/nonexistent-b", "--out", "r"], "E_ARTIFACT", 1),
    ])
    def test_errors_single_line(self, argv, code, status, capsys):
        assert main(argv) == status
        err = capsys.readouterr().err.strip().splitlines()
        assert len(err) == 1 and err[0].startswith(f"error: {code}: ")

    def test_console_script_exit_status(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "sartomo.cli", "config", "--config", "preset:nope"],
                              capture_output=True, text=True)
        assert proc.returncode == 2
        assert proc.stderr.startswith("error: E_CONFIG: ")

    def test_presets_listed(self):
        assert set(PRESETS) == {"sphere-small", "box-small", "vehicle-proxy"}

"""Command line behavior, driven through main() in process."""

import json
from pathlib import Path

import pytest

from evtol_sbi import maskedit
from evtol_sbi.checkpoints import load_checkpoint, save_checkpoint
from evtol_sbi.cli import main
from evtol_sbi.design_space import N_FEATURES, slot
from evtol_sbi.errors import NonFiniteLoss
from evtol_sbi.surrogate_sim import FEATURE_TABLE_VERSION


def run(*argv):
    return main([str(a) for a in argv])


def stderr_error(capsys):
    return json.loads(capsys.readouterr().err)


# --- argument and config validation ---

def test_help_exits_zero(capsys):
    # argparse raises SystemExit(0); main() maps that to success
    assert run("--help") == 0
    assert "gen-data" in capsys.readouterr().out


def test_no_command_is_a_usage_error():
    assert main([]) == 1


def test_missing_config_file(tmp_path, capsys):
    assert run("gen-data", "--config", tmp_path / "nope.json") == 1
    assert stderr_error(capsys)["error"] == "FileNotFoundError"


def test_unknown_config_field(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"profile": "desk", "bogus": 1}))
    assert run("gen-data", "--config", cfg) == 1
    assert stderr_error(capsys)["error"] == "ValueError"


def test_profile_flag_contradicting_config_file(trained_artifacts, capsys):
    rc = run("gen-data", "--config", trained_artifacts.config, "--profile", "paper")
    assert rc == 1
    assert "contradicts" in stderr_error(capsys)["message"]


# --- gen-data ---

def test_gen_data_writes_and_reports(tmp_path, capsys):
    out = tmp_path / "d.ndjson"
    rc = run("gen-data", "--profile", "desk", "--seed", 9, "--n-raw", 300,
             "--out", out)
    assert rc == 0
    assert out.exists()
    text = capsys.readouterr().out
    assert "accepted" in text and "stage" in text


def test_gen_data_deterministic_per_seed(tmp_path):
    paths = [tmp_path / n for n in ("a.ndjson", "b.ndjson", "c.ndjson")]
    for p, seed in zip(paths, (9, 9, 10)):
        assert run("gen-data", "--seed", seed, "--n-raw", 300, "--out", p) == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert paths[0].read_bytes() != paths[2].read_bytes()


# --- train ---

def test_train_stamps_hash_and_cleans_partial(trained_artifacts, tmp_path):
    out = tmp_path / "mk.ckpt"
    rc = run("train", "maskedit", "--config", trained_artifacts.config,
             "--data", trained_artifacts.data, "--out", out,
             "--checkpoint-every", 1)
    assert rc == 0
    ck = load_checkpoint(str(out))
    assert ck.kind == "maskedit"
    assert ck.version == FEATURE_TABLE_VERSION
    assert ck.extra["config_hash"] == trained_artifacts.dset.config_digest
    assert not Path(str(out) + ".partial").exists()


def test_train_resume_continues_the_step_counter(trained_artifacts, tmp_path):
    # one more epoch on top of the saved one: the step counter keeps going
    first, second = tmp_path / "m1.ckpt", tmp_path / "m2.ckpt"
    assert run("train", "maskedit", "--config", trained_artifacts.config,
               "--data", trained_artifacts.data, "--out", first) == 0
    assert run("train", "maskedit", "--config", trained_artifacts.config,
               "--data", trained_artifacts.data, "--out", second,
               "--resume", first) == 0
    s1 = load_checkpoint(str(first)).step
    s2 = load_checkpoint(str(second)).step
    assert s1 > 0 and s2 == 2 * s1


def test_crash_preserves_the_partial_snapshot(
    trained_artifacts, tmp_path, monkeypatch, capsys
):
    real = maskedit.train

    def exploding(dset, cfg, seed, init=None, log=None, snapshot=None):
        real(dset, cfg, seed, init=init, log=log, snapshot=snapshot)
        raise NonFiniteLoss("injected", batch_seed=5)

    monkeypatch.setattr(maskedit, "train", exploding)
    out = tmp_path / "mk.ckpt"
    rc = run("train", "maskedit", "--config", trained_artifacts.config,
             "--data", trained_artifacts.data, "--out", out,
             "--checkpoint-every", 1)
    assert rc == 2
    assert stderr_error(capsys)["error"] == "NonFiniteLoss"
    partial = Path(str(out) + ".partial")
    assert partial.exists() and not out.exists()
    assert load_checkpoint(str(partial)).extra["live"] is True


# --- sample ---

@pytest.fixture(scope="module")
def sampled(trained_artifacts, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_sample") / "designs.json"
    rc = run("sample", "--config", trained_artifacts.config,
             "--mixedit", trained_artifacts.mx,
             "--maskedit", trained_artifacts.mk,
             "--x-target", '{"total_mass": 2500.0}', "-n", 3, "--out", out)
    assert rc == 0
    return json.loads(out.read_text()), out


def test_sample_file_schema(trained_artifacts, sampled):
    payload, _ = sampled
    assert payload["feature_table_version"] == FEATURE_TABLE_VERSION
    assert payload["config_hash"] == trained_artifacts.dset.config_digest
    assert payload["request"]["x_target"] == {"total_mass": 2500.0}
    assert len(payload["designs"]) == 3
    for d in payload["designs"]:
        assert len(d["theta"]) == N_FEATURES
        assert all(v is None or isinstance(v, float) for v in d["theta"])
        assert set(d["topology"]) == {
            "n_wings", "h_tail", "v_tail", "nose_prop", "lift_arms", "fwd_arms"
        }
        assert isinstance(d["tree"], dict) and d["tree"]
        assert len(d["x_conditioned"]) == 10


def test_sample_honors_pins_from_the_flag(trained_artifacts, tmp_path):
    out = tmp_path / "pinned.json"
    rc = run("sample", "--config", trained_artifacts.config,
             "--mixedit", trained_artifacts.mx,
             "--maskedit", trained_artifacts.mk,
             "--pin", "root/battery/mass=420.0", "-n", 2, "--out", out)
    assert rc == 0
    payload = json.loads(out.read_text())
    j = slot("root/battery/mass")
    for d in payload["designs"]:
        assert d["theta"][j] == pytest.approx(420.0, rel=1e-9)


def test_sample_rejects_malformed_pin(trained_artifacts, tmp_path, capsys):
    rc = run("sample", "--mixedit", trained_artifacts.mx,
             "--maskedit", trained_artifacts.mk,
             "--pin", "no-equals-sign", "--out", tmp_path / "d.json")
    assert rc == 1
    assert "KEY=VALUE" in stderr_error(capsys)["message"]


def test_sample_rejects_checkpoints_from_different_configs(
    trained_artifacts, tmp_path, capsys
):
    ck = load_checkpoint(str(trained_artifacts.mx))
    ck.extra = {**ck.extra, "config_hash": "0" * 12}
    alien = tmp_path / "alien.ckpt"
    save_checkpoint(str(alien), ck)
    rc = run("sample", "--mixedit", alien, "--maskedit", trained_artifacts.mk,
             "--out", tmp_path / "d.json")
    assert rc == 1
    assert stderr_error(capsys)["error"] == "StatsMismatch"


# --- evaluate ---

def test_evaluate_marginal_kl_null_on_dataset_halves(trained_artifacts, tmp_path):
    out = tmp_path / "kl.json"
    rc = run("evaluate", "marginal-kl", "--config", trained_artifacts.config,
             "--dataset", trained_artifacts.data, "--out", out)
    assert rc == 0
    rep = json.loads(out.read_text())
    assert rep["kind"] == "marginal-kl"
    assert rep["value"] >= 0.0
    assert rep["n_ref"] + rep["n_cmp"] == len(trained_artifacts.dset.rows)


def test_evaluate_marginal_kl_against_samples_file(
    trained_artifacts, sampled, tmp_path
):
    _, samples_path = sampled
    out = tmp_path / "kl.json"
    rc = run("evaluate", "marginal-kl", "--config", trained_artifacts.config,
             "--dataset", trained_artifacts.data, "--samples", samples_path,
             "--out", out)
    assert rc == 0
    rep = json.loads(out.read_text())
    assert rep["n_cmp"] == 3


def test_evaluate_rejects_samples_from_another_feature_table(
    trained_artifacts, sampled, tmp_path, capsys
):
    payload, _ = sampled
    stale = tmp_path / "stale.json"
    stale.write_text(json.dumps({**payload, "feature_table_version": "v0"}))
    rc = run("evaluate", "marginal-kl", "--config", trained_artifacts.config,
             "--dataset", trained_artifacts.data, "--samples", stale)
    assert rc == 1
    assert stderr_error(capsys)["error"] == "StatsMismatch"


def test_evaluate_mmd_null_within_permutation_error(trained_artifacts, capsys):
    rc = run("evaluate", "mmd", "--config", trained_artifacts.config,
             "--dataset", trained_artifacts.data)
    assert rc == 0
    rep = json.loads(capsys.readouterr().out)
    assert abs(rep["value"]) < 3.0 * rep["permutation_se"]


def test_evaluate_c2st_joint_null(trained_artifacts, capsys):
    rc = run("evaluate", "c2st", "--config", trained_artifacts.config,
             "--dataset", trained_artifacts.data)
    assert rc == 0
    rep = json.loads(capsys.readouterr().out)
    assert 0.35 <= rep["accuracy"] <= 0.65


def test_evaluate_c2st_marginal_mode(trained_artifacts, capsys):
    rc = run("evaluate", "c2st", "--config", trained_artifacts.config,
             "--dataset", trained_artifacts.data, "--mode", "marginal")
    assert rc == 0
    rep = json.loads(capsys.readouterr().out)
    assert set(rep) >= {"kept", "per_dimension", "mean", "max"}
    assert all(int(k) in rep["kept"] for k in rep["per_dimension"])


def test_evaluate_ppc_reports_channel_band(trained_artifacts, tmp_path):
    out = tmp_path / "ppc.json"
    rc = run("evaluate", "ppc", "--config", trained_artifacts.config,
             "--mixedit", trained_artifacts.mx,
             "--maskedit", trained_artifacts.mk, "--n", 20, "--out", out)
    assert rc == 0
    rep = json.loads(out.read_text())
    assert 0 <= rep["within_half_sigma"] <= 10
    report = rep["report"]
    assert report["n_requested"] == 20
    assert report["n_simulated"] + len(report["failures"]) == 20
    # throwaway models may produce nothing simulable; per-channel rows
    # appear only when at least one design survived
    assert len(report["channels"]) == (10 if report["n_simulated"] else 0)


def test_evaluate_case_study_rows(trained_artifacts, tmp_path):
    out = tmp_path / "cs.json"
    rc = run("evaluate", "case-study", "--config", trained_artifacts.config,
             "--mixedit", trained_artifacts.mx,
             "--maskedit", trained_artifacts.mk,
             "--offsets=-1,1", "--n", 3, "--out", out)
    assert rc == 0
    rows = json.loads(out.read_text())["rows"]
    assert [r["offset_sigma"] for r in rows] == [-1.0, 1.0]
    for r in rows:
        assert set(r) >= {"channel", "target", "summary", "resim", "failures"}
        assert len(r["resim"]) + r["failures"] == 3


def test_evaluate_requires_a_dataset(trained_artifacts, capsys):
    assert run("evaluate", "mmd") == 1
    assert "dataset" in stderr_error(capsys)["message"]


def test_evaluate_case_study_requires_both_checkpoints(capsys):
    assert run("evaluate", "case-study") == 1
    assert "mixedit" in stderr_error(capsys)["message"]

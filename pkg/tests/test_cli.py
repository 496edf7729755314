import json

import numpy as np
import pytest

from kktforge import cli, data, forge, kkt, lab, net


def run_cli(*args):
    return cli.main([str(a) for a in args])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen-data -> train -> certify, shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    paths = {
        "data": root / "data.csv",
        "model": root / "model.json",
        "trace": root / "trace.csv",
        "cert": root / "cert.json",
        "set": root / "set.csv",
    }
    assert run_cli("--quiet", "gen-data", "--n", 16, "--d", 6, "--seed", 3,
                   "--out", paths["data"]) == 0
    assert run_cli("--quiet", "train", "--data", paths["data"], "--width", 12,
                   "--epochs", 3000, "--target-loss", 1e-4, "--seed", 0,
                   "--out", paths["model"], "--trace", paths["trace"]) == 0
    assert run_cli("--quiet", "certify", "--model", paths["model"],
                   "--data", paths["data"], "--out", paths["cert"],
                   "--set-out", paths["set"]) == 0
    return paths


class TestPipeline:
    def test_artifacts_exist_and_parse(self, pipeline):
        params = net.load_model(pipeline["model"])
        ds = data.load_dataset(pipeline["data"])
        cert = kkt.load_certificate(pipeline["cert"], params=params, dataset=ds)
        assert cert.epsilon >= 0
        assert pipeline["trace"].read_text().startswith("epoch,")
        _, lam = data.load_dataset(pipeline["set"], with_multipliers=True)
        assert np.array_equal(lam, cert.multipliers.values)

    def test_attack_command(self, pipeline, tmp_path):
        out = tmp_path / "recon.csv"
        report = tmp_path / "attack.json"
        rc = run_cli("--quiet", "attack", "--model", pipeline["model"],
                     "--m", 6, "--init", "sphere:1.0", "--iters", 30,
                     "--restarts", 1, "--seed", 5, "--true-data", pipeline["data"],
                     "--topk", 3, "--out", out, "--report", report)
        assert rc == 0
        doc = json.loads(report.read_text())
        assert "final_kkt_loss" in doc and "topk_mean_nn_distance" in doc
        recon, lam = data.load_dataset(out, with_multipliers=True)
        assert recon.n == 6

    def test_forge_budget_and_split(self, pipeline, tmp_path):
        budget = tmp_path / "budget.json"
        rc = run_cli("--quiet", "forge", "budget", "--model", pipeline["model"],
                     "--set", pipeline["set"], "--index", 0, "--report", budget)
        assert rc == 0
        rep = forge.load_budget_report(budget)
        assert rep.safe_budget <= rep.oracle_budget

        cert = kkt.load_certificate(pipeline["cert"])
        newset = tmp_path / "newset.csv"
        rc = run_cli("--quiet", "forge", "split", "--model", pipeline["model"],
                     "--set", pipeline["set"], "--cert", pipeline["cert"],
                     "--index", int(np.argmax(cert.multipliers.values)),
                     "--out", newset)
        assert rc == 0
        out_ds, lam = data.load_dataset(newset, with_multipliers=True)
        orig = data.load_dataset(pipeline["data"])
        assert out_ds.n == orig.n + 1

    def test_forge_distant_on_subspace(self, tmp_path):
        # embed a small sphere set in a larger ambient space
        base = data.gen_sphere_dataset(12, 5, seed=4)
        X = np.zeros((12, 10))
        X[:, :5] = base.X
        ds = data.LabeledDataset(X, base.y)
        data_path = tmp_path / "sub.csv"
        data.save_dataset(ds, data_path)
        model_path = tmp_path / "m.json"
        assert run_cli("--quiet", "train", "--data", data_path, "--width", 16,
                       "--epochs", 20000, "--target-loss", 1e-6, "--seed", 1,
                       "--init-scale", 1e-8, "--out", model_path) == 0
        params = net.load_model(model_path)
        params = forge.project_weights_to_span(params, ds.X)
        proj_path = tmp_path / "mproj.json"
        net.save_model(params, proj_path)
        lam = kkt.fit_multipliers(params, ds)
        support = lam.values > 0
        set_path = tmp_path / "sup.csv"
        data.save_dataset(
            data.LabeledDataset(ds.X[support], ds.y[support]), set_path,
            multipliers=lam.values[support],
        )
        out = tmp_path / "far.csv"
        rc = run_cli("--quiet", "forge", "distant", "--model", proj_path,
                     "--set", set_path, "--radius", 3.0, "--out", out)
        assert rc == 0
        far, lam2 = data.load_dataset(out, with_multipliers=True)
        assert far.n == int(support.sum()) * 2

    def test_report_subcommand(self, pipeline, tmp_path):
        rep_json = tmp_path / "rep.json"
        report = lab.ExperimentReport(
            config={}, rows=[lab.ReportRow(1.0, 2.0, 0.5, 0.1, 0.0, 3.0)],
            environment={"seed": 0, "version": "t"}, model_hash="m", data_hash="d",
        )
        lab.save_report(report, rep_json)
        rc = run_cli("--quiet", "report", "--in", rep_json,
                     "--out-csv", tmp_path / "rep.csv", "--out-svg", tmp_path / "rep.svg")
        assert rc == 0
        assert (tmp_path / "rep.svg").read_text().startswith("<?xml")

    def test_sweep_command(self, pipeline, tmp_path):
        rc = run_cli("--quiet", "--out-dir", tmp_path / "sweep", "sweep",
                     "--data", pipeline["data"], "--radii", "0.5,1.0",
                     "--width", 12, "--epochs", 2000, "--target-loss", 1e-4,
                     "--seed", 0, "--m", 8, "--iters", 25, "--restarts", 1)
        assert rc == 0
        rows = lab.read_report_csv(tmp_path / "sweep" / "report.csv")
        assert [r.condition for r in rows] == [0.5, 1.0]

    def test_defend_command(self, pipeline, tmp_path):
        rc = run_cli("--quiet", "--out-dir", tmp_path / "defend", "defend",
                     "--data", pipeline["data"], "--shift-scale", 2.0,
                     "--width", 12, "--epochs", 2000, "--target-loss", 1e-4,
                     "--seed", 0, "--m", 8, "--iters", 25, "--restarts", 1)
        assert rc == 0
        rows = lab.read_report_csv(tmp_path / "defend" / "report.csv")
        assert len(rows) == 2 and rows[1].condition > 0


class TestExitCodes:
    def test_validation_error_exits_2(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("f0,label\n1.0,2.0\n")
        model = tmp_path / "never.json"
        assert run_cli("--quiet", "train", "--data", bad, "--out", model) == 2

    def test_numeric_error_exits_3(self, tmp_path):
        X = np.array([[1.0, 0.0], [1.0, 0.0]])
        ds = data.LabeledDataset(X, np.array([1.0, -1.0]))
        path = tmp_path / "contradictory.csv"
        data.save_dataset(ds, path)
        model = tmp_path / "never.json"
        rc = run_cli("--quiet", "train", "--data", path, "--width", 4,
                     "--epochs", 5000, "--lr", 1e30, "--loss", "exponential",
                     "--schedule", "constant", "--seed", 2, "--out", model)
        assert rc == 3

    def test_missing_file_exits_2(self, tmp_path):
        assert run_cli("--quiet", "certify", "--model", tmp_path / "no.json",
                       "--data", tmp_path / "no.csv", "--out", tmp_path / "c.json") == 2


class TestConfigFile:
    def test_file_defaults_and_cli_override(self, tmp_path):
        ds = data.gen_sphere_dataset(12, 5, seed=6)
        data_path = tmp_path / "d.csv"
        data.save_dataset(ds, data_path)
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({
            "train": {"width": 9, "max_epochs": 500, "target_loss": 1e-3}
        }))
        model = tmp_path / "m.json"
        rc = run_cli("--quiet", "--config", cfg_path, "train", "--data", data_path,
                     "--epochs", 800, "--out", model)
        assert rc == 0
        params = net.load_model(model)
        assert params.hidden_width == 9  # from the file; --epochs overrode the file

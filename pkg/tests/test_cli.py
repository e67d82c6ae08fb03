import json

import numpy as np
import pytest

from graphunlearn import UnlearnRequest, load_graph_json, save_request
from graphunlearn.cli import main


def run_cli(*argv):
    return main(list(argv))


@pytest.fixture
def sbm_path(tmp_path):
    path = tmp_path / "sbm.json"
    status = run_cli(
        "gen-sbm", "--blocks", "3", "--nodes-per-block", "40",
        "--p-intra", "0.12", "--p-inter", "0.01", "--feature-dim", "12",
        "--seed", "5", "--out", str(path),
    )
    assert status == 0
    return path


class TestGenSbm:
    def test_writes_loadable_graph(self, sbm_path):
        graph = load_graph_json(sbm_path)
        assert graph.num_nodes == 120
        assert graph.num_classes == 3

    def test_missing_out_fails(self):
        assert run_cli("gen-sbm", "--blocks", "2", "--nodes-per-block", "3",
                       "--p-intra", "0.5", "--p-inter", "0.1",
                       "--feature-dim", "4") == 1


class TestTrainFlow:
    def test_writes_report_pair(self, sbm_path, tmp_path):
        out = tmp_path / "train_report"
        status = run_cli("train", "--dataset", str(sbm_path), "--backbone", "sgc",
                         "--out", str(out))
        assert status == 0
        payload = json.loads((tmp_path / "train_report.json").read_text())
        assert payload["rows"][0]["label"] == "train"
        assert (tmp_path / "train_report.csv").exists()


class TestUnlearnFlow:
    def test_empty_request_records_zero_delta(self, sbm_path, tmp_path):
        request_path = tmp_path / "empty.req"
        save_request(UnlearnRequest.edges([]), request_path)
        out = tmp_path / "unlearn_report"
        status = run_cli(
            "unlearn", "--dataset", str(sbm_path), "--backbone", "sgc",
            "--request", str(request_path), "--gamma", "1e-3", "--out", str(out),
        )
        assert status == 0
        payload = json.loads((tmp_path / "unlearn_report.json").read_text())
        assert payload["rows"][0]["delta_norm"] == 0.0

    def test_edge_request_runs_gif_and_if(self, sbm_path, tmp_path):
        graph = load_graph_json(sbm_path)
        edges = sorted(graph.edges)[:5]
        request_path = tmp_path / "edges.req"
        save_request(UnlearnRequest.edges(edges), request_path)
        for method in ("gif", "if"):
            out = tmp_path / f"unlearn_{method}"
            status = run_cli(
                "unlearn", "--dataset", str(sbm_path), "--method", method,
                "--request", str(request_path), "--gamma", "1e-3",
                "--out", str(out),
            )
            assert status == 0
        gif_payload = json.loads((tmp_path / "unlearn_gif.json").read_text())
        if_payload = json.loads((tmp_path / "unlearn_if.json").read_text())
        assert gif_payload["rows"][0]["delta_norm"] > 0.0
        assert if_payload["rows"][0]["delta_norm"] == 0.0

    def test_retrain_flow(self, sbm_path, tmp_path):
        request_path = tmp_path / "nodes.req"
        save_request(UnlearnRequest.nodes([0, 1]), request_path)
        out = tmp_path / "retrain_report"
        status = run_cli("retrain", "--dataset", str(sbm_path),
                         "--request", str(request_path), "--out", str(out))
        assert status == 0
        payload = json.loads((tmp_path / "retrain_report.json").read_text())
        assert payload["rows"][0]["f1"] > 0.0


class TestBenchFlow:
    def test_bench_report_shape(self, sbm_path, tmp_path):
        out = tmp_path / "bench"
        status = run_cli(
            "bench", "--dataset", str(sbm_path), "--task", "edge",
            "--ratio", "0.05", "--seeds", "0,1", "--gamma", "1e-2",
            "--methods", "retrain,gif", "--out", str(out),
        )
        assert status == 0
        payload = json.loads((tmp_path / "bench.json").read_text())
        assert len(payload["rows"]) == 4
        assert set(payload["aggregates"]) == {"retrain", "gif"}

    def test_identical_runs_are_byte_identical_without_timings(self, sbm_path, tmp_path):
        args = (
            "bench", "--dataset", str(sbm_path), "--task", "edge",
            "--ratio", "0.05", "--seeds", "0", "--gamma", "1e-2",
            "--no-timings",
        )
        assert run_cli(*args, "--out", str(tmp_path / "a")) == 0
        assert run_cli(*args, "--out", str(tmp_path / "b")) == 0
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_sweep_flow(self, sbm_path, tmp_path):
        out = tmp_path / "sweep"
        status = run_cli(
            "sweep", "--dataset", str(sbm_path), "--seeds", "0",
            "--gamma", "1e-2", "--out", str(out),
        )
        assert status == 0
        payload = json.loads((tmp_path / "sweep.json").read_text())
        labels = {row["label"] for row in payload["rows"]}
        assert any(label.startswith("gif@scale=") for label in labels)

    def test_attack_eval_flow(self, sbm_path, tmp_path):
        out = tmp_path / "attack"
        status = run_cli(
            "attack-eval", "--dataset", str(sbm_path), "--attack-ratio", "0.4",
            "--seeds", "0", "--gamma", "1e-2", "--methods", "gif,if",
            "--out", str(out),
        )
        assert status == 0
        payload = json.loads((tmp_path / "attack.json").read_text())
        labels = {row["label"] for row in payload["rows"]}
        assert {"clean", "corrupted", "gif", "if"} <= labels


class TestConfigFile:
    def test_toml_config_drives_bench(self, sbm_path, tmp_path):
        config = tmp_path / "run.toml"
        config.write_text(
            "\n".join([
                "out = \"%s\"" % (tmp_path / "from_toml"),
                "[dataset]",
                f'graph_path = "{sbm_path}"',
                "[backbone]",
                'kind = "sgc"',
                "l2 = 1e-2",
                "epochs = 80",
                "[gif]",
                "l2 = 1e-2",
                "[experiment]",
                "task = \"edge\"",
                "ratio = 0.05",
                "seeds = [0]",
                'methods = ["gif"]',
            ])
        )
        assert run_cli("bench", "--config", str(config)) == 0
        payload = json.loads((tmp_path / "from_toml.json").read_text())
        assert payload["spec"]["backbone"]["epochs"] == 80

    def test_cli_flags_override_config(self, sbm_path, tmp_path):
        config = tmp_path / "run.json"
        config.write_text(json.dumps({
            "dataset": {"graph_path": str(sbm_path)},
            "backbone": {"kind": "sgc", "l2": 1e-2},
            "gif": {"l2": 1e-2},
            "experiment": {"task": "edge", "seeds": [0], "methods": ["gif"]},
        }))
        out = tmp_path / "override"
        assert run_cli("bench", "--config", str(config), "--task", "feature",
                       "--out", str(out)) == 0
        payload = json.loads((tmp_path / "override.json").read_text())
        assert payload["spec"]["task"] == "feature"


class TestErrorReporting:
    def test_missing_dataset_is_machine_parsable(self, tmp_path, capsys):
        status = run_cli("train", "--dataset", str(tmp_path / "nope.json"))
        assert status == 1
        err = capsys.readouterr().err
        assert err.startswith("error[")

    def test_parse_error_names_line(self, tmp_path, capsys):
        content = tmp_path / "bad.content"
        cites = tmp_path / "bad.cites"
        content.write_text("n1 1 2 label\n")
        cites.write_text("")
        status = run_cli("train", "--dataset", str(tmp_path / "bad"))
        assert status == 1
        assert "error[parse]" in capsys.readouterr().err

    def test_gamma_mismatch_reported(self, sbm_path, tmp_path, capsys):
        request_path = tmp_path / "req.txt"
        save_request(UnlearnRequest.nodes([0]), request_path)
        config = tmp_path / "mismatch.json"
        config.write_text(json.dumps({
            "dataset": {"graph_path": str(sbm_path)},
            "backbone": {"kind": "sgc", "l2": 1e-4},
            "gif": {"l2": 5e-2},
        }))
        status = run_cli("unlearn", "--config", str(config),
                         "--request", str(request_path))
        assert status == 1
        assert "error[config]" in capsys.readouterr().err


class TestConvert:
    def test_round_trip_through_citation_format(self, tmp_path):
        edges = tmp_path / "edges.txt"
        feats = tmp_path / "feats.csv"
        edges.write_text("a b\nb c\n")
        feats.write_text("a,1,0,x\nb,0,1,y\nc,1,1,x\n")
        out_base = tmp_path / "converted"
        assert run_cli("convert", "--edges", str(edges), "--features-csv",
                       str(feats), "--out", str(out_base)) == 0
        from graphunlearn import DatasetDescriptor, load_citation_dataset

        graph = load_citation_dataset(DatasetDescriptor(
            content_path=f"{out_base}.content", cites_path=f"{out_base}.cites",
            split_fraction=0.67, split_seed=0,
        ))
        assert graph.num_nodes == 3
        assert graph.edges == {(0, 1), (1, 2)}
        np.testing.assert_array_equal(graph.labels, [0, 1, 0])

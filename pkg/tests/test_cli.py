import json

import pytest

from fedsynth.cli import main
from fedsynth.data import load_dataset_csv

from conftest import tiny_config


@pytest.fixture
def cfg_path(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(tiny_config().to_json())
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


class TestCli:
    def test_config_dump_round_trips(self, capsys, cfg_path):
        code, out, _ = run(capsys, "config", "--config", cfg_path, "--seed", 9)
        assert code == 0
        doc = json.loads(out)
        assert doc["seed"] == 9 and doc["rounds"] == 3

    def test_train_generate_estimate(self, capsys, cfg_path, tmp_path):
        code, out, _ = run(capsys, "train", "--config", cfg_path, "--out", tmp_path / "t")
        assert code == 0
        gen = json.loads(out)["generator"]
        code, out, _ = run(capsys, "generate", "--config", cfg_path, "--generator", gen,
                           "--per-class", 30, "--out", tmp_path / "g")
        assert code == 0 and json.loads(out)["rows"] == 240
        art = load_dataset_csv(tmp_path / "g" / "artificial.csv")
        assert art.class_counts().tolist() == [30] * 8
        code, out, _ = run(capsys, "estimate-privacy", "--config", cfg_path,
                           "--real", tmp_path / "t" / "real_train_iid.csv",
                           "--artificial", tmp_path / "g" / "artificial.csv",
                           "--out", tmp_path / "d")
        assert code == 0 and json.loads(out)["gamma"] == 1e-15
        assert (tmp_path / "d" / "dap.json").exists()
        code, out, _ = run(capsys, "attack", "--config", cfg_path,
                           "--real", tmp_path / "t" / "real_train_iid.csv",
                           "--artificial", tmp_path / "g" / "artificial.csv",
                           "--test", tmp_path / "t" / "real_test.csv", "--out", tmp_path / "a")
        assert code == 0 and "fedgp_detection" in json.loads(out)
        code, out, _ = run(capsys, "evaluate", "--config", cfg_path,
                           "--train", tmp_path / "g" / "artificial.csv",
                           "--test", tmp_path / "t" / "real_test.csv", "--out", tmp_path / "e")
        assert code == 0 and 0 <= json.loads(out)["accuracy"] <= 1

    def test_experiment_learning(self, capsys, cfg_path, tmp_path):
        code, out, _ = run(capsys, "experiment", "--config", cfg_path, "--pipeline", "learning",
                           "--out", tmp_path)
        assert code == 0
        assert len(json.loads(out)["learning"]) == 2
        assert (tmp_path / "learning.csv").exists()

    def test_bad_config_exit_code(self, capsys, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"rounds": 0}')
        code, _, err = run(capsys, "config", "--config", path)
        assert code == 2 and "rounds" in err

    def test_missing_file(self, capsys, cfg_path, tmp_path):
        code, _, err = run(capsys, "evaluate", "--config", cfg_path, "--train",
                           tmp_path / "nope.csv", "--test", tmp_path / "nope.csv")
        assert code == 2 and err.startswith("error:")

    @pytest.mark.parametrize("argv", [["experiment", "--seed", "-3"],
                                      ["estimate-privacy", "--real", "x.csv"],
                                      ["frobnicate"]])
    def test_usage_errors(self, argv):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 2

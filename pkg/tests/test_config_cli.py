"""Config schema and CLI tests: defaults, strict key checking, the
canonical hash, and every subcommand exercised in-process through main()
including exit-code mapping."""

import json

import pytest

from noisylab.cli import main
from noisylab.config import (CONFIG_VERSION, config_hash, load_config,
                             parse_config)
from noisylab.data import load_csv
from noisylab.errors import ConfigError, DataIOError


def write_json(path, payload):
    path.write_text(json.dumps(payload))
    return str(path)


def tiny_train_payload(out_dir=None, **extra):
    """3-class, 24-sample, 3-epoch run: finishes in well under a second."""
    payload = {
        "dataset": {"classes": 3, "dim": 4, "per_class": 10},
        "train": {"epochs": 3, "warmup_epochs": 1, "batch_size": 8,
                  "hidden_width": 8},
        "seeds": [7],
    }
    if out_dir is not None:
        payload["out_dir"] = str(out_dir)
    payload.update(extra)
    return payload


class TestParseConfig:
    def test_empty_config_takes_defaults(self):
        cfg = parse_config({})
        assert cfg.dataset.classes == 10
        assert cfg.dataset.dim == 32
        assert cfg.dataset.per_class == 500
        assert cfg.noise.kind == "symmetric" and cfg.noise.epsilon == 0.4
        assert cfg.train.epochs == 60 and cfg.train.warmup_epochs == 9
        assert cfg.train.batch_size == 128 and cfg.train.hidden_width == 64
        assert cfg.selection.tau == 0.001
        assert cfg.schedule.strategy == "jump_update"
        assert cfg.seeds == [1]
        assert cfg.out_dir == "runs"

    def test_keep_ratio_follows_noise_rate_when_unset(self):
        assert parse_config({}).selection.small_loss_keep_ratio == pytest.approx(0.6)
        cfg = parse_config({"noise": {"epsilon": 0.5}})
        assert cfg.selection.small_loss_keep_ratio == pytest.approx(0.5)

    def test_explicit_keep_ratio_wins(self):
        cfg = parse_config({"selection": {"small_loss_keep_ratio": 0.9}})
        assert cfg.selection.small_loss_keep_ratio == 0.9

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="experiment"):
            parse_config({"experiment": "x"})

    def test_unknown_nested_key_reports_path(self):
        with pytest.raises(ConfigError, match="train.*learning_rate"):
            parse_config({"train": {"learning_rate": 0.1}})

    def test_version_mismatch(self):
        with pytest.raises(ConfigError, match="version"):
            parse_config({"version": CONFIG_VERSION + 1})

    def test_class_map_keys_coerced_to_int(self):
        cfg = parse_config({"noise": {"kind": "asymmetric", "epsilon": 0.3,
                                      "class_map": {"7": 1}}})
        assert cfg.noise.class_map == {7: 1}

    def test_class_map_rejects_non_integer_entries(self):
        with pytest.raises(ConfigError):
            parse_config({"noise": {"kind": "asymmetric", "epsilon": 0.3,
                                    "class_map": {"a": "b"}}})

    @pytest.mark.parametrize("seeds", [[], "1", [1, "2"]])
    def test_bad_seeds(self, seeds):
        with pytest.raises(ConfigError):
            parse_config({"seeds": seeds})

    def test_bad_strategies_entry(self):
        with pytest.raises(ConfigError):
            parse_config({"strategies": ["standard", "warp"]})

    def test_bad_effect_rate_entry(self):
        with pytest.raises(ConfigError):
            parse_config({"effect_rates": [0.5, 0.0]})


class TestConfigHash:
    def test_stable_and_short(self):
        a = config_hash(parse_config({}))
        b = config_hash(parse_config({}))
        assert a == b
        assert len(a) == 12 and int(a, 16) >= 0

    def test_ignores_output_location_fields(self):
        base = config_hash(parse_config({}))
        moved = parse_config({"out_dir": "elsewhere", "dump_selection": True})
        assert config_hash(moved) == base

    def test_sensitive_to_noise_rate(self):
        assert config_hash(parse_config({})) != config_hash(
            parse_config({"noise": {"epsilon": 0.2}}))


class TestLoadConfig:
    def test_round_trip(self, tmp_path):
        path = write_json(tmp_path / "cfg.json", {"seeds": [3, 4]})
        assert load_config(path).seeds == [3, 4]

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataIOError):
            load_config(tmp_path / "nope.json")

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(path)


class TestCliCodebook:
    def test_writes_csv(self, tmp_path, capsys):
        out = tmp_path / "cb.csv"
        assert main(["codebook", "--classes", "10", "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert len(lines) == 10
        # default width for 10 classes: smallest power of two >= max(16, 20)
        assert all(len(line.split(",")) == 32 for line in lines)
        assert "10 classes x 32 bits" in capsys.readouterr().out

    def test_too_many_classes_exits_2(self, tmp_path, capsys):
        rc = main(["codebook", "--classes", "40", "--bits", "32",
                   "--out", str(tmp_path / "cb.csv")])
        assert rc == 2
        assert capsys.readouterr().err.startswith("error[config]")


class TestCliDataPipeline:
    def test_gen_then_inject(self, tmp_path):
        train = tmp_path / "train.csv"
        test = tmp_path / "test.csv"
        rc = main(["gen-data", "--classes", "3", "--dim", "4",
                   "--per-class", "30", "--seed", "5",
                   "--train-out", str(train), "--test-out", str(test)])
        assert rc == 0
        noisy = tmp_path / "noisy.csv"
        rc = main(["inject", "--input", str(train), "--out", str(noisy),
                   "--kind", "symmetric", "--epsilon", "0.4", "--seed", "5"])
        assert rc == 0
        ds = load_csv(noisy)
        assert ds.n_samples == 72
        assert 0.2 < ds.noise_rate() < 0.6

    def test_inject_rejects_malformed_class_map(self, tmp_path, capsys):
        train = tmp_path / "train.csv"
        main(["gen-data", "--classes", "3", "--dim", "4", "--per-class", "10",
              "--train-out", str(train), "--test-out", str(tmp_path / "t.csv")])
        rc = main(["inject", "--input", str(train),
                   "--out", str(tmp_path / "n.csv"), "--kind", "asymmetric",
                   "--epsilon", "0.3", "--class-map", "not json"])
        assert rc == 2
        assert "error[config]" in capsys.readouterr().err


def run_dir_of(out_root):
    """out/<hash>/<label>-seed<N>: resolve the single cell directory."""
    hashes = [p for p in out_root.iterdir() if p.is_dir()]
    assert len(hashes) == 1
    cells = [p for p in hashes[0].iterdir() if p.is_dir()]
    return hashes[0], cells


class TestCliTrain:
    def test_artifact_layout(self, tmp_path, capsys):
        out = tmp_path / "out"
        cfg = write_json(tmp_path / "cfg.json", tiny_train_payload(out))
        assert main(["train", "--config", cfg]) == 0
        assert "train: jump_update seed=7" in capsys.readouterr().out

        _, cells = run_dir_of(out)
        assert [c.name for c in cells] == ["jump_update-seed7"]
        cell = cells[0]
        names = sorted(p.name for p in cell.iterdir())
        assert names == ["curves.csv", "epochs.jsonl", "model.ckpt",
                         "model.ckpt.json", "summary.json"]

        rows = [json.loads(line) for line in
                (cell / "epochs.jsonl").read_text().splitlines()]
        assert len(rows) == 3
        assert set(rows[0]) == {"epoch", "strategy", "selected_count",
                                "skipped_batches", "commit_count", "mean_lag",
                                "test_acc", "sel_precision", "sel_recall",
                                "sel_f1", "epoch_wall_ms"}
        summary = json.loads((cell / "summary.json").read_text())
        assert summary["strategy"] == "jump_update" and summary["seed"] == 7
        assert (cell / "model.ckpt").read_bytes()[:8] == b"NLABCKP1"

    def test_out_dir_env_var(self, tmp_path, monkeypatch):
        out = tmp_path / "from-env"
        monkeypatch.setenv("NOISYLAB_OUT_DIR", str(out))
        cfg = write_json(tmp_path / "cfg.json", tiny_train_payload())
        assert main(["train", "--config", cfg]) == 0
        assert out.exists()

    def test_out_dir_flag_beats_env_var(self, tmp_path, monkeypatch):
        ignored = tmp_path / "ignored"
        used = tmp_path / "used"
        monkeypatch.setenv("NOISYLAB_OUT_DIR", str(ignored))
        cfg = write_json(tmp_path / "cfg.json", tiny_train_payload())
        assert main(["train", "--config", cfg, "--out-dir", str(used)]) == 0
        assert used.exists() and not ignored.exists()

    def test_dump_selection_writes_per_epoch_csvs(self, tmp_path):
        out = tmp_path / "out"
        cfg = write_json(tmp_path / "cfg.json", tiny_train_payload(out))
        assert main(["train", "--config", cfg, "--dump-selection"]) == 0
        _, cells = run_dir_of(out)
        dumps = sorted((cells[0] / "selection").glob("epoch_*.csv"))
        assert dumps
        header = dumps[0].read_text().splitlines()[0]
        assert header == ("sample_index,variance,bce_loss,det_flag,cls_flag,"
                          "combined_flag,is_truly_clean")

    def test_missing_config_exits_4(self, tmp_path, capsys):
        assert main(["train", "--config", str(tmp_path / "gone.json")]) == 4
        assert "error[io]" in capsys.readouterr().err

    def test_malformed_config_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{]")
        assert main(["train", "--config", str(bad)]) == 2
        assert "error[config]" in capsys.readouterr().err

    @pytest.mark.filterwarnings("ignore:overflow encountered:RuntimeWarning")
    def test_divergence_exits_3(self, tmp_path, capsys):
        payload = {
            "dataset": {"classes": 3, "dim": 4, "per_class": 10},
            "train": {"epochs": 10, "warmup_epochs": 0, "batch_size": 4,
                      "lr0": 1e6, "lr_min": 1e6, "weight_decay": 1.0,
                      "hidden_width": 8},
            "schedule": {"strategy": "standard"},
            "seeds": [1],
            "out_dir": str(tmp_path / "out"),
        }
        cfg = write_json(tmp_path / "cfg.json", payload)
        assert main(["train", "--config", cfg]) == 3
        assert "error[numeric]" in capsys.readouterr().err


class TestCliCompare:
    def test_strategy_set_writes_comparison_table(self, tmp_path, capsys):
        out = tmp_path / "out"
        cfg = write_json(tmp_path / "cfg.json", tiny_train_payload(
            out, strategies=["standard", "self_update"]))
        assert main(["compare", "--config", cfg]) == 0
        stdout = capsys.readouterr().out
        assert "compare: standard" in stdout and "compare: self_update" in stdout

        hash_dir, cells = run_dir_of(out)
        assert sorted(c.name for c in cells) == ["self_update-seed7",
                                                 "standard-seed7"]
        lines = (hash_dir / "comparison.csv").read_text().splitlines()
        assert lines[0].startswith("label,strategy,effect_rate,n_seeds")
        assert len(lines) == 3
        assert lines[1].split(",")[0] == "standard"

    def test_effect_rate_sweep_labels(self, tmp_path):
        out = tmp_path / "out"
        cfg = write_json(tmp_path / "cfg.json", tiny_train_payload(
            out,
            schedule={"strategy": "self_update"},
            effect_rates=[1.0, 0.5]))
        assert main(["compare", "--config", cfg]) == 0
        _, cells = run_dir_of(out)
        assert sorted(c.name for c in cells) == ["self_update-r0.5-seed7",
                                                 "self_update-r1-seed7"]

    def test_single_strategy_exits_2(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "cfg.json", tiny_train_payload(
            tmp_path / "out", strategies=["standard"]))
        assert main(["compare", "--config", cfg]) == 2
        assert "error[config]" in capsys.readouterr().err


class TestCliReport:
    def test_reads_back_run_artifacts(self, tmp_path, capsys):
        out = tmp_path / "out"
        cfg = write_json(tmp_path / "cfg.json", tiny_train_payload(out))
        main(["train", "--config", cfg])
        capsys.readouterr()
        assert main(["report", "--run-dir", str(out)]) == 0
        stdout = capsys.readouterr().out
        assert "report: jump_update" in stdout
        assert "[summary.json disagrees]" not in stdout

    def test_missing_dir_exits_4(self, tmp_path, capsys):
        assert main(["report", "--run-dir", str(tmp_path / "absent")]) == 4
        assert "error[io]" in capsys.readouterr().err

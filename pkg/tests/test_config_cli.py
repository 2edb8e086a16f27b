import json

import pytest

from glave.cli import main
from glave.config import RunConfig, load_config
from glave.errors import ConfigError


class TestRunConfig:
    def test_defaults_are_valid(self):
        cfg = RunConfig()
        assert cfg.transport == "replay"
        assert cfg.shot_threshold == 27.0
        assert cfg.similarity_threshold == 0.85
        assert cfg.overlap_threshold == 0.5
        assert cfg.min_shot_len == 15

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"transport": "imaginary"},
            {"overlap_threshold": 1.5},
            {"similarity_threshold": 0.0},
            {"shot_threshold": -1.0},
            {"min_shot_len": 0},
            {"fan_out": 0},
            {"max_gap": -1},
        ],
    )
    def test_out_of_range_rejected(self, kwargs):
        with pytest.raises(ConfigError):
            RunConfig(**kwargs)

    def test_api_key_masked_in_json(self):
        doc = RunConfig(api_key="secret-token").to_json()
        assert doc["api_key"] == "***"
        assert "secret-token" not in json.dumps(doc)

    def test_gateway_config_mapping(self):
        cfg = RunConfig(fan_out=7, fixtures_dir="fx", max_retries=1)
        gw = cfg.gateway_config()
        assert gw.max_inflight == 7
        assert str(gw.fixtures_dir) == "fx"
        assert gw.max_retries == 1

    def test_pipeline_options_mapping(self):
        opts = RunConfig(dual_stream=False, max_tokens=512).pipeline_options()
        assert opts.dual_stream is False
        assert opts.max_tokens == 512


class TestLoadConfig:
    def test_file_values_applied(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"model_name": "from-file", "fan_out": 2}))
        cfg = load_config(path=path, env={})
        assert cfg.model_name == "from-file"
        assert cfg.fan_out == 2

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"modle_name": "typo"}))
        with pytest.raises(ConfigError, match="modle_name"):
            load_config(path=path, env={})

    @pytest.mark.parametrize(
        "doc",
        [
            {"fan_out": "four"},
            {"shot_threshold": True},
            {"visual_prompt": "yes"},
            {"model_name": 7},
        ],
    )
    def test_wrong_types_rejected(self, tmp_path, doc):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(ConfigError):
            load_config(path=path, env={})

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(path=tmp_path / "absent.json", env={})

    def test_env_overrides_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"api_key": "from-file"}))
        cfg = load_config(path=path, env={"GLAVE_API_KEY": "from-env"})
        assert cfg.api_key == "from-env"

    def test_flag_overrides_env_and_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"endpoint": "http://file"}))
        cfg = load_config(
            path=path,
            env={"GLAVE_ENDPOINT": "http://env"},
            overrides={"endpoint": "http://flag"},
        )
        assert cfg.endpoint == "http://flag"

    def test_none_overrides_skipped(self):
        cfg = load_config(env={}, overrides={"model_name": None})
        assert cfg.model_name == "gpt-4o"


class TestCliExitCodes:
    def test_config_error_is_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "cfg.json"
        bad.write_text(json.dumps({"transport": "imaginary"}))
        code = main(["keyframes", "--workspace", str(tmp_path),
                     "--config", str(bad)])
        assert code == 2
        assert "config error" in capsys.readouterr().err

    def test_replay_miss_is_exit_1(self, workspace_copy, tmp_path, capsys):
        empty = tmp_path / "no-fixtures"
        empty.mkdir()
        code = main(["caption", "--workspace", str(workspace_copy),
                     "--replay", "--fixtures-dir", str(empty)])
        assert code == 1
        assert "replay failure" in capsys.readouterr().err

    def test_missing_report_is_exit_1(self, tmp_path, capsys):
        code = main(["report", "--eval-dir", str(tmp_path)])
        assert code == 1

    def test_missing_workspace_flag_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["keyframes"])
        assert exc.value.code == 2


class TestCliStages:
    def test_keyframes_reproduces_corpus_artifacts(self, workspace_copy):
        shots_before = (workspace_copy / "shots.json").read_text()
        kf_before = (workspace_copy / "keyframes.json").read_text()
        assert main(["keyframes", "--workspace", str(workspace_copy)]) == 0
        assert (workspace_copy / "shots.json").read_text() == shots_before
        assert (workspace_copy / "keyframes.json").read_text() == kf_before

    def test_track_and_mark_reproduce_corpus_artifacts(self, workspace_copy):
        tracks_before = (workspace_copy / "tracks.json").read_text()
        marks_before = (workspace_copy / "marks.json").read_text()
        marked_before = {
            p.name: p.read_bytes() for p in (workspace_copy / "marked").iterdir()
        }
        assert main(["track", "--workspace", str(workspace_copy)]) == 0
        assert main(["mark", "--workspace", str(workspace_copy)]) == 0
        assert (workspace_copy / "tracks.json").read_text() == tracks_before
        assert (workspace_copy / "marks.json").read_text() == marks_before
        marked_after = {
            p.name: p.read_bytes() for p in (workspace_copy / "marked").iterdir()
        }
        assert marked_after == marked_before

    def test_fixtures_verify_clean(self, corpus_fixtures):
        assert main(["fixtures", "verify", "--fixtures-dir",
                     str(corpus_fixtures)]) == 0

    def test_fixtures_verify_flags_tampering(self, corpus_fixtures, tmp_path, capsys):
        import shutil

        tampered = tmp_path / "fixtures"
        shutil.copytree(corpus_fixtures, tampered)
        victim = sorted(tampered.glob("*.json"))[0]
        doc = json.loads(victim.read_text())
        doc["request"]["temperature"] = 0.99
        victim.write_text(json.dumps(doc))
        code = main(["fixtures", "verify", "--fixtures-dir", str(tampered)])
        assert code == 1
        assert "MISMATCH" in capsys.readouterr().err

    def test_report_renders_markdown_and_figure(self, tmp_path, capsys):
        from glave.evaluation import EvalRecord, JudgeVerdict, aggregate_report
        from glave.report import write_report

        records = [
            EvalRecord(question_id="q1", video_id="v", level="scene",
                       qtype="Scene setting", gold="A",
                       verdicts=tuple(JudgeVerdict(c, c) for c in "AAA")),
        ]
        eval_dir = tmp_path / "eval" / "pipeline"
        write_report(eval_dir, aggregate_report(records), plot=False)
        assert main(["report", "--eval-dir", str(eval_dir)]) == 0
        assert "# Evaluation report" in capsys.readouterr().out
        assert (eval_dir / "report.md").exists()
        assert (eval_dir / "accuracy_by_qtype.png").exists()

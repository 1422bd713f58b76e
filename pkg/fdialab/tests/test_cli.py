"""
测试命令行入口
"""

import json

import numpy as np
import pytest

import fdialab.simulation as simulation_module
from fdialab.cli import build_parser, main


@pytest.mark.integration
class TestCli:
    """测试 fdialab 子命令"""

    def test_calibrate(self, capsys):
        assert main(["calibrate"]) == 0
        data = json.loads(capsys.readouterr().out)
        assert data["tau"] > 0
        assert 0.0 < data["alpha"] < 1.0

    def test_run_writes_csv(self, tmp_path, capsys):
        config = tmp_path / "short.json"
        config.write_text(
            json.dumps({"episode_len": 30, "attack_start": 10, "attack_len": 15, "W": 5, "richardson_every": 0}),
            encoding="utf-8",
        )
        out = tmp_path / "out"
        assert main(["run", "--config", str(config), "--mode", "po", "--seed", "2", "--out", str(out)]) == 0
        assert (out / "trace_po_seed2.csv").exists()
        assert (out / "report_po_seed2.csv").exists()
        assert "devmax" in capsys.readouterr().out

    def test_bad_config_exit_code(self, tmp_path, capsys):
        """配置错误：退出码 2，stderr 输出一行 JSON"""
        config = tmp_path / "bad.json"
        config.write_text(json.dumps({"windw": 3}), encoding="utf-8")
        assert main(["calibrate", "--config", str(config)]) == 2
        err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert err["error_code"] == "UNKNOWN_CONFIG_KEY"

    @pytest.mark.exception
    def test_linear_algebra_failure_is_json_line(self, tmp_path, capsys, monkeypatch):
        """回合中 numpy 的 LinAlgError：退出码 1，stderr 最后一行是带步号的 JSON"""
        original = simulation_module.closed_loop_step

        def failing(system, state, *args, **kwargs):
            if state.k == 7:
                raise np.linalg.LinAlgError("SVD did not converge")
            return original(system, state, *args, **kwargs)

        monkeypatch.setattr(simulation_module, "closed_loop_step", failing)
        config = tmp_path / "quiet.json"
        config.write_text(json.dumps({"episode_len": 20, "attack_start": 0, "attack_len": 0, "W": 5}), encoding="utf-8")
        assert main(["run", "--config", str(config)]) == 1
        err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert err["error_code"] == "EPISODE_ERROR"
        assert err["details"]["step"] == 7
        assert err["details"]["cause"] == "FACTORIZATION_ERROR"

    def test_missing_config(self, tmp_path, capsys):
        assert main(["calibrate", "--config", str(tmp_path / "nope.json")]) == 2

    def test_parser_rejects_unknown_mode(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["run", "--mode", "x"])

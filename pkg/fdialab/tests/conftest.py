"""
Pytest 配置和共享的 fixtures
"""

import os
import sys
import pytest
from pathlib import Path

# 添加项目根目录到路径
project_root = Path(__file__).parent.parent.parent
sys.path.insert(0, str(project_root))

os.environ.setdefault("LOG_FILE_PATH", str(Path(os.environ.get("TMPDIR", "/tmp")) / "fdialab-test.log"))

from fdialab.estimator import kf_design
from fdialab.models.scenario import ScenarioConfig
from fdialab.robot import PlantModel, make_chain
from fdialab.simulation import build_system


@pytest.fixture
def test_env():
    """提供测试环境变量"""
    return {
        "PORT": "8001",
        "LOG_LEVEL": "DEBUG",
    }


@pytest.fixture
def default_cfg():
    """默认场景（与 config/scenario.json 一致）"""
    return ScenarioConfig()


@pytest.fixture
def short_cfg():
    """短场景：60 步，攻击 20..59"""
    return ScenarioConfig(
        episode_len=60,
        attack_start=20,
        attack_len=40,
        W=5,
        richardson_every=0,
        mode="d",
    )


@pytest.fixture
def quiet_cfg():
    """无攻击短场景"""
    return ScenarioConfig(episode_len=80, attack_start=0, attack_len=0, W=5)


@pytest.fixture(scope="session")
def plant_model():
    """6 关节双积分器模型"""
    return PlantModel.double_integrator(6, 0.01, 1e-2, 1e-6)


@pytest.fixture(scope="session")
def kf_gains(plant_model):
    return kf_design(plant_model)


@pytest.fixture(scope="session")
def chain():
    return make_chain([0.65, 0.55, 0.45, 0.45, 0.45, 0.45])


@pytest.fixture
def system(default_cfg):
    return build_system(default_cfg)


@pytest.fixture
def tmp_config_dir(tmp_path, monkeypatch):
    """指向临时目录的 FDIALAB_CONFIG_DIR"""
    import fdialab.config as config_module

    monkeypatch.setattr(config_module, "CONFIG_DIR", str(tmp_path))
    return tmp_path


@pytest.fixture(autouse=True)
def clear_scenario_cache():
    """场景缓存按文件名索引，测试间清空"""
    from fdialab.services.scenario_service import ScenarioService

    ScenarioService.clear_cache()
    yield
    ScenarioService.clear_cache()

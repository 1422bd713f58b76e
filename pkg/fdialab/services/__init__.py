# 业务逻辑层

from fdialab.services.scenario_service import ScenarioService
from fdialab.services.experiment_service import ExperimentService

__all__ = [
    'ScenarioService',
    'ExperimentService',
]

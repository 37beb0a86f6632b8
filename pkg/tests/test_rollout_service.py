import numpy as np
import pytest

from vla_services.core import ar_model
from vla_services.core.policies import (
    ControlPolicy,
    ExpertPolicy,
    RandomPolicy,
    TokenPolicy,
)
from vla_services.entities import (
    InvalidArgumentError,
    MalformedGenerationError,
    RolloutConfig,
)
from vla_services.main import create_rollout_service
from vla_services.services.rollout_service import EPISODE_COLUMNS


class Mumbler(ControlPolicy):
    def plan(self, state):
        raise MalformedGenerationError("stray text token")


def test_expert_solves_every_episode():
    result = create_rollout_service(RolloutConfig()).evaluate(
        ExpertPolicy, n=5, task="pick_place", seed=100)
    assert result.success_rate == 1.0
    assert list(result.episodes.columns) == EPISODE_COLUMNS
    assert result.episodes['env_seed'].tolist() == [100, 101, 102, 103, 104]


def test_step_cap(rollout_config):
    service = create_rollout_service(rollout_config)
    result = service.rollout(RandomPolicy(seed=0), "pick_place", 3)
    assert result.length <= rollout_config.max_env_steps
    assert result.chunks == result.length


def test_malformed_generation_fails_episode():
    service = create_rollout_service(RolloutConfig())
    result = service.evaluate(Mumbler, n=3, task="pick_place", seed=0)
    assert result.success_rate == 0.0
    assert result.malformed_count == 3
    assert result.summary()['mean_action_tokens'] is None


def test_n_must_be_positive():
    with pytest.raises(InvalidArgumentError):
        create_rollout_service().evaluate(ExpertPolicy, 0, "pick_place", 0)


def test_workers_keep_results(model_config, bundle, rollout_config):
    model = ar_model.init_model(model_config, seed=0)
    service = create_rollout_service(rollout_config)

    def make():
        return TokenPolicy(model, bundle, rollout_config)

    serial = service.evaluate(make, 3, "pick_place", seed=7)
    threaded = service.evaluate(make, 3, "pick_place", seed=7, workers=3)
    assert serial.episodes.equals(threaded.episodes)
    flags = serial.episodes[['success', 'malformed', 'overflow']]
    assert flags.to_numpy().dtype == np.bool_

from dataclasses import replace

import numpy as np
import pytest

from vla_services.core import ar_model, policies, sim_env
from vla_services.core.policies import (
    ExpertPolicy,
    RandomPolicy,
    TokenPolicy,
    binarize_grip,
)
from vla_services.entities import (
    ContextOverflowError,
    HistoryConfig,
    InvalidArgumentError,
    MalformedGenerationError,
)


@pytest.fixture(scope="module")
def model(model_config):
    return ar_model.init_model(model_config, seed=0)


@pytest.fixture
def start():
    return sim_env.reset("pick_place", 4)


@pytest.fixture
def policy(model, bundle, rollout_config, start):
    state, instruction = start
    policy = TokenPolicy(model, bundle, rollout_config)
    policy.reset(instruction, state)
    return policy


@pytest.fixture
def valid_block(bundle, episodes):
    poses = sim_env.pose_trajectory(sim_env.replay(episodes[0]))
    return bundle.chunk_tokens(poses, 0, bundle.chunk_size)


def fake_generate(monkeypatch, emitted):
    def generate(model, prefix, stop, max_new, **kwargs):
        return list(prefix) + list(emitted)
    monkeypatch.setattr(policies.ar_model, "generate", generate)


def test_binarize_grip():
    values = np.array([0.9, 0.5, 0.1, -0.2, -0.51, -1.0])
    assert binarize_grip(values, 0.5).tolist() == [1, 0, 0, 0, -1, -1]


def test_expert_plans_one_step(start):
    state, _ = start
    plan = ExpertPolicy().plan(state)
    assert plan.shape == (1, 3)


def test_random_policy_is_reproducible(start):
    state, instruction = start
    plans = []
    for _ in range(2):
        policy = RandomPolicy(seed=3)
        policy.reset(instruction, state)
        plans.append(np.vstack([policy.plan(state) for _ in range(4)]))
    np.testing.assert_array_equal(plans[0], plans[1])
    assert np.all(np.abs(plans[0][:, :2]) <= sim_env.MAX_DELTA)


class TestTokenPolicy:
    def test_chunk_size_must_match_codec(self, model, bundle,
                                         rollout_config):
        cfg = replace(rollout_config, chunk_size=bundle.chunk_size + 1)
        with pytest.raises(InvalidArgumentError):
            TokenPolicy(model, bundle, cfg)

    def test_budget_must_fit_largest_block(self, model, bundle,
                                           rollout_config):
        cfg = replace(rollout_config, token_budget=2)
        with pytest.raises(InvalidArgumentError):
            TokenPolicy(model, bundle, cfg)

    def test_prompt_ends_with_boa(self, policy, bundle):
        prompt = policy.prompt()
        assert prompt[0] == bundle.vocab.bos
        assert prompt[-1] == bundle.vocab.boa

    def test_prompt_carries_history_actions(self, model, bundle,
                                            rollout_config, start):
        state, instruction = start
        cfg = replace(rollout_config,
                      history=HistoryConfig(history=1, stride=1))
        policy = TokenPolicy(model, bundle, cfg)
        policy.reset(instruction, state)
        assert bundle.vocab.eoa not in policy.prompt()
        for _ in range(3):
            state, *_ = sim_env.step(state, sim_env.scripted_expert(state))
            policy.observe(state)
        prompt = policy.prompt()
        assert prompt.count(bundle.vocab.eoa) == 1
        assert prompt.count(bundle.vocab.boa) == 2

    def test_plan_decodes_block(self, policy, bundle, start, valid_block,
                                monkeypatch):
        state, _ = start
        fake_generate(monkeypatch, valid_block + [bundle.vocab.eoa])
        actions = policy.plan(state)
        assert actions.shape == (bundle.chunk_size, 3)
        assert set(actions[:, 2]) <= {-1.0, 0.0, 1.0}
        assert policy.token_counts == [len(valid_block)]
        assert policy.last_targets.shape == (bundle.chunk_size, 3)

    def test_full_chunk_closes_without_eoa(self, policy, bundle, start,
                                           valid_block, monkeypatch):
        assert policy.block_closed(valid_block)
        assert policy.block_closed([bundle.vocab.eoa])
        assert not policy.block_closed([])
        fake_generate(monkeypatch, valid_block)
        assert policy.plan(start[0]).shape == (bundle.chunk_size, 3)

    def test_unclosed_block_is_overflow(self, policy, start, monkeypatch):
        fake_generate(monkeypatch, [])
        with pytest.raises(ContextOverflowError):
            policy.plan(start[0])

    @pytest.mark.parametrize("emitted", ["text", "empty"])
    def test_bad_block_is_malformed(self, policy, bundle, start, emitted,
                                    monkeypatch):
        vocab = bundle.vocab
        block = [vocab.text_range.start] if emitted == "text" else []
        fake_generate(monkeypatch, block + [vocab.eoa])
        with pytest.raises(MalformedGenerationError):
            policy.plan(start[0])

    def test_real_model_generates_or_fails_typed(self, policy, start):
        try:
            actions = policy.plan(start[0])
        except (ContextOverflowError, MalformedGenerationError):
            return
        assert actions.shape[1] == 3

from dataclasses import replace

import numpy as np
import pytest

from vla_services.core import sim_env
from vla_services.entities import InvalidArgumentError, TaskKind


class TestReset:
    def test_same_seed_same_layout(self):
        assert sim_env.reset("pick_place", 7) == sim_env.reset("pick_place", 7)

    def test_layout_bounds(self):
        for seed in range(20):
            state, instruction = sim_env.reset("pick_place", seed)
            assert 2 <= len(state.blocks) <= 4
            assert 1 <= len(state.goals) <= 2
            assert len(state.subgoals) == 1
            assert instruction.startswith("move the ")

    def test_long_horizon_has_two_subgoals(self):
        state, instruction = sim_env.reset(TaskKind.LONG_HORIZON, 3)
        assert len(state.subgoals) == 2
        assert " then " in instruction

    def test_unknown_task(self):
        with pytest.raises(InvalidArgumentError):
            sim_env.reset("stack_tower", 0)


class TestStep:
    def test_actions_are_clipped(self):
        state, _ = sim_env.reset("pick_place", 0)
        after, reward, done, success = sim_env.step(state, [5.0, -5.0, 0.0])
        moved = np.subtract(after.agent, state.agent)
        assert np.all(np.abs(moved) <= sim_env.MAX_DELTA + 1e-12)
        assert after.step_count == 1
        assert (reward, done, success) == (0.0, False, False)

    def test_rejects_malformed_action(self):
        state, _ = sim_env.reset("pick_place", 0)
        with pytest.raises(InvalidArgumentError):
            sim_env.step(state, [0.0, 0.0])
        with pytest.raises(InvalidArgumentError):
            sim_env.step(state, [np.inf, 0.0, 0.0])

    def test_zero_action_only_advances_the_clock(self):
        state, _ = sim_env.reset("pick_place", 4)
        after, reward, _, _ = sim_env.step(state, np.zeros(3))
        assert after == replace(state, step_count=state.step_count + 1)
        assert reward == 0.0

    def test_zero_action_while_holding(self):
        states, _, _ = sim_env.rollout_expert(TaskKind.PICK_PLACE, 4)
        holding = next(s for s in states
                       if s.held_index is not None and s.hold_steps > 1)
        after, _, _, _ = sim_env.step(holding, np.zeros(3))
        assert after == replace(holding, step_count=holding.step_count + 1)
        assert after.grip == 1.0

    def test_grip_command_latches(self):
        state, _ = sim_env.reset("pick_place", 4)
        opened, _, _, _ = sim_env.step(state, [0.0, 0.0, -1.0])
        idle, _, _, _ = sim_env.step(opened, [0.05, 0.0, 0.0])
        assert opened.grip == idle.grip == -1.0

    def test_episode_ends_at_step_limit(self):
        state, _ = sim_env.reset("pick_place", 0)
        done = False
        for _ in range(sim_env.MAX_STEPS):
            state, _, done, _ = sim_env.step(state, np.zeros(3))
        assert done and not state.success


class TestRender:
    def test_frame_format(self):
        state, _ = sim_env.reset("pick_place", 1)
        frame = sim_env.render(state)
        assert frame.shape == (32, 32, 3)
        assert frame.dtype == np.uint8

    def test_render_is_pure(self):
        state, _ = sim_env.reset("pick_place", 1)
        np.testing.assert_array_equal(sim_env.render(state),
                                      sim_env.render(state))


class TestExpert:
    @pytest.mark.parametrize("task", ["pick_place", "long_horizon"])
    def test_expert_solves_every_seed(self, task):
        for seed in range(10):
            states, actions, _ = sim_env.rollout_expert(TaskKind(task), seed)
            assert states[-1].success
            assert len(actions) < sim_env.MAX_STEPS

    @pytest.mark.parametrize("task, limit", [("pick_place", 40),
                                             ("long_horizon", 40)])
    def test_expert_mean_length_over_many_seeds(self, task, limit):
        lengths = [len(sim_env.rollout_expert(TaskKind(task), seed)[1])
                   for seed in range(500)]
        assert np.mean(lengths) <= limit

    def test_expert_carries_the_block(self):
        states, _, _ = sim_env.rollout_expert(TaskKind.PICK_PLACE, 2)
        assert any(s.held_index is not None for s in states)
        assert states[-1].held_index is None


class TestDataset:
    def test_generation_is_deterministic(self):
        first = sim_env.generate_dataset(3, "pick_place", seed=5)
        second = sim_env.generate_dataset(3, "pick_place", seed=5)
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a.actions, b.actions)
            np.testing.assert_array_equal(a.frames, b.frames)

    def test_episodes_replay_exactly(self, episodes):
        for episode in episodes:
            states = sim_env.replay(episode)
            frames = np.stack([sim_env.render(s) for s in states])
            np.testing.assert_array_equal(frames, episode.frames)
            assert states[-1].success == episode.success

    def test_actions_stay_in_bounds(self, episodes):
        for episode in episodes:
            assert np.all(np.abs(episode.actions[:, :2])
                          <= sim_env.MAX_DELTA + 1e-6)
            assert np.all(np.abs(episode.actions[:, 2]) <= 1.0)

    def test_task_mix(self):
        episodes = sim_env.generate_dataset(
            6, {"pick_place": 0.5, "long_horizon": 0.5}, seed=2)
        assert {e.task for e in episodes} <= set(TaskKind)
        assert all(e.length >= 6 for e in episodes)

    def test_per_task_cap(self):
        episodes = sim_env.generate_dataset(5, "pick_place", seed=1,
                                            max_episodes_per_task=2)
        assert len(episodes) == 2

    def test_n_must_be_positive(self):
        with pytest.raises(InvalidArgumentError):
            sim_env.generate_dataset(0, "pick_place", seed=0)

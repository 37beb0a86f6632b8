import numpy as np
import pytest

from vla_services.entities import HistoryConfig, InvalidArgumentError, Strategy
from vla_services.main import create_packing_service
from vla_services.services import PackingService
from vla_services.services.packing_service import foreign_chunk


@pytest.fixture
def packer(bundle, model_config):
    return create_packing_service(bundle, model_config.max_seq_len)


@pytest.fixture
def pair(episodes):
    return episodes[:2]


class TestClipWindows:
    def test_consecutive(self):
        assert PackingService.clip_windows(5, 3) == [
            [0, 1, 2], [1, 2, 3], [2, 3, 4], [3, 4]]

    def test_frame_interval(self):
        assert PackingService.clip_windows(5, 3, 2) == [
            [0, 2, 4], [1, 3], [2, 4]]

    def test_single_frame_has_no_window(self):
        assert PackingService.clip_windows(1, 6) == []


class TestPosttrain:
    def test_none_is_empty(self, packer, pair):
        assert packer.posttrain_dataset("none", pair) == []

    def test_policy_is_not_a_posttrain_row(self, packer, pair):
        with pytest.raises(InvalidArgumentError):
            packer.posttrain_dataset("policy", pair)

    def test_t2i_one_per_frame(self, packer, pair):
        sequences = packer.posttrain_dataset("t2i", pair)
        assert len(sequences) == sum(e.length for e in pair)

    @pytest.mark.parametrize("strategy", ["world_model", "video"])
    def test_clip_strategies(self, packer, pair, bundle, strategy):
        sequences = packer.posttrain_dataset(strategy, pair, clip_frames=6)
        assert len(sequences) == sum(e.length - 1 for e in pair)
        action_ids = set(bundle.vocab.action_range)
        assert all(not action_ids & set(s.ids) for s in sequences)

    def test_action_pred(self, packer, pair):
        sequences = packer.posttrain_dataset("action_pred", pair)
        assert len(sequences) == sum(e.length - 1 for e in pair)

    def test_vision_rows_refuse_episodes(self, packer, pair):
        with pytest.raises(InvalidArgumentError):
            packer.vision_dataset(Strategy.WORLD_MODEL, pair)


def test_foreign_chunk_permutes_and_flips():
    chunk = np.array([[0.1, 0.2, 1.0], [0.0, -0.05, -1.0]])
    expected = np.array([[-0.2, 0.1, -1.0], [0.05, 0.0, 1.0]])
    np.testing.assert_allclose(foreign_chunk(chunk), expected)


class TestPolicy:
    def test_one_sample_per_step(self, packer, pair):
        history = HistoryConfig(history=1, stride=10)
        sequences = packer.policy_dataset(pair, history)
        assert len(sequences) == sum(e.length - 1 for e in pair)

    def test_only_final_block_is_target(self, packer, bundle, episodes):
        encoded = packer.encode_episode(episodes[0])
        H = bundle.chunk_size
        last = len(encoded.grids) - 1
        samples = packer.policy_samples(encoded,
                                        HistoryConfig(history=1, stride=1))
        for t in (0, 3):
            expected = bundle.chunk_tokens(encoded.poses, t,
                                           min(t + H, last))
            seq = samples[t]
            targets = [i for i, m in zip(seq.ids, seq.mask) if m]
            assert targets == expected

    def test_joint_samples_carry_vision_mask(self, packer, pair):
        sequences = packer.policy_dataset(pair, HistoryConfig(history=1),
                                          supervise_frames=True)
        assert all(s.vision_mask is not None for s in sequences)
        assert any(any(s.vision_mask) for s in sequences)


def test_shard_round_trip(tmp_path, packer, pair):
    sequences = packer.posttrain_dataset("world_model", pair)
    path = packer.write(sequences, tmp_path / "shards" / "wm.bin")
    loaded = packer.read(path)
    assert [s.ids for s in loaded] == [list(s.ids) for s in sequences]

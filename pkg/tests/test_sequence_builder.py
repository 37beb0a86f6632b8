import numpy as np
import pytest

from vla_services.core.sequence_builder import (
    SequenceBuilder,
    read_shard,
    write_shard,
)
from vla_services.entities import (
    CorruptStreamError,
    HistoryConfig,
    InvalidArgumentError,
    Modality,
    SequenceTooLongError,
)

INSTR = [8, 9]


def grid(value: int) -> np.ndarray:
    return np.full((2, 2), value)


def bracket_targets(ids, vocab, frames_from: int = 1, last_action=True):
    """
    Independent mask oracle: walk the brackets and mark frame tokens from
    the `frames_from`-th frame on, plus the final action block.
    """
    targets = [False] * len(ids)
    frame_index, action_blocks = -1, []
    inside = None
    for i, token in enumerate(ids):
        if token == vocab.boi:
            frame_index += 1
            inside = "frame"
        elif token == vocab.boa:
            action_blocks.append([])
            inside = "action"
        elif token in (vocab.eoi, vocab.eoa):
            inside = None
        elif inside == "frame" and frame_index >= frames_from:
            targets[i] = True
        elif inside == "action":
            action_blocks[-1].append(i)
    if last_action and action_blocks:
        for i in action_blocks[-1]:
            targets[i] = True
    return targets


class TestVisionStrategies:
    def test_world_model_layout(self, builder, small_vocab):
        seq = builder.world_model(INSTR, [grid(17), grid(18), grid(19)])
        v = small_vocab
        assert seq.ids[:3] == [v.bos] + INSTR
        assert seq.ids[-1] == v.eos
        assert seq.mask == bracket_targets(seq.ids, v)
        assert seq.masked_count == 8

    def test_video_has_no_text(self, builder, small_vocab):
        seq = builder.video([grid(17), grid(18)])
        assert not any(s.modality == Modality.TEXT for s in seq.spans)
        assert seq.mask == bracket_targets(seq.ids, small_vocab)

    def test_t2i_supervises_the_image(self, builder, small_vocab):
        seq = builder.t2i(INSTR, grid(20))
        assert seq.mask == bracket_targets(seq.ids, small_vocab,
                                           frames_from=0)

    def test_world_model_needs_two_frames(self, builder):
        with pytest.raises(InvalidArgumentError):
            builder.world_model(INSTR, [grid(17)])

    def test_t2i_needs_instruction(self, builder):
        with pytest.raises(InvalidArgumentError):
            builder.t2i([], grid(17))

    def test_non_vision_frame_token(self, builder):
        with pytest.raises(InvalidArgumentError):
            builder.world_model(INSTR, [grid(17), grid(30)])


class TestActionStrategies:
    def test_action_pred_masks_only_actions(self, builder, small_vocab):
        seq = builder.action_pred(INSTR, grid(17), [25, 26, 27])
        assert seq.mask == bracket_targets(seq.ids, small_vocab,
                                           frames_from=99)
        assert seq.masked_count == 3

    def test_policy_supervises_last_block(self, builder, small_vocab):
        steps = [(grid(17), [25, 26]), (grid(18), [27]), (grid(19), [28])]
        history = HistoryConfig(history=2, stride=1)
        seq = builder.policy(INSTR, steps, history)
        assert seq.ids.count(small_vocab.boa) == 3
        assert seq.mask == bracket_targets(seq.ids, small_vocab,
                                           frames_from=99)
        assert [seq.ids[i] for i in seq.masked_positions] == [28]
        assert seq.vision_mask is None

    def test_policy_history_stride(self, builder, small_vocab):
        steps = [(grid(17 + i % 8), [25 + i]) for i in range(5)]
        seq = builder.policy(INSTR, steps, HistoryConfig(history=1, stride=3))
        frames = [s.timestep for s in seq.spans
                  if s.modality == Modality.VISION]
        assert frames == [1, 4]

    def test_history_before_episode_start_is_dropped(self, builder):
        steps = [(grid(17), [25]), (grid(18), [26])]
        seq = builder.policy(INSTR, steps, HistoryConfig(history=1, stride=5))
        assert len([s for s in seq.spans
                    if s.modality == Modality.VISION]) == 1

    def test_mask_history_actions(self, small_vocab):
        builder = SequenceBuilder(small_vocab, mask_history_actions=True)
        steps = [(grid(17), [25, 26]), (grid(18), [27])]
        seq = builder.policy(INSTR, steps, HistoryConfig(history=1))
        assert [seq.ids[i] for i in seq.masked_positions] == [25, 26, 27]

    def test_joint_vision_mask(self, builder, small_vocab):
        steps = [(grid(17), [25]), (grid(18), [26])]
        seq = builder.policy(INSTR, steps, HistoryConfig(history=1),
                             supervise_frames=True)
        vision = [seq.ids[i] for i, m in enumerate(seq.vision_mask) if m]
        assert vision == [18] * 4
        assert not any(m and v for m, v in zip(seq.mask, seq.vision_mask))

    def test_prompt_is_prefix_of_training_sequence(self, builder,
                                                   small_vocab):
        steps = [(grid(17), [25, 26]), (grid(18), [27])]
        history = HistoryConfig(history=1)
        seq = builder.policy(INSTR, steps, history)
        prompt = builder.policy_prompt(INSTR, steps, history)
        assert prompt[-1] == small_vocab.boa
        assert seq.ids[:len(prompt)] == prompt

    def test_multi_view_frames(self, builder, small_vocab):
        views = np.stack([grid(17), grid(18)])
        seq = builder.action_pred(INSTR, views, [25])
        assert seq.ids.count(small_vocab.boi) == 2

    def test_empty_action_block(self, builder):
        with pytest.raises(InvalidArgumentError):
            builder.action_pred(INSTR, grid(17), [])

    def test_length_limit(self, small_vocab):
        builder = SequenceBuilder(small_vocab, max_seq_len=10)
        with pytest.raises(SequenceTooLongError):
            builder.world_model(INSTR, [grid(17), grid(18)])


class TestShards:
    def test_round_trip(self, tmp_path, builder):
        steps = [(grid(17), [25]), (grid(18), [26, 27])]
        sequences = [
            builder.world_model(INSTR, [grid(17), grid(18)]),
            builder.policy(INSTR, steps, HistoryConfig(history=1),
                           supervise_frames=True),
        ]
        loaded = read_shard(write_shard(sequences, tmp_path / "s.bin"))
        assert [s.ids for s in loaded] == [s.ids for s in sequences]
        assert [s.mask for s in loaded] == [s.mask for s in sequences]
        assert loaded[0].vision_mask is None
        assert loaded[1].vision_mask == sequences[1].vision_mask

    def test_truncated_shard(self, tmp_path, builder):
        path = write_shard([builder.t2i(INSTR, grid(17))], tmp_path / "s.bin")
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(CorruptStreamError):
            read_shard(path)


def brackets_balance(ids, vocab) -> bool:
    """BOS first, EOS last, and BOI/EOI and BOA/EOA pairs never nest."""
    if ids[0] != vocab.bos or ids[-1] != vocab.eos:
        return False
    closing = {vocab.boi: vocab.eoi, vocab.boa: vocab.eoa}
    expected = None
    for token in ids[1:-1]:
        if token in closing:
            if expected is not None:
                return False
            expected = closing[token]
        elif token in (vocab.eoi, vocab.eoa):
            if token != expected:
                return False
            expected = None
    return expected is None


def random_episode(rng, vocab):
    n_steps = int(rng.integers(2, 7))
    text, vision, action = (vocab.text_range, vocab.vision_range,
                            vocab.action_range)
    instr = rng.integers(text.start, text.stop,
                         size=rng.integers(1, 4)).tolist()
    steps = [
        (rng.integers(vision.start, vision.stop, size=(2, 2)),
         rng.integers(action.start, action.stop,
                      size=rng.integers(1, 5)).tolist())
        for _ in range(n_steps)
    ]
    return instr, steps


def test_masks_agree_with_bracket_scanner_on_random_episodes(builder,
                                                             small_vocab):
    rng = np.random.default_rng(2024)
    v = small_vocab
    for _ in range(500):
        instr, steps = random_episode(rng, v)
        frames = [frame for frame, _ in steps]
        history = HistoryConfig(history=int(rng.integers(0, 3)),
                                stride=int(rng.integers(1, 4)))
        built = [
            (builder.world_model(instr, frames), 1),
            (builder.video(frames), 1),
            (builder.t2i(instr, frames[0]), 0),
            (builder.action_pred(instr, frames[0], steps[0][1]), 99),
            (builder.policy(instr, steps, history), 99),
        ]
        for seq, frames_from in built:
            assert seq.mask == bracket_targets(seq.ids, v, frames_from)
            assert brackets_balance(seq.ids, v)

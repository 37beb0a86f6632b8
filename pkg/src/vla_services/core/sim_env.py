"""
Deterministic block-arena environment.

An agent moves over the unit square, picks up colored blocks and drops
them on colored pads. Actions are (dx, dy, grip): per-step displacement in
[-0.1, 0.1] and a grip command in [-1, 1] (>0 closes, <0 opens).
"""
import logging
from dataclasses import replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from ..entities import (
    Block,
    EnvState,
    Episode,
    Goal,
    InvalidArgumentError,
    TaskKind,
)

logger = logging.getLogger(__name__)

MAX_DELTA = 0.1
MAX_STEPS = 100
PICK_RADIUS = 0.05
SUCCESS_RADIUS = 0.05
ARENA_LOW, ARENA_HIGH = 0.1, 0.9
MIN_SEPARATION = 0.15
IMAGE_SIZE = 32

EXPERT_GAIN = 0.5
EXPERT_REACH = 0.02
EXPERT_DWELL = 2

BLOCK_COLORS: Dict[str, Tuple[int, int, int]] = {
    "red": (220, 30, 30),
    "green": (30, 200, 60),
    "blue": (40, 70, 230),
    "yellow": (235, 215, 30),
}
PAD_COLORS: Dict[str, Tuple[int, int, int]] = {
    "purple": (150, 40, 200),
    "orange": (250, 140, 20),
}
BACKGROUND = (40, 40, 40)
AGENT_COLOR = (255, 255, 255)
SIZES = {"pad": 6, "block": 4, "agent": 2}


def parse_task(task: Union[str, TaskKind]) -> TaskKind:
    try:
        return TaskKind(task)
    except ValueError:
        raise InvalidArgumentError(f"unknown task spec {task!r}")


def _sample_positions(rng: np.random.Generator,
                      count: int) -> List[Tuple[float, float]]:
    """Rejection-sample `count` mutually separated points."""
    while True:
        placed: List[np.ndarray] = []
        for _ in range(count):
            for _ in range(1000):
                candidate = rng.uniform(ARENA_LOW, ARENA_HIGH, size=2)
                if all(np.linalg.norm(candidate - p) >= MIN_SEPARATION
                       for p in placed):
                    placed.append(candidate)
                    break
            else:
                break
        if len(placed) == count:
            return [(float(p[0]), float(p[1])) for p in placed]


def describe(subgoals: Sequence[Tuple[str, str]]) -> str:
    return " then ".join(
        f"move the {block} block to the {pad} pad" for block, pad in subgoals
    )


def reset(task: Union[str, TaskKind], seed: int) -> Tuple[EnvState, str]:
    """Seeded layout: 2-4 blocks, 1-2 pads (2 for long-horizon)."""
    kind = parse_task(task)
    rng = np.random.default_rng(seed)
    n_blocks = int(rng.integers(2, 5))
    n_pads = 2 if kind == TaskKind.LONG_HORIZON else int(rng.integers(1, 3))
    block_names = list(BLOCK_COLORS)
    pad_names = list(PAD_COLORS)
    block_colors = [block_names[i] for i in
                    rng.choice(len(block_names), n_blocks, replace=False)]
    pad_colors = [pad_names[i] for i in
                  rng.choice(len(pad_names), n_pads, replace=False)]
    positions = _sample_positions(rng, n_blocks + n_pads + 1)
    blocks = tuple(Block(position=positions[i], color=block_colors[i])
                   for i in range(n_blocks))
    goals = tuple(Goal(position=positions[n_blocks + j], color=pad_colors[j])
                  for j in range(n_pads))

    if kind == TaskKind.LONG_HORIZON:
        targets = rng.choice(n_blocks, 2, replace=False)
        pads = rng.permutation(2)
        subgoals = tuple((block_colors[int(b)], pad_colors[int(p)])
                         for b, p in zip(targets, pads))
    else:
        target = int(rng.integers(n_blocks))
        pad = int(rng.integers(n_pads))
        subgoals = ((block_colors[target], pad_colors[pad]),)

    state = EnvState(
        agent=positions[-1],
        blocks=blocks,
        goals=goals,
        subgoals=subgoals,
        task=kind,
        seed=seed,
    )
    return state, describe(subgoals)


def _block_index(state: EnvState, color: str) -> int:
    for i, block in enumerate(state.blocks):
        if block.color == color:
            return i
    raise InvalidArgumentError(f"no {color} block in the arena")


def _goal(state: EnvState, color: str) -> Goal:
    for goal in state.goals:
        if goal.color == color:
            return goal
    raise InvalidArgumentError(f"no {color} pad in the arena")


def _distance(a: Sequence[float], b: Sequence[float]) -> float:
    return float(np.hypot(a[0] - b[0], a[1] - b[1]))


def _subgoal_done(state: EnvState, index: int) -> bool:
    block_color, pad_color = state.subgoals[index]
    block = state.blocks[_block_index(state, block_color)]
    pad = _goal(state, pad_color)
    return (not block.held
            and _distance(block.position, pad.position) <= SUCCESS_RADIUS)


def clip_action(action) -> np.ndarray:
    action = np.asarray(action, dtype=np.float64).reshape(-1)
    if action.shape != (3,):
        raise InvalidArgumentError(f"actions are 3-vectors, got {action.shape}")
    if not np.all(np.isfinite(action)):
        raise InvalidArgumentError("action contains non-finite values")
    return np.array([
        np.clip(action[0], -MAX_DELTA, MAX_DELTA),
        np.clip(action[1], -MAX_DELTA, MAX_DELTA),
        np.clip(action[2], -1.0, 1.0),
    ])


def step(state: EnvState, action) -> Tuple[EnvState, float, bool, bool]:
    """
    Move, then grip, then check the current subgoal.

    A zero grip command leaves the gripper as it was, so the zero action
    only advances the step counter.
    """
    dx, dy, grip = clip_action(action)
    agent = (float(np.clip(state.agent[0] + dx, 0.0, 1.0)),
             float(np.clip(state.agent[1] + dy, 0.0, 1.0)))
    blocks = list(state.blocks)
    held = state.held_index
    if held is not None:
        blocks[held] = replace(blocks[held], position=agent)

    if grip > 0 and held is None:
        candidates = [
            (_distance(agent, b.position), i) for i, b in enumerate(blocks)
            if _distance(agent, b.position) <= PICK_RADIUS
        ]
        if candidates:
            held = min(candidates)[1]
            blocks[held] = replace(blocks[held], position=agent, held=True)
    elif grip < 0 and held is not None:
        blocks[held] = replace(blocks[held], held=False)
        held = None

    if held is None:
        hold_steps = 0
    elif state.held_index != held:
        hold_steps = 1
    else:
        hold_steps = state.hold_steps + (1 if grip > 0 else 0)

    new_state = replace(
        state,
        agent=agent,
        blocks=tuple(blocks),
        grip=float(grip) if grip != 0 else state.grip,
        hold_steps=hold_steps,
        step_count=state.step_count + 1,
    )
    reward = 0.0
    index = new_state.subgoal_index
    while index < len(new_state.subgoals) and _subgoal_done(new_state, index):
        index += 1
        reward += 1.0
    new_state = replace(new_state, subgoal_index=index)
    success = new_state.success
    done = success or new_state.step_count >= MAX_STEPS
    return new_state, reward, done, success


def _fill(image: np.ndarray, position: Sequence[float], size: int,
          color: Tuple[int, int, int]):
    top = int(np.clip(np.floor(position[1] * IMAGE_SIZE - size / 2),
                      0, IMAGE_SIZE - size))
    left = int(np.clip(np.floor(position[0] * IMAGE_SIZE - size / 2),
                       0, IMAGE_SIZE - size))
    image[top:top + size, left:left + size] = color


def render(state: EnvState) -> np.ndarray:
    """32x32 uint8 RGB: pads, then resting blocks, held block, agent."""
    image = np.empty((IMAGE_SIZE, IMAGE_SIZE, 3), dtype=np.uint8)
    image[:] = BACKGROUND
    for goal in state.goals:
        _fill(image, goal.position, SIZES["pad"], PAD_COLORS[goal.color])
    for block in state.blocks:
        if not block.held:
            _fill(image, block.position, SIZES["block"],
                  BLOCK_COLORS[block.color])
    held = state.held_index
    if held is not None:
        _fill(image, state.agent, SIZES["block"],
              BLOCK_COLORS[state.blocks[held].color])
    _fill(image, state.agent, SIZES["agent"], AGENT_COLOR)
    return image


def idle_steps(seed: int) -> int:
    return 1 + seed % 2


def _approach(agent: Sequence[float], target: Sequence[float]) -> np.ndarray:
    offset = np.array([target[0] - agent[0], target[1] - agent[1]])
    return np.clip(EXPERT_GAIN * offset, -MAX_DELTA, MAX_DELTA)


def scripted_expert(state: EnvState) -> np.ndarray:
    """Approach, grip, dwell, carry, release; a pure function of state."""
    if state.success or state.step_count < idle_steps(state.seed):
        return np.zeros(3)
    block_color, pad_color = state.subgoals[state.subgoal_index]
    target = _block_index(state, block_color)
    held = state.held_index
    if held is not None and held != target:
        return np.array([0.0, 0.0, -1.0])
    if held == target:
        if state.hold_steps <= EXPERT_DWELL:
            return np.array([0.0, 0.0, 1.0])
        pad = _goal(state, pad_color).position
        if _distance(state.agent, pad) <= EXPERT_REACH:
            return np.array([0.0, 0.0, -1.0])
        dx, dy = _approach(state.agent, pad)
        return np.array([dx, dy, 1.0])
    position = state.blocks[target].position
    if _distance(state.agent, position) <= EXPERT_REACH:
        return np.array([0.0, 0.0, 1.0])
    dx, dy = _approach(state.agent, position)
    return np.array([dx, dy, 0.0])


def as_stored(action) -> np.ndarray:
    """Round-trip through float32, the precision actions are stored at."""
    return np.asarray(action, dtype=np.float32).astype(np.float64)


def simulate(task: Union[str, TaskKind], seed: int,
             actions: Sequence) -> List[EnvState]:
    """States visited when replaying `actions` from the seeded reset."""
    state, _ = reset(task, seed)
    states = [state]
    for action in actions:
        state, _, done, _ = step(state, action)
        states.append(state)
        if done:
            break
    return states


def replay(episode: Episode) -> List[EnvState]:
    return simulate(episode.task, episode.seed, episode.actions)


def pose_trajectory(states: Sequence[EnvState]) -> np.ndarray:
    """Absolute (x, y, grip) per state."""
    return np.stack([s.pose for s in states])


def _is_static(states: Sequence[EnvState], k: int, threshold: float) -> bool:
    """True when step k -> k+1 changes neither pose much nor held state."""
    before, after = states[k], states[k + 1]
    delta = np.max(np.abs(after.pose - before.pose))
    return (delta < threshold
            and before.held_index == after.held_index
            and before.subgoal_index == after.subgoal_index)


def trim_static_ends(states: Sequence[EnvState], actions: Sequence,
                     threshold: float) -> List[np.ndarray]:
    start, stop = 0, len(actions)
    while start < stop and _is_static(states, start, threshold):
        start += 1
    while stop > start and _is_static(states, stop - 1, threshold):
        stop -= 1
    return [np.asarray(a) for a in actions[start:stop]]


def thin_keyframes(states: Sequence[EnvState], actions: Sequence,
                   threshold: float) -> List[np.ndarray]:
    """
    Merge away interior frames whose pose change is below `threshold`.

    Frame k is dropped when its incoming step is static, the held flag is
    the same on both sides of it, and the merged displacement is still a
    legal single action. The first and last frames always survive.
    """
    if not actions:
        return []
    merged: List[np.ndarray] = []
    pending = as_stored(actions[0])
    for k in range(1, len(actions)):
        candidate = as_stored([pending[0] + actions[k][0],
                               pending[1] + actions[k][1],
                               actions[k][2]])
        droppable = (
            _is_static(states, k - 1, threshold)
            and states[k].held_index == states[k + 1].held_index
            and np.all(np.abs(candidate[:2]) <= MAX_DELTA)
        )
        if droppable:
            pending = candidate
        else:
            merged.append(pending)
            pending = as_stored(actions[k])
    merged.append(pending)
    return merged


def rollout_expert(task: TaskKind, seed: int) -> Tuple[List[EnvState],
                                                       List[np.ndarray],
                                                       str]:
    state, instruction = reset(task, seed)
    states, actions = [state], []
    done = False
    while not done:
        action = as_stored(scripted_expert(state))
        state, _, done, _ = step(state, action)
        states.append(state)
        actions.append(action)
    return states, actions, instruction


def make_episode(task: TaskKind, seed: int, instruction: str,
                 actions: Sequence, episode_id: int = 0) -> Episode:
    """Re-simulate `actions` so frames always match the stored actions."""
    states = simulate(task, seed, actions)
    actions = [as_stored(a) for a in actions[:len(states) - 1]]
    frames = np.stack([render(s) for s in states])
    return Episode(
        instruction=instruction,
        frames=frames,
        actions=np.asarray(actions, dtype=np.float64).reshape(-1, 3),
        success=states[-1].success,
        task=task,
        seed=seed,
        episode_id=episode_id,
    )


def generate_dataset(n: int, task_mix: Union[str, Mapping[str, float]],
                     seed: int, keyframe_threshold: float = 0.01,
                     min_frames: int = 6, trim_static: bool = True,
                     max_episodes_per_task: Optional[int] = None,
                     progress: bool = False) -> List[Episode]:
    """Expert demonstrations, keyframe-thinned and filtered."""
    if n <= 0:
        raise InvalidArgumentError(f"n must be positive, got {n}")
    if isinstance(task_mix, (str, TaskKind)):
        task_mix = {TaskKind(task_mix).value: 1.0}
    kinds = [parse_task(name) for name in task_mix]
    weights = np.asarray([task_mix[k.value] for k in kinds], dtype=float)
    if np.any(weights < 0) or weights.sum() <= 0:
        raise InvalidArgumentError("task mix weights must be non-negative")
    weights = weights / weights.sum()

    rng = np.random.default_rng(seed)
    episodes: List[Episode] = []
    per_task: Dict[TaskKind, int] = {k: 0 for k in kinds}
    dropped = 0
    for _ in tqdm(range(n), desc="episodes", disable=not progress):
        kind = kinds[int(rng.choice(len(kinds), p=weights))]
        episode_seed = int(rng.integers(0, 2**31 - 1))
        if (max_episodes_per_task is not None
                and per_task[kind] >= max_episodes_per_task):
            dropped += 1
            continue
        states, actions, instruction = rollout_expert(kind, episode_seed)
        if trim_static:
            actions = trim_static_ends(states, actions, keyframe_threshold)
            states = simulate(kind, episode_seed, actions)
        actions = thin_keyframes(states, actions, keyframe_threshold)
        episode = make_episode(kind, episode_seed, instruction, actions,
                               episode_id=len(episodes))
        if episode.length < min_frames or not instruction.strip():
            dropped += 1
            continue
        episodes.append(episode)
        per_task[kind] += 1
    logger.info("Generated %d episodes (%d dropped) from seed %d",
                len(episodes), dropped, seed)
    return episodes

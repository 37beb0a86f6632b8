import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Union

import numpy as np
import pandas as pd

from ..core import sim_env
from ..core.policies import ControlPolicy, TokenPolicy
from ..entities import (
    ContextOverflowError,
    EnvState,
    InvalidArgumentError,
    MalformedGenerationError,
    RolloutConfig,
    TaskKind,
)

logger = logging.getLogger(__name__)

PolicyFactory = Callable[[], ControlPolicy]
EPISODE_COLUMNS = ['episode', 'env_seed', 'success', 'length', 'reward',
                   'malformed', 'overflow', 'chunks', 'mean_action_tokens']


@dataclass
class RolloutResult:
    states: List[EnvState]
    actions: List[np.ndarray] = field(default_factory=list)
    success: bool = False
    reward: float = 0.0
    malformed: bool = False
    overflow: bool = False
    chunks: int = 0
    action_tokens: List[int] = field(default_factory=list)

    @property
    def length(self) -> int:
        return len(self.states) - 1


@dataclass
class EvaluationResult:
    success_rate: float
    episodes: pd.DataFrame

    @property
    def malformed_count(self) -> int:
        return int(self.episodes['malformed'].sum())

    @property
    def mean_length(self) -> float:
        return float(self.episodes['length'].mean())

    def summary(self) -> dict:
        tokens = self.episodes['mean_action_tokens'].dropna()
        return {
            'episodes': len(self.episodes),
            'success_rate': self.success_rate,
            'malformed': self.malformed_count,
            'overflow': int(self.episodes['overflow'].sum()),
            'mean_length': self.mean_length,
            'mean_action_tokens': float(tokens.mean()) if len(tokens) else None,
        }


class RolloutService:
    """
    Closed-loop evaluation of any ControlPolicy in the block arena.

    Like a driving examiner: the same routes (env seeds) for every
    candidate, the examiner never grabs the wheel, and a candidate who
    mumbles an unreadable instruction (a malformed action block) fails the
    route on the spot.
    """

    def __init__(self, cfg: RolloutConfig):
        self.cfg = cfg

    def rollout(self, policy: ControlPolicy, task: Union[str, TaskKind],
                env_seed: int) -> RolloutResult:
        state, instruction = sim_env.reset(task, env_seed)
        policy.reset(instruction, state)
        result = RolloutResult(states=[state])
        done = False
        while not done and state.step_count < self.cfg.max_env_steps:
            try:
                planned = policy.plan(state)
            except MalformedGenerationError as e:
                logger.debug("Episode %d malformed: %s", env_seed, e)
                result.malformed = True
                break
            except ContextOverflowError as e:
                logger.debug("Episode %d over budget: %s", env_seed, e)
                result.overflow = True
                break
            result.chunks += 1
            for action in np.atleast_2d(planned):
                state, reward, done, success = sim_env.step(state, action)
                result.states.append(state)
                result.actions.append(np.asarray(action, dtype=np.float64))
                result.reward += reward
                policy.observe(state)
                if done or state.step_count >= self.cfg.max_env_steps:
                    break
        result.success = state.success
        if isinstance(policy, TokenPolicy):
            result.action_tokens = list(policy.token_counts)
        return result

    def _row(self, index: int, env_seed: int, result: RolloutResult) -> dict:
        tokens = result.action_tokens
        return {
            'episode': index,
            'env_seed': env_seed,
            'success': bool(result.success),
            'length': result.length,
            'reward': result.reward,
            'malformed': result.malformed,
            'overflow': result.overflow,
            'chunks': result.chunks,
            'mean_action_tokens': float(np.mean(tokens)) if tokens else None,
        }

    def evaluate(self, make_policy: PolicyFactory, n: int,
                 task: Union[str, TaskKind], seed: int,
                 workers: int = 1) -> EvaluationResult:
        """
        Mean success over env seeds ``seed .. seed + n - 1``.

        Each episode gets its own policy from `make_policy`; with several
        workers episodes run on a thread pool but rows keep seed order.
        """
        if n <= 0:
            raise InvalidArgumentError(f"n must be positive, got {n}")
        sim_env.parse_task(task)
        seeds = [seed + i for i in range(n)]

        def run(index: int) -> dict:
            result = self.rollout(make_policy(), task, seeds[index])
            return self._row(index, seeds[index], result)

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                rows = list(pool.map(run, range(n)))
        else:
            rows = [run(i) for i in range(n)]
        df = pd.DataFrame(rows, columns=EPISODE_COLUMNS)
        rate = float(df['success'].mean())
        logger.info("Evaluated %d episodes of %s: success %.3f, malformed %d",
                    n, sim_env.parse_task(task).value, rate,
                    int(df['malformed'].sum()))
        return EvaluationResult(success_rate=rate, episodes=df)

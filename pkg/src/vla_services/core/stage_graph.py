"""Content-keyed pipeline stage DAG."""
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence

import networkx as nx

from ..entities import InvalidArgumentError
from ..utils.hashing import sha256_json

logger = logging.getLogger(__name__)

STAGE_KINDS = ("dataset", "codecs", "pack", "posttrain", "finetune", "eval")


@dataclass(frozen=True)
class Stage:
    """One unit of pipeline work; `key` hashes kind, params and inputs."""
    kind: str
    params: Mapping[str, Any]
    inputs: tuple = ()
    key: str = field(default="", compare=False)

    @property
    def short_key(self) -> str:
        return self.key[:12]


class StageGraph:
    """
    Registry of pipeline stages keyed by content.

    Like a kitchen that notices two recipes both start with the same stock:
    the stock is made once and ladled into both. Adding a stage whose kind,
    parameters and inputs match an existing one returns the existing key.
    """

    def __init__(self):
        self.graph = nx.DiGraph()
        self._node_registry: Dict[str, Stage] = {}

    def add(self, kind: str, params: Mapping[str, Any],
            inputs: Sequence[str] = ()) -> str:
        if kind not in STAGE_KINDS:
            raise InvalidArgumentError(f"unknown stage kind {kind!r}")
        for key in inputs:
            if key not in self._node_registry:
                raise InvalidArgumentError(f"unknown input stage {key[:12]}")
        key = sha256_json({'kind': kind, 'params': dict(params),
                           'inputs': list(inputs)})
        if key in self._node_registry:
            return key
        stage = Stage(kind=kind, params=dict(params), inputs=tuple(inputs),
                      key=key)
        self._node_registry[key] = stage
        self.graph.add_node(key, kind=kind)
        for upstream in inputs:
            self.graph.add_edge(upstream, key)
        return key

    def __len__(self) -> int:
        return len(self._node_registry)

    def __getitem__(self, key: str) -> Stage:
        return self._node_registry[key]

    def order(self) -> List[Stage]:
        """Topological order, ties broken by (kind position, key)."""
        rank = {kind: i for i, kind in enumerate(STAGE_KINDS)}
        keys = nx.lexicographical_topological_sort(
            self.graph,
            key=lambda k: (rank[self._node_registry[k].kind], k),
        )
        return [self._node_registry[k] for k in keys]

    def counts(self) -> Dict[str, int]:
        totals = {kind: 0 for kind in STAGE_KINDS}
        for stage in self._node_registry.values():
            totals[stage.kind] += 1
        return totals

    def execute(self, runner: Callable[[Stage, Dict[str, Any]], Any],
                done: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        """
        Run every stage once, upstream first.

        `runner(stage, results)` receives the results of all stages run so
        far. Stages whose key is already in `done` are not re-run.
        """
        results: Dict[str, Any] = dict(done or {})
        for stage in self.order():
            if stage.key in results:
                logger.debug("Stage %s %s cached", stage.kind,
                             stage.short_key)
                continue
            logger.info("Running stage %s %s", stage.kind, stage.short_key,
                        extra={'stage': stage.kind, 'key': stage.key})
            results[stage.key] = runner(stage, results)
        return results

import pytest

from vla_services.core.config_loader import resolve_config
from vla_services.entities import InvalidArgumentError
from vla_services.main import create_ablation_service
from vla_services.services import AblationService


def with_ablation(overrides, **ablation):
    layered = {k: dict(v) for k, v in overrides.items()}
    layered["ablation"] = ablation
    return resolve_config(file_values=layered)


@pytest.fixture
def small_config(tiny_overrides):
    return with_ablation(
        tiny_overrides, strategies=["none", "world_model"], seeds=[0],
        eval_episodes=2, run_data_fraction=False, run_joint=False,
        history_sweep=["1+1"],
    )


class TestArms:
    def test_every_arm_per_seed(self, tiny_overrides):
        config = with_ablation(tiny_overrides,
                               strategies=["none", "world_model"],
                               seeds=[0])
        arms = AblationService.arms(config)
        assert len(arms) == 8
        assert [a.arm for a in arms].count("history") == 3

    def test_shared_stages_are_deduplicated(self, tiny_overrides):
        config = with_ablation(tiny_overrides,
                               strategies=["none", "world_model"],
                               seeds=[0])
        service = create_ablation_service()
        graph, _, _, arm_keys = service.build_graph(
            AblationService.arms(config), config, "corpus")
        keys = {(spec.arm, spec.strategy, spec.history): tune
                for spec, tune, _ in arm_keys}
        assert (keys[("history", "world_model", "1+1")]
                == keys[("strategy", "world_model", "1+1")])
        counts = graph.counts()
        assert counts["posttrain"] == 1
        assert counts["finetune"] == 7
        assert counts["eval"] == 7

    def test_empty_corpus(self, small_config):
        service = create_ablation_service()
        with pytest.raises(InvalidArgumentError):
            service.ablation_suite([], None, small_config, None)


def test_suite_runs_and_reuses_stages(tmp_path, episodes, bundle,
                                      small_config):
    service = create_ablation_service()
    first = service.ablation_suite(episodes, bundle, small_config, tmp_path)
    assert len(first.report) == 3
    assert first.stage_counts["posttrain"] == 1
    assert first.stage_counts["finetune"] == 2
    assert (tmp_path / "report.csv").exists()
    assert (tmp_path / "gates.json").exists()
    assert 'world_model_vs_none' in first.verdicts

    rerun = create_ablation_service()

    def no_training(*args, **kwargs):
        raise AssertionError("finished stages must be reused")

    rerun.training_service.run_stage = no_training
    second = rerun.ablation_suite(episodes, bundle, small_config, tmp_path)
    assert (second.report['success_rate'].tolist()
            == first.report['success_rate'].tolist())
    assert (second.report['final_loss'].tolist()
            == pytest.approx(first.report['final_loss'].tolist()))

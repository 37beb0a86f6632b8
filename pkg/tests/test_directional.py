"""End-to-end checks on trends rather than exact values; run with -m slow."""
import pytest

from vla_services.core import ar_model, sim_env, trainer
from vla_services.core.config_loader import resolve_config
from vla_services.core.policies import ExpertPolicy, RandomPolicy, TokenPolicy
from vla_services.entities import (
    CodecConfig,
    HistoryConfig,
    ModelConfig,
    RolloutConfig,
    TrainConfig,
)
from vla_services.main import (
    create_ablation_service,
    create_codec_service,
    create_data_service,
    create_packing_service,
    create_rollout_service,
    create_training_service,
)

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def corpus():
    return sim_env.generate_dataset(40, "pick_place", seed=21)


@pytest.fixture(scope="module")
def codecs(corpus):
    cfg = CodecConfig(codebook_size=64, kmeans_iters=10)
    return create_codec_service().fit(corpus, cfg)


def test_expert_far_above_random():
    service = create_rollout_service(RolloutConfig())
    expert = service.evaluate(ExpertPolicy, 30, "pick_place", seed=500)
    floor = service.evaluate(lambda: RandomPolicy(seed=1), 30,
                             "pick_place", seed=500)
    assert expert.success_rate == 1.0
    assert floor.success_rate < 0.2


def test_long_horizon_expert():
    service = create_rollout_service(RolloutConfig())
    result = service.evaluate(ExpertPolicy, 20, "long_horizon", seed=900)
    assert result.success_rate == 1.0


def test_fine_tuning_loss_falls(corpus, codecs):
    packer = create_packing_service(codecs, 512)
    dataset = packer.policy_dataset(corpus, HistoryConfig(history=1,
                                                          stride=10))
    model_cfg = ModelConfig(vocab_size=codecs.vocab.total_size, d_model=64,
                            n_layers=2, n_heads=4, d_ff=256,
                            max_seq_len=512)
    model = ar_model.init_model(model_cfg, seed=0)
    records = create_training_service().finetune(
        model, codecs.vocab, dataset, TrainConfig(steps=300, batch_size=16))
    assert trainer.final_loss(records) < 0.5 * records[0]["loss"]


def test_world_model_posttraining_loss_falls(corpus, codecs):
    packer = create_packing_service(codecs, 512)
    dataset = packer.posttrain_dataset("world_model", corpus[:20])
    cfg = TrainConfig(stage="posttrain", strategy="world_model", steps=200,
                      batch_size=8, w_v=1.0, w_a=0.0)
    model_cfg = ModelConfig(vocab_size=codecs.vocab.total_size, d_model=64,
                            n_layers=2, n_heads=4, d_ff=256,
                            max_seq_len=512)
    result = create_training_service().posttrain(model_cfg, codecs.vocab,
                                                 dataset, cfg)
    records = result.posttrain_records
    assert trainer.final_loss(records) < records[0]["loss"]


def test_ablation_report_covers_every_arm(tmp_path, tiny_overrides):
    layered = {k: dict(v) for k, v in tiny_overrides.items()}
    layered["data"]["n_episodes"] = 8
    layered["ablation"] = {"seeds": [0, 1], "eval_episodes": 3}
    config = resolve_config(file_values=layered)
    episodes = create_data_service().generate(config.data)
    bundle = create_codec_service().fit(episodes, config.codecs)
    outcome = create_ablation_service().ablation_suite(
        episodes, bundle, config, tmp_path)
    strategy_rows = outcome.report[outcome.report['arm'] == "strategy"]
    assert len(strategy_rows) == 5 * 2
    assert outcome.stage_counts["posttrain"] == 4 * 2
    assert set(outcome.verdicts) >= {"world_model_vs_none", "history",
                                     "data_efficiency", "convergence",
                                     "joint_visual_action"}


@pytest.fixture(scope="module")
def full_ablation(tmp_path_factory):
    layered = {
        "data": {"n_episodes": 60, "seed": 3},
        "codecs": {"codebook_size": 64, "kmeans_iters": 10},
        "model": {"d_model": 64, "n_layers": 2, "n_heads": 4, "d_ff": 256,
                  "max_seq_len": 512},
        "posttrain": {"steps": 600, "batch_size": 16},
        "finetune": {"steps": 800, "batch_size": 16},
        "ablation": {"strategies": ["none", "world_model"],
                     "seeds": [0, 1, 2], "eval_episodes": 30,
                     "run_joint": False},
    }
    config = resolve_config(file_values=layered)
    episodes = create_data_service().generate(config.data)
    bundle = create_codec_service().fit(episodes, config.codecs)
    return create_ablation_service().ablation_suite(
        episodes, bundle, config, tmp_path_factory.mktemp("ablation"))


@pytest.mark.parametrize("gate", ["world_model_vs_none", "data_efficiency",
                                  "convergence", "history"])
def test_directional_gate_passes(full_ablation, gate):
    verdict = full_ablation.verdicts[gate]
    assert verdict["passed"]


def test_policy_fit_to_one_episode_replays_it(codecs):
    episode = sim_env.generate_dataset(1, "pick_place", seed=77,
                                       trim_static=False)[0]
    history = HistoryConfig(history=0)
    dataset = create_packing_service(codecs, 512).policy_dataset([episode],
                                                                 history)
    model_cfg = ModelConfig(vocab_size=codecs.vocab.total_size, d_model=64,
                            n_layers=2, n_heads=4, d_ff=256,
                            max_seq_len=512)
    model = ar_model.init_model(model_cfg, seed=0)
    create_training_service().finetune(
        model, codecs.vocab, dataset,
        TrainConfig(steps=600, batch_size=len(dataset), lr0=3e-3))
    rollout = RolloutConfig(history=history, max_env_steps=60)
    result = create_rollout_service(rollout).rollout(
        TokenPolicy(model, codecs, rollout), episode.task, episode.seed)
    assert not result.malformed
    assert result.success


def test_untrained_model_no_better_than_random(codecs):
    model_cfg = ModelConfig(vocab_size=codecs.vocab.total_size, d_model=64,
                            n_layers=2, n_heads=4, d_ff=256,
                            max_seq_len=512)
    model = ar_model.init_model(model_cfg, seed=5)
    rollout = RolloutConfig(max_env_steps=60)
    service = create_rollout_service(rollout)
    untrained = service.evaluate(lambda: TokenPolicy(model, codecs, rollout),
                                 30, "pick_place", seed=700)
    floor = service.evaluate(lambda: RandomPolicy(seed=3), 30, "pick_place",
                             seed=700)
    assert untrained.success_rate <= floor.success_rate

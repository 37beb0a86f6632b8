import pandas as pd
import pytest

from vla_services.main import create_report_service
from vla_services.services import ReportService
from vla_services.services.report_service import REPORT_COLUMNS


def row(arm, strategy, seed, success, history="1+1", convergence=10,
        joint=False, fraction=1.0):
    return {
        'arm': arm, 'strategy': strategy, 'seed': seed,
        'data_fraction': fraction, 'history': history, 'joint': joint,
        'success_rate': success, 'convergence_step': convergence,
        'final_loss': 0.5, 'malformed': 0, 'mean_length': 30.0,
        'mean_action_tokens': 8.0,
    }


@pytest.fixture
def service():
    return create_report_service()


@pytest.fixture
def report(service):
    rows = []
    for seed in range(3):
        rows.append(row("strategy", "world_model", seed, 0.6 + 0.1 * seed))
        rows.append(row("strategy", "none", seed, 0.2, convergence=None))
        rows.append(row("strategy", "video", seed, 0.4))
        rows.append(row("data_fraction", "world_model", seed, 0.3,
                        fraction=0.1))
        rows.append(row("data_fraction", "none", seed, 0.1, fraction=0.1))
        rows.append(row("history", "world_model", seed, 0.5, history="1+0"))
        rows.append(row("history", "world_model", seed, 0.7, history="1+1"))
    return service.build_report(rows)


class TestSignTest:
    def test_three_wins(self):
        result = ReportService.sign_test(pd.Series([0.9, 0.8, 0.7]),
                                         pd.Series([0.1, 0.2, 0.3]))
        assert result['wins'] == 3
        assert result['p_value'] == pytest.approx(0.125)
        assert result['all_agree']

    def test_ties_are_dropped(self):
        result = ReportService.sign_test(pd.Series([0.5, 0.9]),
                                         pd.Series([0.5, 0.1]))
        assert (result['wins'], result['ties']) == (1, 1)
        assert result['p_value'] == pytest.approx(0.5)
        assert not result['all_agree']

    def test_all_ties(self):
        result = ReportService.sign_test(pd.Series([0.5]), pd.Series([0.5]))
        assert result['p_value'] == 1.0


def test_report_columns_and_order(report):
    assert list(report.columns) == REPORT_COLUMNS
    assert report.iloc[0]['arm'] == "data_fraction"


def test_ranked_table(service, report):
    table = service.ranked_table(report)
    assert table['strategy'].tolist() == ["world_model", "video", "none"]
    assert table['rank'].tolist() == [1, 2, 3]
    assert table.loc[0, 'mean_success'] == pytest.approx(0.7)


def test_gates(service, report):
    verdicts = service.gates(report, finetune_steps=100)
    assert verdicts['world_model_vs_none']['passed']
    assert verdicts['data_efficiency']['passed']
    assert verdicts['convergence']['passed']
    assert verdicts['history']['passed']
    assert 'joint_visual_action' not in verdicts


def test_convergence_gate_fails_when_slow(service, report):
    report.loc[report['strategy'] == "world_model", 'convergence_step'] = 80
    assert not service.gates(report, 100)['convergence']['passed']


def test_empty_report(service):
    df = service.build_report([])
    assert df.empty and service.gates(df, 10) == {}
    assert service.get_summary_statistics(df)['rows'] == 0


def test_write_report(tmp_path, service, report):
    verdicts = service.gates(report, 100)
    curves = {"none/seed0": [{"step": i, "loss": 3.0 - 0.1 * i}
                             for i in range(10)]}
    outputs = service.write_report(report, verdicts, tmp_path, curves)
    assert set(outputs) == {'report', 'ranked', 'summary', 'gates',
                            'success_plot', 'loss_plot'}
    assert all(path.exists() for path in outputs.values())
    summary = (tmp_path / "summary.txt").read_text()
    assert "world_model_vs_none" in summary and "PASS" in summary
    assert len(pd.read_csv(tmp_path / "report.csv")) == len(report)

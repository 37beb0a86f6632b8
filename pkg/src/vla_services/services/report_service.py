import logging
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from scipy.stats import binomtest  # noqa: E402

from ..core.file_writer import FileWriter  # noqa: E402
from ..core.trainer import smoothed_losses  # noqa: E402
from .rollout_service import EvaluationResult  # noqa: E402

logger = logging.getLogger(__name__)

REPORT_COLUMNS = [
    'arm', 'strategy', 'seed', 'data_fraction', 'history', 'joint',
    'success_rate', 'convergence_step', 'final_loss', 'malformed',
    'mean_length', 'mean_action_tokens',
]
STRATEGY_ORDER = ["world_model", "video", "t2i", "none", "action_pred"]
PNG_METADATA = {'Software': None}


class ReportService:
    """
    Service for turning evaluation runs into tables, verdicts and plots.

    This is like the referee's scorecard after a tournament: one line per
    match (arm and seed), a league table, and a short verdict on the
    fixtures everyone came to see.
    """

    def __init__(self, file_writer: FileWriter):
        self.file_writer = file_writer

    def build_report(self, rows: Sequence[Mapping[str, Any]]) -> pd.DataFrame:
        """One row per (arm, strategy, seed), sorted for stable output."""
        if not rows:
            return pd.DataFrame(columns=REPORT_COLUMNS)
        df = pd.DataFrame(list(rows), columns=REPORT_COLUMNS)
        df = df.sort_values(['arm', 'strategy', 'history', 'seed'])
        return df.reset_index(drop=True)

    def ranked_table(self, df: pd.DataFrame, arm: str = "strategy"
                     ) -> pd.DataFrame:
        subset = df[df['arm'] == arm]
        if subset.empty:
            return pd.DataFrame(columns=['rank', 'strategy', 'mean_success',
                                         'std_success', 'seeds',
                                         'mean_convergence_step'])
        table = subset.groupby('strategy').agg(
            mean_success=('success_rate', 'mean'),
            std_success=('success_rate', 'std'),
            seeds=('seed', 'nunique'),
            mean_convergence_step=('convergence_step', 'mean'),
        ).reset_index()
        table['std_success'] = table['std_success'].fillna(0.0)
        table = table.sort_values(['mean_success', 'strategy'],
                                  ascending=[False, True])
        table.insert(0, 'rank', range(1, len(table) + 1))
        return table.reset_index(drop=True)

    @staticmethod
    def sign_test(treatment: pd.Series, control: pd.Series) -> Dict[str, Any]:
        """
        One-sided sign test on per-seed values paired by index.

        Ties carry no sign and are dropped, as the test prescribes.
        """
        paired = pd.concat([treatment.rename('t'), control.rename('c')],
                           axis=1, join='inner')
        wins = int((paired['t'] > paired['c']).sum())
        losses = int((paired['t'] < paired['c']).sum())
        ties = len(paired) - wins - losses
        trials = wins + losses
        p_value = (binomtest(wins, trials, 0.5, alternative='greater').pvalue
                   if trials else 1.0)
        return {
            'seeds': len(paired),
            'wins': wins,
            'losses': losses,
            'ties': ties,
            'p_value': float(p_value),
            'all_agree': len(paired) > 0 and wins == len(paired),
            'treatment_mean': float(paired['t'].mean()) if len(paired) else None,
            'control_mean': float(paired['c'].mean()) if len(paired) else None,
        }

    @staticmethod
    def _per_seed(df: pd.DataFrame, column: str = 'success_rate',
                  **filters) -> pd.Series:
        mask = np.ones(len(df), dtype=bool)
        for key, value in filters.items():
            mask &= (df[key] == value).to_numpy()
        return df[mask].set_index('seed')[column].astype(float)

    def gates(self, df: pd.DataFrame, finetune_steps: int) -> Dict[str, Any]:
        """Directional verdicts; a gate with no data is reported as None."""
        verdicts: Dict[str, Any] = {}
        world = self._per_seed(df, arm='strategy', strategy='world_model')
        none = self._per_seed(df, arm='strategy', strategy='none')
        if len(world) and len(none):
            test = self.sign_test(world, none)
            test['passed'] = test['all_agree']
            verdicts['world_model_vs_none'] = test

        small_world = self._per_seed(df, arm='data_fraction',
                                     strategy='world_model')
        small_none = self._per_seed(df, arm='data_fraction', strategy='none')
        if len(small_world) and len(small_none):
            test = self.sign_test(small_world, small_none)
            test['passed'] = test['treatment_mean'] > test['control_mean']
            verdicts['data_efficiency'] = test

        steps = self._per_seed(df, 'convergence_step', arm='strategy',
                               strategy='world_model')
        if len(steps):
            limit = 0.5 * finetune_steps
            reached = steps.notna() & (steps <= limit)
            verdicts['convergence'] = {
                'limit_steps': limit,
                'steps': {int(k): (None if pd.isna(v) else int(v))
                          for k, v in steps.items()},
                'passed': bool(reached.all()),
            }

        one = self._per_seed(df, arm='history', history='1+1')
        zero = self._per_seed(df, arm='history', history='1+0')
        if len(one) and len(zero):
            test = self.sign_test(one, zero)
            test['passed'] = test['treatment_mean'] >= test['control_mean']
            verdicts['history'] = test

        joint = self._per_seed(df, arm='joint')
        if len(joint) and len(world):
            test = self.sign_test(joint, world)
            test['passed'] = None
            verdicts['joint_visual_action'] = test
        return verdicts

    def get_summary_statistics(self, df: pd.DataFrame) -> Dict[str, Any]:
        if df.empty:
            return {'rows': 0, 'arms': 0, 'mean_success': None,
                    'malformed_total': 0, 'mean_action_tokens': None}
        tokens = df['mean_action_tokens'].dropna()
        return {
            'rows': len(df),
            'arms': int(df['arm'].nunique()),
            'mean_success': round(float(df['success_rate'].mean()), 4),
            'malformed_total': int(df['malformed'].sum()),
            'mean_action_tokens': (round(float(tokens.mean()), 3)
                                   if len(tokens) else None),
        }

    def render_summary(self, df: pd.DataFrame,
                       verdicts: Mapping[str, Any]) -> str:
        lines = ["Ablation summary", "=" * 40]
        ranked = self.ranked_table(df)
        if not ranked.empty:
            lines.append(ranked.to_string(index=False,
                                          float_format=lambda v: f"{v:.3f}"))
        for arm in ('data_fraction', 'joint', 'history'):
            subset = df[df['arm'] == arm]
            if subset.empty:
                continue
            means = subset.groupby(['strategy', 'history'])[
                'success_rate'].mean()
            lines.append("")
            lines.append(f"{arm} arm")
            for (strategy, history), value in means.items():
                lines.append(f"  {strategy:<12} {history:<4} {value:.3f}")
        lines.append("")
        lines.append("Directional checks")
        for name, verdict in sorted(verdicts.items()):
            status = {True: "PASS", False: "FAIL", None: "REPORTED"}[
                verdict.get('passed')]
            lines.append(f"  {name:<22} {status}")
        return "\n".join(lines) + "\n"

    def plot_success(self, df: pd.DataFrame, path: Path) -> Path:
        subset = df[df['arm'] == 'strategy']
        order = [s for s in STRATEGY_ORDER if s in set(subset['strategy'])]
        fig, ax = plt.subplots(figsize=(6, 4))
        means = [subset[subset['strategy'] == s]['success_rate'].mean()
                 for s in order]
        ax.bar(order, means, color="#4c72b0")
        for i, strategy in enumerate(order):
            values = subset[subset['strategy'] == strategy]['success_rate']
            ax.scatter([i] * len(values), values, color="black", s=12)
        ax.set_ylim(0, 1)
        ax.set_ylabel("success rate")
        ax.set_title("Success by post-training strategy")
        fig.tight_layout()
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, metadata=PNG_METADATA)
        plt.close(fig)
        return path

    def plot_losses(self, curves: Mapping[str, List[Dict]], path: Path,
                    window: int = 20) -> Path:
        fig, ax = plt.subplots(figsize=(6, 4))
        for label in sorted(curves):
            records = curves[label]
            if not records:
                continue
            steps = [r['step'] for r in records]
            ax.plot(steps, smoothed_losses(records, window), label=label,
                    linewidth=1)
        ax.set_xlabel("step")
        ax.set_ylabel("loss (smoothed)")
        ax.set_yscale("log")
        if curves:
            ax.legend(fontsize=7)
        fig.tight_layout()
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, metadata=PNG_METADATA)
        plt.close(fig)
        return path

    def write_report(self, df: pd.DataFrame, verdicts: Mapping[str, Any],
                     out_dir: Path,
                     curves: Optional[Mapping[str, List[Dict]]] = None
                     ) -> Dict[str, Path]:
        outputs = {
            'report': self.file_writer.write_text(
                out_dir / "report.csv", df.to_csv(index=False)),
            'ranked': self.file_writer.write_text(
                out_dir / "ranked.csv",
                self.ranked_table(df).to_csv(index=False)),
            'summary': self.file_writer.write_text(
                out_dir / "summary.txt", self.render_summary(df, verdicts)),
            'gates': self.file_writer.write_json(
                out_dir / "gates.json", dict(verdicts)),
            'success_plot': self.plot_success(
                df, out_dir / "success_by_strategy.png"),
        }
        if curves:
            outputs['loss_plot'] = self.plot_losses(
                curves, out_dir / "loss_curves.png")
        logger.info("Wrote report files to %s", out_dir)
        return outputs

    def write_evaluation(self, result: EvaluationResult,
                         out_dir: Path) -> Dict[str, Path]:
        return {
            'episodes': self.file_writer.write_text(
                out_dir / "episodes.csv",
                result.episodes.to_csv(index=False)),
            'summary': self.file_writer.write_json(
                out_dir / "summary.json", result.summary()),
        }

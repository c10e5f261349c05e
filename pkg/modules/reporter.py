"""Generate PSP-NS run reports."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

from .pipeline import AblationTable, RunResult
from .psp import PspQuality
from .utils import (
    IssueSeverity,
    ValidationIssue,
    as_float,
    compute_status,
    write_json,
    write_jsonl,
    write_text,
)


@dataclass
class ReportPaths:
    """Location for generated artifacts."""

    json_path: Path
    txt_path: Path
    timings_path: Path
    history_path: Optional[Path] = None


def _quality_dict(quality: PspQuality) -> Dict[str, object]:
    return {
        "acc": as_float(quality.acc),
        "cov": as_float(quality.cov),
        "acc_weighted": as_float(quality.acc_weighted),
        "cov_weighted": as_float(quality.cov_weighted),
        "n_pairs": quality.n_pairs,
        "n_true_pairs": quality.n_true_pairs,
    }


class Reporter:
    """Materialize run results into machine-readable and human-readable reports.

    Nothing time-dependent goes into ``report.json``; wall-clock figures land
    in ``timings.json`` so identical runs produce identical reports.
    """

    def render_train(self, result: RunResult, out_dir: Path) -> ReportPaths:
        paths = ReportPaths(
            json_path=out_dir / "report.json",
            txt_path=out_dir / "report.txt",
            timings_path=out_dir / "timings.json",
            history_path=out_dir / "history.jsonl",
        )
        write_json(paths.json_path, self._build_json(result))
        write_text(paths.txt_path, self._build_text(result))
        write_jsonl(paths.history_path, result.history.records)
        write_json(paths.timings_path, {name: round(sec, 6) for name, sec in result.timings.items()})
        return paths

    def render_ablation(self, table: AblationTable, out_dir: Path) -> ReportPaths:
        paths = ReportPaths(
            json_path=out_dir / "ablation.json",
            txt_path=out_dir / "ablation.txt",
            timings_path=out_dir / "timings.json",
        )
        write_json(paths.json_path, self._build_ablation_json(table))
        write_text(paths.txt_path, self._build_ablation_text(table))
        write_json(paths.timings_path, {name: round(sec, 6) for name, sec in table.timings.items()})
        return paths

    def _build_json(self, result: RunResult) -> Dict[str, object]:
        config = result.config
        n_train, n_val, n_test = result.split.sizes()
        payload: Dict[str, object] = {
            "config": config.to_dict(),
            "seeds": {
                "root": config.seed,
                "split": result.split.split_seed,
                "sampler": config.sampler_config().seed,
            },
            "data": {
                "users": result.split.n_users,
                "items": result.split.n_items,
                "train": n_train,
                "val": n_val,
                "test": n_test,
            },
            "psp": result.artifacts.summary(),
            "training": {
                "best_epoch": result.history.best_epoch,
                "stopped_epoch": result.history.stopped_epoch,
                "evaluations": len(result.history.evaluations()),
                "best_validation": as_float(result.history.best_score)
                if result.history.best_epoch is not None
                else None,
            },
            "test": result.test.to_dict(),
        }
        if result.quality is not None:
            payload["quality"] = {"psp": _quality_dict(result.quality)}
            if result.train_quality is not None:
                payload["quality"]["train_positives"] = _quality_dict(result.train_quality)
        return payload

    def _build_text(self, result: RunResult) -> str:
        config = result.config
        summary = result.artifacts.summary()
        weights = summary["weights"]
        lines: List[str] = []
        lines.append(f"Mode: {config.mode}  scheme: {config.scheme}  sampler: {config.sampler_kind}")
        lines.append(f"q={config.q} s={config.s} a={config.a} d={config.d} seed={config.seed}")
        lines.append("")
        lines.append("[Data]")
        n_train, n_val, n_test = result.split.sizes()
        lines.append(f"- Users: {result.split.n_users}")
        lines.append(f"- Items: {result.split.n_items}")
        lines.append(f"- Train/val/test: {n_train}/{n_val}/{n_test}")
        lines.append("")
        lines.append("[PSP]")
        lines.append(f"- Distinct pairs: {summary['distinct_pairs']}")
        lines.append(f"- Expanded pairs: {summary['expanded_pairs']}")
        lines.append(f"- Removed by leakage guard: {summary['removed_by_guard']}")
        lines.append(f"- Fused edges: {summary['fused_edges']} (shared {summary['shared_edges']})")
        lines.append(f"- User weights: min {weights['min']:.4g} mean {weights['mean']:.4g} max {weights['max']:.4g}")
        if result.quality is not None:
            q = result.quality
            lines.append(f"- Acc {q.acc:.4f} (weighted {q.acc_weighted:.4f}), Cov {q.cov:.4f}")
            if result.train_quality is not None:
                lines.append(f"- Train positives: Acc {result.train_quality.acc:.4f}, Cov {result.train_quality.cov:.4f}")
        lines.append("")
        lines.append("[Training]")
        lines.append(f"- Best epoch: {result.history.best_epoch}")
        lines.append(f"- Stopped at epoch: {result.history.stopped_epoch}")
        lines.append("")
        lines.append("[Test]")
        lines.append(self._metric_header(config.ks))
        lines.append(self._metric_row("all", result.test, config.ks))
        for name, segment in result.test.segments.items():
            lines.append(self._metric_row(name, segment, config.ks))
        return "\n".join(lines) + "\n"

    def _metric_header(self, ks) -> str:
        cols = [f"R@{k}" for k in ks] + [f"P@{k}" for k in ks]
        return f"{'segment':<10}{'users':>8}" + "".join(f"{c:>10}" for c in cols)

    def _metric_row(self, name: str, report, ks) -> str:
        values = [report.recall[k] for k in ks] + [report.precision[k] for k in ks]
        return f"{name:<10}{report.n_evaluable_users:>8}" + "".join(f"{v:>10.5f}" for v in values)

    def _build_ablation_json(self, table: AblationTable) -> Dict[str, object]:
        return {
            "headline": table.headline,
            "rows": [row.to_dict() for row in table.rows],
            "ordering": {
                "status": compute_status(table.issues).value,
                "warnings": self._collect_messages(table.issues, IssueSeverity.WARNING),
            },
        }

    def _build_ablation_text(self, table: AblationTable) -> str:
        ks = table.ks
        metrics = [f"recall@{k}" for k in ks] + [f"precision@{k}" for k in ks] + [f"inactive_recall@{ks[0]}"]
        width = max([len(row.label) for row in table.rows] + [7]) + 2
        lines: List[str] = []
        lines.append(f"{'variant':<{width}}" + "".join(f"{m:>24}" for m in metrics))
        for row in table.rows:
            cells = [f"{row.mean(m):.5f} ± {row.std(m):.5f}" for m in metrics]
            lines.append(f"{row.label or 'base':<{width}}" + "".join(f"{c:>24}" for c in cells))
        lines.append("")
        lines.append(f"Seeds: {', '.join(str(s) for s in table.rows[0].seeds) if table.rows else '-'}")
        warnings = self._collect_messages(table.issues, IssueSeverity.WARNING)
        if warnings:
            lines.append("")
            lines.append("[Warnings]")
            lines.extend(f"- {msg}" for msg in warnings)
        return "\n".join(lines) + "\n"

    def _collect_messages(self, issues: List[ValidationIssue], severity: IssueSeverity) -> List[str]:
        return [issue.message for issue in issues if issue.severity is severity]


__all__ = ["Reporter", "ReportPaths"]

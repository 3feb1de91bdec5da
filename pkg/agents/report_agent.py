# agents/report_agent.py
from __future__ import annotations

import io
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from sklearn.metrics import confusion_matrix, multilabel_confusion_matrix

from models.metrics import (
    ConfusionMatrix,
    MetricRow,
    MetricsResult,
    NamedMatrix,
    ReportRow,
)
from models.phase import OverlapProfile, PhaseLabel, PhaseStats
from utils.errors import ConfigError, DataError, EmptyInput, LengthMismatch
from utils.numeric import safe_div

LABELS = list(range(len(PhaseLabel)))
REPORT_FORMATS = ("text", "csv", "json")


class ReportAgent:
    """
    Per-class one-vs-rest metrics, macro rows, confusion matrices, and the
    result tables (text / csv / json) that merge evaluation outputs.
    """

    def confusion(self, predictions: Sequence[PhaseLabel], truths: Sequence[PhaseLabel]) -> ConfusionMatrix:
        if len(predictions) != len(truths):
            raise LengthMismatch(len(predictions), len(truths))
        if not truths:
            return ConfusionMatrix()
        counts = confusion_matrix(
            [t.index for t in truths], [p.index for p in predictions], labels=LABELS
        )
        return ConfusionMatrix(counts.astype(np.int64))

    def metrics(self, predictions: Sequence[PhaseLabel], truths: Sequence[PhaseLabel]) -> MetricsResult:
        if len(predictions) != len(truths):
            raise LengthMismatch(len(predictions), len(truths))
        if not truths:
            raise EmptyInput("metrics need at least one prediction")

        y_true = [t.index for t in truths]
        y_pred = [p.index for p in predictions]
        # (n_classes, 2, 2): [[TN, FP], [FN, TP]] with each class as positive
        per_class_counts = multilabel_confusion_matrix(y_true, y_pred, labels=LABELS)

        per_class: Dict[PhaseLabel, MetricRow] = {}
        support: Dict[PhaseLabel, int] = {}
        for phase in PhaseLabel:
            (tn, fp), (fn, tp) = per_class_counts[phase.index].tolist()
            pre = safe_div(tp, tp + fp)
            rec = safe_div(tp, tp + fn)
            per_class[phase] = MetricRow(
                acc=safe_div(tp + tn, tp + tn + fp + fn),
                pre=pre,
                rec=rec,
                f1=safe_div(2 * pre * rec, pre + rec),
            )
            support[phase] = tp + fn

        present = [p for p in PhaseLabel if support[p] > 0]
        macro = MetricRow(
            acc=float(np.mean([per_class[p].acc for p in present])),
            pre=float(np.mean([per_class[p].pre for p in present])),
            rec=float(np.mean([per_class[p].rec for p in present])),
            f1=float(np.mean([per_class[p].f1 for p in present])),
        )
        matrix = self.confusion(predictions, truths)
        return MetricsResult(
            macro=macro,
            per_class=per_class,
            micro_accuracy=matrix.micro_accuracy,
            support=support,
            confusion=matrix,
        )

    def render_report(
        self,
        rows: Sequence[ReportRow],
        matrices: Sequence[NamedMatrix] = (),
        fmt: str = "text",
    ) -> str:
        if fmt not in REPORT_FORMATS:
            raise ConfigError(f"unknown report format {fmt!r}; choose from {REPORT_FORMATS}")
        if fmt == "json":
            doc = {
                "rows": [r.to_dict() for r in rows],
                "matrices": [
                    {"title": m.title, **m.matrix.to_dict(), "provenance": m.provenance} for m in matrices
                ],
            }
            return json.dumps(doc, indent=2, sort_keys=True)

        table = self._rows_frame(rows)
        if fmt == "csv":
            buf = io.StringIO()
            table.to_csv(buf, index=False, float_format="%.6f")
            return buf.getvalue()

        lines: List[str] = []
        lines.append("✅ Classification results")
        lines.append("")
        lines.append(table.to_string(index=False, float_format=lambda v: f"{v:.2f}") if rows else "- _No results._")
        for m in matrices:
            lines.append("")
            lines.append(f"### {m.title}")
            lines.append(self._matrix_frame(m.matrix).to_string(float_format=lambda v: f"{v:.2f}"))
        return "\n".join(lines)

    def render_stats(self, stats: PhaseStats, profile: Optional[OverlapProfile] = None) -> str:
        """Per-phase duration table (minutes) and, when given, each phase's elapsed-time span."""
        records = []
        for phase in PhaseLabel:
            s = stats.phases.get(phase)
            rec: Dict[str, Any] = {
                "phase": phase.code,
                "name": phase.display_name,
                "videos": s.occurrences if s else 0,
                "mean": s.mean if s else None,
                "std": s.std if s else None,
                "min": s.min if s else None,
                "max": s.max if s else None,
            }
            if profile is not None:
                span = profile.spans.get(phase)
                rec["first"] = span[0] if span else None
                rec["last"] = span[1] if span else None
            records.append(rec)

        lines: List[str] = ["✅ Phase durations (minutes)", ""]
        lines.append(pd.DataFrame.from_records(records).to_string(index=False, float_format=lambda v: f"{v:.2f}", na_rep="-"))
        if profile is not None:
            busiest = max(profile.counts) if profile.counts else 0
            lines.append("")
            lines.append(f"- Up to {busiest} distinct phases share one {profile.bin_minutes:g}-minute instant across operations")
        return "\n".join(lines)

    def load_results(self, paths: Sequence[str | Path]) -> "tuple[List[ReportRow], List[NamedMatrix]]":
        """Collects rows and matrices from eval-knn / eval-lstm result JSONs."""
        rows: List[ReportRow] = []
        matrices: List[NamedMatrix] = []
        for path in paths:
            path = Path(path)
            if not path.is_file():
                raise ConfigError(f"result file not found: {path}")
            try:
                doc = json.loads(path.read_text(encoding="utf-8"))
                rows.extend(ReportRow.from_dict(r) for r in doc.get("rows", []))
                for m in doc.get("matrices", []):
                    matrices.append(
                        NamedMatrix(
                            title=str(m["title"]),
                            matrix=ConfusionMatrix.from_dict(m),
                            provenance=dict(m.get("provenance") or {}),
                        )
                    )
            except (KeyError, ValueError, TypeError) as e:
                raise DataError(f"invalid result file {path}: {e}") from e
        return rows, matrices

    def result_document(self, rows: Sequence[ReportRow], matrices: Sequence[NamedMatrix] = (),
                        extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        doc = json.loads(self.render_report(rows, matrices, fmt="json"))
        if extra:
            doc.update(extra)
        return doc

    # ----------------------
    # helpers
    # ----------------------

    def _rows_frame(self, rows: Sequence[ReportRow]) -> pd.DataFrame:
        records = []
        for r in rows:
            rec: Dict[str, Any] = {
                "name": r.name,
                "Acc": r.row.acc,
                "Pre": r.row.pre,
                "Rec": r.row.rec,
                "F1": r.row.f1,
            }
            if r.micro_accuracy is not None:
                rec["micro_Acc"] = r.micro_accuracy
            if r.std is not None:
                rec.update({"Acc_std": r.std.acc, "Pre_std": r.std.pre, "Rec_std": r.std.rec, "F1_std": r.std.f1})
            records.append(rec)
        return pd.DataFrame.from_records(records, columns=_columns(records))

    def _matrix_frame(self, matrix: ConfusionMatrix) -> pd.DataFrame:
        codes = [p.code for p in PhaseLabel]
        frame = pd.DataFrame(matrix.normalized, index=codes, columns=codes)
        frame.index.name = "True/Pred."
        return frame


def _columns(records: List[Dict[str, Any]]) -> List[str]:
    cols = ["name", "Acc", "Pre", "Rec", "F1"]
    for rec in records:
        for key in rec:
            if key not in cols:
                cols.append(key)
    return cols

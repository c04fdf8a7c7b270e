"""Step-level navigation metrics and per-split aggregation."""
from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .trajectory import DEFAULT_ACTION_SPACE, ActionSpace, GuiAction, point_in_box

METRIC_NAMES = ("Ele.Acc", "Op.F1", "Step SR")


class EmptyReport(ValueError):
    pass


def op_tokens(action: GuiAction) -> list[str]:
    return action.op_string().casefold().split()


def token_f1(pred: Sequence[str], gold: Sequence[str]) -> float:
    if not pred and not gold:
        return 1.0
    common = sum((Counter(pred) & Counter(gold)).values())
    if common == 0:
        return 0.0
    precision = common / len(pred)
    recall = common / len(gold)
    return 2 * precision * recall / (precision + recall)


def step_metrics(pred: Optional[GuiAction], gt: GuiAction, gt_bbox,
                 space: ActionSpace = DEFAULT_ACTION_SPACE) -> tuple[int, float, int]:
    """(Ele.Acc, Op.F1, Step SR) for one step; a missing prediction scores zeros."""
    if pred is None:
        return 0, 0.0, 0
    if space.is_spatial(gt.action_type):
        ele = int(point_in_box(pred.position, gt_bbox))
    else:
        ele = int(pred.action_type == gt.action_type)
    f1 = token_f1(op_tokens(pred), op_tokens(gt))
    return ele, f1, int(ele == 1 and f1 == 1.0)


def action_accuracy(pred: Optional[GuiAction], gt: GuiAction, gt_bbox,
                    space: ActionSpace = DEFAULT_ACTION_SPACE) -> int:
    """Type match plus point-in-box for spatial actions; value text is not scored."""
    if pred is None or pred.action_type != gt.action_type:
        return 0
    if space.is_spatial(gt.action_type):
        return int(point_in_box(pred.position, gt_bbox))
    return 1


@dataclass(frozen=True)
class ReportRow:
    split: str
    episode_id: str
    t: int
    ele_acc: int
    op_f1: float
    step_sr: int
    action_acc: int = 0


def aggregate(rows: Iterable[ReportRow]) -> dict[str, dict[str, float]]:
    """Per-split step means plus an "Overall" entry averaging the split means."""
    rows = list(rows)
    if not rows:
        raise EmptyReport("no rows to aggregate")
    by_split: dict[str, list[ReportRow]] = {}
    for r in rows:
        by_split.setdefault(r.split, []).append(r)
    out = {}
    for split, rs in by_split.items():
        n = len(rs)
        out[split] = {
            "Ele.Acc": sum(r.ele_acc for r in rs) / n,
            "Op.F1": sum(r.op_f1 for r in rs) / n,
            "Step SR": sum(r.step_sr for r in rs) / n,
            "Action Acc": sum(r.action_acc for r in rs) / n,
            "steps": n,
        }
    keys = ("Ele.Acc", "Op.F1", "Step SR", "Action Acc")
    out["Overall"] = {k: sum(out[s][k] for s in by_split) / len(by_split) for k in keys}
    out["Overall"]["steps"] = len(rows)
    return out


def report_csv(summary: dict[str, dict[str, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["split", *METRIC_NAMES, "Action Acc", "steps"])
    for split, m in summary.items():
        w.writerow([split, *(f"{m[k]:.6f}" for k in METRIC_NAMES), f"{m['Action Acc']:.6f}", int(m["steps"])])
    return buf.getvalue()


def report_table(summary: dict[str, dict[str, float]]) -> str:
    cols = [*METRIC_NAMES, "Action Acc"]
    lines = [f"{'split':<20}" + "".join(f"{c:>12}" for c in cols) + f"{'steps':>8}"]
    for split, m in summary.items():
        lines.append(f"{split:<20}" + "".join(f"{100 * m[c]:>12.1f}" for c in cols) + f"{int(m['steps']):>8}")
    return "\n".join(lines)

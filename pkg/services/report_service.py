"""CSV / JSON / SVG writers for predictions, histories, feedback and reports."""

import json
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from models.feedback import ClipFeedback  # noqa: E402
from models.report import EvalReport, PredictionRow, TrainingHistory  # noqa: E402

PREDICTION_COLUMNS = ["video_id", "action_type", "true_score", "predicted_score", "expert_ids"]
FEEDBACK_COLUMNS = ["clip_index", "similarity", "faulty", "padded"]

# fixed salt and no timestamp so regenerated SVGs are byte-identical
matplotlib.rcParams["svg.hashsalt"] = "aqa-report"


def _write_frame(frame: pd.DataFrame, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")
    return path


def write_predictions(rows: Sequence[PredictionRow], path) -> Path:
    frame = pd.DataFrame(
        [
            {
                "video_id": r.video_id,
                "action_type": str(r.action_type),
                "true_score": "" if r.true_score is None else repr(r.true_score),
                "predicted_score": repr(r.predicted_score),
                "expert_ids": ";".join(r.expert_ids),
            }
            for r in rows
        ],
        columns=PREDICTION_COLUMNS,
    )
    return _write_frame(frame, path)


def read_predictions(path) -> list[PredictionRow]:
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    return [
        PredictionRow(
            video_id=rec["video_id"],
            action_type=int(rec["action_type"]),
            true_score=float(rec["true_score"]) if rec["true_score"] else None,
            predicted_score=float(rec["predicted_score"]),
            expert_ids=rec["expert_ids"].split(";") if rec["expert_ids"] else [],
        )
        for rec in frame.to_dict(orient="records")
    ]


def write_history(history: TrainingHistory, path) -> Path:
    frame = pd.DataFrame(
        [
            {
                "epoch": e.epoch,
                "loss": repr(e.loss),
                "holdout_accuracy": "" if e.holdout_accuracy is None else repr(e.holdout_accuracy),
            }
            for e in history.epochs
        ],
        columns=["epoch", "loss", "holdout_accuracy"],
    )
    return _write_frame(frame, path)


def write_feedback_csv(feedback: Sequence[ClipFeedback], path) -> Path:
    frame = pd.DataFrame(
        [
            {
                "clip_index": f.clip_index,
                "similarity": repr(f.similarity),
                "faulty": str(f.faulty).lower(),
                "padded": str(f.padded).lower(),
            }
            for f in feedback
        ],
        columns=FEEDBACK_COLUMNS,
    )
    return _write_frame(frame, path)


def read_feedback_csv(path) -> list[ClipFeedback]:
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    return [
        ClipFeedback(
            clip_index=int(rec["clip_index"]),
            similarity=float(rec["similarity"]),
            faulty=rec["faulty"] == "true",
            padded=rec["padded"] == "true",
        )
        for rec in frame.to_dict(orient="records")
    ]


def plot_similarity_curve(feedback: Sequence[ClipFeedback], path, title: str = "", threshold: float = 0.5) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    xs = [f.clip_index for f in feedback]
    ys = [f.similarity for f in feedback]
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.plot(xs, ys, marker="o", color="tab:blue", label="similarity")
    ax.axhline(threshold, color="tab:red", linestyle="--", linewidth=1, label=f"threshold {threshold:g}")
    for f in feedback:
        if f.faulty and not f.padded:
            ax.plot(f.clip_index, f.similarity, marker="x", color="tab:red", markersize=9)
    ax.set_xlabel("clip")
    ax.set_ylabel("similarity to expert")
    ax.set_ylim(0.0, 1.0)
    ax.set_xticks(xs)
    if title:
        ax.set_title(title)
    ax.legend(loc="lower left", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def write_json(data: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True))
    return path


def write_eval_csv(report: EvalReport, path) -> Path:
    rows = [{"action_type": "all", "n": report.n, "rho": repr(report.rho), "mse": repr(report.mse)}]
    rows += [
        {"action_type": str(t.action_type), "n": t.n, "rho": "" if t.rho is None else repr(t.rho), "mse": repr(t.mse)}
        for t in report.per_type
    ]
    return _write_frame(pd.DataFrame(rows, columns=["action_type", "n", "rho", "mse"]), path)

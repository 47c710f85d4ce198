"""Average-accuracy metric family, baselines, and the prediction wire format."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataio import Episode
from .errors import EvaluationError, ValidationError


def _as_binary(values, name: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be 1-d, got shape {arr.shape}")
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValidationError(f"{name} must contain only 0/1 entries")
    return arr.astype(np.int64)


@dataclass
class SessionPrediction:
    session_id: str
    predicted: np.ndarray
    truth: np.ndarray

    def __post_init__(self):
        self.predicted = _as_binary(self.predicted, "predicted")
        self.truth = _as_binary(self.truth, "truth")
        if self.predicted.shape != self.truth.shape:
            raise ValidationError(
                f"session {self.session_id!r}: prediction length {self.predicted.size} "
                f"!= truth length {self.truth.size}"
            )


def binarize(probs: np.ndarray) -> np.ndarray:
    """Threshold probabilities at 0.5; exact ties count as skipped (1)."""
    return (np.asarray(probs) >= 0.5).astype(np.int64)


def average_accuracy(pred, truth) -> float:
    """Prefix-accuracy-weighted correctness.

    With L(i) = 1 when prediction i is correct and A(i) the accuracy over
    the first i predictions, returns sum_i A(i) * L(i) / T.
    """
    p = _as_binary(pred, "pred")
    t = _as_binary(truth, "truth")
    if p.shape != t.shape:
        raise ValidationError(f"length mismatch: pred {p.size} vs truth {t.size}")
    if p.size == 0:
        raise ValidationError("average_accuracy needs at least one prediction")
    correct = (p == t).astype(np.float64)
    prefix_acc = np.cumsum(correct) / np.arange(1, p.size + 1)
    return float((prefix_acc * correct).sum() / p.size)


def mean_average_accuracy(predictions) -> float:
    """Unweighted mean of per-session average accuracies."""
    preds = list(predictions)
    if not preds:
        raise EvaluationError("mean_average_accuracy over an empty prediction set")
    return float(np.mean([average_accuracy(sp.predicted, sp.truth) for sp in preds]))


def per_session_aa(
    predictions: list[SessionPrediction], threads: int = 1
) -> np.ndarray:
    """Per-session AA values in input order.

    With ``threads > 1`` sessions are sharded across workers, but each
    result lands in its preassigned slot, so the subsequent mean is
    reduced in one fixed order regardless of scheduling.
    """
    out = np.zeros(len(predictions), dtype=np.float64)

    def fill(idx: int) -> None:
        sp = predictions[idx]
        out[idx] = average_accuracy(sp.predicted, sp.truth)

    if threads <= 1 or len(predictions) < 2:
        for i in range(len(predictions)):
            fill(i)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill, range(len(predictions))))
    return out


def corpus_maa(predictions: list[SessionPrediction], threads: int = 1) -> float:
    if not predictions:
        raise EvaluationError("corpus MAA over an empty prediction set")
    return float(per_session_aa(predictions, threads=threads).mean())


# -- baselines ---------------------------------------------------------

BASELINES = ("all_skip", "all_no_skip", "carry_last_support")


def baseline(kind: str, episode: Episode) -> np.ndarray:
    t_q = episode.t_query
    if kind == "all_skip":
        return np.ones(t_q, dtype=np.int64)
    if kind == "all_no_skip":
        return np.zeros(t_q, dtype=np.int64)
    if kind == "carry_last_support":
        if episode.t_support < 1:
            raise ValidationError("carry_last_support needs at least one support position")
        return np.full(t_q, int(episode.y_support[-1]), dtype=np.int64)
    raise ValidationError(f"unknown baseline {kind!r}")


# -- wire format -------------------------------------------------------


def write_predictions(path, predictions: list[tuple[str, np.ndarray]]) -> None:
    """One `session_id,binarystring` line per session, in given order."""
    lines = []
    for sid, bits in predictions:
        arr = _as_binary(bits, f"predictions for {sid!r}")
        lines.append(f"{sid},{''.join(str(int(v)) for v in arr)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_predictions(path) -> list[tuple[str, np.ndarray]]:
    out = []
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        sid, sep, bits = line.rpartition(",")
        if not sep or not sid:
            raise ValidationError(f"{path}:{line_no}: expected 'session_id,binarystring'")
        if bits.strip("01"):
            raise ValidationError(f"{path}:{line_no}: prediction string {bits!r} is not binary")
        out.append((sid, np.array([int(c) for c in bits], dtype=np.int64)))
    return out

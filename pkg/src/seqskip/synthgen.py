"""Deterministic synthetic corpora in the challenge file layout.

Each rule wires the skip labels to a different information pathway so
the corresponding model family has something specific to learn:

* ``threshold``  — one global direction w; label = [w . a > 0]. Learnable
  from acoustics alone.
* ``preference`` — each session skips the tracks ranking above its own
  quantile cut along a fresh private direction; only the support labels
  reveal the direction or the cut, so set-style comparison models
  benefit.
* ``markov``     — labels follow a two-step recurrence plus a weak
  acoustic term; only order-aware models can track it.
* ``log_leak``   — the realized label is half-encoded in a count-type
  log column, readable at query time only by a model that is given
  query logs.

Label noise flips each realized label with probability ``noise``; for
``markov`` the flipped value feeds the recurrence, so noise perturbs the
dynamics rather than just the observations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .rng import rng_stream

RULES = ("threshold", "preference", "markov", "log_leak")

# markov recurrence in +-1 state coordinates:
# state_t = sign(C1 * state_{t-1} + C2 * state_{t-2} + C_AC * (w . a_t))
MARKOV_C1 = 1.4
MARKOV_C2 = -1.0
MARKOV_C_AC = 0.5

# log_leak: label = [w . a + LEAK_SCALE * eta > 0]; the extra noise eta
# caps acoustic-only accuracy well below the log-informed ceiling.
LEAK_SCALE = 1.5

# preference: each session skips the tracks whose projection onto its
# private direction w lands above the session's own q-quantile, with
# q ~ U(pref_q_low, pref_q_high).  Both the direction and the cut are
# relative to the session, so only the support labels reveal them, and
# session skip rates spread over 1-q instead of pinning at 1/2.
PREF_Q_LOW = 0.25
PREF_Q_HIGH = 0.75

CONTEXT_VOCAB = ("editorial", "personalized", "user_collection")

SESSION_FILE = "sessions.csv"
FEATURE_FILE = "features.csv"
SCHEMA_FILE = "schema.json"


@dataclass(frozen=True)
class SynthConfig:
    n_sessions: int
    rule: str = "threshold"
    noise: float = 0.1
    seed: int = 0
    feature_dim: int = 16
    length_low: int = 10
    length_high: int = 20
    n_tracks: int | None = None
    pref_q_low: float = PREF_Q_LOW
    pref_q_high: float = PREF_Q_HIGH

    def __post_init__(self):
        if self.rule not in RULES:
            raise ConfigurationError(f"unknown rule {self.rule!r}; pick one of {RULES}")
        if self.n_sessions < 1:
            raise ConfigurationError("n_sessions must be positive")
        if not 0.0 <= self.noise < 0.5:
            raise ConfigurationError(f"noise must lie in [0, 0.5), got {self.noise}")
        if not 10 <= self.length_low <= self.length_high <= 20:
            raise ConfigurationError(
                f"session lengths must satisfy 10 <= low <= high <= 20, "
                f"got [{self.length_low}, {self.length_high}]"
            )
        if self.feature_dim < 1:
            raise ConfigurationError("feature_dim must be positive")
        if not 0.0 < self.pref_q_low <= self.pref_q_high < 1.0:
            raise ConfigurationError(
                f"preference quantile range must satisfy 0 < low <= high < 1, "
                f"got [{self.pref_q_low}, {self.pref_q_high}]"
            )

    @property
    def track_count(self) -> int:
        if self.n_tracks is not None:
            return self.n_tracks
        return max(64, min(self.n_sessions, 50_000))


def schema_dict(config: SynthConfig) -> dict:
    return {
        "session_id": "session_id",
        "track_id": "track_id",
        "position": "position",
        "skip_label": "skipped",
        "feature_dim": config.feature_dim,
        "columns": [
            {"name": "context_type", "kind": "categorical", "vocabulary": list(CONTEXT_VOCAB)},
            {"name": "seek_fwd_count", "kind": "count"},
            {"name": "pause_count", "kind": "count"},
            {"name": "shuffle", "kind": "boolean"},
        ],
    }


def _session_labels(
    config: SynthConfig, rule_w: np.ndarray, quantile: float, acoustic: np.ndarray, rng
):
    """Realized labels for one session given its tracks' acoustic rows."""
    length = acoustic.shape[0]
    flips = rng.random(length) < config.noise
    if config.rule == "threshold":
        clean = (acoustic @ rule_w > 0).astype(np.int64)
        return np.bitwise_xor(clean, flips.astype(np.int64))
    if config.rule == "preference":
        z = acoustic @ rule_w
        clean = (z > np.quantile(z, quantile)).astype(np.int64)
        return np.bitwise_xor(clean, flips.astype(np.int64))
    if config.rule == "log_leak":
        eta = rng.standard_normal(length)
        clean = (acoustic @ rule_w + LEAK_SCALE * eta > 0).astype(np.int64)
        return np.bitwise_xor(clean, flips.astype(np.int64))
    # markov: realized (possibly flipped) states drive the recurrence
    z = acoustic @ rule_w
    labels = np.zeros(length, dtype=np.int64)
    s_prev = s_prev2 = 0.0  # absent history contributes nothing
    for t in range(length):
        drive = MARKOV_C1 * s_prev + MARKOV_C2 * s_prev2 + MARKOV_C_AC * z[t]
        clean = 1 if drive > 0 else 0
        labels[t] = clean ^ int(flips[t])
        s_prev2 = s_prev
        s_prev = 2.0 * labels[t] - 1.0
    return labels


def generate(config: SynthConfig, out_dir) -> dict[str, Path]:
    """Write sessions/features/schema files; byte-identical per config."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    f_dim = config.feature_dim
    n_tracks = config.track_count

    track_rng = rng_stream(config.seed, "synth", "tracks")
    features = track_rng.standard_normal((n_tracks, f_dim))
    track_ids = [f"t{i:05d}" for i in range(n_tracks)]

    w_global = rng_stream(config.seed, "synth", "rule_w").standard_normal(f_dim)
    w_global /= np.linalg.norm(w_global)

    session_lines = [
        "session_id,track_id,position,context_type,seek_fwd_count,"
        "pause_count,shuffle,skipped,date"
    ]
    for i in range(config.n_sessions):
        rng = rng_stream(config.seed, "synth", "session", i)
        length = int(rng.integers(config.length_low, config.length_high + 1))
        tracks = rng.integers(0, n_tracks, size=length)
        acoustic = features[tracks]
        if config.rule == "preference":
            w = rng.standard_normal(f_dim)
            w /= np.linalg.norm(w)
            quantile = float(rng.uniform(config.pref_q_low, config.pref_q_high))
        else:
            w = w_global
            quantile = 0.5
        labels = _session_labels(config, w, quantile, acoustic, rng)

        ctx = rng.integers(0, len(CONTEXT_VOCAB), size=length)
        pause = rng.integers(0, 5, size=length)
        shuffle = rng.integers(0, 2, size=length)
        if config.rule == "log_leak":
            seek = labels + rng.integers(0, 2, size=length)
        else:
            seek = rng.integers(0, 3, size=length)

        sid = f"s{i:06d}"
        for pos in range(length):
            session_lines.append(
                f"{sid},{track_ids[tracks[pos]]},{pos + 1},"
                f"{CONTEXT_VOCAB[ctx[pos]]},{seek[pos]},{pause[pos]},"
                f"{shuffle[pos]},{labels[pos]},2019-01-{(pos % 28) + 1:02d}"
            )

    feature_lines = ["track_id," + ",".join(f"f{j}" for j in range(f_dim))]
    for tid, vec in zip(track_ids, features):
        feature_lines.append(tid + "," + ",".join(format(v, ".9g") for v in vec))

    paths = {
        "sessions": out / SESSION_FILE,
        "features": out / FEATURE_FILE,
        "schema": out / SCHEMA_FILE,
    }
    paths["sessions"].write_text("\n".join(session_lines) + "\n", encoding="utf-8")
    paths["features"].write_text("\n".join(feature_lines) + "\n", encoding="utf-8")
    paths["schema"].write_text(
        json.dumps(schema_dict(config), indent=2) + "\n", encoding="utf-8"
    )
    return paths

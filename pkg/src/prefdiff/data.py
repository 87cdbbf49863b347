"""Offline datasets, segment extraction, and script-teacher labeling.

Rewards live on the teacher/evaluator side only: segments drawn from the
offline data carry a window reward sum so the teacher can rank them, and the
teacher erases it when it emits a labeled pair. Serialized preference files
therefore never contain a reward field anywhere.

File layout for both dataset kinds: one JSON header line (dims, counts,
seed, teacher settings) followed by fixed-layout little-endian float64
records, plus an optional JSON-lines export for human inspection. Python's
repr-exact floats make the JSONL export lossless too.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import DataFormatError, ShapeError, ValidationError
from .segments import Segment

OFFLINE_FORMAT = "prefdiff-offline"
PREF_FORMAT = "prefdiff-pref"
FORMAT_VERSION = 1


@dataclass
class Episode:
    states: np.ndarray   # (h, state_dim)
    actions: np.ndarray  # (h, action_dim)
    rewards: np.ndarray  # (h,) teacher/evaluator side only

    def __post_init__(self) -> None:
        self.states = np.asarray(self.states, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        h = self.actions.shape[0]
        if self.states.shape[0] != h or self.rewards.shape != (h,):
            raise ShapeError("episode arrays must share their leading length")

    def __len__(self) -> int:
        return self.actions.shape[0]


@dataclass
class OfflineDataset:
    episodes: list[Episode]
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.episodes:
            raise ValidationError("offline dataset has no episodes")
        sd, ad = self.state_dim, self.action_dim
        for i, ep in enumerate(self.episodes):
            if ep.states.shape[1] != sd or ep.actions.shape[1] != ad:
                raise ShapeError(f"episode {i} dimensions differ from the rest of the dataset")

    @property
    def state_dim(self) -> int:
        return self.episodes[0].states.shape[1]

    @property
    def action_dim(self) -> int:
        return self.episodes[0].actions.shape[1]

    @property
    def min_episode_len(self) -> int:
        return min(len(ep) for ep in self.episodes)

    def transitions(self) -> tuple[np.ndarray, np.ndarray]:
        """All (state, action) rows stacked, for behavior cloning."""
        states = np.concatenate([ep.states for ep in self.episodes])
        actions = np.concatenate([ep.actions for ep in self.episodes])
        return states, actions


@dataclass
class TeacherConfig:
    noise_temp: float = 0.0
    drop_ties: bool = False

    def __post_init__(self) -> None:
        if self.noise_temp < 0.0:
            raise ValidationError(f"noise_temp must be >= 0, got {self.noise_temp}")


@dataclass
class PreferencePair:
    winner: Segment
    loser: Segment
    teacher: str = "script"
    tie: bool = False

    def __post_init__(self) -> None:
        if self.winner.k != self.loser.k:
            raise ShapeError("winner and loser must have the same segment length")
        if self.winner.reward_sum is not None or self.loser.reward_sum is not None:
            raise ValidationError("labeled segments must have reward_sum erased")


def sample_segments(dataset: OfflineDataset, k: int, n: int, rng: np.random.Generator) -> list[Segment]:
    """n contiguous windows, uniform over all valid (episode, offset) pairs.

    Each segment's reward_sum is the window's reward total (teacher side).
    """
    if k < 1 or k > dataset.min_episode_len:
        raise ValidationError(f"segment length k={k} must be in [1, {dataset.min_episode_len}]")
    if n < 1:
        raise ValidationError(f"need n >= 1 segments, got {n}")
    counts = np.array([len(ep) - k + 1 for ep in dataset.episodes])
    cumulative = np.cumsum(counts)
    draws = rng.integers(0, cumulative[-1], size=n)
    segments = []
    for d in draws:
        ep_idx = int(np.searchsorted(cumulative, d, side="right"))
        offset = int(d - (cumulative[ep_idx - 1] if ep_idx > 0 else 0))
        ep = dataset.episodes[ep_idx]
        segments.append(
            Segment(
                states=ep.states[offset:offset + k].copy(),
                actions=ep.actions[offset:offset + k].copy(),
                reward_sum=float(ep.rewards[offset:offset + k].sum()),
            )
        )
    return segments


def script_teacher_label(
    seg_a: Segment,
    seg_b: Segment,
    noise_temp: float,
    rng: np.random.Generator,
) -> PreferencePair:
    """Order two segments by reward sum, optionally through logistic noise.

    noise_temp = 0 compares exactly; ties get a fair-coin order and the tie
    flag. noise_temp > 0 picks seg_a as winner with probability
    sigmoid((r_a - r_b) / noise_temp). Both output segments have their
    reward sums erased.
    """
    if seg_a.reward_sum is None or seg_b.reward_sum is None:
        raise ValidationError("teacher needs reward sums on both segments")
    if seg_a.k != seg_b.k:
        raise ShapeError("teacher compares segments of equal length only")
    r_a, r_b = seg_a.reward_sum, seg_b.reward_sum
    tie = False
    if noise_temp == 0.0:
        if r_a > r_b:
            a_wins = True
        elif r_b > r_a:
            a_wins = False
        else:
            tie = True
            a_wins = bool(rng.random() < 0.5)
    else:
        a_wins = bool(rng.random() < expit((r_a - r_b) / noise_temp))
    winner, loser = (seg_a, seg_b) if a_wins else (seg_b, seg_a)
    return PreferencePair(winner.without_reward(), loser.without_reward(), teacher="script", tie=tie)


def build_pref_dataset(
    dataset: OfflineDataset,
    k: int,
    n_pairs: int,
    teacher: TeacherConfig,
    rng: np.random.Generator,
) -> list[PreferencePair]:
    """Sample segment pairs and label them; deterministic per seed.

    With drop_ties set, tied comparisons are discarded and redrawn so the
    output still holds n_pairs pairs.
    """
    if n_pairs < 0:
        raise ValidationError(f"n_pairs must be >= 0, got {n_pairs}")
    pairs: list[PreferencePair] = []
    attempts = 0
    while len(pairs) < n_pairs:
        attempts += 1
        if attempts > max(20 * n_pairs, 1000):
            raise ValidationError("teacher produced too many ties; check the reward signal")
        seg_a, seg_b = sample_segments(dataset, k, 2, rng)
        pair = script_teacher_label(seg_a, seg_b, teacher.noise_temp, rng)
        if pair.tie and teacher.drop_ties:
            continue
        pairs.append(pair)
    return pairs


# -- serialization -----------------------------------------------------------


def _header_line(header: dict) -> bytes:
    return json.dumps(header, sort_keys=True).encode("utf-8") + b"\n"


def _read_header(fh, expected_format: str) -> dict:
    try:
        header = json.loads(fh.readline().decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"unreadable header: {exc}") from exc
    if header.get("format") != expected_format:
        raise DataFormatError(f"expected {expected_format} file, got format={header.get('format')!r}")
    return header


def save_offline_dataset(path, dataset: OfflineDataset, meta: dict | None = None) -> None:
    header = {
        "format": OFFLINE_FORMAT,
        "version": FORMAT_VERSION,
        "state_dim": dataset.state_dim,
        "action_dim": dataset.action_dim,
        "episode_lengths": [len(ep) for ep in dataset.episodes],
        "meta": {**dataset.meta, **(meta or {})},
    }
    with open(path, "wb") as fh:
        fh.write(_header_line(header))
        for ep in dataset.episodes:
            fh.write(ep.states.astype("<f8").tobytes())
            fh.write(ep.actions.astype("<f8").tobytes())
            fh.write(ep.rewards.astype("<f8").tobytes())


def load_offline_dataset(path) -> OfflineDataset:
    with open(path, "rb") as fh:
        header = _read_header(fh, OFFLINE_FORMAT)
        sd, ad = header["state_dim"], header["action_dim"]
        episodes = []
        for h in header["episode_lengths"]:
            states = np.frombuffer(fh.read(8 * h * sd), dtype="<f8").reshape(h, sd).astype(np.float64)
            actions = np.frombuffer(fh.read(8 * h * ad), dtype="<f8").reshape(h, ad).astype(np.float64)
            rewards = np.frombuffer(fh.read(8 * h), dtype="<f8").astype(np.float64)
            episodes.append(Episode(states, actions, rewards))
        if fh.read(1):
            raise DataFormatError("trailing bytes after the last episode")
    return OfflineDataset(episodes, meta=header.get("meta", {}))


def save_pref_dataset(
    path,
    pairs: list[PreferencePair],
    state_dim: int,
    action_dim: int,
    k: int,
    meta: dict | None = None,
) -> None:
    """Binary preference file; dims are explicit so empty files stay valid."""
    for pair in pairs:
        if pair.winner.state_dim != state_dim or pair.winner.action_dim != action_dim or pair.winner.k != k:
            raise ShapeError("pair shapes do not match the declared dimensions")
    header = {
        "format": PREF_FORMAT,
        "version": FORMAT_VERSION,
        "state_dim": state_dim,
        "action_dim": action_dim,
        "k": k,
        "n_pairs": len(pairs),
        "teachers": [p.teacher for p in pairs],
        "ties": [p.tie for p in pairs],
        "meta": meta or {},
    }
    with open(path, "wb") as fh:
        fh.write(_header_line(header))
        for pair in pairs:
            for seg in (pair.winner, pair.loser):
                fh.write(seg.states.astype("<f8").tobytes())
                fh.write(seg.actions.astype("<f8").tobytes())


def load_pref_dataset(path) -> tuple[list[PreferencePair], dict]:
    with open(path, "rb") as fh:
        header = _read_header(fh, PREF_FORMAT)
        sd, ad, k = header["state_dim"], header["action_dim"], header["k"]
        pairs = []
        for i in range(header["n_pairs"]):
            segs = []
            for _ in range(2):
                states = np.frombuffer(fh.read(8 * k * sd), dtype="<f8").reshape(k, sd).astype(np.float64)
                actions = np.frombuffer(fh.read(8 * k * ad), dtype="<f8").reshape(k, ad).astype(np.float64)
                segs.append(Segment(states, actions, None))
            pairs.append(
                PreferencePair(segs[0], segs[1], teacher=header["teachers"][i], tie=header["ties"][i])
            )
        if fh.read(1):
            raise DataFormatError("trailing bytes after the last pair")
    return pairs, header


def export_pref_jsonl(path, pairs: list[PreferencePair]) -> None:
    """Lossless text export, one pair per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for pair in pairs:
            record = {
                "winner": {"states": pair.winner.states.tolist(), "actions": pair.winner.actions.tolist()},
                "loser": {"states": pair.loser.states.tolist(), "actions": pair.loser.actions.tolist()},
                "label_meta": {"teacher": pair.teacher, "tie": pair.tie},
            }
            fh.write(json.dumps(record, sort_keys=True))
            fh.write("\n")


def load_pref_jsonl(path) -> list[PreferencePair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            record = json.loads(line)
            pairs.append(
                PreferencePair(
                    Segment(np.array(record["winner"]["states"]), np.array(record["winner"]["actions"])),
                    Segment(np.array(record["loser"]["states"]), np.array(record["loser"]["actions"])),
                    teacher=record["label_meta"]["teacher"],
                    tie=record["label_meta"]["tie"],
                )
            )
    return pairs

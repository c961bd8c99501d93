"""Check-in ingestion, filtering and chronological train/test splitting."""

from __future__ import annotations

import math
import os
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Callable, Iterable, Sequence

import numpy as np


class ParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class EmptyDatasetError(ValueError):
    pass


@dataclass(frozen=True)
class CheckIn:
    user_id: str
    poi_id: str
    timestamp: int
    lat: float
    lon: float

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError(f"negative timestamp {self.timestamp}")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} out of range")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} out of range")


@dataclass(frozen=True)
class PreprocessConfig:
    """Filtering and split settings.

    Visit-count bounds are inclusive on both ends. The defaults are the
    large-scale settings; use :meth:`small_scale` or :meth:`for_cold_start` for
    the other regimes.
    """

    min_users_per_poi: int = 10
    min_visits_per_user: int = 10
    max_visits_per_user: int = 30
    train_fraction: float = 0.7
    cold_start: bool = False

    def __post_init__(self):
        if self.min_visits_per_user > self.max_visits_per_user:
            raise ValueError("min_visits_per_user exceeds max_visits_per_user")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")

    @classmethod
    def large_scale(cls) -> "PreprocessConfig":
        return cls()

    @classmethod
    def small_scale(cls) -> "PreprocessConfig":
        return cls(max_visits_per_user=150)

    @classmethod
    def for_cold_start(cls) -> "PreprocessConfig":
        # "fewer than 10 visits" == at most 9
        return cls(min_users_per_poi=1, min_visits_per_user=1, max_visits_per_user=9, cold_start=True)


@dataclass
class Dataset:
    """Indexed users, POIs and per-user chronological visit splits.

    ``test_pairs[u]`` holds ``(prev_poi, target_poi, target_timestamp)``
    triples; the first triple's previous POI is the user's last train visit.
    """

    users: list[str]
    pois: list[str]
    poi_coords: np.ndarray
    train_seqs: list[list[int]]
    train_times: list[list[int]]
    test_pairs: list[list[tuple[int, int, int]]]
    _poi_index: dict[str, int] = field(default=None, repr=False, compare=False)

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_pois(self) -> int:
        return len(self.pois)

    @property
    def n_visits(self) -> int:
        return sum(len(s) for s in self.train_seqs) + sum(len(t) for t in self.test_pairs)

    def poi_index(self, poi_id: str) -> int:
        if self._poi_index is None:
            self._poi_index = {p: i for i, p in enumerate(self.pois)}
        return self._poi_index[poi_id]

    def train_pois(self) -> np.ndarray:
        """Sorted indices of POIs that appear in any train sequence."""
        return np.unique(np.concatenate([np.asarray(s, dtype=np.int64) for s in self.train_seqs]))

    def train_samples(self) -> list[tuple[int, int, int]]:
        """All ``(user, prev_poi, target_poi)`` consecutive pairs in train sequences."""
        return [
            (u, seq[i - 1], seq[i])
            for u, seq in enumerate(self.train_seqs)
            for i in range(1, len(seq))
        ]

    def test_samples(self) -> list[tuple[int, int, int]]:
        return [(u, prev, tgt) for u, pairs in enumerate(self.test_pairs) for prev, tgt, _ in pairs]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.users == other.users
            and self.pois == other.pois
            and np.array_equal(self.poi_coords, other.poi_coords)
            and self.train_seqs == other.train_seqs
            and self.train_times == other.train_times
            and [list(map(tuple, t)) for t in self.test_pairs]
            == [list(map(tuple, t)) for t in other.test_pairs]
        )


def parse_timestamp(text: str) -> int:
    text = text.strip()
    if text.lstrip("-").isdigit():
        return int(text)
    iso = text[:-1] + "+00:00" if text.endswith(("Z", "z")) else text
    dt = datetime.fromisoformat(iso)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def parse_checkins(lines: Iterable[str]) -> list[CheckIn]:
    """Parse tab-separated ``user, poi, timestamp, lat, lon`` records.

    Blank lines are ignored. Any malformed record raises :class:`ParseError`
    carrying its 1-based line number.
    """
    out = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise ParseError(lineno, f"expected 5 tab-separated fields, got {len(parts)}")
        user, poi, ts, lat, lon = parts
        if not user or not poi:
            raise ParseError(lineno, "empty user or poi id")
        try:
            timestamp = parse_timestamp(ts)
        except ValueError:
            raise ParseError(lineno, f"invalid timestamp {ts!r}") from None
        try:
            out.append(CheckIn(user, poi, timestamp, float(lat), float(lon)))
        except ValueError as exc:
            raise ParseError(lineno, str(exc)) from None
    return out


def read_checkins(path: str | os.PathLike) -> list[CheckIn]:
    with open(path, encoding="utf-8") as fh:
        return parse_checkins(fh)


def train_size(n: int, fraction: float) -> int:
    # round() guards against 0.7 * 30 == 20.999999999999996
    return math.ceil(round(fraction * n, 9))


def preprocess(
    checkins: Sequence[CheckIn],
    cfg: PreprocessConfig = PreprocessConfig(),
    prefilter: Callable[[Sequence[CheckIn]], Sequence[CheckIn]] | None = None,
) -> Dataset:
    """Filter POIs, then users, then split each user's visits chronologically.

    ``prefilter`` runs before everything else (e.g. restricting a global
    corpus to a set of countries).
    """
    if prefilter is not None:
        checkins = prefilter(checkins)
    if not checkins:
        raise EmptyDatasetError("no check-ins to preprocess")

    poi_users: dict[str, set[str]] = defaultdict(set)
    for c in checkins:
        poi_users[c.poi_id].add(c.user_id)
    kept_pois = {p for p, us in poi_users.items() if len(us) > cfg.min_users_per_poi}
    remaining = [c for c in checkins if c.poi_id in kept_pois]

    by_user: dict[str, list[CheckIn]] = {}
    for c in remaining:
        by_user.setdefault(c.user_id, []).append(c)

    splits: dict[str, tuple[list[CheckIn], list[CheckIn]]] = {}
    for user, visits in by_user.items():
        if not cfg.min_visits_per_user <= len(visits) <= cfg.max_visits_per_user:
            continue
        visits = sorted(visits, key=lambda c: c.timestamp)  # stable: ties keep input order
        k = train_size(len(visits), cfg.train_fraction)
        if k >= len(visits):
            continue
        splits[user] = (visits[:k], visits[k:])

    if not splits:
        raise EmptyDatasetError("no users survive filtering")

    user_ids: dict[str, int] = {}
    poi_ids: dict[str, int] = {}
    coords: list[tuple[float, float]] = []
    for c in remaining:
        if c.user_id not in splits:
            continue
        user_ids.setdefault(c.user_id, len(user_ids))
        if c.poi_id not in poi_ids:
            poi_ids[c.poi_id] = len(poi_ids)
            coords.append((c.lat, c.lon))

    users = list(user_ids)
    train_seqs, train_times, test_pairs = [], [], []
    for user in users:
        train, test = splits[user]
        train_seqs.append([poi_ids[c.poi_id] for c in train])
        train_times.append([c.timestamp for c in train])
        pairs = []
        prev = poi_ids[train[-1].poi_id]
        for c in test:
            cur = poi_ids[c.poi_id]
            pairs.append((prev, cur, c.timestamp))
            prev = cur
        test_pairs.append(pairs)

    return Dataset(
        users=users,
        pois=list(poi_ids),
        poi_coords=np.asarray(coords, dtype=np.float64).reshape(-1, 2),
        train_seqs=train_seqs,
        train_times=train_times,
        test_pairs=test_pairs,
    )


def cold_start_preprocess(checkins: Sequence[CheckIn], train_fraction: float = 0.7) -> Dataset:
    cfg = PreprocessConfig.for_cold_start()
    if train_fraction != cfg.train_fraction:
        cfg = PreprocessConfig(
            min_users_per_poi=1, min_visits_per_user=1, max_visits_per_user=9,
            train_fraction=train_fraction, cold_start=True,
        )
    return preprocess(checkins, cfg)


def save_dataset(ds: Dataset, directory: str | os.PathLike) -> None:
    """Write ``pois.tsv``, ``users.tsv`` and ``visits.tsv`` into ``directory``."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "pois.tsv"), "w", encoding="utf-8") as fh:
        for i, (pid, (lat, lon)) in enumerate(zip(ds.pois, ds.poi_coords)):
            fh.write(f"{i}\t{pid}\t{float(lat)!r}\t{float(lon)!r}\n")
    with open(os.path.join(directory, "users.tsv"), "w", encoding="utf-8") as fh:
        for i, uid in enumerate(ds.users):
            fh.write(f"{i}\t{uid}\n")
    with open(os.path.join(directory, "visits.tsv"), "w", encoding="utf-8") as fh:
        for u in range(ds.n_users):
            for p, t in zip(ds.train_seqs[u], ds.train_times[u]):
                fh.write(f"{u}\t{p}\t{t}\ttrain\n")
            for _, p, t in ds.test_pairs[u]:
                fh.write(f"{u}\t{p}\t{t}\ttest\n")


def load_dataset(directory: str | os.PathLike) -> Dataset:
    def rows(name):
        path = os.path.join(directory, name)
        if not os.path.exists(path):
            raise FileNotFoundError(f"missing dataset file {path}")
        with open(path, encoding="utf-8") as fh:
            return [line.rstrip("\n").split("\t") for line in fh if line.strip()]

    poi_rows = rows("pois.tsv")
    pois = [r[1] for r in poi_rows]
    coords = np.array([(float(r[2]), float(r[3])) for r in poi_rows], dtype=np.float64).reshape(-1, 2)
    users = [r[1] for r in rows("users.tsv")]

    train_seqs = [[] for _ in users]
    train_times = [[] for _ in users]
    test_visits = [[] for _ in users]
    for u, p, t, flag in rows("visits.tsv"):
        u, p, t = int(u), int(p), int(t)
        if flag == "train":
            train_seqs[u].append(p)
            train_times[u].append(t)
        elif flag == "test":
            test_visits[u].append((p, t))
        else:
            raise ValueError(f"unknown split flag {flag!r}")

    test_pairs = []
    for u in range(len(users)):
        prev = train_seqs[u][-1]
        pairs = []
        for p, t in test_visits[u]:
            pairs.append((prev, p, t))
            prev = p
        test_pairs.append(pairs)
    return Dataset(users, pois, coords, train_seqs, train_times, test_pairs)

"""Claims-to-episode grouping, wait-time construction, and episode file IO.

Raw claim lines are merged into care episodes, each episode gets a wait time
to the next unplanned acute admission (or death) with right censoring at the
end of the observation window, and episodes move between stages as JSON
lines. Dates arrive as ISO-8601 strings or integer day indexes; internally
everything is an integer day index (days since 1970-01-01).
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace, asdict
from datetime import date
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)

_EPOCH = date(1970, 1, 1)

CLAIM_TYPES = frozenset({"inpatient", "snf", "hospice", "outpatient"})
DISCHARGE_STATUSES = frozenset({"home", "transfer", "death", "other"})

#: Default lattice dimensions for episodes built from claims.
DEFAULT_LATTICE = {"mdc": 26, "history_group": 32, "cc_mcc": 3, "race": 5}


def to_day_index(value) -> int:
    """ISO-8601 date string or integer-like -> days since 1970-01-01."""
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, str):
        text = value.strip()
        try:
            return int(text)
        except ValueError:
            pass
        try:
            return (date.fromisoformat(text) - _EPOCH).days
        except ValueError as exc:
            raise DataError(f"unparseable date {value!r}") from exc
    raise DataError(f"unparseable date {value!r}")


@dataclass(frozen=True)
class ClaimRecord:
    person_id: str
    provider_id: str
    claim_type: str
    start_date: int
    end_date: int
    discharge_status: str
    unplanned: bool = False


@dataclass(frozen=True)
class Episode:
    """A merged run of claims for one person and claim type."""

    person_id: str
    provider_id: str
    claim_type: str
    admit_date: int
    discharge_date: int
    discharge_status: str
    unplanned: bool = False
    n_claims: int = 1


@dataclass
class EpisodeRecord:
    """A modeling-ready episode row."""

    person_id: str
    admit_date: int
    discharge_date: int
    placement: int = 0
    covariates: np.ndarray = field(default_factory=lambda: np.zeros(0))
    cohort_coords: dict[str, int] = field(default_factory=dict)
    wait_days: float = 0.0
    event: bool = False

    def __post_init__(self):
        self.covariates = np.asarray(self.covariates, dtype=float)
        if self.wait_days < 0:
            raise ValueError("wait_days must be non-negative")
        if not (0 <= self.placement <= 5):
            raise ValueError("placement must lie in {0..5}")


def parse_claim(row: Mapping[str, object]) -> ClaimRecord:
    try:
        start = to_day_index(row["start_date"])
        end = to_day_index(row["end_date"])
        claim_type = str(row["claim_type"]).strip().lower()
        status = str(row["discharge_status"]).strip().lower()
    except KeyError as exc:
        raise DataError(f"missing claim field {exc.args[0]!r}") from exc
    if claim_type not in CLAIM_TYPES:
        raise DataError(f"unknown claim type {claim_type!r}")
    if status not in DISCHARGE_STATUSES:
        raise DataError(f"unknown discharge status {status!r}")
    if start > end:
        raise DataError(f"claim starts after it ends ({start} > {end})")
    unplanned = str(row.get("unplanned", "")).strip().lower() in {"1", "true", "yes"}
    return ClaimRecord(person_id=str(row["person_id"]),
                       provider_id=str(row["provider_id"]),
                       claim_type=claim_type, start_date=start, end_date=end,
                       discharge_status=status, unplanned=unplanned)


def read_claims(path: str | Path) -> tuple[list[ClaimRecord], list[dict]]:
    """Load claims from a CSV or JSON-lines file.

    Malformed rows are rejected individually (returned with a reason) rather
    than aborting the batch.
    """
    path = Path(path)
    rows: Iterable[Mapping[str, object]]
    if path.suffix.lower() == ".csv":
        with path.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
    else:
        rows = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
    claims: list[ClaimRecord] = []
    rejected: list[dict] = []
    for i, row in enumerate(rows):
        try:
            claims.append(parse_claim(row))
        except DataError as exc:
            logger.warning("rejecting claim row %d: %s", i, exc)
            rejected.append({"row": i, "reason": str(exc)})
    return claims, rejected


def _mergeable(episode: Episode, claim: ClaimRecord) -> bool:
    # Successive same-type claims fuse only when they overlap in time, come
    # from the same provider, and the earlier discharge was not to home.
    return (claim.start_date <= episode.discharge_date
            and claim.provider_id == episode.provider_id
            and episode.discharge_status != "home")


def group_claims(claims: Sequence[ClaimRecord]) -> tuple[list[Episode], list[dict]]:
    """Merge claims into episodes.

    Claims are processed per person and claim type in (start, end) order.
    A claim extends the open episode when :func:`_mergeable` holds; otherwise
    it opens a new episode, so a discharge home followed by a same-day return
    yields two distinct episodes. Returns the episodes (sorted by person and
    admit date) plus per-record rejections.
    """
    rejected: list[dict] = []
    valid: list[ClaimRecord] = []
    for i, c in enumerate(claims):
        if c.start_date > c.end_date:
            logger.warning("rejecting claim %d: starts after it ends", i)
            rejected.append({"row": i, "reason": "start_date after end_date"})
        else:
            valid.append(c)

    episodes: list[Episode] = []
    keyed = sorted(valid, key=lambda c: (c.person_id, c.claim_type,
                                         c.start_date, c.end_date))
    open_ep: Episode | None = None
    for claim in keyed:
        if (open_ep is not None
                and claim.person_id == open_ep.person_id
                and claim.claim_type == open_ep.claim_type
                and _mergeable(open_ep, claim)):
            open_ep = replace(
                open_ep,
                discharge_date=max(open_ep.discharge_date, claim.end_date),
                discharge_status=claim.discharge_status,
                unplanned=open_ep.unplanned or claim.unplanned,
                n_claims=open_ep.n_claims + 1)
        else:
            if open_ep is not None:
                episodes.append(open_ep)
            open_ep = Episode(person_id=claim.person_id,
                              provider_id=claim.provider_id,
                              claim_type=claim.claim_type,
                              admit_date=claim.start_date,
                              discharge_date=claim.end_date,
                              discharge_status=claim.discharge_status,
                              unplanned=claim.unplanned)
    if open_ep is not None:
        episodes.append(open_ep)
    episodes.sort(key=lambda e: (e.person_id, e.admit_date, e.discharge_date))
    return episodes, rejected


def compute_wait(episodes: Sequence[Episode], unplanned_flags: Sequence[bool],
                 observation_end: int,
                 death_dates: Mapping[str, int] | None = None
                 ) -> list[tuple[Episode, float, bool]]:
    """Wait to the next unplanned acute admission or death, per episode.

    ``unplanned_flags`` aligns with ``episodes`` and marks which episodes
    count as unplanned acute events when they begin. Death dates (by person)
    come either from ``death_dates`` or from episodes whose discharge status
    is ``death``. Episodes with no qualifying event by ``observation_end``
    are censored there, so a censored wait always equals the window length.

    Returns ``(episode, wait_days, event)`` triples in the input order.
    """
    if len(unplanned_flags) != len(episodes):
        raise ValueError("unplanned_flags must align with episodes")
    deaths: dict[str, int] = dict(death_dates or {})
    for ep in episodes:
        if ep.discharge_status == "death":
            day = ep.discharge_date
            deaths[ep.person_id] = min(deaths.get(ep.person_id, day), day)

    by_person: dict[str, list[tuple[int, int]]] = {}
    for i, (ep, flag) in enumerate(zip(episodes, unplanned_flags)):
        if flag and ep.claim_type == "inpatient":
            by_person.setdefault(ep.person_id, []).append((ep.admit_date, i))
    for admits in by_person.values():
        admits.sort()

    out: list[tuple[Episode, float, bool]] = []
    for i, ep in enumerate(episodes):
        if ep.discharge_date > observation_end:
            raise DataError(
                f"episode discharged on day {ep.discharge_date}, after the "
                f"observation window ends ({observation_end})")
        event_day: int | None = None
        for admit, j in by_person.get(ep.person_id, ()):
            if j != i and admit >= ep.discharge_date:
                event_day = admit
                break
        death_day = deaths.get(ep.person_id)
        if death_day is not None and death_day >= ep.discharge_date:
            event_day = death_day if event_day is None else min(event_day, death_day)
        if event_day is not None and event_day <= observation_end:
            out.append((ep, float(event_day - ep.discharge_date), True))
        else:
            out.append((ep, float(observation_end - ep.discharge_date), False))
    return out


def temporal_split(episodes: Sequence, cutoff_day: int,
                   discharge_key=lambda e: e.discharge_date):
    """Split episodes into (before cutoff, at-or-after cutoff) by discharge."""
    train = [e for e in episodes if discharge_key(e) < cutoff_day]
    test = [e for e in episodes if discharge_key(e) >= cutoff_day]
    if not train or not test:
        logger.warning("temporal split at day %d left an empty side "
                       "(%d train, %d test)", cutoff_day, len(train), len(test))
    return train, test


def write_episode_records(records: Iterable[EpisodeRecord], path: str | Path) -> None:
    with Path(path).open("w") as fh:
        for rec in records:
            row = asdict(rec)
            row["covariates"] = [int(v) if float(v).is_integer() else float(v)
                                 for v in rec.covariates]
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_episode_records(path: str | Path) -> list[EpisodeRecord]:
    records = []
    for i, line in enumerate(Path(path).read_text().splitlines()):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            records.append(EpisodeRecord(
                person_id=str(row["person_id"]),
                admit_date=int(row["admit_date"]),
                discharge_date=int(row["discharge_date"]),
                placement=int(row["placement"]),
                covariates=np.asarray(row["covariates"], dtype=float),
                cohort_coords={k: int(v) for k, v in row["cohort_coords"].items()},
                wait_days=float(row["wait_days"]),
                event=bool(row["event"]),
            ))
        except (KeyError, ValueError, json.JSONDecodeError) as exc:
            raise DataError(f"bad episode record on line {i + 1}: {exc}") from exc
    return records


def records_to_dataset(records: Sequence[EpisodeRecord],
                       lattice: Mapping[str, int],
                       min_wait: float = 0.5) -> dict:
    """Stack episode records into the arrays the model trains on.

    Zero waits (a same-day return) are nudged up to ``min_wait`` so event
    times stay positive. Coordinates are validated against ``lattice``.
    """
    if not records:
        raise DataError("no episode records")
    p = records[0].covariates.size
    features = np.zeros((len(records), p))
    coords = {name: np.zeros(len(records), dtype=np.int64) for name in lattice}
    placement = np.zeros(len(records), dtype=np.int64)
    wait = np.zeros(len(records))
    event = np.zeros(len(records), dtype=bool)
    for i, rec in enumerate(records):
        if rec.covariates.size != p:
            raise DataError(f"record {i} has {rec.covariates.size} covariates, "
                            f"expected {p}")
        features[i] = rec.covariates
        for name, size in lattice.items():
            if name not in rec.cohort_coords:
                raise DataError(f"record {i} is missing coordinate {name!r}")
            value = rec.cohort_coords[name]
            if not 0 <= value < size:
                raise DataError(f"record {i} coordinate {name}={value} "
                                f"outside [0, {size})")
            coords[name][i] = value
        placement[i] = rec.placement
        wait[i] = max(rec.wait_days, min_wait)
        event[i] = rec.event
    return {"features": features, "coords": coords, "placement": placement,
            "wait": wait, "event": event}

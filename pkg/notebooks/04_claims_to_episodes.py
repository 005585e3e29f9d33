# %% [markdown]
# # From raw claims to modeling-ready episodes
#
# Real input arrives as claim lines, not episodes. This walkthrough runs the
# full intake path on a small hand-built claims file:
#
# 1. parse and validate claim rows,
# 2. merge contiguous claims into episodes,
# 3. derive the waiting time and event flag per episode,
# 4. split by discharge date and assemble model arrays.

# %%
import csv
import tempfile
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from latticesurv.ingest import (EpisodeRecord, compute_wait, group_claims,
                                read_claims, records_to_dataset,
                                temporal_split, to_day_index,
                                write_episode_records)


def day(index: int) -> str:
    """Render a days-since-1970 index back as an ISO date for printing."""
    return (date(1970, 1, 1) + timedelta(days=int(index))).isoformat()

# %% [markdown]
# ## A tiny claims file
#
# Person A has an inpatient stay billed as two contiguous claims, goes home,
# and returns three weeks later with an unplanned admission. Person B has a
# single stay and never returns inside the window. Person C's stay ends in
# death. One malformed row (start after end) is included on purpose.

# %%
rows = [
    # person A: one stay split across two claim lines, then a readmission
    ("A", "prov-1", "inpatient", "2024-01-05", "2024-01-09", "other", ""),
    ("A", "prov-1", "inpatient", "2024-01-09", "2024-01-12", "home", ""),
    ("A", "prov-1", "inpatient", "2024-02-02", "2024-02-06", "home", "yes"),
    # person B: a single stay, no readmission
    ("B", "prov-2", "inpatient", "2024-01-10", "2024-01-15", "home", ""),
    # person C: the stay ends in death
    ("C", "prov-1", "inpatient", "2024-03-01", "2024-03-04", "death", ""),
    # malformed: starts after it ends
    ("D", "prov-2", "inpatient", "2024-04-10", "2024-04-05", "home", ""),
]
claims_path = Path(tempfile.mkdtemp(prefix="claims_")) / "claims.csv"
with claims_path.open("w", newline="") as fh:
    writer = csv.writer(fh)
    writer.writerow(["person_id", "provider_id", "claim_type", "start_date",
                     "end_date", "discharge_status", "unplanned"])
    writer.writerows(rows)

claims, rejects = read_claims(claims_path)
print(f"parsed {len(claims)} claims, rejected {len(rejects)}")
for r in rejects:
    print(f"  row {r['row']}: {r['reason']}")

# %% [markdown]
# ## Claims merge into episodes
#
# Contiguous or overlapping claims for the same person and claim type fuse
# into one episode whose discharge status comes from the last claim. Person
# A's two January lines become a single eight-day stay; the February
# admission stays separate.

# %%
episodes, grouping_rejects = group_claims(claims)
for ep in episodes:
    print(f"{ep.person_id}: {day(ep.admit_date)} to {day(ep.discharge_date)} "
          f"({ep.n_claims} claims, discharged to {ep.discharge_status!r}, "
          f"unplanned={ep.unplanned})")

# %% [markdown]
# ## Waiting times and event flags
#
# For every episode, the outcome clock starts at discharge and stops at the
# next unplanned acute admission or death, whichever comes first. Episodes
# with neither by the end of observation are censored there.

# %%
observation_end = to_day_index("2024-12-31")
flags = [ep.unplanned for ep in episodes]
outcomes = compute_wait(episodes, flags, observation_end)
for ep, wait, event in outcomes:
    kind = "event" if event else "censored"
    print(f"{ep.person_id} discharged {day(ep.discharge_date)}: "
          f"wait {wait:.0f} days ({kind})")

# %% [markdown]
# Person A's first stay waits 21 days to the readmission. The readmission
# itself has no later event, so it is censored, as is person B. Person C's
# death on the discharge day gives a zero-day event.

# %% [markdown]
# ## Temporal split and model arrays
#
# Episodes are split by discharge date so evaluation never looks into the
# training period. Each kept episode then becomes an `EpisodeRecord` with a
# placement level, covariates, and cohort coordinates; in production these
# come from the quantizer and the history grouper.

# %%
cutoff = to_day_index("2024-02-01")
past, future = temporal_split(episodes, cutoff)
print(f"{len(past)} episodes before day {cutoff}, {len(future)} after")

# %%
lattice = {"region": 2}
rng = np.random.default_rng(0)
records = []
for ep, wait, event in outcomes:
    records.append(EpisodeRecord(
        person_id=ep.person_id,
        admit_date=ep.admit_date,
        discharge_date=ep.discharge_date,
        placement=int(rng.integers(0, 6)),
        covariates=rng.integers(0, 2, size=3).astype(float),
        cohort_coords={"region": 0 if ep.provider_id == "prov-1" else 1},
        wait_days=wait,
        event=event))

records_path = claims_path.parent / "episodes.jsonl"
write_episode_records(records, records_path)
data = records_to_dataset(records, lattice)
for key, value in data.items():
    shape = value.shape if hasattr(value, "shape") else len(value)
    print(f"{key}: {shape}")

# %% [markdown]
# The dict of arrays above is exactly what the trainer consumes, and the
# JSONL file round-trips through `read_episode_records` for the command-line
# pipeline. From here the flow continues as in the simulation walkthrough.

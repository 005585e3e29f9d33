"""Claims parsing, episode grouping, and wait computation."""

import numpy as np
import pytest

from latticesurv import ingest
from latticesurv.errors import DataError


def _claim(person="p1", provider="h1", ctype="inpatient", start=0, end=5,
           status="home", unplanned=False):
    return ingest.ClaimRecord(person_id=person, provider_id=provider,
                              claim_type=ctype, start_date=start, end_date=end,
                              discharge_status=status, unplanned=unplanned)


def _episode(person="p1", provider="h1", ctype="inpatient", admit=0,
             discharge=5, status="home", unplanned=False):
    return ingest.Episode(person_id=person, provider_id=provider,
                          claim_type=ctype, admit_date=admit,
                          discharge_date=discharge, discharge_status=status,
                          unplanned=unplanned)


class TestDayIndex:
    def test_integers_pass_through(self):
        assert ingest.to_day_index(12) == 12
        assert ingest.to_day_index("12") == 12
        assert ingest.to_day_index("-3") == -3

    def test_iso_dates(self):
        assert ingest.to_day_index("1970-01-01") == 0
        assert ingest.to_day_index("1970-02-01") == 31
        assert ingest.to_day_index("2020-01-01") == 18262

    def test_garbage_rejected(self):
        with pytest.raises(DataError):
            ingest.to_day_index("next tuesday")
        with pytest.raises(DataError):
            ingest.to_day_index(3.5)


class TestParseClaim:
    def test_normalizes_case_and_whitespace(self):
        claim = ingest.parse_claim({
            "person_id": "p9", "provider_id": "h2", "claim_type": " Inpatient ",
            "start_date": "2020-01-01", "end_date": "2020-01-04",
            "discharge_status": "HOME", "unplanned": "Yes",
        })
        assert claim.claim_type == "inpatient"
        assert claim.discharge_status == "home"
        assert claim.unplanned is True
        assert claim.end_date - claim.start_date == 3

    def test_unknown_type_and_status(self):
        base = {"person_id": "p", "provider_id": "h", "start_date": 0,
                "end_date": 1, "discharge_status": "home"}
        with pytest.raises(DataError):
            ingest.parse_claim({**base, "claim_type": "dental"})
        with pytest.raises(DataError):
            ingest.parse_claim({**base, "claim_type": "inpatient",
                                "discharge_status": "eloped"})

    def test_reversed_dates(self):
        with pytest.raises(DataError):
            ingest.parse_claim({
                "person_id": "p", "provider_id": "h", "claim_type": "inpatient",
                "start_date": 5, "end_date": 2, "discharge_status": "home"})

    def test_missing_field(self):
        with pytest.raises(DataError):
            ingest.parse_claim({"person_id": "p"})


class TestGroupClaims:
    def test_overlapping_same_provider_claims_merge(self):
        claims = [
            _claim(start=0, end=6, status="transfer"),
            _claim(start=4, end=9, status="home"),
        ]
        episodes, rejected = ingest.group_claims(claims)
        assert rejected == []
        assert len(episodes) == 1
        ep = episodes[0]
        assert (ep.admit_date, ep.discharge_date) == (0, 9)
        assert ep.discharge_status == "home"
        assert ep.n_claims == 2

    def test_discharge_home_blocks_merging(self):
        claims = [
            _claim(start=0, end=6, status="home"),
            _claim(start=6, end=9, status="home"),
        ]
        episodes, _ = ingest.group_claims(claims)
        assert len(episodes) == 2

    def test_different_provider_blocks_merging(self):
        claims = [
            _claim(start=0, end=6, status="transfer", provider="h1"),
            _claim(start=4, end=9, status="home", provider="h2"),
        ]
        episodes, _ = ingest.group_claims(claims)
        assert len(episodes) == 2

    def test_gap_blocks_merging(self):
        claims = [
            _claim(start=0, end=6, status="transfer"),
            _claim(start=8, end=9, status="home"),
        ]
        episodes, _ = ingest.group_claims(claims)
        assert len(episodes) == 2

    def test_unplanned_flag_is_sticky(self):
        claims = [
            _claim(start=0, end=6, status="transfer", unplanned=True),
            _claim(start=4, end=9, status="home", unplanned=False),
        ]
        episodes, _ = ingest.group_claims(claims)
        assert episodes[0].unplanned is True

    def test_bad_rows_rejected_not_fatal(self):
        claims = [
            _claim(start=0, end=6),
            ingest.ClaimRecord("p1", "h1", "inpatient", 9, 4, "home"),
        ]
        episodes, rejected = ingest.group_claims(claims)
        assert len(episodes) == 1
        assert rejected == [{"row": 1, "reason": "start_date after end_date"}]

    def test_claim_count_partition(self):
        """Every valid claim lands in exactly one episode."""
        rng = np.random.default_rng(6)
        claims = []
        for _ in range(200):
            start = int(rng.integers(0, 60))
            claims.append(_claim(
                person=f"p{rng.integers(4)}",
                provider=f"h{rng.integers(3)}",
                start=start, end=start + int(rng.integers(0, 10)),
                status=("home", "transfer", "other")[rng.integers(3)]))
        episodes, rejected = ingest.group_claims(claims)
        assert sum(e.n_claims for e in episodes) + len(rejected) == 200

    def test_grouping_is_idempotent(self):
        rng = np.random.default_rng(8)
        claims = []
        for _ in range(120):
            start = int(rng.integers(0, 40))
            claims.append(_claim(
                person=f"p{rng.integers(3)}",
                provider=f"h{rng.integers(2)}",
                start=start, end=start + int(rng.integers(0, 8)),
                status=("home", "transfer")[rng.integers(2)]))
        episodes, _ = ingest.group_claims(claims)
        again, rejected = ingest.group_claims([
            ingest.ClaimRecord(e.person_id, e.provider_id, e.claim_type,
                               e.admit_date, e.discharge_date,
                               e.discharge_status, e.unplanned)
            for e in episodes])
        assert rejected == []
        assert [(e.person_id, e.admit_date, e.discharge_date, e.discharge_status)
                for e in again] == \
               [(e.person_id, e.admit_date, e.discharge_date, e.discharge_status)
                for e in episodes]


class TestComputeWait:
    def test_readmission(self):
        episodes = [
            _episode(admit=2, discharge=10, status="home"),
            _episode(admit=17, discharge=25, status="home", unplanned=True),
        ]
        out = ingest.compute_wait(episodes, [False, True], observation_end=50)
        ep, wait, event = out[0]
        assert (wait, event) == (7.0, True)

    def test_death_via_discharge_status(self):
        episodes = [
            _episode(admit=2, discharge=10, status="home"),
            _episode(admit=12, discharge=13, status="death"),
        ]
        out = ingest.compute_wait(episodes, [False, False], observation_end=50)
        assert (out[0][1], out[0][2]) == (3.0, True)

    def test_death_via_mapping(self):
        episodes = [_episode(admit=2, discharge=10, status="home")]
        out = ingest.compute_wait(episodes, [False], observation_end=50,
                                  death_dates={"p1": 13})
        assert (out[0][1], out[0][2]) == (3.0, True)

    def test_censoring_at_window_end(self):
        episodes = [_episode(admit=2, discharge=10, status="home")]
        out = ingest.compute_wait(episodes, [False], observation_end=50)
        assert (out[0][1], out[0][2]) == (40.0, False)

    def test_event_beyond_window_is_censored(self):
        episodes = [_episode(admit=2, discharge=10, status="home")]
        out = ingest.compute_wait(episodes, [False], observation_end=50,
                                  death_dates={"p1": 70})
        assert (out[0][1], out[0][2]) == (40.0, False)

    def test_planned_admissions_do_not_count(self):
        episodes = [
            _episode(admit=2, discharge=10, status="home"),
            _episode(admit=17, discharge=25, status="home", unplanned=False),
        ]
        out = ingest.compute_wait(episodes, [False, False], observation_end=50)
        assert (out[0][1], out[0][2]) == (40.0, False)

    def test_earliest_of_readmission_and_death_wins(self):
        episodes = [
            _episode(admit=2, discharge=10, status="home"),
            _episode(admit=20, discharge=25, status="home", unplanned=True),
        ]
        out = ingest.compute_wait(episodes, [False, True], observation_end=50,
                                  death_dates={"p1": 14})
        assert (out[0][1], out[0][2]) == (4.0, True)

    def test_discharge_after_window_rejected(self):
        episodes = [_episode(admit=2, discharge=60, status="home")]
        with pytest.raises(DataError):
            ingest.compute_wait(episodes, [False], observation_end=50)

    def test_censored_wait_equals_window_length(self):
        rng = np.random.default_rng(10)
        episodes = [
            _episode(person=f"p{i}", admit=int(a), discharge=int(a) + 3)
            for i, a in enumerate(rng.integers(0, 30, size=50))
        ]
        out = ingest.compute_wait(episodes, [False] * 50, observation_end=60)
        for ep, wait, event in out:
            assert not event
            assert wait == 60 - ep.discharge_date


class TestSplitsAndSerialization:
    def test_temporal_split(self):
        eps = [_episode(admit=d, discharge=d + 2) for d in (0, 10, 20, 30)]
        train, test = ingest.temporal_split(eps, cutoff_day=15)
        assert [e.admit_date for e in train] == [0, 10]
        assert [e.admit_date for e in test] == [20, 30]

    def test_episode_record_round_trip(self, tmp_path):
        records = [
            ingest.EpisodeRecord(
                person_id="p1", admit_date=3, discharge_date=8, placement=2,
                covariates=np.array([1.0, 0.0, 1.0]),
                cohort_coords={"mdc": 4, "race": 1},
                wait_days=12.5, event=True),
            ingest.EpisodeRecord(
                person_id="p2", admit_date=5, discharge_date=9, placement=0,
                covariates=np.array([0.0, 1.0, 0.0]),
                cohort_coords={"mdc": 0, "race": 3},
                wait_days=41.0, event=False),
        ]
        path = tmp_path / "episodes.jsonl"
        ingest.write_episode_records(records, path)
        loaded = ingest.read_episode_records(path)
        assert len(loaded) == 2
        assert loaded[0].person_id == "p1"
        assert loaded[0].cohort_coords == {"mdc": 4, "race": 1}
        np.testing.assert_array_equal(loaded[0].covariates, records[0].covariates)
        assert loaded[1].wait_days == 41.0

    def test_bad_line_rejected(self, tmp_path):
        path = tmp_path / "episodes.jsonl"
        path.write_text('{"person_id": "p"}\n')
        with pytest.raises(DataError):
            ingest.read_episode_records(path)

    def test_read_claims_csv(self, tmp_path):
        path = tmp_path / "claims.csv"
        path.write_text(
            "person_id,provider_id,claim_type,start_date,end_date,"
            "discharge_status,unplanned\n"
            "p1,h1,inpatient,2020-01-01,2020-01-05,home,1\n"
            "p1,h1,dental,2020-01-01,2020-01-05,home,\n"
        )
        claims, rejected = ingest.read_claims(path)
        assert len(claims) == 1
        assert claims[0].unplanned is True
        assert rejected[0]["row"] == 1

    def test_read_claims_jsonl(self, tmp_path):
        path = tmp_path / "claims.jsonl"
        path.write_text(
            '{"person_id": "p1", "provider_id": "h1", "claim_type": "snf", '
            '"start_date": 10, "end_date": 20, "discharge_status": "home"}\n')
        claims, rejected = ingest.read_claims(path)
        assert rejected == []
        assert claims[0].claim_type == "snf"


class TestDatasetAssembly:
    def test_arrays_and_zero_wait_nudge(self):
        records = [
            ingest.EpisodeRecord("p1", 0, 3, placement=1,
                                 covariates=np.array([1.0, 0.0]),
                                 cohort_coords={"g": 1}, wait_days=0.0,
                                 event=True),
            ingest.EpisodeRecord("p2", 0, 4, placement=0,
                                 covariates=np.array([0.0, 1.0]),
                                 cohort_coords={"g": 0}, wait_days=12.0,
                                 event=False),
        ]
        data = ingest.records_to_dataset(records, {"g": 2})
        assert data["features"].shape == (2, 2)
        np.testing.assert_array_equal(data["coords"]["g"], [1, 0])
        assert data["wait"][0] == 0.5
        assert data["wait"][1] == 12.0
        np.testing.assert_array_equal(data["event"], [True, False])

    def test_coordinate_validation(self):
        rec = ingest.EpisodeRecord("p1", 0, 3, covariates=np.zeros(2),
                                   cohort_coords={"g": 5}, wait_days=1.0)
        with pytest.raises(DataError):
            ingest.records_to_dataset([rec], {"g": 2})
        rec2 = ingest.EpisodeRecord("p1", 0, 3, covariates=np.zeros(2),
                                    cohort_coords={}, wait_days=1.0)
        with pytest.raises(DataError):
            ingest.records_to_dataset([rec2], {"g": 2})

    def test_empty_input_rejected(self):
        with pytest.raises(DataError):
            ingest.records_to_dataset([], {"g": 2})

    def test_default_lattice_shape(self):
        assert ingest.DEFAULT_LATTICE == {
            "mdc": 26, "history_group": 32, "cc_mcc": 3, "race": 5}

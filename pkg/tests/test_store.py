import random

import pytest

from conftest import BASE_MS, SimClock, make_store, seed_basic
from ehrmesh.errors import EhrError


def test_register_then_get_roundtrip(seeded_store):
    record = seeded_store.get_patient("P-1", actor="t")
    assert record["name"] == "Ada"
    assert record["zone_id"] == "Z1"
    assert record["allergies"] == ["PENICILLIN"]
    assert record["registered_at"] == BASE_MS


def test_register_generates_fresh_ids(seeded_store):
    before = len(seeded_store.view.all("patient"))
    pid = seeded_store.register_patient(
        {"name": "Sam", "birth_date": "1976-12-03", "sex": "M", "zone_id": "Z2"}, actor="t"
    )
    assert pid
    assert len(seeded_store.view.all("patient")) == before + 1


def test_duplicate_explicit_id_rejected(seeded_store):
    with pytest.raises(EhrError) as err:
        seeded_store.register_patient(
            {"patient_id": "P-1", "name": "X", "birth_date": "1990-01-01", "sex": "X", "zone_id": "Z1"},
            actor="t",
        )
    assert err.value.code == "DUPLICATE_ID"


def test_unknown_zone_rejected(seeded_store):
    with pytest.raises(EhrError) as err:
        seeded_store.register_patient(
            {"name": "X", "birth_date": "1990-01-01", "sex": "X", "zone_id": "Z-unknown"}, actor="t"
        )
    assert err.value.code == "INVALID_ZONE"


def test_future_birth_date_rejected(seeded_store):
    with pytest.raises(EhrError) as err:
        seeded_store.register_patient(
            {"name": "X", "birth_date": "2030-01-01", "sex": "F", "zone_id": "Z1"}, actor="t"
        )
    assert err.value.code == "VALIDATION"


def test_get_unknown_patient(seeded_store):
    with pytest.raises(EhrError) as err:
        seeded_store.get_patient("nope", actor="t")
    assert err.value.code == "NOT_FOUND"


def test_get_reflects_update(seeded_store):
    seeded_store.update_patient("P-1", {"name": "Ada N.", "zone_id": "Z2"}, actor="t")
    record = seeded_store.get_patient("P-1", actor="t")
    assert record["name"] == "Ada N."
    assert record["zone_id"] == "Z2"
    assert record["sex"] == "F"


def test_encounter_appends_to_history(seeded_store, clock):
    history_before = seeded_store.patient_history("P-1", actor="t")
    seeded_store.record_encounter(
        {
            "patient_id": "P-1",
            "facility_id": "H1",
            "clinician_id": "c-1",
            "occurred_at": clock(),
            "diagnosis_codes": ["MALARIA"],
            "note": "fever",
        },
        actor="t",
    )
    assert len(seeded_store.patient_history("P-1", actor="t")) == len(history_before) + 1


def test_encounter_for_absent_patient(seeded_store):
    with pytest.raises(EhrError) as err:
        seeded_store.record_encounter(
            {"patient_id": "ghost", "facility_id": "H1", "clinician_id": "c-1"}, actor="t"
        )
    assert err.value.code == "UNKNOWN_PATIENT"


def test_encounter_clock_bound(seeded_store, clock):
    with pytest.raises(EhrError):
        seeded_store.record_encounter(
            {
                "patient_id": "P-1",
                "facility_id": "H1",
                "clinician_id": "c-1",
                "occurred_at": clock() + 1,
            },
            actor="t",
        )


def test_same_timestamp_encounters_ordered_by_id(seeded_store, clock):
    at = clock()
    for encounter_id in ("E-b", "E-a"):
        seeded_store.record_encounter(
            {
                "encounter_id": encounter_id,
                "patient_id": "P-1",
                "facility_id": "H1",
                "clinician_id": "c-1",
                "occurred_at": at,
            },
            actor="t",
        )
    entries = [e for e in seeded_store.patient_history("P-1", actor="t") if e["kind"] == "encounter"]
    assert [e["encounter_id"] for e in entries] == ["E-a", "E-b"]


def test_refill_request_keeps_refill_count(seeded_store):
    request = seeded_store.request_refill("RX-1", actor="t")
    assert request["status"] == "REFILL_REQUESTED"
    record = seeded_store.view.get("prescription", "RX-1")
    assert record["status"] == "REFILL_REQUESTED"
    assert record["refills_remaining"] == 2


def test_refill_request_without_refills(seeded_store):
    seeded_store.create_prescription(
        {"rx_id": "RX-0", "patient_id": "P-1", "drug_code": "IBU", "dose": "200mg",
         "refills_remaining": 0},
        actor="t",
    )
    with pytest.raises(EhrError) as err:
        seeded_store.request_refill("RX-0", actor="t")
    assert err.value.code == "NO_REFILLS_LEFT"


def test_refill_request_expired_rx(seeded_store):
    seeded_store.expire_prescription("RX-1", actor="t")
    with pytest.raises(EhrError) as err:
        seeded_store.request_refill("RX-1", actor="t")
    assert err.value.code == "NOT_ACTIVE"


def test_refill_grant_decrements(seeded_store):
    seeded_store.request_refill("RX-1", actor="t")
    seeded_store.grant_refill("RX-1", actor="t")
    record = seeded_store.view.get("prescription", "RX-1")
    assert record["status"] == "ACTIVE"
    assert record["refills_remaining"] == 1
    with pytest.raises(EhrError) as err:
        seeded_store.grant_refill("RX-1", actor="t")
    assert err.value.code == "NOT_REQUESTED"


def test_unknown_rx(seeded_store):
    with pytest.raises(EhrError) as err:
        seeded_store.request_refill("RX-missing", actor="t")
    assert err.value.code == "UNKNOWN_RX"


def test_history_sorted_when_inserted_out_of_order(seeded_store, clock):
    times = [clock() - 5000, clock() - 9000, clock() - 1000]
    for index, at in enumerate(times):
        seeded_store.record_encounter(
            {
                "encounter_id": f"E-{index}",
                "patient_id": "P-1",
                "facility_id": "H1",
                "clinician_id": "c-1",
                "occurred_at": at,
            },
            actor="t",
        )
    entries = seeded_store.patient_history("P-1", actor="t")
    stamps = [e["occurred_at"] if e["kind"] == "encounter" else e["prescribed_at"] for e in entries]
    assert stamps == sorted(stamps)


def test_history_empty_is_not_an_error(store, clock):
    store.register_zone("Z1", "N", actor="seed")
    store.register_patient(
        {"patient_id": "P-e", "name": "E", "birth_date": "2000-01-01", "sex": "X", "zone_id": "Z1"},
        actor="seed",
    )
    assert store.patient_history("P-e", actor="t") == []


def test_history_matches_sorted_oracle(seeded_store, clock):
    rng = random.Random(7)
    inserted = []
    for index in range(50):
        at = clock() - rng.randrange(1, 10_000_000)
        if rng.random() < 0.7:
            entity_id = f"E-{index:02d}"
            seeded_store.record_encounter(
                {
                    "encounter_id": entity_id,
                    "patient_id": "P-1",
                    "facility_id": "H1",
                    "clinician_id": "c-1",
                    "occurred_at": at,
                },
                actor="t",
            )
        else:
            entity_id = f"RXr-{index:02d}"
            seeded_store.create_prescription(
                {
                    "rx_id": entity_id,
                    "patient_id": "P-1",
                    "drug_code": "D",
                    "dose": "1",
                    "refills_remaining": 1,
                    "prescribed_at": at,
                },
                actor="t",
            )
        inserted.append((at, entity_id))
    inserted.append((BASE_MS, "RX-1"))  # the seeded prescription
    oracle = [entity_id for _, entity_id in sorted(inserted)]
    entries = seeded_store.patient_history("P-1", actor="t")
    got = [e["encounter_id"] if e["kind"] == "encounter" else e["rx_id"] for e in entries]
    assert got == oracle


def test_history_completeness_against_event_log(seeded_store, clock):
    rng = random.Random(13)
    for index in range(30):
        seeded_store.record_encounter(
            {
                "patient_id": "P-1",
                "facility_id": "H1",
                "clinician_id": "c-1",
                "occurred_at": clock() - rng.randrange(1, 99_999),
            },
            actor="t",
        )
    # Replay the mutation log: every created clinical entity for the patient
    # must appear in history exactly once.
    expected = set()
    for event in seeded_store.log:
        if event.entity_kind in ("encounter", "prescription") and event.field_path == "":
            if event.new_value.get("patient_id") == "P-1":
                expected.add(event.entity_id)
    entries = seeded_store.patient_history("P-1", actor="t")
    got = [e["encounter_id"] if e["kind"] == "encounter" else e["rx_id"] for e in entries]
    assert len(got) == len(set(got))
    assert set(got) == expected


def test_id_uniqueness_across_random_ops():
    clock = SimClock()
    store = make_store(clock, seed=99)
    seed_basic(store)
    rng = random.Random(99)
    for _ in range(120):
        clock.tick(rng.randrange(1, 500))
        op = rng.randrange(3)
        if op == 0:
            store.register_patient(
                {"name": "N", "birth_date": "1980-01-01", "sex": "X", "zone_id": "Z1"}, actor="t"
            )
        elif op == 1:
            store.record_encounter(
                {"patient_id": "P-1", "facility_id": "H1", "clinician_id": "c-1"}, actor="t"
            )
        else:
            store.create_prescription(
                {"patient_id": "P-1", "drug_code": "D", "dose": "1", "refills_remaining": 1},
                actor="t",
            )
    for kind in ("patient", "encounter", "prescription"):
        ids = [entity_id for entity_id, _ in store.view.all(kind)]
        assert len(ids) == len(set(ids))


def test_every_mutation_emits_one_event_and_one_audit_entry(store, clock):
    mutations = 0
    store.register_zone("Z1", "N", actor="t")
    mutations += 1
    store.register_facility("H1", "H", "Z1", "UES", actor="t")
    mutations += 1
    store.register_patient(
        {"patient_id": "P-1", "name": "A", "birth_date": "1990-01-01", "sex": "F", "zone_id": "Z1"},
        actor="t",
    )
    mutations += 1
    store.update_patient("P-1", {"name": "B"}, actor="t")
    mutations += 1
    store.create_prescription(
        {"rx_id": "RX-1", "patient_id": "P-1", "drug_code": "D", "dose": "1", "refills_remaining": 1},
        actor="t",
    )
    mutations += 1
    store.request_refill("RX-1", actor="t")
    mutations += 1
    store.grant_refill("RX-1", actor="t")
    mutations += 1
    assert len(store.log) == mutations
    assert len(store.audit.entries()) == mutations
    assert len({event.event_id for event in store.log}) == mutations


def test_failed_mutation_audited_but_no_event(seeded_store):
    events_before = len(seeded_store.log)
    audit_before = len(seeded_store.audit.entries())
    with pytest.raises(EhrError):
        seeded_store.get_patient("ghost", actor="t")
    assert len(seeded_store.log) == events_before
    assert len(seeded_store.audit.entries()) == audit_before + 1
    assert seeded_store.audit.entries()[-1].outcome == "NOT_FOUND"


def test_tombstone_hides_entity(seeded_store):
    seeded_store.delete_entity("prescription", "RX-1", actor="t")
    assert seeded_store.view.get("prescription", "RX-1") is None
    # The state is retained (tombstones are kept), only hidden.
    assert ("prescription", "RX-1") in seeded_store.view.entities

"""Annotation service: store semantics, HTTP contract, jobs, activation."""

import base64
import io
import json
import random
import time
from pathlib import Path

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from gradia.attention import encode_mask_rle
from gradia.errors import DataError, InputError
from gradia.model import ConvSpec, ModelConfig, init_model, save_parameters
from gradia.reasonability import Verdict, build_matrix
from gradia.service import (
    AnnotationRecord,
    AnnotationStore,
    JobConflict,
    JobStatus,
    Workbench,
    build_workbench,
    create_app,
)
from gradia.synthetic import (
    SceneSpec,
    SplitCounts,
    generate_dataset,
    load_dataset,
    oracle_mask,
    save_dataset,
)

TINY_SCENE = SceneSpec(image_size=24, shape_size_range=(5, 8), seed=13)
TINY_COUNTS = SplitCounts(train=24, validation=16, test=16)
TINY_MODEL = ModelConfig(
    input_height=24,
    input_width=24,
    conv_stack=(
        ConvSpec(out_maps=4, kernel=3, pool="max2"),
        ConvSpec(out_maps=4, kernel=3),
    ),
)


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("svc-data")
    save_dataset(generate_dataset(TINY_SCENE, TINY_COUNTS), root)
    return root


@pytest.fixture()
def bench(data_dir, tmp_path):
    instances = load_dataset(data_dir)
    store = AnnotationStore(tmp_path / "annotations.jsonl")
    params = init_model(TINY_MODEL, seed=0)
    return Workbench(instances, store, params, run_root=tmp_path / "runs")


@pytest.fixture()
def client(bench):
    return TestClient(create_app(bench))


def wait_job(client, job_id, timeout=120.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        body = client.get(f"/api/jobs/{job_id}").json()
        if body["state"] in ("done", "failed"):
            return body
        time.sleep(0.05)
    raise AssertionError(f"job {job_id} did not settle within {timeout}s")


def post_verdict(client, instance_id, q1, q2, annotator="a1"):
    r = client.post(
        f"/api/instances/{instance_id}/verdict",
        json={"q1": q1, "q2": q2, "annotator_id": annotator},
    )
    assert r.status_code == 200, r.text
    return r.json()


class TestAnnotationRecord:
    def test_json_round_trip(self):
        record = AnnotationRecord(
            instance_id="i-1",
            annotator_id="a-1",
            verdict=Verdict(True, False, annotator_id="a-1", timestamp=12.5),
            mask_rle=[2, 2, 1, 2, 1],
            likert=4,
            created_at=12.5,
            revision=3,
        )
        back = AnnotationRecord.from_json_line(record.to_json_line())
        assert back == record

    def test_json_round_trip_without_optionals(self):
        record = AnnotationRecord("i", "a", None, None, 2, 1.0, 1)
        back = AnnotationRecord.from_json_line(record.to_json_line())
        assert back.verdict is None and back.mask_rle is None and back.likert == 2

    def test_serialization_is_canonical(self):
        record = AnnotationRecord("i", "a", None, [1, 1, 1], None, 1.0, 1)
        assert record.to_json_line() == record.to_json_line()
        assert record.to_json_line().startswith('{"annotator_id"')


class TestAnnotationStore:
    def test_requires_some_payload(self, tmp_path):
        store = AnnotationStore(tmp_path / "log.jsonl")
        with pytest.raises(InputError):
            store.append("i", "a")

    def test_revisions_increase_per_annotator(self, tmp_path):
        store = AnnotationStore(tmp_path / "log.jsonl")
        assert store.append("i", "a", likert=1).revision == 1
        assert store.append("i", "a", likert=2).revision == 2
        assert store.append("i", "b", likert=3).revision == 1
        assert store.append("j", "a", likert=4).revision == 1

    def test_latest_views_track_last_write(self, tmp_path):
        store = AnnotationStore(tmp_path / "log.jsonl")
        store.append("i", "a", verdict=Verdict(True, True))
        store.append("i", "a", verdict=Verdict(False, False))
        assert store.latest_verdict["i"].q1_sufficient is False
        store.append("i", "a", likert=2)
        assert store.latest_verdict["i"].q1_sufficient is False
        assert store.latest_likert["i"] == 2

    def test_stale_revision_rejected(self, tmp_path):
        store = AnnotationStore(tmp_path / "log.jsonl")
        store.append("i", "a", likert=1)
        stale = AnnotationRecord("i", "a", None, None, 5, time.time(), 1)
        with pytest.raises(DataError):
            store._apply(stale)

    def test_log_replay_is_byte_exact(self, tmp_path):
        path = tmp_path / "log.jsonl"
        store = AnnotationStore(path)
        rng = random.Random(5)
        for k in range(60):
            iid = f"i{rng.randrange(8)}"
            ann = rng.choice(["a", "b"])
            kind = rng.randrange(3)
            if kind == 0:
                store.append(iid, ann, verdict=Verdict(rng.random() < 0.5, rng.random() < 0.5))
            elif kind == 1:
                store.append(iid, ann, mask_rle=[2, 2, rng.randrange(1, 4), 4 - rng.randrange(1, 4)])
            else:
                store.append(iid, ann, likert=rng.randrange(1, 6))
        replayed = AnnotationStore(path)
        assert replayed.state_snapshot() == store.state_snapshot()
        assert len(replayed.records) == len(store.records)

    def test_memory_only_store_allowed(self):
        store = AnnotationStore(None)
        store.append("i", "a", likert=3)
        assert store.latest_likert["i"] == 3


class TestListInstances:
    def test_pagination_matches_full_enumeration(self, client):
        full = client.get("/api/instances", params={"page_size": 1000}).json()
        assert full["total"] == TINY_COUNTS.train + TINY_COUNTS.validation + TINY_COUNTS.test
        seen = []
        pages = None
        page = 1
        while pages is None or page <= pages:
            body = client.get(
                "/api/instances", params={"page": page, "page_size": 7}
            ).json()
            pages = body["pages"]
            seen.extend(item["id"] for item in body["items"])
            page += 1
        assert pages == -(-full["total"] // 7)
        assert seen == [item["id"] for item in full["items"]]
        assert len(set(seen)) == len(seen)

    def test_ordering_is_stable_by_id(self, client):
        body = client.get("/api/instances", params={"page_size": 1000}).json()
        ids = [item["id"] for item in body["items"]]
        assert ids == sorted(ids)

    def test_split_filter(self, client):
        body = client.get(
            "/api/instances", params={"split": "test", "page_size": 1000}
        ).json()
        assert body["total"] == TINY_COUNTS.test
        assert all(item["split"] == "test" for item in body["items"])

    def test_annotated_filter_partitions(self, client):
        everything = client.get("/api/instances", params={"page_size": 1000}).json()
        target = everything["items"][0]["id"]
        client.post(f"/api/instances/{target}/likert", json={"rating": 3})
        yes = client.get(
            "/api/instances", params={"annotated": "true", "page_size": 1000}
        ).json()
        no = client.get(
            "/api/instances", params={"annotated": "false", "page_size": 1000}
        ).json()
        assert [item["id"] for item in yes["items"]] == [target]
        assert yes["total"] + no["total"] == everything["total"]

    def test_quadrant_filter(self, client):
        everything = client.get("/api/instances", params={"page_size": 1000}).json()
        row = everything["items"][0]
        post_verdict(client, row["id"], "yes", "no")
        expected = "RA" if row["correct"] else "RIA"
        body = client.get(
            "/api/instances", params={"quadrant": expected, "page_size": 1000}
        ).json()
        assert [item["id"] for item in body["items"]] == [row["id"]]

    @pytest.mark.parametrize(
        "params",
        [
            {"split": "holdout"},
            {"quadrant": "XX"},
            {"annotated": "maybe"},
            {"page": 0},
            {"page_size": 0},
        ],
    )
    def test_bad_filters_rejected(self, client, params):
        assert client.get("/api/instances", params=params).status_code == 400

    def test_empty_store_has_no_quadrants(self, client):
        body = client.get("/api/instances", params={"page_size": 1000}).json()
        assert all(item["quadrant"] is None for item in body["items"])


class TestGetInstance:
    def test_unknown_id_is_404(self, client):
        r = client.get("/api/instances/nope")
        assert r.status_code == 404
        assert r.json()["code"] == "not_found"

    def test_payload_images_decode(self, client, bench):
        inst = bench.instances[0]
        body = client.get(f"/api/instances/{inst.id}").json()
        gray = Image.open(io.BytesIO(base64.b64decode(body["image_png"])))
        assert gray.mode == "L" and gray.size == (24, 24)
        want = np.clip(np.round(inst.image * 255.0), 0, 255).astype(np.uint8)
        np.testing.assert_array_equal(np.asarray(gray), want)
        overlay = Image.open(io.BytesIO(base64.b64decode(body["overlay_png"])))
        assert overlay.mode == "RGB" and overlay.size == (24, 24)

    def test_attention_grid_is_normalized(self, client, bench):
        inst = bench.instances[0]
        body = client.get(f"/api/instances/{inst.id}").json()
        grid = np.asarray(body["attention_grid"])
        assert grid.shape == TINY_MODEL.feature_grid()
        assert grid.min() >= 0.0 and grid.max() <= 1.0
        if grid.max() > grid.min():
            assert grid.min() == 0.0 and grid.max() == 1.0

    def test_repeated_gets_identical(self, client, bench):
        inst = bench.instances[3]
        a = client.get(f"/api/instances/{inst.id}").json()
        b = client.get(f"/api/instances/{inst.id}").json()
        assert a == b

    def test_verdict_rendered_as_yes_no(self, client, bench):
        inst = bench.instances[0]
        post_verdict(client, inst.id, "yes", "no")
        body = client.get(f"/api/instances/{inst.id}").json()
        assert body["annotations"]["verdict"] == {"q1": "yes", "q2": "no"}


class TestPostAnnotations:
    def test_verdict_revisions_advance(self, client, bench):
        inst = bench.instances[0]
        assert post_verdict(client, inst.id, "yes", "no")["revision"] == 1
        assert post_verdict(client, inst.id, "no", "yes")["revision"] == 2

    def test_verdict_accepts_booleans(self, client, bench):
        inst = bench.instances[0]
        out = post_verdict(client, inst.id, True, False)
        assert out["quadrant"] in ("RA", "RIA")

    def test_verdict_quadrant_matches_correctness(self, client, bench):
        inst = bench.instances[0]
        row = client.get(f"/api/instances/{inst.id}").json()
        out = post_verdict(client, inst.id, "no", "yes")
        assert out["quadrant"] == ("UA" if row["correct"] else "UIA")

    def test_bad_verdict_rejected(self, client, bench):
        inst = bench.instances[0]
        r = client.post(f"/api/instances/{inst.id}/verdict", json={"q1": "maybe", "q2": "no"})
        assert r.status_code == 400

    def test_verdict_unknown_id_404(self, client):
        r = client.post("/api/instances/nope/verdict", json={"q1": "yes", "q2": "no"})
        assert r.status_code == 404

    def test_mask_round_trips_bit_exact(self, client, bench):
        inst = bench.instances[0]
        rle = encode_mask_rle(oracle_mask(inst))
        r = client.post(f"/api/instances/{inst.id}/mask", json={"mask_rle": rle})
        assert r.status_code == 200
        body = client.get(f"/api/instances/{inst.id}").json()
        assert body["annotations"]["mask_rle"] == rle

    def test_mask_dimension_mismatch_rejected(self, client, bench):
        inst = bench.instances[0]
        small = np.zeros((12, 12), dtype=bool)
        small[2:5, 3:7] = True
        r = client.post(
            f"/api/instances/{inst.id}/mask", json={"mask_rle": encode_mask_rle(small)}
        )
        assert r.status_code == 400

    def test_malformed_rle_rejected(self, client, bench):
        inst = bench.instances[0]
        for payload in ({"mask_rle": "xx"}, {"mask_rle": [24, 24, -1]}, {"mask_rle": [24]}):
            r = client.post(f"/api/instances/{inst.id}/mask", json=payload)
            assert r.status_code == 400

    def test_likert_bounds(self, client, bench):
        inst = bench.instances[0]
        for rating in (1, 5):
            r = client.post(f"/api/instances/{inst.id}/likert", json={"rating": rating})
            assert r.status_code == 200
        for rating in (0, 6, "3", True, None):
            r = client.post(f"/api/instances/{inst.id}/likert", json={"rating": rating})
            assert r.status_code == 400

    def test_likert_visible_in_listing(self, client, bench):
        inst = bench.instances[0]
        client.post(f"/api/instances/{inst.id}/likert", json={"rating": 4})
        body = client.get(f"/api/instances/{inst.id}").json()
        assert body["likert"] == 4


class TestMatrixEndpoint:
    def test_empty_store(self, client):
        body = client.get("/api/matrix").json()
        assert body["total"] == 0
        assert body["metrics"] is None
        assert body["partial"] is True

    def test_counts_follow_verdicts(self, client, bench):
        rows = client.get("/api/instances", params={"page_size": 1000}).json()["items"]
        for row in rows[:6]:
            post_verdict(client, row["id"], "yes", "no")
        body = client.get("/api/matrix").json()
        assert body["total"] == 6
        assert sum(body["counts"].values()) == 6
        assert body["metrics"] is not None
        direct = bench.build_matrix_direct()
        assert body["counts"] == {
            "RA": direct.ra, "UA": direct.ua, "RIA": direct.ria, "UIA": direct.uia
        }

    def test_randomized_sequence_matches_direct_build(self, client, bench):
        rng = random.Random(17)
        ids = [inst.id for inst in bench.instances]
        for step in range(150):
            iid = rng.choice(ids)
            kind = rng.randrange(3)
            if kind == 0:
                post_verdict(
                    client, iid, rng.random() < 0.5, rng.random() < 0.5,
                    annotator=rng.choice(["a", "b"]),
                )
            elif kind == 1:
                inst = bench.by_id[iid]
                client.post(
                    f"/api/instances/{iid}/mask",
                    json={"mask_rle": encode_mask_rle(oracle_mask(inst))},
                )
            else:
                client.post(f"/api/instances/{iid}/likert", json={"rating": rng.randrange(1, 6)})
            if step % 30 == 29:
                view = client.get("/api/matrix").json()
                direct = bench.build_matrix_direct()
                assert view["counts"] == {
                    "RA": direct.ra, "UA": direct.ua, "RIA": direct.ria, "UIA": direct.uia
                }
        # the latest verdict per instance decides the quadrant, not history
        latest = dict(bench.store.latest_verdict)
        records = []
        for iid, verdict in latest.items():
            pred, _p, _c = bench.inference(bench.by_id[iid])
            records.append((iid, pred == bench.by_id[iid].label, verdict))
        expected = build_matrix(records)
        view = client.get("/api/matrix").json()
        assert view["counts"] == {
            "RA": expected.ra, "UA": expected.ua, "RIA": expected.ria, "UIA": expected.uia
        }


class TestJobs:
    def seed_annotations(self, client, bench, n=6):
        validation = [i for i in bench.instances if i.split == "validation"]
        for inst in validation[:n]:
            post_verdict(client, inst.id, "no", "yes")
            client.post(
                f"/api/instances/{inst.id}/mask",
                json={"mask_rle": encode_mask_rle(oracle_mask(inst))},
            )

    def test_unknown_kind_rejected(self, client):
        r = client.post("/api/jobs", json={"kind": "retrain", "config": {}})
        assert r.status_code == 400

    def test_unknown_config_field_rejected(self, client):
        r = client.post("/api/jobs", json={"kind": "finetune", "config": {"lr": 0.1}})
        assert r.status_code == 400

    def test_bad_condition_rejected(self, client):
        r = client.post("/api/jobs", json={"kind": "finetune", "config": {"condition": "C7"}})
        assert r.status_code == 400

    def test_unknown_job_404(self, client):
        assert client.get("/api/jobs/zzz").status_code == 404

    def test_evaluate_job_runs(self, client, bench, tmp_path):
        r = client.post("/api/jobs", json={"kind": "evaluate", "config": {}})
        assert r.status_code == 200
        job = wait_job(client, r.json()["job_id"])
        assert job["state"] == "done", job
        assert job["progress"] == 1.0
        payload = json.loads((Path(job["result_ref"]) / "evaluation.json").read_text())
        assert sum(payload["matrix"]["counts"]) == TINY_COUNTS.test

    def test_finetune_without_verdicts_fails(self, client):
        r = client.post("/api/jobs", json={"kind": "finetune", "config": {"epochs": 1}})
        job = wait_job(client, r.json()["job_id"])
        assert job["state"] == "failed"
        assert "no verdicts" in job["error_message"]

    def test_finetune_job_and_activation(self, client, bench):
        self.seed_annotations(client, bench)
        before = client.get(f"/api/instances/{bench.instances[0].id}").json()
        r = client.post(
            "/api/jobs",
            json={
                "kind": "finetune",
                "config": {"epochs": 2, "learning_rate": 0.005, "batch_size": 8},
            },
        )
        assert r.status_code == 200
        job = wait_job(client, r.json()["job_id"])
        assert job["state"] == "done", job
        act = client.post("/api/model/activate", json={"job_id": job["job_id"]})
        assert act.status_code == 200
        assert act.json()["model_version"] == 2
        after = client.get(f"/api/instances/{bench.instances[0].id}").json()
        assert after["model_version"] == 2
        assert before["model_version"] == 1

    def test_conflicting_finetunes_rejected(self, client, bench):
        self.seed_annotations(client, bench)
        first = client.post(
            "/api/jobs", json={"kind": "finetune", "config": {"epochs": 4, "batch_size": 8}}
        )
        assert first.status_code == 200
        second = client.post(
            "/api/jobs", json={"kind": "finetune", "config": {"epochs": 1}}
        )
        assert second.status_code == 409
        assert second.json()["code"] == "conflict"
        wait_job(client, first.json()["job_id"])

    def test_activate_argument_validation(self, client, tmp_path):
        r = client.post("/api/model/activate", json={})
        assert r.status_code == 400
        r = client.post(
            "/api/model/activate", json={"job_id": "x", "params_path": "y"}
        )
        assert r.status_code == 400
        r = client.post(
            "/api/model/activate", json={"params_path": str(tmp_path / "missing.bin")}
        )
        assert r.status_code == 400

    def test_activate_from_params_path(self, client, bench, tmp_path):
        fresh = init_model(TINY_MODEL, seed=9)
        path = tmp_path / "fresh.bin"
        save_parameters(fresh, path)
        r = client.post("/api/model/activate", json={"params_path": str(path)})
        assert r.status_code == 200
        assert r.json()["model_version"] == 2

    def test_activation_invalidates_attention_cache(self, client, bench, tmp_path):
        inst = bench.instances[0]
        before = client.get(f"/api/instances/{inst.id}").json()["attention_grid"]
        fresh = init_model(TINY_MODEL, seed=21)
        path = tmp_path / "fresh.bin"
        save_parameters(fresh, path)
        client.post("/api/model/activate", json={"params_path": str(path)})
        after = client.get(f"/api/instances/{inst.id}").json()["attention_grid"]
        assert not np.allclose(np.asarray(before), np.asarray(after))


class TestBuildWorkbench:
    def test_builds_from_directory(self, data_dir, tmp_path):
        bench = build_workbench(data_dir, model_config=TINY_MODEL, run_root=tmp_path)
        assert len(bench.instances) == TINY_COUNTS.train + TINY_COUNTS.validation + TINY_COUNTS.test
        assert bench.store.log_path == data_dir / "annotations.jsonl"
        ids = [inst.id for inst in bench.instances]
        assert ids == sorted(ids)

    def test_duplicate_ids_rejected(self, data_dir, tmp_path):
        instances = load_dataset(data_dir)
        twice = instances + instances[:1]
        store = AnnotationStore(None)
        with pytest.raises(DataError):
            Workbench(twice, store, init_model(TINY_MODEL, seed=0))

    def test_submit_job_direct_conflict_error(self, data_dir, tmp_path):
        bench = build_workbench(data_dir, model_config=TINY_MODEL, run_root=tmp_path)
        bench.jobs["x"] = JobStatus(job_id="x", kind="evaluate", state="running")
        with pytest.raises(JobConflict):
            bench.submit_job("evaluate", {})

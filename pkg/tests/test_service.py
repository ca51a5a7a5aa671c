import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from demoner.encoding import HashedNgramEncoder
from demoner.service import create_app


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app(embed_dim=64))


@pytest.fixture(scope="module")
def corpus_file(tmp_path_factory):
    root = tmp_path_factory.mktemp("svc")
    path = root / "train.conll"
    client = TestClient(create_app())
    response = client.post(
        "/gen-synthetic",
        json={
            "output_path": str(path),
            "preset": "copy-dominated",
            "instances": 80,
            "seed": 7,
        },
    )
    assert response.status_code == 200
    return path


class TestHealth:
    def test_health(self, client):
        body = client.get("/health").json()
        assert body["status"] == "ok"


class TestEmbedProtocol:
    def test_wire_format(self, client):
        response = client.post("/embed", json={"texts": ["hello", "world"]})
        assert response.status_code == 200
        body = response.json()
        assert set(body) == {"vectors"}
        assert len(body["vectors"]) == 2
        assert all(len(vec) == 64 for vec in body["vectors"])

    def test_matches_local_encoder(self, client):
        local = HashedNgramEncoder(dim=64)
        body = client.post("/embed", json={"texts": ["Zhang Wei"]}).json()
        np.testing.assert_allclose(
            np.array(body["vectors"][0], dtype=np.float32),
            local.encode("Zhang Wei"),
            atol=1e-6,
        )

    def test_empty_batch(self, client):
        assert client.post("/embed", json={"texts": []}).json() == {"vectors": []}


class TestIngest:
    def test_counts(self, client, corpus_file):
        body = client.post("/ingest", json={"input_path": str(corpus_file)}).json()
        assert body["instances"] == 80
        assert set(body["features"]) == {"PER", "LOC"}

    def test_missing_file_maps_to_usage_error(self, client):
        response = client.post("/ingest", json={"input_path": "/nope/missing.conll"})
        assert response.status_code == 400
        assert response.json()["kind"] == "usage"

    def test_malformed_corpus_maps_to_data_error(self, client, tmp_path):
        bad = tmp_path / "bad.conll"
        bad.write_text("token-without-tag\n")
        response = client.post("/ingest", json={"input_path": str(bad)})
        assert response.status_code == 422
        assert response.json()["kind"] == "data"

    def test_validation_error_is_422(self, client):
        response = client.post("/ingest", json={})
        assert response.status_code == 422


@pytest.fixture(scope="module")
def trained(client, corpus_file, tmp_path_factory):
    model_dir = tmp_path_factory.mktemp("model")
    response = client.post(
        "/train",
        json={
            "train_path": str(corpus_file),
            "model_dir": str(model_dir),
            "k_shot": 3,
            "featsim_epochs": 200,
            "tagger_epochs": 10,
            "hash_dim": 64,
        },
    )
    assert response.status_code == 200, response.text
    return model_dir, response.json()


class TestTrainTagEvaluate:

    def test_train_outputs(self, trained):
        model_dir, body = trained
        assert (model_dir / "tagger.json").exists()
        assert (model_dir / "featsim.json").exists()
        assert (model_dir / "manifest.json").exists()
        assert (model_dir / "pool.conll").exists()
        assert body["features"] == ["LOC", "PER"]

    def test_tag_and_evaluate(self, client, trained, corpus_file, tmp_path_factory):
        model_dir, _body = trained
        out = tmp_path_factory.mktemp("preds")
        response = client.post(
            "/tag",
            json={
                "model_dir": str(model_dir),
                "input_path": str(corpus_file),
                "output_prefix": str(out / "preds"),
                "ensemble_k": 2,
                "seed": 1,
            },
        )
        assert response.status_code == 200, response.text
        body = response.json()
        assert body["instances"] == 80
        with open(body["jsonl_path"]) as fh:
            records = [json.loads(line) for line in fh]
        assert len(records) == 80

        ev = client.post(
            "/evaluate",
            json={"gold_path": str(corpus_file), "pred_path": body["conll_path"]},
        )
        assert ev.status_code == 200
        report = ev.json()["report"]
        assert 0.0 <= report["f1"] <= 1.0

    def test_eval_featsim_endpoint(self, client, corpus_file):
        response = client.post(
            "/eval-featsim",
            json={
                "train_path": str(corpus_file),
                "test_path": str(corpus_file),
                "k_shot": 3,
                "trials": 200,
                "featsim_epochs": 100,
            },
        )
        assert response.status_code == 200, response.text
        body = response.json()
        assert set(body["tables"]) == {"predictor", "semantic_baseline"}
        assert 0.0 <= body["predictor"]["binary_accuracy"] <= 1.0
        assert "binary accuracy" in body["tables"]["predictor"]

    def test_grid_search_single_point(self, client, corpus_file, tmp_path_factory):
        response = client.post(
            "/grid-search",
            json={
                "base": {
                    "train_path": str(corpus_file),
                    "model_dir": str(tmp_path_factory.mktemp("gs")),
                    "k_shot": 3,
                    "featsim_epochs": 100,
                    "tagger_epochs": 5,
                    "hash_dim": 64,
                },
                "gammas": [0.5],
                "alphas": [0.9],
                "betas": [0.4],
                "ensemble_k": 1,
            },
        )
        assert response.status_code == 200, response.text
        body = response.json()
        assert len(body["results"]) == 1
        assert body["best"] == body["results"][0]

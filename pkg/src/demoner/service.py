"""FastAPI service wrapping the toolkit.

Every CLI subcommand has a POST endpoint taking the same request model. The
service also exposes the embedding wire protocol at /embed, so one instance
can act as the remote embedding provider for another.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from . import __version__, runner, schemas
from .encoding import HashedNgramEncoder
from .errors import DemonerError

_STATUS_BY_KIND = {"usage": 400, "data": 422, "divergence": 500}


def create_app(embed_dim: int = 256) -> FastAPI:
    app = FastAPI(title="demoner", version=__version__)
    embed_encoder = HashedNgramEncoder(dim=embed_dim)

    @app.exception_handler(DemonerError)
    async def demoner_error_handler(_request: Request, exc: DemonerError):
        return JSONResponse(
            status_code=_STATUS_BY_KIND.get(exc.kind, 500),
            content={"detail": str(exc), "kind": exc.kind},
        )

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/ingest", response_model=schemas.IngestResponse)
    def ingest(req: schemas.IngestRequest):
        return runner.run_ingest(req)

    @app.post("/gen-synthetic", response_model=schemas.GenSyntheticResponse)
    def gen_synthetic(req: schemas.GenSyntheticRequest):
        return runner.run_gen_synthetic(req)

    @app.post("/train", response_model=schemas.TrainResponse)
    def train(req: schemas.TrainRequest):
        return runner.run_train(req)

    @app.post("/tag", response_model=schemas.TagResponse)
    def tag(req: schemas.TagRequest):
        return runner.run_tag(req)

    @app.post("/evaluate", response_model=schemas.EvaluateResponse)
    def evaluate(req: schemas.EvaluateRequest):
        return runner.run_evaluate(req)

    @app.post("/eval-featsim", response_model=schemas.EvalFeatsimResponse)
    def eval_featsim(req: schemas.EvalFeatsimRequest):
        return runner.run_eval_featsim(req)

    @app.post("/grid-search", response_model=schemas.GridSearchResponse)
    def grid_search(req: schemas.GridSearchRequest):
        return runner.run_grid_search(req)

    @app.post("/embed", response_model=schemas.EmbedResponse)
    def embed(req: schemas.EmbedRequest):
        vectors = [
            [float(v) for v in embed_encoder.encode(text)] for text in req.texts
        ]
        return schemas.EmbedResponse(vectors=vectors)

    return app

"""Pydantic request/response models shared by the HTTP service and the CLI.

The CLI builds these models from flags/config files and either calls the
runner in-process or posts them to a running service; the service endpoints
accept and return exactly the same shapes.
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class IngestRequest(BaseModel):
    input_path: str
    lenient: bool = False


class IngestResponse(BaseModel):
    instances: int
    tokens: int
    features: dict[str, int]  # feature name -> markup count


class GenSyntheticRequest(BaseModel):
    output_path: str
    preset: str = "copy-dominated"
    instances: int | None = None
    entity_rate: float | None = None
    seed: int = 0


class GenSyntheticResponse(BaseModel):
    output_path: str
    instances: int
    features: list[str]


class TrainRequest(BaseModel):
    train_path: str
    model_dir: str
    validation_path: str | None = None
    k_shot: int = Field(default=5, ge=1)
    gamma: float = Field(default=0.5, ge=0.0, le=1.0)
    alpha: float = Field(default=0.9, ge=0.0, le=1.0)
    beta: float = Field(default=0.4, ge=0.0, le=1.0)
    normalization: str = "minmax"
    encoder: str = "hashed"  # "hashed" | "remote"
    encoder_dim: int = Field(default=256, ge=16)
    encoder_url: str | None = None
    cache_path: str | None = None
    featsim_epochs: int = Field(default=2000, ge=1)
    featsim_learning_rate: float = Field(default=1.0, gt=0.0)
    tagger_epochs: int = Field(default=150, ge=1)
    tagger_learning_rate: float = Field(default=1.0, gt=0.0)
    hash_dim: int = Field(default=256, ge=16)
    copy_scale: float = Field(default=0.2, gt=0.0)
    transition_smoothing: float = Field(default=0.01, gt=0.0)
    early_stopping_patience: int | None = None
    split_seed: int = 0
    featsim_seed: int = 0
    tagger_seed: int = 0
    no_demonstration: bool = False
    lenient: bool = False


class TrainResponse(BaseModel):
    model_dir: str
    manifest_path: str
    features: list[str]
    train_instances: int
    validation_instances: int
    featsim_final_loss: float
    tagger_final_loss: float


class TagRequest(BaseModel):
    model_dir: str
    input_path: str
    output_prefix: str
    ensemble_k: int = Field(default=5, ge=1)
    seed: int = 0
    granularity: str = "token"
    cache_path: str | None = None


class TagResponse(BaseModel):
    conll_path: str
    jsonl_path: str
    instances: int


class EvaluateRequest(BaseModel):
    gold_path: str
    pred_path: str
    lenient: bool = False


class EvaluateResponse(BaseModel):
    report: dict
    table: str


class EvalFeatsimRequest(BaseModel):
    train_path: str
    test_path: str
    k_shot: int = Field(default=5, ge=1)
    trials: int = Field(default=10_000, ge=1)
    encoder: str = "hashed"
    encoder_dim: int = Field(default=256, ge=16)
    encoder_url: str | None = None
    cache_path: str | None = None
    featsim_epochs: int = Field(default=2000, ge=1)
    featsim_learning_rate: float = Field(default=1.0, gt=0.0)
    split_seed: int = 0
    featsim_seed: int = 0
    metric_seed: int = 0
    lenient: bool = False


class EvalFeatsimResponse(BaseModel):
    predictor: dict
    semantic_baseline: dict
    tables: dict[str, str]
    train_instances: int


class GridSearchRequest(BaseModel):
    base: TrainRequest
    gammas: list[float] = Field(default_factory=lambda: [0.5])
    alphas: list[float] = Field(default_factory=lambda: [0.9])
    betas: list[float] = Field(default_factory=lambda: [0.4])
    ensemble_k: int = Field(default=5, ge=1)
    eval_seed: int = 0
    adversarial_validation: bool = False


class GridPoint(BaseModel):
    gamma: float
    alpha: float
    beta: float
    validation_f1: float


class GridSearchResponse(BaseModel):
    results: list[GridPoint]
    best: GridPoint


class EmbedRequest(BaseModel):
    texts: list[str]


class EmbedResponse(BaseModel):
    vectors: list[list[float]]

"""Experiment orchestration: the operations behind every service endpoint
and CLI subcommand.

Each run_* function is a pure function of its request model plus the files
it references, so reruns with an identical manifest produce byte-identical
outputs. A manifest (config echo, input content hashes, package version) is
written next to every trained model.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import os
import random
from pathlib import Path

from . import __version__, schemas
from .adversarial import ADLConfig, apply_label_permutation, sample_label_permutation
from .corpus import (
    Corpus,
    FewShotSplit,
    Instance,
    markups_from_tags,
    parse_conll,
    render_conll,
    sample_few_shot,
)
from .demo import DemoPool, build_pool, demonstrated_input, select_demonstration
from .encoding import (
    CachedEncoder,
    EmbeddingCache,
    HashedNgramEncoder,
    RemoteEncoder,
    SemanticEncoder,
    semantic_similarity,
)
from .errors import DataError, UsageError
from .evaluation import (
    PredictorReport,
    binary_accuracy,
    entity_f1,
    pearson,
    ranking_accuracy,
)
from .featsim import (
    DualScorer,
    DualSimilarityConfig,
    FeatureSimilarityModel,
    predict_feature_similarity,
    train_featsim,
)
from .inference import EnsembleConfig, Prediction, ensemble_tag, predictions_to_conll
from .seeding import derive_seed
from .synthetic import PRESETS, generate_synthetic_corpus
from .tagger import (
    ReferenceTagger,
    TaggerConfig,
    estimate_transitions,
    train_tagger,
    viterbi_decode,
)

CACHE_ENV_VAR = "DEMONER_CACHE"

MANIFEST_NAME = "manifest.json"
TAGGER_NAME = "tagger.json"
FEATSIM_NAME = "featsim.json"
POOL_NAME = "pool.conll"
VALIDATION_NAME = "validation.conll"


def _read_text(path: str) -> str:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"no such file: {path}")
    return p.read_text()


def _sha256(path: str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _load_corpus(path: str, lenient: bool = False) -> Corpus:
    return parse_conll(_read_text(path), lenient=lenient)


def resolve_cache_path(explicit: str | None) -> str | None:
    """The DEMONER_CACHE env var overrides any configured cache path."""
    return os.environ.get(CACHE_ENV_VAR) or explicit or None


def build_encoder(
    kind: str,
    dim: int,
    url: str | None = None,
    cache_path: str | None = None,
) -> SemanticEncoder:
    if kind == "hashed":
        inner = HashedNgramEncoder(dim=dim)
    elif kind == "remote":
        if not url:
            raise UsageError("remote encoder requires an encoder URL")
        inner = RemoteEncoder(url=url, dim=dim)
    else:
        raise UsageError(f"unknown encoder kind {kind!r}")
    return CachedEncoder(inner, EmbeddingCache(resolve_cache_path(cache_path)))


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")


def run_ingest(req: schemas.IngestRequest) -> schemas.IngestResponse:
    corpus = _load_corpus(req.input_path, req.lenient)
    counts = {f: 0 for f in sorted(corpus.feature_set)}
    tokens = 0
    for inst in corpus.instances:
        tokens += len(inst.tokens)
        for m in inst.markups:
            counts[m.feature] += 1
    return schemas.IngestResponse(
        instances=len(corpus.instances), tokens=tokens, features=counts
    )


def run_gen_synthetic(req: schemas.GenSyntheticRequest) -> schemas.GenSyntheticResponse:
    if req.preset not in PRESETS:
        raise UsageError(
            f"unknown preset {req.preset!r}; choose from {sorted(PRESETS)}"
        )
    kwargs = {}
    if req.instances is not None:
        kwargs["instances"] = req.instances
    if req.entity_rate is not None:
        kwargs["entity_rate"] = req.entity_rate
    spec = PRESETS[req.preset](**kwargs)
    corpus = generate_synthetic_corpus(spec, seed=req.seed)
    out = Path(req.output_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(render_conll(corpus))
    return schemas.GenSyntheticResponse(
        output_path=str(out),
        instances=len(corpus.instances),
        features=sorted(corpus.feature_set),
    )


def _train_pipeline(req: schemas.TrainRequest):
    """Shared by run_train and run_grid_search: everything up to the trained
    models, without touching the filesystem for outputs."""
    corpus = _load_corpus(req.train_path, req.lenient)
    validation_source = (
        _load_corpus(req.validation_path, req.lenient)
        if req.validation_path
        else None
    )
    split = sample_few_shot(
        corpus, req.k_shot, req.split_seed, validation_source=validation_source
    )
    encoder = build_encoder(
        req.encoder, req.encoder_dim, req.encoder_url, req.cache_path
    )
    fs_model = train_featsim(
        split.train,
        encoder,
        epochs=req.featsim_epochs,
        learning_rate=req.featsim_learning_rate,
        seed=req.featsim_seed,
    )
    scorer = DualScorer(
        encoder,
        DualSimilarityConfig(gamma=req.gamma, normalization=req.normalization),
        fs_model,
    ).score_candidates
    pool = None if req.no_demonstration else build_pool(split.train, corpus.feature_set)
    tagger = ReferenceTagger(
        corpus.feature_set,
        encoder,
        TaggerConfig(hash_dim=req.hash_dim, copy_scale=req.copy_scale),
    )
    train_tagger(
        tagger,
        split,
        pool,
        scorer if pool is not None else None,
        ADLConfig(alpha=req.alpha, beta=req.beta),
        epochs=req.tagger_epochs,
        learning_rate=req.tagger_learning_rate,
        seed=req.tagger_seed,
        early_stopping_patience=req.early_stopping_patience,
    )
    tagger.transitions = estimate_transitions(
        [inst.tags for inst in split.train],
        smoothing=req.transition_smoothing,
        labels=tagger.labels,
    )
    return corpus, split, encoder, fs_model, scorer, pool, tagger


def run_train(req: schemas.TrainRequest) -> schemas.TrainResponse:
    corpus, split, _encoder, fs_model, _scorer, _pool, tagger = _train_pipeline(req)

    model_dir = Path(req.model_dir)
    model_dir.mkdir(parents=True, exist_ok=True)
    fs_model.save(model_dir / FEATSIM_NAME)
    tagger.save(model_dir / TAGGER_NAME, config_echo=req.model_dump())
    (model_dir / POOL_NAME).write_text(
        render_conll(Corpus(split.train, corpus.feature_set))
    )
    (model_dir / VALIDATION_NAME).write_text(
        render_conll(Corpus(split.validation, corpus.feature_set))
    )
    manifest = {
        "command": "train",
        "config": req.model_dump(),
        "inputs": {
            req.train_path: _sha256(req.train_path),
            **(
                {req.validation_path: _sha256(req.validation_path)}
                if req.validation_path
                else {}
            ),
        },
        "outputs": [FEATSIM_NAME, TAGGER_NAME, POOL_NAME, VALIDATION_NAME],
        "package_version": __version__,
        "loss_curves": {
            "featsim": list(fs_model.loss_curve),
            "tagger": list(tagger.loss_curve),
        },
    }
    manifest_path = model_dir / MANIFEST_NAME
    _write_json(manifest_path, manifest)
    return schemas.TrainResponse(
        model_dir=str(model_dir),
        manifest_path=str(manifest_path),
        features=sorted(corpus.feature_set),
        train_instances=len(split.train),
        validation_instances=len(split.validation),
        featsim_final_loss=fs_model.final_loss,
        tagger_final_loss=tagger.loss_curve[-1] if tagger.loss_curve else float("nan"),
    )


def _load_model_dir(model_dir: str, cache_path: str | None):
    root = Path(model_dir)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.exists():
        raise UsageError(f"{model_dir}: not a trained model directory")
    manifest = json.loads(manifest_path.read_text())
    config = schemas.TrainRequest(**manifest["config"])
    encoder = build_encoder(
        config.encoder, config.encoder_dim, config.encoder_url, cache_path
    )
    tagger = ReferenceTagger.load(root / TAGGER_NAME, encoder=encoder)
    fs_model = FeatureSimilarityModel.load(root / FEATSIM_NAME)
    scorer = DualScorer(
        encoder,
        DualSimilarityConfig(gamma=config.gamma, normalization=config.normalization),
        fs_model,
    ).score_candidates
    if config.no_demonstration:
        pool = None
    else:
        pool_corpus = parse_conll((root / POOL_NAME).read_text())
        pool = build_pool(pool_corpus.instances, frozenset(tagger.features))
    return config, encoder, tagger, fs_model, scorer, pool


def _parse_tagging_input(text: str) -> list[Instance]:
    """Accept labeled CoNLL or bare one-token-per-line blocks."""
    has_two_columns = any(
        len(line.split()) >= 2 for line in text.splitlines() if line.strip()
    )
    if has_two_columns:
        return list(parse_conll(text, lenient=True).instances)
    instances = []
    tokens: list[str] = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            if tokens:
                instances.append(
                    Instance(id=f"s{len(instances):05d}", tokens=tuple(tokens))
                )
                tokens = []
            continue
        tokens.append(line.split()[0])
    if tokens:
        instances.append(Instance(id=f"s{len(instances):05d}", tokens=tuple(tokens)))
    if not instances:
        raise DataError("empty document")
    return instances


def run_tag(req: schemas.TagRequest) -> schemas.TagResponse:
    _config, _encoder, tagger, _fs, scorer, pool = _load_model_dir(
        req.model_dir, resolve_cache_path(req.cache_path)
    )
    if tagger.transitions is None:
        raise DataError(f"{req.model_dir}: model has no transition matrix")
    instances = _parse_tagging_input(_read_text(req.input_path))
    config = EnsembleConfig(k=req.ensemble_k, seed=req.seed, granularity=req.granularity)
    predictions = [
        ensemble_tag(tagger, tagger.transitions, inst, pool, scorer, config)
        for inst in instances
    ]
    conll_path = Path(req.output_prefix + ".conll")
    jsonl_path = Path(req.output_prefix + ".jsonl")
    conll_path.parent.mkdir(parents=True, exist_ok=True)
    conll_path.write_text(predictions_to_conll(predictions))
    with jsonl_path.open("w") as fh:
        for p in predictions:
            fh.write(json.dumps(p.to_record(), sort_keys=True) + "\n")
    return schemas.TagResponse(
        conll_path=str(conll_path),
        jsonl_path=str(jsonl_path),
        instances=len(predictions),
    )


def run_evaluate(req: schemas.EvaluateRequest) -> schemas.EvaluateResponse:
    gold = _load_corpus(req.gold_path, req.lenient)
    pred = _load_corpus(req.pred_path, lenient=True)
    if len(gold.instances) != len(pred.instances):
        raise DataError(
            f"instance count mismatch: gold {len(gold.instances)} vs "
            f"pred {len(pred.instances)}"
        )
    predictions = [
        Prediction(
            instance_id=g.id,
            tokens=p.tokens,
            tags=p.tags,
            markups=p.markups,
            member_tags=(),
        )
        for g, p in zip(gold.instances, pred.instances)
    ]
    report = entity_f1(gold.instances, predictions)
    return schemas.EvaluateResponse(report=report.to_dict(), table=report.format_table())


def run_eval_featsim(req: schemas.EvalFeatsimRequest) -> schemas.EvalFeatsimResponse:
    corpus = _load_corpus(req.train_path, req.lenient)
    test = _load_corpus(req.test_path, req.lenient)
    split = sample_few_shot(corpus, req.k_shot, req.split_seed)
    encoder = build_encoder(
        req.encoder, req.encoder_dim, req.encoder_url, req.cache_path
    )
    fs_model = train_featsim(
        split.train,
        encoder,
        epochs=req.featsim_epochs,
        learning_rate=req.featsim_learning_rate,
        seed=req.featsim_seed,
    )

    def predicted(a: Instance, b: Instance) -> float:
        return predict_feature_similarity(fs_model, a.text, b.text, encoder)

    def semantic(a: Instance, b: Instance) -> float:
        return semantic_similarity(encoder, a.text, b.text)

    pool = list(corpus.instances)
    reports = {}
    for name, fn in (("predictor", predicted), ("semantic_baseline", semantic)):
        reports[name] = PredictorReport(
            binary_accuracy=binary_accuracy(
                fn, test.instances, pool, req.trials,
                random.Random(derive_seed(req.metric_seed, name, "binary")),
            ),
            ranking_accuracy=ranking_accuracy(
                fn, test.instances, pool, req.trials,
                random.Random(derive_seed(req.metric_seed, name, "ranking")),
            ),
            pearson=pearson(
                fn, test.instances, pool, req.trials,
                random.Random(derive_seed(req.metric_seed, name, "pearson")),
            ),
            trials=req.trials,
        )
    return schemas.EvalFeatsimResponse(
        predictor=reports["predictor"].to_dict(),
        semantic_baseline=reports["semantic_baseline"].to_dict(),
        tables={name: report.format_table() for name, report in reports.items()},
        train_instances=len(split.train),
    )


def _validation_f1(
    tagger: ReferenceTagger,
    split: FewShotSplit,
    pool: DemoPool | None,
    scorer,
    ensemble_k: int,
    eval_seed: int,
    adversarial: bool,
) -> float:
    config = EnsembleConfig(k=ensemble_k, seed=eval_seed)
    predictions = [
        ensemble_tag(tagger, tagger.transitions, inst, pool, scorer, config)
        for inst in split.validation
    ]
    score = entity_f1(split.validation, predictions).f1
    if not adversarial or pool is None or len(tagger.features) < 2:
        return score

    # permuted-rule leg: demonstrations are label-permuted and the decoded
    # output is scored against correspondingly permuted gold
    permuted_gold = []
    permuted_preds = []
    for inst in split.validation:
        rng = random.Random(derive_seed(eval_seed, "adv-val", inst.id))
        demo = select_demonstration(pool, inst, scorer, rng)
        pi = sample_label_permutation(tagger.features, rng)
        d = demonstrated_input(inst, demo)
        d_perm, gold_tags = apply_label_permutation(d, inst.tags, pi)
        decoded = viterbi_decode(tagger.token_scores(d_perm), tagger.transitions)
        permuted_gold.append(
            Instance.from_tags(inst.id, inst.tokens, gold_tags)
        )
        decoded_tags = tuple(decoded)
        permuted_preds.append(
            Prediction(
                instance_id=inst.id,
                tokens=inst.tokens,
                tags=decoded_tags,
                markups=markups_from_tags(inst.tokens, decoded_tags),
                member_tags=(decoded_tags,),
            )
        )
    permuted_score = entity_f1(permuted_gold, permuted_preds).f1
    return 0.5 * (score + permuted_score)


def run_grid_search(req: schemas.GridSearchRequest) -> schemas.GridSearchResponse:
    if not (req.gammas and req.alphas and req.betas):
        raise UsageError("grid must contain at least one point per axis")
    results = []
    for gamma, alpha, beta in itertools.product(req.gammas, req.alphas, req.betas):
        point_req = req.base.model_copy(
            update={"gamma": gamma, "alpha": alpha, "beta": beta}
        )
        _corpus, split, _encoder, _fs, scorer, pool, tagger = _train_pipeline(point_req)
        f1 = _validation_f1(
            tagger,
            split,
            pool,
            scorer,
            req.ensemble_k,
            req.eval_seed,
            req.adversarial_validation,
        )
        results.append(
            schemas.GridPoint(gamma=gamma, alpha=alpha, beta=beta, validation_f1=f1)
        )
    best = max(results, key=lambda p: p.validation_f1)
    return schemas.GridSearchResponse(results=results, best=best)

"""Command-line interface.

Each subcommand builds the same request model the HTTP service accepts and
either dispatches it in-process (default) or posts it to a running service
(--server URL). Flag values override config-file values, which override the
model defaults.

Exit codes: 0 success, 2 usage error, 3 data error, 4 training divergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Type

import yaml
from pydantic import BaseModel, ValidationError

from . import __version__, runner, schemas
from .errors import DemonerError

EXIT_CODES = {"usage": 2, "data": 3, "divergence": 4}

_ENDPOINTS = {
    "ingest": ("/ingest", schemas.IngestRequest, runner.run_ingest),
    "gen-synthetic": (
        "/gen-synthetic",
        schemas.GenSyntheticRequest,
        runner.run_gen_synthetic,
    ),
    "train": ("/train", schemas.TrainRequest, runner.run_train),
    "tag": ("/tag", schemas.TagRequest, runner.run_tag),
    "evaluate": ("/evaluate", schemas.EvaluateRequest, runner.run_evaluate),
    "eval-featsim": (
        "/eval-featsim",
        schemas.EvalFeatsimRequest,
        runner.run_eval_featsim,
    ),
    "grid-search": ("/grid-search", schemas.GridSearchRequest, runner.run_grid_search),
}


def _add_model_flags(
    parser: argparse.ArgumentParser, model: Type[BaseModel], skip: set[str] = frozenset()
) -> None:
    """One optional flag per model field; None means "not given"."""
    for name, field in model.model_fields.items():
        if name in skip:
            continue
        flag = "--" + name.replace("_", "-")
        annotation = field.annotation
        if annotation is bool:
            parser.add_argument(
                flag, action=argparse.BooleanOptionalAction, default=None
            )
        elif annotation in (int, float, str) or annotation in (
            int | None, float | None, str | None
        ):
            caster = str
            if annotation in (int, int | None):
                caster = int
            elif annotation in (float, float | None):
                caster = float
            parser.add_argument(flag, type=caster, default=None)
        # nested/list fields get dedicated flags on their subcommands


def _gather(
    args: argparse.Namespace,
    model: Type[BaseModel],
    skip: set[str] = frozenset(),
) -> dict:
    config: dict = {}
    if getattr(args, "config", None):
        loaded = yaml.safe_load(open(args.config)) or {}
        if not isinstance(loaded, dict):
            raise DemonerError(f"{args.config}: config file must be a mapping")
        config.update(loaded)
    for name in model.model_fields:
        if name in skip:
            continue
        value = getattr(args, name, None)
        if value is not None:
            config[name] = value
    return config


def _dispatch(args: argparse.Namespace, command: str, payload: BaseModel) -> dict:
    endpoint, _model, run = _ENDPOINTS[command]
    if getattr(args, "server", None):
        import requests

        url = args.server.rstrip("/") + endpoint
        response = requests.post(url, json=payload.model_dump(), timeout=3600)
        if response.status_code != 200:
            try:
                body = response.json()
            except ValueError:
                body = {"detail": response.text}
            kind = body.get("kind", "usage")
            print(f"error: {body.get('detail')}", file=sys.stderr)
            raise SystemExit(EXIT_CODES.get(kind, 3))
        return response.json()
    return run(payload).model_dump()


def _run_command(args: argparse.Namespace, command: str) -> dict:
    _endpoint, model, _run = _ENDPOINTS[command]
    if command == "grid-search":
        base_config = _gather(args, schemas.TrainRequest, skip={"gamma", "alpha", "beta"})
        try:
            base = schemas.TrainRequest(**base_config)
            payload = schemas.GridSearchRequest(
                base=base,
                gammas=args.gamma or [base.gamma],
                alphas=args.alpha or [base.alpha],
                betas=args.beta or [base.beta],
                ensemble_k=args.ensemble_k if args.ensemble_k is not None else 5,
                eval_seed=args.eval_seed if args.eval_seed is not None else 0,
                adversarial_validation=bool(args.adversarial_validation),
            )
        except ValidationError as exc:
            print(f"error: {exc}", file=sys.stderr)
            raise SystemExit(EXIT_CODES["usage"]) from None
    else:
        try:
            payload = model(**_gather(args, model))
        except ValidationError as exc:
            print(f"error: {exc}", file=sys.stderr)
            raise SystemExit(EXIT_CODES["usage"]) from None
    return _dispatch(args, command, payload)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="demoner",
        description="Few-shot sequence labeling with demonstration selection, "
        "adversarial demonstration training, and ensemble decoding.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="YAML config file; flags override it")
        p.add_argument("--server", help="dispatch to a running service URL")

    p = sub.add_parser("ingest", help="parse a CoNLL file and report statistics")
    common(p)
    _add_model_flags(p, schemas.IngestRequest)

    p = sub.add_parser("gen-synthetic", help="generate a synthetic corpus")
    common(p)
    _add_model_flags(p, schemas.GenSyntheticRequest)

    p = sub.add_parser("train", help="train the similarity predictor and tagger")
    common(p)
    _add_model_flags(p, schemas.TrainRequest)

    p = sub.add_parser("tag", help="tag a file with a trained model")
    common(p)
    _add_model_flags(p, schemas.TagRequest)

    p = sub.add_parser("evaluate", help="entity-level F1 of predictions vs gold")
    common(p)
    _add_model_flags(p, schemas.EvaluateRequest)

    p = sub.add_parser("eval-featsim", help="similarity predictor metrics")
    common(p)
    _add_model_flags(p, schemas.EvalFeatsimRequest)

    p = sub.add_parser("grid-search", help="grid search gamma/alpha/beta")
    common(p)
    _add_model_flags(p, schemas.TrainRequest, skip={"gamma", "alpha", "beta"})
    p.add_argument("--gamma", type=float, action="append")
    p.add_argument("--alpha", type=float, action="append")
    p.add_argument("--beta", type=float, action="append")
    p.add_argument("--ensemble-k", type=int, default=None)
    p.add_argument("--eval-seed", type=int, default=None)
    p.add_argument(
        "--adversarial-validation",
        action=argparse.BooleanOptionalAction,
        default=False,
    )

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--embed-dim", type=int, default=256)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command == "serve":
        import uvicorn

        from .service import create_app

        uvicorn.run(create_app(embed_dim=args.embed_dim), host=args.host, port=args.port)
        return 0

    try:
        result = _run_command(args, args.command)
    except DemonerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CODES.get(exc.kind, 3)

    if args.command == "evaluate" and "table" in result:
        print(result["table"], file=sys.stderr)
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""
Command-line interface.

    pgrules run --config config.yaml --out results/
    pgrules eval --baseline det.json --refined refined.json --ground-truth gt.json
    pgrules knowledge fetch --prompt size-graph-v1 [--live] [--out kg.json]
    pgrules knowledge check
    pgrules gen-fixtures --seed 7 --out scenario/

Exit codes: 0 success, 1 other pgrules or I/O error, 2 schema error or
missing input, 3 configuration error or unusable LLM endpoint, 4 knowledge
client error.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from . import __version__
from .config import PipelineConfig, load_config
from .errors import (
    ConfigError,
    ConflictingRelation,
    EmptySceneMap,
    InvalidCounts,
    KnowledgeClientError,
    MissingLogits,
    NegativeCount,
    PgRulesError,
    ProvenanceMismatch,
    SchemaError,
    UnknownClass,
    WeightOutOfRange,
)
from .evalmetrics import evaluate, read_ground_truth
from .knowledge import PROMPT_REGISTRY, fetch_knowledge
from .llm_client import FixtureKnowledgeClient, KnowledgeClient, LiveKnowledgeClient
from .pipeline import REPORT_JSON_FILENAME, REPORT_TEXT_FILENAME, load_detections, run_pipeline
from .testkit import ScenarioSpec, gen_scenario, write_scenario
from .utils import dumps_json, write_many_atomic, write_text_atomic

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_SCHEMA = 2
EXIT_CONFIG = 3
EXIT_CLIENT = 4

SCHEMA_ERRORS = (
    SchemaError,
    UnknownClass,
    WeightOutOfRange,
    ConflictingRelation,
    NegativeCount,
    EmptySceneMap,
    MissingLogits,
    ProvenanceMismatch,
    InvalidCounts,
    FileNotFoundError,
)


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, KnowledgeClientError):
        return EXIT_CLIENT
    if isinstance(error, ConfigError):
        return EXIT_CONFIG
    if isinstance(error, SCHEMA_ERRORS):
        return EXIT_SCHEMA
    return EXIT_ERROR


def _load_config(path: Optional[str]) -> PipelineConfig:
    return load_config(path) if path else PipelineConfig()


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config).with_paths(
        detections=args.detections,
        ground_truth=args.ground_truth,
        scenes=args.scenes,
        knowledge=args.knowledge,
        shape_knowledge=args.shape_knowledge,
        shape_counts=args.shape_counts,
        out=args.out,
    )
    result = run_pipeline(cfg)
    for path in result.written.values():
        print(f"✓ Wrote {path}")
    summary = result.report.refined
    print(
        f"✓ mAP {result.report.baseline.map:.4f} -> {summary.map:.4f}, "
        f"detections {result.report.box_counts.baseline} -> {result.report.box_counts.refined}"
    )
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    baseline = load_detections(args.baseline, cfg.vocabulary)
    refined = load_detections(args.refined, cfg.vocabulary)
    gts = read_ground_truth(args.ground_truth, cfg.vocabulary)
    report = evaluate(baseline, refined, gts, cfg.class_groups)

    text = report.render_text()
    if args.out:
        target = Path(args.out)
        written = write_many_atomic(
            {
                target / REPORT_JSON_FILENAME: dumps_json(report.to_dict()),
                target / REPORT_TEXT_FILENAME: text,
            }
        )
        for path in written.values():
            print(f"✓ Wrote {path}")
    else:
        print(text, end="")
    return EXIT_OK


def _live_client() -> LiveKnowledgeClient:
    try:
        return LiveKnowledgeClient.from_env()
    except ValueError as e:
        raise ConfigError(str(e)) from e


def cmd_knowledge_fetch(args: argparse.Namespace) -> int:
    client: KnowledgeClient = (
        _live_client() if args.live else FixtureKnowledgeClient(args.fixture_dir)
    )
    document = fetch_knowledge(args.prompt, client)
    if args.out:
        print(f"✓ Wrote {write_text_atomic(document, args.out)}")
    else:
        print(document, end="")
    return EXIT_OK


def cmd_knowledge_check(args: argparse.Namespace) -> int:
    usable, message = _live_client().check_endpoint()
    if not usable:
        raise ConfigError(message)
    print(f"✓ {message}")
    return EXIT_OK


def cmd_gen_fixtures(args: argparse.Namespace) -> int:
    spec = ScenarioSpec(seed=args.seed, n_images=args.images)
    scenario = gen_scenario(spec)
    written = write_scenario(scenario, args.out, seed=args.seed)
    for path in written.values():
        print(f"✓ Wrote {path}")
    planted = scenario.manifest["planted"]
    print(
        f"✓ Planted {planted['redundant_pairs']} redundant pairs and "
        f"{planted['context_fps']} context false positives"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pgrules",
        description="Refine object-detection outputs with physics-guided rules",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Log debug output")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Only log errors")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Refine detections and write the report")
    run.add_argument("--config", help="YAML configuration file")
    run.add_argument("--detections", help="Detection file (overrides the config)")
    run.add_argument("--ground-truth", dest="ground_truth", help="Ground-truth file")
    run.add_argument("--scenes", help="Scene label maps for the context layer")
    run.add_argument("--knowledge", help="Size knowledge graph")
    run.add_argument("--shape-knowledge", dest="shape_knowledge", help="Shape count table")
    run.add_argument("--shape-counts", dest="shape_counts", help="Per-detection shape counts")
    run.add_argument("--out", help="Output directory")
    run.set_defaults(handler=cmd_run)

    ev = sub.add_parser("eval", help="Compare a refined detection file against a baseline")
    ev.add_argument("--baseline", required=True)
    ev.add_argument("--refined", required=True)
    ev.add_argument("--ground-truth", dest="ground_truth", required=True)
    ev.add_argument("--config", help="YAML configuration (vocabulary and class groups)")
    ev.add_argument("--out", help="Write report.json and report.txt here instead of printing")
    ev.set_defaults(handler=cmd_eval)

    knowledge = sub.add_parser("knowledge", help="Knowledge documents")
    knowledge_sub = knowledge.add_subparsers(dest="knowledge_command", required=True)
    fetch = knowledge_sub.add_parser("fetch", help="Fetch and validate a knowledge document")
    fetch.add_argument("--prompt", required=True, choices=sorted(PROMPT_REGISTRY))
    fetch.add_argument("--live", action="store_true", help="Query the LLM endpoint")
    fetch.add_argument("--fixture-dir", dest="fixture_dir", help="Offline fixture directory")
    fetch.add_argument("--out", help="Write the document here instead of printing it")
    fetch.set_defaults(handler=cmd_knowledge_fetch)
    check = knowledge_sub.add_parser(
        "check", help="Check the live LLM endpoint configured in PGRULES_LLM_*"
    )
    check.set_defaults(handler=cmd_knowledge_check)

    gen = sub.add_parser("gen-fixtures", help="Write a seeded synthetic scenario")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--images", type=int, default=ScenarioSpec().n_images)
    gen.add_argument("--out", required=True)
    gen.set_defaults(handler=cmd_gen_fixtures)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    level = logging.INFO
    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.ERROR
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    try:
        return args.handler(args)
    except (PgRulesError, OSError, ValueError) as e:
        logger.error(str(e))
        print(f"✗ {e}", file=sys.stderr)
        return exit_code_for(e)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

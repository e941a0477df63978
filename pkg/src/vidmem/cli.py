"""Command line entry point: ``vidmem {ingest,query,eval,inspect,synth}``.

Settings are resolved in this order (later wins): built-in defaults, the
JSON file given by ``--config``, environment variables (remote backend
endpoint, model and credentials), then command line flags.

Exit codes: 0 success, 2 configuration error, 3 bad input, 4 backend
failure, 5 internal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .actions import format_mask, parse_mask
from .agent import AgentConfig, Backends, answer_question, format_trace_table
from .backends import PromptLog, RecordingBackend, RemoteBackend, RemoteConfig, ScriptedBackend
from .core import TimescaleConfig, format_scale
from .errors import (
    BackendError,
    ConfigError,
    IngestError,
    InputError,
    InternalConsistencyError,
    InvalidArgument,
    ParseError,
    SnapshotError,
    VidmemError,
)
from .evaluation import ablation_matrix, format_summary, load_items, run_eval, write_ablation, write_report
from .ingest import BuildReport, build_memories, read_features, read_frames, read_segments
from .semantic import MATCH_THRESHOLD

log = logging.getLogger("vidmem")

EXIT_OK, EXIT_CONFIG, EXIT_INPUT, EXIT_BACKEND, EXIT_INTERNAL = 0, 2, 3, 4, 5
ROLES = ("default", "agent", "responder", "memory", "encoder", "describer")


@dataclasses.dataclass
class CliConfig:
    timescales: TimescaleConfig
    agent: AgentConfig
    memories: frozenset
    backends: dict[str, dict]
    consolidation_threshold: float = MATCH_THRESHOLD
    parallelism: int = 1
    base_dir: Path = Path(".")

    def fingerprint(self) -> str:
        return self.agent.fingerprint()


def _load_config(args) -> CliConfig:
    raw: dict = {}
    base = Path(".")
    if args.config:
        path = Path(args.config)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except ValueError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        base = path.parent
    known = {"timescales", "agent", "memories", "backends", "consolidation_threshold", "parallelism"}
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"unknown config keys {sorted(extra)}")
    try:
        timescales = TimescaleConfig.from_dict(raw["timescales"]) if "timescales" in raw else TimescaleConfig()
        agent = AgentConfig.from_dict(raw.get("agent", {}))
        memories = parse_mask(raw.get("memories", "E+S+V"))
        if getattr(args, "memories", None):
            memories = parse_mask(args.memories)
        overrides = {"enabled": memories}
        if getattr(args, "max_iters", None) is not None:
            overrides["max_iters"] = args.max_iters
        agent = dataclasses.replace(agent, **overrides)
        threshold = float(raw.get("consolidation_threshold", MATCH_THRESHOLD))
        if not 0 < threshold <= 1:
            raise InvalidArgument(f"consolidation_threshold must lie in (0, 1], got {threshold}")
        parallelism = int(getattr(args, "parallelism", None) or raw.get("parallelism", 1))
        if parallelism < 1:
            raise InvalidArgument("parallelism must be at least 1")
    except (InvalidArgument, TypeError, KeyError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None
    backends = {}
    for role, spec in (raw.get("backends") or {}).items():
        if role not in ROLES:
            raise ConfigError(f"unknown backend role {role!r}")
        backends[role] = {**spec, "_base": str(base)}
    for item in getattr(args, "backend_role", None) or ():
        role, sep, spec = item.partition("=")
        if not sep or role not in ROLES:
            raise ConfigError(f"--backend-role expects ROLE=TYPE[:ARG] with ROLE in {ROLES}, got {item!r}")
        kind, _, arg = spec.partition(":")
        backends[role] = _flag_spec(kind, arg)
    return CliConfig(timescales, agent, memories, backends, threshold, parallelism, base)


def _flag_spec(kind: str, arg: str) -> dict:
    if kind == "scripted":
        return {"type": "scripted", "fixtures": arg or None, "_base": "."}
    if kind == "synthetic":
        if not arg:
            raise ConfigError("synthetic backend needs a script path: synthetic:PATH")
        return {"type": "synthetic", "script": arg, "_base": "."}
    if kind == "remote":
        return {"type": "remote", "env_prefix": arg or "VIDMEM_", "_base": "."}
    raise ConfigError(f"unknown backend type {kind!r}")


def _make_backend(spec: dict):
    kind = spec.get("type")
    base = Path(spec.get("_base", "."))
    if kind == "scripted":
        kwargs = {k: spec[k] for k in ("embed_dim", "seed", "multimodal") if k in spec}
        fixtures = spec.get("fixtures")
        if fixtures:
            path = base / fixtures
            if not path.is_file():
                raise ConfigError(f"fixture file {path} not found")
            return ScriptedBackend.from_fixture_file(path, **kwargs)
        return ScriptedBackend(**kwargs)
    if kind == "synthetic":
        from .synthetic import oracle_backend

        path = base / spec["script"]
        try:
            return oracle_backend(json.loads(path.read_text(encoding="utf-8")))
        except FileNotFoundError:
            raise ConfigError(f"synthetic script {path} not found") from None
    if kind == "remote":
        prefix = spec.get("env_prefix", "VIDMEM_")
        fields = {f.name for f in dataclasses.fields(RemoteConfig)}
        overrides = {k: v for k, v in spec.items() if k in fields}
        return RemoteBackend(RemoteConfig.from_env(prefix, **overrides))
    raise ConfigError(f"unknown backend type {kind!r}")


def _backends(cfg: CliConfig, journal: PromptLog | None) -> Backends:
    if "default" not in cfg.backends and "agent" not in cfg.backends:
        raise ConfigError("no backend configured; set backends.default in the config or pass --backend-role")
    built = {}
    for role in ROLES:
        if role in cfg.backends:
            b = _make_backend(cfg.backends[role])
            built[role] = RecordingBackend(b, journal) if journal is not None else b
    default = built.get("default")
    return Backends(
        agent=built.get("agent", default),
        responder=built.get("responder", default),
        memory=built.get("memory", default),
        encoder=built.get("encoder"),
        describer=built.get("describer"),
    )


def _constant_clock() -> float:
    return 0.0


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_ingest(args, cfg: CliConfig, journal: PromptLog | None) -> int:
    from .store import save

    segments = read_segments(args.segments)
    features = None
    if "visual" in cfg.memories:
        if not args.features:
            raise ConfigError("visual memory is enabled but --features was not given")
        features = read_features(args.features)
    frames = read_frames(args.frames) if args.frames else []
    if not segments:
        print("warning: no segments in input; writing an empty snapshot", file=sys.stderr)
    backends = _backends(cfg, journal)
    report = BuildReport()
    memories = build_memories(
        segments,
        backends.memory,
        timescales=cfg.timescales,
        enabled=cfg.memories,
        features=features,
        frames=frames,
        consolidation_threshold=cfg.consolidation_threshold,
        journal=None,
        report=report,
    )
    digest = save(memories, args.snapshot)
    for where, err in report.errors:
        print(f"warning: {where}: {err}", file=sys.stderr)
    print(f"snapshot {args.snapshot}")
    print(f"digest   {digest}")
    print(f"config   {cfg.fingerprint()}")
    if memories.episodic is not None:
        for scale, st in memories.episodic.per_scale.items():
            print(f"episodic {format_scale(scale):>6}  segments {len(st.segments):>6}  triplets {len(st.graph):>6}")
    if memories.semantic is not None:
        print(f"semantic generations {memories.semantic.generation}  triplets {len(memories.semantic.graph)}")
    if memories.visual is not None:
        print(f"visual   features {len(memories.visual.features)}  frames {len(memories.visual.frames)}")
    return EXIT_OK if not report.errors else EXIT_INPUT


def _parse_choices(items: Sequence[str]) -> dict[str, str]:
    out = {}
    for item in items:
        letter, sep, text = item.partition("=")
        letter = letter.strip().upper()
        if not sep or len(letter) != 1 or not letter.isalpha():
            raise InputError(f"--choice expects LETTER=TEXT, got {item!r}")
        out[letter] = text.strip()
    if not out:
        raise InputError("at least one --choice is required")
    return out


def _load_snapshot(args, cfg: CliConfig):
    from .store import load

    memories = load(args.snapshot)
    missing = cfg.memories - memories.available()
    if missing:
        if getattr(args, "memories", None):
            raise ConfigError(f"snapshot lacks requested memories {sorted(missing)}")
        cfg.memories = cfg.memories & memories.available()
        cfg.agent = dataclasses.replace(cfg.agent, enabled=cfg.memories)
    return memories


def cmd_query(args, cfg: CliConfig, journal: PromptLog | None) -> int:
    memories = _load_snapshot(args, cfg)
    choices = _parse_choices(args.choice)
    backends = _backends(cfg, journal)
    clock = _constant_clock if args.no_timings else None
    trace = answer_question(args.question, choices, memories, cfg.agent, backends, clock=clock)
    print(format_trace_table(trace))
    out = Path(args.trace_out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(trace.to_json(), encoding="utf-8")
    print(f"\ntrace written to {out}", file=sys.stderr)
    return EXIT_OK


def cmd_eval(args, cfg: CliConfig, journal: PromptLog | None) -> int:
    memories = _load_snapshot(args, cfg)
    items = load_items(args.evalset)
    backends = _backends(cfg, journal)
    clock = _constant_clock if args.no_timings else None
    report_dir = Path(args.report_dir)
    if args.ablation:
        masks = [m.strip() for m in args.ablation.split(",") if m.strip()]
        reports = ablation_matrix(
            items, memories, masks, cfg.agent, backends, parallelism=cfg.parallelism, clock=clock
        )
        write_ablation(reports, report_dir)
        for rep in reports:
            print(format_summary(rep))
            print()
    else:
        report = run_eval(items, memories, cfg.agent, backends, parallelism=cfg.parallelism, clock=clock)
        write_report(report, report_dir)
        print(format_summary(report))
    print(f"reports written to {report_dir}", file=sys.stderr)
    return EXIT_OK


def cmd_inspect(args, cfg: CliConfig, journal: PromptLog | None) -> int:
    from .store import _read_manifest, load

    memories = load(args.snapshot)
    manifest = _read_manifest(Path(args.snapshot))
    info = {
        "digest": manifest["digest"],
        "version": manifest["version"],
        "components": format_mask(memories.available()),
        "timescales": memories.timescales.to_dict(),
    }
    if memories.episodic is not None:
        info["episodic"] = {
            format_scale(s): {"segments": len(st.segments), "triplets": len(st.graph), "nodes": len(st.graph.nodes)}
            for s, st in memories.episodic.per_scale.items()
        }
    if memories.semantic is not None:
        info["semantic"] = {"generation": memories.semantic.generation, "triplets": len(memories.semantic.graph)}
    if memories.visual is not None:
        info["visual"] = {
            "features": len(memories.visual.features),
            "dim": memories.visual.dim,
            "frames": len(memories.visual.frames),
        }
    print(json.dumps(info, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_synth(args, cfg: CliConfig, journal: PromptLog | None) -> int:
    from .synthetic import generate, write_corpus

    corpus = generate(seed=args.seed, hours=args.hours)
    paths = write_corpus(corpus, args.out)
    for name, path in paths.items():
        print(f"{name:<9} {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--memories", help="enable-mask such as E, E+V or E+S+V")
    common.add_argument("--max-iters", type=int, help="retrieval round budget")
    common.add_argument(
        "--backend-role",
        action="append",
        metavar="ROLE=TYPE[:ARG]",
        help=f"assign a backend to a role ({', '.join(ROLES)}); TYPE is scripted, synthetic or remote",
    )
    common.add_argument("--journal", help="record every prompt and response to this JSONL file")
    common.add_argument("--log-level", default="WARNING")

    parser = argparse.ArgumentParser(prog="vidmem", description="Multimodal memory engine for long-video QA.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="build memories and save a snapshot")
    p.add_argument("--segments", required=True)
    p.add_argument("--features")
    p.add_argument("--frames")
    p.add_argument("--snapshot", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("query", parents=[common], help="answer one multiple-choice question")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--question", required=True)
    p.add_argument("--choice", action="append", default=[], metavar="LETTER=TEXT")
    p.add_argument("--trace-out", default="trace.json")
    p.add_argument("--no-timings", action="store_true", help="record zero round timings (reproducible traces)")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("eval", parents=[common], help="evaluate an item set")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--evalset", required=True)
    p.add_argument("--report-dir", default="report")
    p.add_argument("--ablation", help="comma-separated masks, e.g. E,E+V,E+S,E+S+V")
    p.add_argument("--parallelism", type=int)
    p.add_argument("--no-timings", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", parents=[common], help="print snapshot contents")
    p.add_argument("--snapshot", required=True)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("synth", parents=[common], help="write the synthetic corpus and its oracle script")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hours", type=int, default=6)
    p.set_defaults(func=cmd_synth)
    return parser


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (BackendError, IngestError, ParseError)):
        return EXIT_BACKEND
    if isinstance(exc, InternalConsistencyError):
        return EXIT_INTERNAL
    if isinstance(exc, (InputError, InvalidArgument, SnapshotError, FileNotFoundError)):
        return EXIT_INPUT
    return EXIT_INTERNAL


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    journal = PromptLog() if args.journal else None
    try:
        cfg = _load_config(args)
        code = args.func(args, cfg, journal)
    except (VidmemError, FileNotFoundError) as exc:
        code = _exit_code(exc)
        kind = {EXIT_CONFIG: "configuration", EXIT_INPUT: "input", EXIT_BACKEND: "backend"}.get(code, "internal")
        print(f"vidmem: {kind} error: {exc}", file=sys.stderr)
    except Exception as exc:  # noqa: BLE001 - last-resort reporting
        log.exception("unexpected failure")
        print(f"vidmem: internal error: {exc!r}", file=sys.stderr)
        code = EXIT_INTERNAL
    finally:
        if journal is not None:
            journal.save(args.journal)
    return code


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry point.

Exit codes: 0 compliant / clean shutdown, 1 non-compliant or incomplete,
2 config or flag error, 3 bind error, 4 input parse error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import List, Optional

import yaml

from . import __version__
from .accumulator import ThresholdPolicy
from .config import AppConfig, SinkConfig, load_config, starter_config
from .engine import SessionState
from .errors import ConfigError, InvalidPolicy, InvalidScenario, MalformedRecord, NonMonotonicFrame, UnknownClass
from .ingest import (
    FileReplay,
    Listener,
    NetworkListener,
    ParseStats,
    StandardInput,
    darknet_filters,
    iter_event_lines,
    run_replay,
    write_event_lines,
)
from .pipeline import SessionRunner, bench, format_report
from .simulator import NoiseModel, Scenario, generate, sweep
from .sinks import AlertDispatcher, JsonLogSink, TerminalSink, WebhookSink
from .types import Verdict, parse_class

EXIT_OK = 0
EXIT_NOT_COMPLIANT = 1
EXIT_CONFIG = 2
EXIT_BIND = 3
EXIT_PARSE = 4

log = logging.getLogger("ppeseq")


def _add_common(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="YAML config file")
    p.add_argument("--mode", choices=("donning", "doffing"), default=d)
    strict = p.add_mutually_exclusive_group()
    strict.add_argument("--strict", dest="strict", action="store_true", default=d, help="reject bad records (default)")
    strict.add_argument("--lenient", dest="strict", action="store_false", default=d, help="drop and count bad records")
    p.add_argument("--fps", type=float, default=d, help="frame rate for darknet timestamps (default 30)")
    p.add_argument("--timeout", dest="session_timeout_s", type=float, default=d, help="session timeout in seconds")
    p.add_argument(
        "--set", dest="assignments", action="append", default=d, metavar="KEY=VALUE",
        help="override any config value, e.g. thresholds.classes.mask.ap=0.8",
    )
    p.add_argument("-v", "--verbose", action="count", default=d)


def _add_sink_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--jsonl", action="append", default=[], metavar="PATH", help="append alerts as JSON lines")
    p.add_argument("--webhook", action="append", default=[], metavar="URL", help="POST alerts to URL")
    p.add_argument("--quiet", action="store_true", help="no terminal alert output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ppeseq", description="PPE donning/doffing sequence monitor")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _add_common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("monitor", help="listen for live detector output")
    _add_common(p, suppress=True)
    _add_sink_flags(p)
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--stdin", action="store_true", help="read native records from stdin instead of TCP")
    p.add_argument("--max-sessions", type=int, help="exit after this many client sessions")

    for name, help_ in (("check", "verify a recorded run as fast as possible"), ("replay", "replay a recorded run in real time")):
        p = sub.add_parser(name, help=help_)
        _add_common(p, suppress=True)
        _add_sink_flags(p)
        p.add_argument("file")
        p.add_argument("--format", choices=("auto", "native", "darknet"), default=None)
        if name == "replay":
            p.add_argument("--speed", type=float, default=None, help="speed factor (>0)")
            p.add_argument("--as-fast", action="store_true", help="ignore timestamps")

    p = sub.add_parser("simulate", help="generate a synthetic detection stream")
    _add_common(p, suppress=True)
    _add_sink_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-free", action="store_true")
    p.add_argument("--hit-rate", type=float, default=0.9)
    p.add_argument("--fp-rate", type=float, default=0.02)
    p.add_argument("--conf-worn", type=float, default=0.8)
    p.add_argument("--conf-absent", type=float, default=0.3)
    p.add_argument("--conf-std", type=float, default=0.1)
    p.add_argument("--inject-swap", nargs=2, type=int, metavar=("A", "B"), help="swap two schedule entries")
    p.add_argument("--choose", action="append", default=[], metavar="CLASS", help="pick an alternative, e.g. face_shield")
    p.add_argument("--first-frame", type=int, default=30)
    p.add_argument("--spacing", type=int, default=60)
    p.add_argument("--margin", type=int, default=60)
    p.add_argument("--out", help="write the stream as native JSON lines")
    p.add_argument("--check", action="store_true", help="run the stream through the engine")
    p.add_argument("--sweep", type=int, metavar="N", help="also sweep N seeds and print the accuracy table")

    p = sub.add_parser("gen-config", help="print a starter config with derived thresholds")
    _add_common(p, suppress=True)
    p.add_argument("--num-classes", type=int, default=5)
    p.add_argument("--ap", action="append", default=[], metavar="CLASS=AP")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--floor", type=float, default=0.25)
    p.add_argument("--ceil", type=float, default=0.9)

    p = sub.add_parser("bench", help="measure engine throughput and per-batch latency")
    _add_common(p, suppress=True)
    p.add_argument("--frames", type=int, default=20000)
    p.add_argument("--seed", type=int, default=1)
    return parser


def _load(args) -> AppConfig:
    overrides = {
        "mode": getattr(args, "mode", None),
        "strict": getattr(args, "strict", None),
        "fps": getattr(args, "fps", None),
        "session_timeout_s": getattr(args, "session_timeout_s", None),
    }
    return load_config(getattr(args, "config", None), overrides, getattr(args, "assignments", None) or ())


def _build_dispatcher(cfg: AppConfig, args) -> AlertDispatcher:
    specs: List[SinkConfig] = list(cfg.sinks) or [SinkConfig("terminal")]
    specs += [SinkConfig("jsonl", path=p) for p in args.jsonl]
    specs += [SinkConfig("webhook", url=u) for u in args.webhook]
    sinks = []
    for s in specs:
        if s.kind == "terminal":
            if not args.quiet:
                sinks.append(TerminalSink(sys.stdout, s.color))
        elif s.kind == "jsonl":
            sinks.append(JsonLogSink(s.path))
        else:
            sinks.append(WebhookSink(s.url, s.timeout_ms, s.retry_count, s.queue_size))
    return AlertDispatcher(sinks)


def _print_verdict(session: SessionState, verdict: Verdict) -> None:
    print(format_report(session, verdict), flush=True)


def _print_stats(runner: SessionRunner, dispatcher: AlertDispatcher, parse: Optional[ParseStats] = None) -> None:
    st = runner.stats
    if parse is not None:
        st.records_dropped = parse.records_dropped
        st.detections_dropped = parse.detections_dropped
    summary = st.summary()
    for sink in dispatcher.sinks:
        summary[f"sink_{sink.name}"] = vars(sink.stats)
    print("stats: " + json.dumps(summary), file=sys.stderr, flush=True)


def _exit_for(verdict: Verdict) -> int:
    return EXIT_OK if verdict.compliant else EXIT_NOT_COMPLIANT


def cmd_check(args, cfg: AppConfig, *, paced: bool = False) -> int:
    fmt = args.format or cfg.source_format
    if paced:
        speed = args.speed if args.speed is not None else getattr(cfg.source, "speed_factor", 1.0)
        try:
            source = FileReplay(args.file, speed, args.as_fast)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    else:
        source = FileReplay(args.file, as_fast_as_possible=True)
    dispatcher = _build_dispatcher(cfg, args)
    runner = SessionRunner(cfg.spec, cfg.thresholds, dispatcher=dispatcher,
                           timeout_s=cfg.session_timeout_s, on_verdict=_print_verdict)
    try:
        rstats = run_replay(source, runner, fmt=fmt, fps=cfg.fps, strict=cfg.strict)
    except (OSError, MalformedRecord, UnknownClass, NonMonotonicFrame, UnicodeDecodeError) as exc:
        dispatcher.close()
        print(f"error: {args.file}: {exc}", file=sys.stderr)
        return EXIT_PARSE
    verdict = runner.end_stream()
    runner.stats.records_dropped = rstats.dropped_records
    runner.stats.detections_dropped = rstats.dropped_detections
    dispatcher.close()
    _print_stats(runner, dispatcher)
    return _exit_for(verdict)


def cmd_monitor(args, cfg: AppConfig) -> int:
    source = cfg.source
    if args.stdin:
        source = StandardInput()
    elif args.host is not None or args.port is not None or not isinstance(source, NetworkListener):
        base = source if isinstance(source, NetworkListener) else NetworkListener()
        source = NetworkListener(
            args.host if args.host is not None else base.bind_address,
            args.port if args.port is not None else base.port,
        )
    dispatcher = _build_dispatcher(cfg, args)
    runner = SessionRunner(
        cfg.spec, cfg.thresholds, dispatcher=dispatcher,
        timeout_s=cfg.session_timeout_s, on_verdict=_print_verdict,
    )
    if isinstance(source, StandardInput):
        parse = ParseStats()
        rc = EXIT_OK
        try:
            for batch in iter_event_lines(sys.stdin, strict=cfg.strict, stats=parse):
                runner.feed(batch)
        except (MalformedRecord, UnknownClass, NonMonotonicFrame) as exc:
            print(f"error: stdin: {exc}", file=sys.stderr)
            rc = EXIT_PARSE
        except KeyboardInterrupt:
            pass
        runner.end_stream()
        dispatcher.close()
        _print_stats(runner, dispatcher, parse)
        return rc

    listener = Listener(source, strict=cfg.strict, idle_timeout_s=cfg.session_timeout_s)
    try:
        host, port = listener.bind()
    except OSError as exc:
        dispatcher.close()
        print(f"error: cannot listen on {source.bind_address}:{source.port}: {exc}", file=sys.stderr)
        return EXIT_BIND
    print(f"listening on {host}:{port} ({cfg.mode.value})", file=sys.stderr, flush=True)
    try:
        listener.serve(runner, max_sessions=args.max_sessions)
    except KeyboardInterrupt:
        listener.shutdown()
    if runner.session is not None:
        runner.end_stream()
    dispatcher.close()
    _print_stats(runner, dispatcher, listener.stats.parse)
    return EXIT_OK


def _noise_from_args(args) -> NoiseModel:
    if args.noise_free:
        return NoiseModel.noise_free()
    return NoiseModel.uniform(
        hit_rate=args.hit_rate,
        false_positive_rate=args.fp_rate,
        conf_mean_worn=args.conf_worn,
        conf_mean_absent=args.conf_absent,
        conf_stddev=args.conf_std,
    )


def cmd_simulate(args, cfg: AppConfig) -> int:
    spec = cfg.spec
    try:
        choices = {}
        for name in args.choose:
            cls = parse_class(name)
            step = spec.step_of(cls)
            if step is None:
                raise InvalidScenario(f"{cls.value} is not part of the {spec.mode.value} sequence")
            choices[step] = cls
        scenario = Scenario.compliant(
            spec,
            choices=choices,
            first_frame=args.first_frame,
            spacing=args.spacing,
            margin_frames=args.margin,
            fps=cfg.fps,
            injected_violation=tuple(args.inject_swap) if args.inject_swap else None,
        )
        noise = _noise_from_args(args)
    except (InvalidScenario, UnknownClass) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    batches = generate(scenario, noise, args.seed)
    if args.out:
        write_event_lines(batches, args.out)
        print(f"wrote {len(batches)} frames to {args.out}", file=sys.stderr)
    rc = EXIT_OK
    if args.check:
        dispatcher = _build_dispatcher(cfg, args)
        runner = SessionRunner(spec, cfg.thresholds, dispatcher=dispatcher, timeout_s=cfg.session_timeout_s,
                               on_verdict=_print_verdict)
        for b in batches:
            runner.feed(b)
        verdict = runner.end_stream()
        dispatcher.close()
        _print_stats(runner, dispatcher)
        rc = _exit_for(verdict)
    if args.sweep:
        rows = sweep(scenario, [noise], list(range(args.seed, args.seed + args.sweep)), cfg.thresholds)
        print(f"{'runs':>5} {'correct':>8} {'latency':>8}  outcomes")
        for row in rows:
            lat = "-" if row.mean_latency_frames is None else f"{row.mean_latency_frames:.2f}"
            outcomes = ", ".join(f"{k.value}={v}" for k, v in sorted(row.outcomes.items(), key=lambda kv: kv[0].value))
            print(f"{row.runs:>5} {row.correct_fraction:>8.3f} {lat:>8}  {outcomes}")
    return rc


def cmd_gen_config(args) -> int:
    try:
        if args.num_classes < 1:
            raise ValueError(f"--num-classes must be >= 1, got {args.num_classes}")
        policy = ThresholdPolicy(args.alpha, args.floor, args.ceil)
        aps = {}
        for item in args.ap:
            name, sep, raw = item.partition("=")
            if not sep:
                raise ValueError(f"--ap expects CLASS=VALUE, got {item!r}")
            ap = float(raw)
            if not 0.0 <= ap <= 1.0:
                raise ValueError(f"AP for {name} must be in [0, 1], got {raw}")
            aps[parse_class(name)] = ap
    except (ValueError, InvalidPolicy, UnknownClass) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    data = starter_config(aps, policy)
    if getattr(args, "mode", None):
        data["mode"] = args.mode
    filters = darknet_filters(args.num_classes)
    print(f"# darknet: classes={args.num_classes} filters={filters}")
    print(f"# set filters={filters} on the convolutional layer before each [yolo] layer")
    for cls, ap in aps.items():
        print(f"# {cls.value}: ap={ap} -> th_confidence={data['thresholds']['classes'][cls.value]['th_confidence']}")
    sys.stdout.write(yaml.safe_dump(data, sort_keys=False))
    return EXIT_OK


def cmd_bench(args, cfg: AppConfig) -> int:
    # stretch the schedule over the whole run so every frame goes through the engine
    n_steps = len(cfg.spec.steps)
    spacing = max(1, (args.frames - 120) // n_steps)
    scenario = Scenario.compliant(cfg.spec, first_frame=30, spacing=spacing, margin_frames=args.frames - 30 - spacing * (n_steps - 1))
    noise = NoiseModel.uniform(hit_rate=0.95, false_positive_rate=0.05, conf_mean_worn=0.8,
                               conf_mean_absent=0.3, conf_stddev=0.1)
    batches = generate(scenario, noise, args.seed)
    res = bench(batches, cfg.spec, cfg.thresholds)
    print(json.dumps({
        "batches": res.batches,
        "detections": res.detections,
        "elapsed_s": round(res.elapsed_s, 4),
        "events_per_s": round(res.events_per_s),
        "p50_batch_ms": round(res.p50_ms, 4),
        "p99_batch_ms": round(res.p99_ms, 4),
    }))
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    verbosity = getattr(args, "verbose", None) or 0
    logging.basicConfig(level=logging.WARNING - 10 * min(verbosity, 2), format="%(levelname)s %(name)s: %(message)s")

    if args.command == "gen-config":
        return cmd_gen_config(args)
    try:
        cfg = _load(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "check":
        return cmd_check(args, cfg)
    if args.command == "replay":
        return cmd_check(args, cfg, paced=True)
    if args.command == "monitor":
        return cmd_monitor(args, cfg)
    if args.command == "simulate":
        return cmd_simulate(args, cfg)
    return cmd_bench(args, cfg)


if __name__ == "__main__":
    sys.exit(main())

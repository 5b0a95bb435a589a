"""``mempredict`` command line: predict, generate, ingest, train, evaluate."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

from .errors import (
    DuplicateJobId,
    InvalidConfig,
    MemPredictError,
    NotFound,
    ShortWindow,
    StoreError,
    TraceError,
    TraceTooShort,
)
from .evaluation import EvalConfig, emit_report, run_segmented_evaluation
from .pipeline import (
    PipelineConfig,
    PipelineState,
    assemble_window,
    build_model_set,
    load_config,
    load_model_set,
    persist_model_set,
)
from .workload import (
    JobRecord,
    SyntheticConfig,
    generate_synthetic,
    planted_table,
    read_trace_file,
    write_trace_file,
)

MODELS_ENV = "MEMPREDICT_MODELS"
JOBS_FILE = "jobs.jsonl"

EXIT_OK, EXIT_USAGE, EXIT_STORE, EXIT_SHORT, EXIT_IO = 0, 2, 3, 4, 5

log = logging.getLogger("mempredict")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _predict_parser() -> _Parser:
    p = _Parser(
        prog="mempredict predict",
        description="Predict the memory request of a job described with bsub-style flags.",
        usage="mempredict predict [options] -- command [args...]",
    )
    p.add_argument("-q", dest="queue", default="normal", help="queue name")
    p.add_argument("-n", dest="procs", type=int, default=1, help="number of processors")
    p.add_argument("-W", dest="minutes", type=int, default=60, help="run limit in minutes")
    p.add_argument("-P", dest="priority", type=int, default=0, help="job priority")
    p.add_argument("-cwd", dest="cwd", default=None, help="working directory (default: current)")
    p.add_argument("-R", dest="resreq", default="", help="resource requirement string")
    p.add_argument("-u", dest="user", default=None, help="submitting user (default: $USER)")
    p.add_argument("-g", dest="group", default="default", help="user group")
    p.add_argument("--submit-time", type=int, default=None,
                   help="submission time, seconds since the epoch (default: now)")
    p.add_argument("--models", default=None, help=f"model store directory (default: ${MODELS_ENV})")
    p.add_argument("--store", default=None,
                   help="job store whose finished jobs back the mode fallback with --allow-cold")
    p.add_argument("--explain", action="store_true", help="print each voter's ballot")
    p.add_argument("--allow-cold", action="store_true",
                   help="answer from the fallback tiers when no model snapshot exists")
    return p


def _split_command(argv):
    if "--" not in argv:
        raise UsageError(_predict_parser().format_usage()
                         + "mempredict predict: error: missing '--' before the job command")
    cut = argv.index("--")
    command = argv[cut + 1:]
    if not command:
        raise UsageError(_predict_parser().format_usage()
                         + "mempredict predict: error: empty job command after '--'")
    return argv[:cut], command


def _history_state(store_dir, config: PipelineConfig | None = None) -> PipelineState:
    state = PipelineState(config)
    if store_dir is not None:
        path = Path(store_dir) / JOBS_FILE
        if path.exists():
            finished = [j for j in read_trace_file(path) if j.finished]
            state.extend_finished(sorted(finished, key=lambda j: (j.finish_time, j.job_id)))
    return state


def cmd_predict(argv) -> int:
    head = argv[:argv.index("--")] if "--" in argv else argv
    if "-h" in head or "--help" in head:
        _predict_parser().print_help()
        return EXIT_OK
    flags, command = _split_command(argv)
    args = _predict_parser().parse_args(flags)
    if args.procs < 1:
        raise UsageError("mempredict predict: error: -n must be >= 1")
    if args.minutes < 0:
        raise UsageError("mempredict predict: error: -W must be >= 0")
    models = args.models or os.environ.get(MODELS_ENV)
    submit = args.submit_time if args.submit_time is not None else int(time.time())
    job = JobRecord(
        job_id="query", user=args.user or os.environ.get("USER", "nobody"), group=args.group,
        queue=args.queue, cwd=args.cwd or os.getcwd(), resreq=args.resreq,
        command=" ".join(command), priority=args.priority, submit_time=submit,
        req_time=args.minutes * 60, req_procs=args.procs,
    )
    model_set = None
    if models is None:
        if not args.allow_cold:
            raise UsageError(f"mempredict predict: error: no model store (use --models or ${MODELS_ENV})")
    else:
        try:
            model_set = load_model_set(models)
        except NotFound:
            if not args.allow_cold:
                print(f"mempredict predict: no model snapshot in {models}", file=sys.stderr)
                return EXIT_STORE
        except (StoreError, OSError) as e:
            print(f"mempredict predict: unreadable model store: {e}", file=sys.stderr)
            return EXIT_STORE
    if model_set is not None:
        pred = model_set.predict(job)
    else:
        pred = _history_state(args.store).fallback()
    print(pred.line())
    if args.explain:
        if pred.voters:
            for v in pred.voters:
                print(f"  rank={v['rank']} method={v['method']} bin={v['bin']} weight={v['weight']:.4f}")
        else:
            print(f"  fallback tier: {pred.tier}")
    return EXIT_OK


def _build_parser() -> _Parser:
    p = _Parser(prog="mempredict", description="Memory-request prediction for batch jobs.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="verb", metavar="{predict,generate,ingest,train,evaluate}")
    sub.add_parser("predict", help="predict one job's memory request (flags, then -- command)",
                   add_help=False)

    g = sub.add_parser("generate", help="write a seeded synthetic trace")
    g.add_argument("--jobs", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--users", type=int, default=20)
    g.add_argument("--commands", type=int, default=10)
    g.add_argument("--spread", type=int, default=12, help="number of distinct planted bins")
    g.add_argument("--sigma", type=float, default=64.0, help="memory noise in MiB")
    g.add_argument("--interarrival", type=float, default=60.0, help="mean seconds between submissions")
    g.add_argument("--runtime", type=float, default=3600.0, help="mean job runtime in seconds")
    g.add_argument("--drift-at", type=int, default=None, help="job index where the planted table changes")
    g.add_argument("--planted-out", default=None, help="also write the planted table as JSON")

    i = sub.add_parser("ingest", help="merge a trace into a job store")
    i.add_argument("--trace", required=True)
    i.add_argument("--store", required=True)

    t = sub.add_parser("train", help="train a model snapshot from a job store")
    t.add_argument("--store", required=True)
    t.add_argument("--models", required=True)
    t.add_argument("--config", default=None)
    t.add_argument("--as-of", type=int, default=None,
                   help="training instant (default: one second after the last finish)")
    t.add_argument("--profile", choices=("fast", "full"), default=None)

    e = sub.add_parser("evaluate", help="segmented evaluation of a trace")
    e.add_argument("--trace", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--config", default=None)
    e.add_argument("--segments", type=int, default=5)
    e.add_argument("--segment-size", type=int, default=5000)
    e.add_argument("--warmup", type=int, default=10000)
    e.add_argument("--top-n", type=int, default=None)
    e.add_argument("--profile", choices=("fast", "full"), default=None)
    e.add_argument("--seed", type=int, default=None)
    e.add_argument("--strict-per-job", action="store_true")
    return p


def _pipeline_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    overrides = {}
    if getattr(args, "profile", None):
        overrides["grid_profile"] = args.profile
    if getattr(args, "top_n", None) is not None:
        overrides["top_n"] = args.top_n
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if overrides:
        cfg = PipelineConfig.from_dict({**cfg.to_dict(), **overrides})
    return cfg


def cmd_generate(args) -> int:
    cfg = SyntheticConfig(
        n_jobs=args.jobs, seed=args.seed, n_users=args.users, n_commands=args.commands,
        base_bin_spread=args.spread, noise_sigma_mib=args.sigma,
        mean_interarrival_s=args.interarrival, mean_runtime_s=args.runtime, drift_at=args.drift_at,
    )
    cfg.validate()
    write_trace_file(generate_synthetic(cfg), args.out)
    if args.planted_out:
        Path(args.planted_out).write_text(json.dumps(planted_table(cfg).to_dict(), indent=2) + "\n")
    return EXIT_OK


def _merge(existing: list[JobRecord], incoming: list[JobRecord]) -> list[JobRecord]:
    merged = {j.job_id: j for j in existing}
    for j in incoming:
        old = merged.get(j.job_id)
        if old is None or old == j or (not old.finished and j.finished
                                       and old == j.without_label()):
            merged[j.job_id] = j
        elif not (old.finished and not j.finished and j == old.without_label()):
            raise DuplicateJobId(j.job_id)
    return sorted(merged.values(), key=lambda j: (j.submit_time, j.job_id))


def cmd_ingest(args) -> int:
    store = Path(args.store)
    store.mkdir(parents=True, exist_ok=True)
    path = store / JOBS_FILE
    existing = read_trace_file(path) if path.exists() else []
    merged = _merge(existing, read_trace_file(args.trace))
    fd, tmp = tempfile.mkstemp(prefix=".jobs-", dir=store)
    os.close(fd)
    try:
        write_trace_file(merged, tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    log.info("store holds %d jobs", len(merged))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _pipeline_config(args)
    state = _history_state(args.store, cfg)
    if not state.buffer:
        print("mempredict train: no finished jobs in the store", file=sys.stderr)
        return EXIT_SHORT
    as_of = args.as_of if args.as_of is not None else state.buffer[-1].finish_time + 1
    window = assemble_window(state, as_of)
    try:
        ms = build_model_set(window, cfg, as_of=as_of, consumed=len(window))
    except ShortWindow as e:
        print(f"mempredict train: insufficient history: {e}", file=sys.stderr)
        return EXIT_SHORT
    persist_model_set(ms, args.models)
    for rank, entry in enumerate(ms.ranked, start=1):
        print(f"{rank} {entry.method} {entry.accuracy:.4f}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = EvalConfig(segments=args.segments, segment_size=args.segment_size, warmup=args.warmup,
                     pipeline=_pipeline_config(args), strict_per_job=args.strict_per_job)
    trace = read_trace_file(args.trace)
    report = run_segmented_evaluation(trace, cfg, progress=log.info)
    emit_report(report, args.out)
    print((Path(args.out) / "poll.csv").read_text(), end="")
    return EXIT_OK


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        if argv and argv[0] == "predict":
            return cmd_predict(argv[1:])
        args = _build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(message)s", stream=sys.stderr)
        if args.verb is None:
            raise UsageError(_build_parser().format_usage() + "mempredict: error: a verb is required")
        handler = {"generate": cmd_generate, "ingest": cmd_ingest, "train": cmd_train,
                   "evaluate": cmd_evaluate}[args.verb]
        return handler(args)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    except InvalidConfig as e:
        print(f"mempredict: invalid configuration: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (TraceTooShort, ShortWindow) as e:
        print(f"mempredict: {e}", file=sys.stderr)
        return EXIT_SHORT
    except (TraceError, StoreError, MemPredictError, OSError) as e:
        print(f"mempredict: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

"""Job records, trace files, synthetic workloads and the temporal event view."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import IO, Iterable, Iterator, Sequence

import numpy as np

from .errors import (
    DuplicateJobId,
    InvalidConfig,
    InvariantViolation,
    MalformedLine,
)

# Field order is also the serialization order.
_REQUIRED_STR = ("job_id", "user", "group", "queue", "cwd", "resreq", "command")
_REQUIRED_INT = ("priority", "submit_time", "req_time", "req_procs")
_OPTIONAL = ("finish_time", "max_mem_mib")


@dataclass(frozen=True)
class JobRecord:
    job_id: str
    user: str
    group: str
    queue: str
    cwd: str
    resreq: str
    command: str
    priority: int
    submit_time: int
    req_time: int
    req_procs: int
    finish_time: int | None = None
    max_mem_mib: float | None = None

    @property
    def finished(self) -> bool:
        return self.finish_time is not None

    def validate(self) -> None:
        if (self.finish_time is None) != (self.max_mem_mib is None):
            name = "max_mem_mib" if self.max_mem_mib is None else "finish_time"
            raise InvariantViolation(self.job_id, name)
        if self.req_procs < 1:
            raise InvariantViolation(self.job_id, "req_procs")
        if self.req_time < 0:
            raise InvariantViolation(self.job_id, "req_time")
        if self.submit_time < 0:
            raise InvariantViolation(self.job_id, "submit_time")
        if self.finish_time is not None and self.finish_time <= self.submit_time:
            raise InvariantViolation(self.job_id, "finish_time")
        if self.max_mem_mib is not None and not (
            math.isfinite(self.max_mem_mib) and self.max_mem_mib >= 0
        ):
            raise InvariantViolation(self.job_id, "max_mem_mib")

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in _OPTIONAL:
            if d[key] is None:
                del d[key]
        return d

    def without_label(self) -> "JobRecord":
        return JobRecord(**{**asdict(self), "finish_time": None, "max_mem_mib": None})


class EventKind(enum.IntEnum):
    # Numeric order is the tie-break order at equal timestamps.
    FINISHED = 0
    SUBMITTED = 1


@dataclass(frozen=True, order=True)
class JobEvent:
    time: int
    kind: EventKind
    job_id: str
    # submitted events carry the record without its label
    job: "JobRecord | None" = field(default=None, compare=False, repr=False)


def _record_from_obj(obj: dict, line_no: int) -> JobRecord:
    if not isinstance(obj, dict):
        raise MalformedLine(line_no, "not an object")
    known = {f.name for f in fields(JobRecord)}
    unknown = set(obj) - known
    if unknown:
        raise MalformedLine(line_no, f"unknown fields {sorted(unknown)}")
    missing = [k for k in _REQUIRED_STR + _REQUIRED_INT if k not in obj]
    if missing:
        raise MalformedLine(line_no, f"missing fields {missing}")
    job_id = obj["job_id"]
    if not isinstance(job_id, str):
        raise MalformedLine(line_no, "job_id must be a string")
    for key in _REQUIRED_STR:
        if not isinstance(obj[key], str):
            raise InvariantViolation(job_id, key)
    for key in _REQUIRED_INT + ("finish_time",):
        value = obj.get(key)
        if value is None and key == "finish_time":
            continue
        if isinstance(value, bool) or not isinstance(value, int):
            raise InvariantViolation(job_id, key)
    mem = obj.get("max_mem_mib")
    if mem is not None:
        if isinstance(mem, bool) or not isinstance(mem, (int, float)):
            raise InvariantViolation(job_id, "max_mem_mib")
        mem = float(mem)
    record = JobRecord(**{**obj, "max_mem_mib": mem})
    record.validate()
    return record


def parse_trace(stream: IO[str] | Iterable[str]) -> list[JobRecord]:
    """Read a JSON-lines trace. Blank lines and ``#`` comments are skipped."""
    records: list[JobRecord] = []
    seen: set[str] = set()
    for line_no, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedLine(line_no, str(exc)) from None
        record = _record_from_obj(obj, line_no)
        if record.job_id in seen:
            raise DuplicateJobId(record.job_id)
        seen.add(record.job_id)
        records.append(record)
    return records


def format_record(record: JobRecord) -> str:
    return json.dumps(record.to_dict(), separators=(",", ":"))


def write_trace(records: Iterable[JobRecord], stream: IO[str]) -> None:
    for record in records:
        stream.write(format_record(record))
        stream.write("\n")


def read_trace_file(path) -> list[JobRecord]:
    with open(path, encoding="utf-8") as fh:
        return parse_trace(fh)


def write_trace_file(records: Iterable[JobRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        write_trace(records, fh)


def event_stream(records: Sequence[JobRecord]) -> list[JobEvent]:
    events = []
    for r in records:
        events.append(JobEvent(r.submit_time, EventKind.SUBMITTED, r.job_id, r.without_label()))
        if r.finish_time is not None:
            events.append(JobEvent(r.finish_time, EventKind.FINISHED, r.job_id, r))
    events.sort()
    return events


def derive_calendar_features(submit_time: int) -> tuple[int, int]:
    """(weekday with Monday=0, seconds since UTC midnight)."""
    days, seconds = divmod(int(submit_time), 86400)
    # 1970-01-01 was a Thursday.
    return (days + 3) % 7, seconds


# --------------------------------------------------------------------------
# synthetic workloads

_QUEUES = ("short", "normal", "long", "bigmem")
_RESREQS = ("select[type==any]", "select[x86]", "select[gpu]", "span[hosts=1]", "rusage[tmp=10]")
_REQ_TIMES = (900, 1800, 3600, 7200, 14400, 28800, 43200, 86400, 172800, 259200)
_START_EPOCH = 1_500_000_000


@dataclass(frozen=True)
class SyntheticConfig:
    n_jobs: int
    seed: int = 0
    n_users: int = 20
    n_commands: int = 10
    base_bin_spread: int = 12
    noise_sigma_mib: float = 64.0
    mean_interarrival_s: float = 60.0
    mean_runtime_s: float = 3600.0
    drift_at: int | None = None
    bin_size_mib: int = 512

    def validate(self) -> None:
        for name in ("n_jobs", "n_users", "n_commands", "base_bin_spread", "bin_size_mib"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be >= 1")
        if self.noise_sigma_mib < 0:
            raise InvalidConfig("noise_sigma_mib must be >= 0")
        if self.mean_interarrival_s <= 0 or self.mean_runtime_s <= 0:
            raise InvalidConfig("mean interarrival and runtime must be > 0")
        if not 0 <= self.seed < 2**64:
            raise InvalidConfig("seed must be an unsigned 64-bit integer")
        if self.drift_at is not None and self.drift_at < 0:
            raise InvalidConfig("drift_at must be >= 0")


@dataclass(frozen=True)
class PlantedTable:
    """Ground truth of a synthetic workload: base memory per (user, command)."""

    users: tuple[str, ...]
    commands: tuple[str, ...]
    base_bins: np.ndarray  # (n_users, n_commands) before drift
    drift_bins: np.ndarray  # after drift_at
    bin_size_mib: int
    drift_at: int | None

    def base_bin(self, user_idx: int, cmd_idx: int, job_index: int = 0) -> int:
        table = self.base_bins
        if self.drift_at is not None and job_index >= self.drift_at:
            table = self.drift_bins
        return int(table[user_idx, cmd_idx])

    def base_mib(self, user_idx: int, cmd_idx: int, job_index: int = 0) -> float:
        return (self.base_bin(user_idx, cmd_idx, job_index) + 0.5) * self.bin_size_mib

    def lookup(self, user: str, command: str, job_index: int = 0) -> int:
        return self.base_bin(self.users.index(user), self.commands.index(command), job_index)

    def to_dict(self) -> dict:
        return {
            "users": list(self.users),
            "commands": list(self.commands),
            "base_bins": self.base_bins.tolist(),
            "drift_bins": self.drift_bins.tolist(),
            "bin_size_mib": self.bin_size_mib,
            "drift_at": self.drift_at,
        }


def _balanced_assignment(rng: np.random.Generator, bins: np.ndarray, n_cells: int) -> np.ndarray:
    reps = -(-n_cells // len(bins))
    pool = np.tile(bins, reps)[:n_cells]
    return rng.permutation(pool)


def planted_table(config: SyntheticConfig) -> PlantedTable:
    config.validate()
    rng = np.random.default_rng([config.seed, 0])
    spread = config.base_bin_spread
    bins = np.sort(rng.choice(2 * spread, size=spread, replace=False))
    cells = config.n_users * config.n_commands
    base = _balanced_assignment(rng, bins, cells).reshape(config.n_users, config.n_commands)
    drift = _balanced_assignment(rng, bins, cells).reshape(config.n_users, config.n_commands)
    users = tuple(f"user{u:03d}" for u in range(config.n_users))
    commands = tuple(f"app{c:02d}" for c in range(config.n_commands))
    return PlantedTable(users, commands, base, drift, config.bin_size_mib, config.drift_at)


def generate_synthetic(config: SyntheticConfig) -> list[JobRecord]:
    """Seeded workload whose memory depends on (user, command) plus Gaussian noise.

    Every other submission attribute is a deterministic function of the user,
    the command and the seed, so the planted table is the Bayes-optimal rule.
    """
    table = planted_table(config)
    n_users, n_cmds, n = config.n_users, config.n_commands, config.n_jobs

    attr_rng = np.random.default_rng([config.seed, 1])
    user_group = attr_rng.integers(0, max(1, n_users // 4), size=n_users)
    user_priority = attr_rng.permutation(n_users) * 5 + 10
    cmd_queue = attr_rng.integers(0, len(_QUEUES), size=n_cmds)
    cmd_resreq = attr_rng.integers(0, len(_RESREQS), size=n_cmds)
    cmd_req_time = np.array([_REQ_TIMES[i % len(_REQ_TIMES)] for i in attr_rng.permutation(n_cmds)])
    cmd_procs = 2 ** attr_rng.integers(0, 6, size=n_cmds)
    project = attr_rng.integers(0, 1000, size=(n_users, n_cmds))

    rng = np.random.default_rng([config.seed, 2])
    users = rng.integers(0, n_users, size=n)
    cmds = rng.integers(0, n_cmds, size=n)
    gaps = rng.exponential(config.mean_interarrival_s, size=n)
    runtimes = rng.exponential(config.mean_runtime_s, size=n)
    noise = rng.normal(0.0, config.noise_sigma_mib, size=n)

    submit = _START_EPOCH + np.floor(np.cumsum(gaps)).astype(np.int64)
    finish = submit + np.maximum(1, np.rint(runtimes)).astype(np.int64)

    records = []
    for i in range(n):
        u, c = int(users[i]), int(cmds[i])
        mem = max(1.0, table.base_mib(u, c, i) + float(noise[i]))
        records.append(
            JobRecord(
                job_id=f"job{i:07d}",
                user=table.users[u],
                group=f"grp{int(user_group[u]):02d}",
                queue=_QUEUES[int(cmd_queue[c])],
                cwd=f"/home/{table.users[u]}/proj{int(project[u, c]):03d}/{table.commands[c]}",
                resreq=_RESREQS[int(cmd_resreq[c])],
                command=f"./{table.commands[c]} -i input.dat",
                priority=int(user_priority[u]),
                submit_time=int(submit[i]),
                req_time=int(cmd_req_time[c]),
                req_procs=int(cmd_procs[c]),
                finish_time=int(finish[i]),
                max_mem_mib=round(mem, 3),
            )
        )
    return records


def command_index(table: PlantedTable, command_line: str) -> int:
    """Recover the command index from a generated command line."""
    name = command_line.split()[0].removeprefix("./")
    return table.commands.index(name)


def iter_planted_bins(table: PlantedTable, records: Sequence[JobRecord]) -> Iterator[int]:
    for i, r in enumerate(records):
        yield table.base_bin(table.users.index(r.user), command_index(table, r.command), i)

"""HBM timing model: three DMA engines sharing one channel.

Engines (prefetch_m, prefetch_v, store_v) each keep a FIFO of transfers; the
channel arbitrates between engines round-robin at row granularity. A row of
nbytes occupies the channel for ceil(nbytes / bytes_per_cycle) cycles and is
usable fixed_latency cycles after its last byte, so later rows of a transfer
never gate earlier ones.

Scheduling is demand-driven: rows are placed on the channel timeline when
someone asks when they land (or at drain), which is safe because requests
arrive in machine order and the arbiter never services a row before its
transfer's arrival cycle.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

ENGINES = ("prefetch_m", "prefetch_v", "store_v")


@dataclass(frozen=True)
class HbmConfig:
    bandwidth_gbps: float = 819.2
    clock_ghz: float = 1.0
    fixed_latency: int = 100

    def __post_init__(self):
        if self.bandwidth_gbps <= 0 or self.clock_ghz <= 0:
            raise ValueError("bandwidth and clock must be positive")
        if self.fixed_latency < 0:
            raise ValueError("fixed_latency must be >= 0")
        if self.bytes_per_cycle < 1:
            raise ValueError("bandwidth below one byte per cycle")

    @property
    def bytes_per_cycle(self) -> int:
        return int(self.bandwidth_gbps / self.clock_ghz)


@dataclass
class Transfer:
    engine: str
    arrival: int
    row_bytes: list
    region: str = ""
    ready: list = field(default_factory=list)

    @property
    def done(self) -> bool:
        return len(self.ready) == len(self.row_bytes)


class Hbm:
    def __init__(self, config: HbmConfig | None = None):
        self.config = config or HbmConfig()
        self.queues = {e: deque() for e in ENGINES}
        self.rr = 0
        self.clock = 0  # next cycle the channel is free
        self.last_ready = 0
        self.traffic = {e: 0 for e in ENGINES}
        self.region_traffic: dict = {}
        self.busy_cycles = 0
        self.rows_serviced = 0

    def enqueue(self, engine: str, cycle: int, row_bytes, region: str = "") -> Transfer:
        if engine not in self.queues:
            raise ValueError(f"unknown engine {engine!r}")
        row_bytes = [int(b) for b in row_bytes]
        if not row_bytes or min(row_bytes) <= 0:
            raise ValueError("transfers need positive row byte counts")
        t = Transfer(engine, int(cycle), row_bytes, region)
        self.queues[engine].append(t)
        total = sum(row_bytes)
        self.traffic[engine] += total
        if region:
            key = (engine, region)
            self.region_traffic[key] = self.region_traffic.get(key, 0) + total
        return t

    def _schedule_one(self) -> bool:
        """Place the next row on the channel; False if all queues are idle."""
        heads = [(e, self.queues[e][0]) for e in ENGINES if self.queues[e]]
        if not heads:
            return False
        arrivals = [t.arrival for _, t in heads]
        if min(arrivals) > self.clock:
            self.clock = min(arrivals)
        for off in range(len(ENGINES)):
            engine = ENGINES[(self.rr + off) % len(ENGINES)]
            q = self.queues[engine]
            if not q or q[0].arrival > self.clock:
                continue
            t = q[0]
            nbytes = t.row_bytes[len(t.ready)]
            dur = -(-nbytes // self.config.bytes_per_cycle)
            end = self.clock + dur
            ready = end + self.config.fixed_latency
            t.ready.append(ready)
            self.clock = end
            self.busy_cycles += dur
            self.rows_serviced += 1
            self.last_ready = max(self.last_ready, ready)
            if t.done:
                q.popleft()
            self.rr = (ENGINES.index(engine) + 1) % len(ENGINES)
            return True
        raise AssertionError("unreachable: arrival jump guarantees a candidate")

    def ready_at(self, transfer: Transfer, row: int) -> int:
        """Cycle at which a transfer's row is usable (forces scheduling)."""
        if row >= len(transfer.row_bytes):
            raise IndexError("row beyond transfer")
        while len(transfer.ready) <= row:
            if not self._schedule_one():
                raise AssertionError("transfer vanished from its queue")
        return transfer.ready[row]

    def drain(self) -> int:
        """Schedule everything outstanding; returns the last ready cycle."""
        while self._schedule_one():
            pass
        return self.last_ready

    @property
    def total_bytes(self) -> int:
        return sum(self.traffic.values())

"""Roofline estimates and tiling/schedule search for lowered kernels.

The estimate side is a two-term roofline: matrix flops against the
blen x mlen array's peak, bytes against the HBM channel, whichever is
larger. The search side enumerates a finite grid (contraction tile,
prefetch distance, pointwise fusion), drops candidates that violate the
SRAM depth constraints, and ranks the rest by estimated cycles with the
grid index as the deterministic tie break.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..formats import DataFormat
from ..hbm import HbmConfig
from ..machine import ArchConfig
from .lower import LoweringError, row_bytes


@dataclass(frozen=True)
class GemmShape:
    """Y(m, n) = X(m, k) @ W(n, k)^T with streamed weights."""

    m: int
    k: int
    n: int


@dataclass(frozen=True)
class AttentionShape:
    """Flash attention over one or more heads; no T x T tensor moves.

    seq counts the cached KV rows; q_rows defaults to seq (prefill) and is
    1 for a single decode step.
    """

    seq: int
    head_dim: int
    heads: int = 1
    q_rows: int | None = None


@dataclass(frozen=True)
class PointwiseShape:
    """Vector-pipe epilogue (rmsnorm, rope, silu, residual) over a row block."""

    rows: int
    cols: int
    ops_per_element: int = 4


@dataclass(frozen=True)
class RooflineEstimate:
    flops: int
    bytes_moved: int
    est_cycles: int
    boundedness: str  # "compute" or "memory"


def _estimate(flops: int, bytes_moved: int, compute_cycles: float, bpc: int) -> RooflineEstimate:
    memory = bytes_moved / bpc
    tag = "compute" if compute_cycles >= memory else "memory"
    return RooflineEstimate(
        flops, bytes_moved, int(-(-max(compute_cycles, memory) // 1)), tag
    )


def _op_traffic(op, arch: ArchConfig, weight_fmt: DataFormat) -> tuple:
    """(matrix_flops, vector_flops, bytes_moved) for one op."""
    act, kv = arch.act_fmt, arch.kv_fmt
    if isinstance(op, GemmShape):
        w_bytes = (op.n // arch.blen) * (op.k // arch.mlen) * arch.blen * row_bytes(weight_fmt, arch.mlen)
        x_bytes = op.m * (op.k // arch.mlen) * row_bytes(act, arch.mlen)
        return 2 * op.m * op.k * op.n, 0, w_bytes + x_bytes
    if isinstance(op, AttentionShape):
        t, dh = op.seq, op.head_dim
        q_rows = op.q_rows if op.q_rows is not None else t
        v_pad = -(-t // arch.mlen) * arch.mlen
        flops = op.heads * 4 * q_rows * t * dh
        # online softmax: exp, rescales, reductions over each score tile
        vec = op.heads * 8 * q_rows * t
        kv_bytes = (t + v_pad) * row_bytes(kv, arch.mlen)
        qo_bytes = 2 * q_rows * row_bytes(act, arch.vlen)
        return flops, vec, op.heads * kv_bytes + qo_bytes
    if isinstance(op, PointwiseShape):
        vec = op.rows * op.cols * op.ops_per_element
        return 0, vec, 2 * op.rows * row_bytes(act, arch.vlen)
    raise LoweringError(f"no roofline model for {type(op).__name__}")


def roofline_estimate(
    op, arch: ArchConfig, hbm: HbmConfig | None = None, weight_fmt: DataFormat | None = None
) -> RooflineEstimate:
    """Two-term cycle estimate for a single op."""
    hbm = hbm or HbmConfig()
    flops, vec, nbytes = _op_traffic(op, arch, weight_fmt or arch.act_fmt)
    peak = 2.0 * arch.mlen * arch.blen
    compute = flops / peak + vec / arch.vlen
    return _estimate(flops + vec, nbytes, compute, hbm.bytes_per_cycle)


def gemm_tile_window(shape: GemmShape, arch: ArchConfig) -> int:
    """Issue cycles between consecutive weight-tile consumptions."""
    km = shape.k // arch.mlen
    return (shape.m // arch.blen) * (km * arch.blen + 1)


def gemm_tile_fetch(shape: GemmShape, arch: ArchConfig, hbm: HbmConfig, weight_fmt: DataFormat) -> int:
    """Cycles from a weight-tile prefetch issue to its rows being usable."""
    km = shape.k // arch.mlen
    tile_bytes = km * arch.blen * row_bytes(weight_fmt, arch.mlen)
    return hbm.fixed_latency + -(-tile_bytes // hbm.bytes_per_cycle)


def min_prefetch_distance(
    shape: GemmShape, arch: ArchConfig, hbm: HbmConfig | None = None,
    weight_fmt: DataFormat | None = None,
) -> int:
    """Smallest prefetch distance that hides the weight stream entirely."""
    hbm = hbm or HbmConfig()
    weight_fmt = weight_fmt or arch.act_fmt
    fetch = gemm_tile_fetch(shape, arch, hbm, weight_fmt)
    return -(-fetch // gemm_tile_window(shape, arch))


def gemm_stall_estimate(
    shape: GemmShape, arch: ArchConfig, hbm: HbmConfig, distance: int,
    weight_fmt: DataFormat,
) -> int:
    """Memory stall cycles the roofline charges a too-short distance."""
    fetch = gemm_tile_fetch(shape, arch, hbm, weight_fmt)
    window = gemm_tile_window(shape, arch)
    per_tile = max(0, fetch - distance * window)
    return (shape.n // arch.blen) * per_tile


@dataclass(frozen=True)
class Schedule:
    """One graph-wide candidate: tiling, placement, distances, fusion.

    k_tiles holds the per-op contraction tile (0 for non-matrix ops); the
    weight-streaming flow consumes K in one pass, so each entry equals the
    op's K and the feasibility re-check enforces it.
    """

    k_tiles: tuple
    out_tile: int
    prefetch_distance: int
    fuse_pointwise: bool
    fusion_groups: tuple
    placement: tuple
    estimate: RooflineEstimate
    grid_index: int


def _fusion_groups(graph: tuple, fuse: bool) -> tuple:
    """Adjacent pointwise ops join their producing matrix op's group."""
    groups, current = [], []
    for i, op in enumerate(graph):
        if fuse and current and isinstance(op, PointwiseShape):
            current.append(i)
            continue
        if current:
            groups.append(tuple(current))
        current = [i]
    if current:
        groups.append(tuple(current))
    return tuple(groups)


def check_schedule(
    sched: Schedule, graph, arch: ArchConfig, hbm: HbmConfig | None = None
) -> list:
    """Re-check every constraint a schedule must satisfy; [] means feasible."""
    graph = _as_graph(graph)
    violations = []
    if sched.prefetch_distance < 0:
        violations.append("prefetch distance must be >= 0")
    if sched.out_tile != arch.blen:
        violations.append(f"output tile {sched.out_tile} != BLEN {arch.blen}")
    if len(sched.k_tiles) != len(graph):
        violations.append("k_tiles length does not match the graph")
        return violations
    slots = sched.prefetch_distance + 1
    for i, op in enumerate(graph):
        if isinstance(op, GemmShape):
            if op.m % arch.blen or op.n % arch.blen or op.k % arch.mlen:
                violations.append(
                    f"op{i}: {op.m}x{op.k}x{op.n} not tileable at BLEN={arch.blen}, MLEN={arch.mlen}"
                )
                continue
            if sched.k_tiles[i] != op.k:
                violations.append(
                    f"op{i}: contraction tile {sched.k_tiles[i]} != K {op.k} "
                    "(weight streaming consumes K in one pass)"
                )
            km = op.k // arch.mlen
            ring_rows = slots * km * arch.blen
            if ring_rows > arch.m_rows:
                violations.append(
                    f"op{i}: weight ring {ring_rows} rows exceeds matrix SRAM depth {arch.m_rows}"
                )
            v_need = op.m * km + op.m * max(op.n // arch.vlen, 1)
            if v_need > arch.v_rows:
                violations.append(
                    f"op{i}: {v_need} activation+output rows exceed vector SRAM depth {arch.v_rows}"
                )
        elif isinstance(op, AttentionShape):
            if op.head_dim > arch.vlen:
                violations.append(f"op{i}: head_dim {op.head_dim} exceeds VLEN {arch.vlen}")
            kv_rows = op.seq + -(-op.seq // arch.mlen) * arch.mlen
            if kv_rows > arch.m_rows:
                violations.append(
                    f"op{i}: KV residency {kv_rows} rows exceeds matrix SRAM depth {arch.m_rows}"
                )
            if op.seq + 3 * arch.blen + 1 > arch.v_rows:
                violations.append(
                    f"op{i}: query+scratch rows exceed vector SRAM depth {arch.v_rows}"
                )
    return violations


def _as_graph(graph) -> tuple:
    if isinstance(graph, (GemmShape, AttentionShape, PointwiseShape)):
        return (graph,)
    return tuple(graph)


def _graph_estimate(
    graph: tuple, arch: ArchConfig, hbm: HbmConfig, weight_fmt: DataFormat,
    distance: int, groups: tuple,
) -> RooflineEstimate:
    peak = 2.0 * arch.mlen * arch.blen
    flops = nbytes = 0
    cycles = 0.0
    fused = {i for g in groups for i in g[1:]}
    for i, op in enumerate(graph):
        f, vec, b = _op_traffic(op, arch, weight_fmt)
        if i in fused:
            b //= 2  # fused epilogue reads its input on chip
        flops += f + vec
        nbytes += b
        cycles += max(f / peak + vec / arch.vlen, b / hbm.bytes_per_cycle)
        if isinstance(op, GemmShape):
            cycles += gemm_stall_estimate(op, arch, hbm, distance, weight_fmt)
            cycles += min(distance, op.n // arch.blen) * (
                gemm_tile_fetch(op, arch, hbm, weight_fmt) - hbm.fixed_latency
            )
    compute = flops / peak
    tag = "compute" if compute >= nbytes / hbm.bytes_per_cycle else "memory"
    return RooflineEstimate(flops, nbytes, int(-(-cycles // 1)), tag)


def schedule_search(
    graph,
    arch: ArchConfig,
    hbm: HbmConfig | None = None,
    top_k: int = 4,
    *,
    distances: tuple = (0, 1, 2, 4, 8),
    fusion: tuple = (False, True),
    weight_fmt: DataFormat | None = None,
) -> list:
    """Enumerate the candidate grid, drop infeasible points, rank the rest.

    Ranking is by estimated cycles with the grid index breaking ties, so
    results are deterministic however candidates are evaluated.
    """
    graph = _as_graph(graph)
    hbm = hbm or HbmConfig()
    weight_fmt = weight_fmt or arch.act_fmt
    k_tiles = tuple(op.k if isinstance(op, GemmShape) else 0 for op in graph)

    feasible, violations = [], []
    index = 0
    for fuse in fusion:
        for distance in distances:
            groups = _fusion_groups(graph, fuse)
            slots = distance + 1
            placement = []
            for i, op in enumerate(graph):
                if isinstance(op, GemmShape):
                    rows = (op.k // arch.mlen) * arch.blen
                    placement.append((f"op{i}.w", f"m[0:{slots * rows}] ring, {slots} slots"))
                    placement.append((f"op{i}.x", f"v[0:{op.m * (op.k // arch.mlen)}]"))
                elif isinstance(op, AttentionShape):
                    placement.append((f"op{i}.kv", "m-sram resident, transposed K view"))
                    placement.append((f"op{i}.q", "v-sram resident"))
            cand = Schedule(
                k_tiles=k_tiles,
                out_tile=arch.blen,
                prefetch_distance=distance,
                fuse_pointwise=fuse,
                fusion_groups=groups,
                placement=tuple(placement),
                estimate=_graph_estimate(graph, arch, hbm, weight_fmt, distance, groups),
                grid_index=index,
            )
            index += 1
            bad = check_schedule(cand, graph, arch, hbm)
            if bad:
                violations.extend(bad)
            else:
                feasible.append(cand)
    if not feasible:
        lines = sorted(set(violations))
        raise LoweringError("no feasible schedule: " + "; ".join(lines))
    feasible.sort(key=lambda s: (s.estimate.est_cycles, s.grid_index))
    return feasible[:top_k]

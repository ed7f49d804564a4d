"""Multi-objective search over the co-design space.

Each feasible candidate gets three objectives, all lower-better: a
quantized toy-decoder output error against its float64 reference, a
latency estimate (roofline, or the cycle simulator for front candidates),
and an analytic area proxy in arbitrary units calibrated for ordering
only. Weights ship pre-quantized MXINT4; the candidate picks activation
and KV formats, so the FP setting moves area and not accuracy.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from math import isfinite
from pathlib import Path

import numpy as np

from ..compiler import (
    AttentionShape,
    GemmShape,
    LoweringError,
    ModelSpec,
    PointwiseShape,
    build_gemm_program,
    gemm_stall_estimate,
    make_random_weights,
    reference_attention,
    reference_decoder,
    rmsnorm,
    roofline_estimate,
    rope_tables,
    silu,
)
from ..compiler.model import apply_rope
from ..formats import FP_SETTINGS, DataFormat
from ..hbm import HbmConfig
from ..machine import ArchConfig, Machine, MachineError
from ..quantizer import quantize_activations, rtn_quantize
from .space import (
    FIELD_NAMES,
    FP_SRAM_DEPTH,
    INT_SRAM_DEPTH,
    MATRIX_SRAM_DEPTH,
    VECTOR_SRAM_DEPTH,
    DesignPoint,
    check_constraints,
    mutate,
    port_bits,
    random_point,
)

WEIGHT_BITS = 4  # weights are stored pre-quantized MXINT4
SAMPLERS = ("random", "greedy-local")
FIDELITIES = ("roofline", "simulate")
SEED_FRACTION = 0.3  # greedy-local: leading share of budget drawn uniformly
MUTATE_RATE = 0.15  # greedy-local: chance of stepping each additional field

# Per-unit costs of the area proxy (dimensionless; ordering only).
MAC_UNIT_COST = 1.0
SRAM_BIT_COST = 0.25


class SearchError(RuntimeError):
    """Exploration cannot produce a result (e.g. nothing feasible)."""


@dataclass(frozen=True)
class Workload:
    """Toy decoder the objectives are measured on.

    layers == 0 or seq == 0 means an empty workload: nothing to run,
    zero latency and zero output error.
    """

    hidden: int = 128
    ffn: int = 256
    heads: int = 4
    kv_heads: int = 2
    head_dim: int = 32
    vocab: int = 256
    layers: int = 2
    seq: int = 32

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ValueError(f"{name} must be >= 0")
        if not self.is_empty and self.hidden != self.heads * self.head_dim:
            raise ValueError("hidden must equal heads * head_dim")

    @property
    def is_empty(self) -> bool:
        return self.layers == 0 or self.seq == 0

    def to_spec(self) -> ModelSpec:
        return ModelSpec(
            d=self.hidden,
            layers=self.layers,
            heads=self.heads,
            kv_heads=self.kv_heads,
            head_dim=self.head_dim,
            ffn=self.ffn,
            vocab=self.vocab,
            seq=self.seq,
        )


TOY_WORKLOAD = Workload()


@dataclass(frozen=True)
class Objectives:
    """All lower-better, finite and non-negative."""

    accuracy_proxy: float
    latency_seconds: float
    area_proxy: float

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not isfinite(value) or value < 0.0:
                raise ValueError(f"{name}={value} must be finite and >= 0")

    def as_tuple(self) -> tuple:
        return (self.accuracy_proxy, self.latency_seconds, self.area_proxy)


def arch_from_point(p: DesignPoint) -> ArchConfig:
    return ArchConfig(
        blen=p.blen,
        mlen=p.mlen,
        vlen=p.vlen,
        int_width=p.int_data_width,
        act_fmt=p.act_format,
        kv_fmt=p.kv_format,
        fp_setting=FP_SETTINGS[p.fp_setting],
    )


# -- accuracy proxy ---------------------------------------------------------------

_CASE_CACHE: dict = {}
_ACC_CACHE: dict = {}


def _toy_case(workload: Workload, seed: int):
    key = (workload, seed)
    if key not in _CASE_CACHE:
        spec = workload.to_spec()
        weights = make_random_weights(spec, seed)
        tokens = np.random.default_rng([seed, 1]).integers(0, spec.vocab, size=spec.seq)
        _CASE_CACHE[key] = (spec, weights, tokens, reference_decoder(spec, weights, tokens))
    return _CASE_CACHE[key]


def _quantized_logits(spec, weights, tokens, act_fmt, kv_fmt, weight_fmt):
    """Decoder forward with format round-trips at every datapath cast.

    Matrix operands pass through the activation format, K/V through the
    KV format; rmsnorm/softmax/silu stay float64 (the FP setting is not
    part of the accuracy proxy).
    """
    wq = {
        name: rtn_quantize(wt, weight_fmt) if wt.ndim == 2 else wt
        for name, wt in weights.items()
    }

    def qa(t):
        return quantize_activations(t, act_fmt)

    cos, sin = rope_tables(spec.seq, spec.head_dim)
    dh, g = spec.head_dim, spec.group_size
    x = wq["embed"][np.asarray(tokens)]
    for layer in range(spec.layers):
        p = f"L{layer}."
        xn = qa(rmsnorm(x, weights[p + "rms1"]))
        q = apply_rope(xn @ wq[p + "wq"].T, cos, sin, dh)
        k = apply_rope(xn @ wq[p + "wk"].T, cos, sin, dh)
        v = xn @ wq[p + "wv"].T
        q = qa(q)
        k = quantize_activations(k, kv_fmt)
        v = quantize_activations(v, kv_fmt)
        attn = np.empty_like(q)
        for h in range(spec.heads):
            kv = h // g
            attn[:, h * dh : (h + 1) * dh] = reference_attention(
                q[:, h * dh : (h + 1) * dh],
                k[:, kv * dh : (kv + 1) * dh],
                v[:, kv * dh : (kv + 1) * dh],
            )
        x = x + qa(attn) @ wq[p + "wo"].T
        xn = qa(rmsnorm(x, weights[p + "rms2"]))
        up = silu(xn @ wq[p + "w_up"].T)
        gate = xn @ wq[p + "w_gate"].T
        x = x + qa(up * gate) @ wq[p + "w_down"].T
    return qa(x) @ wq["lm_head"].T


def accuracy_proxy(p: DesignPoint, workload: Workload = TOY_WORKLOAD, seed: int = 0) -> float:
    """Relative MSE of the quantized toy-decoder logits (0 when empty)."""
    if workload.is_empty:
        return 0.0
    key = (workload, seed, p.act_width, p.kv_width, p.blen)
    if key not in _ACC_CACHE:
        spec, weights, tokens, ref = _toy_case(workload, seed)
        logits = _quantized_logits(
            spec, weights, tokens, p.act_format, p.kv_format,
            DataFormat.mxint(WEIGHT_BITS, p.blen),
        )
        _ACC_CACHE[key] = float(np.mean((logits - ref) ** 2) / np.mean(ref**2))
    return _ACC_CACHE[key]


# -- latency ----------------------------------------------------------------------


def _workload_ops(workload: Workload, p: DesignPoint) -> list:
    """(op, count) pairs with dims padded up to the candidate's tiles."""
    if workload.is_empty:
        return []

    def up(x, q):
        return -(-x // q) * q

    w = workload
    m = up(w.seq, p.blen)
    d, dkv = w.hidden, w.kv_heads * w.head_dim

    def gemm(k, n):
        return GemmShape(m, up(k, p.mlen), up(n, p.blen))

    ops = [
        (gemm(d, d), 2 * w.layers),  # wq, wo
        (gemm(d, dkv), 2 * w.layers),  # wk, wv
        (gemm(d, w.ffn), 2 * w.layers),  # up, gate
        (gemm(w.ffn, d), w.layers),
        (AttentionShape(w.seq, w.head_dim, heads=w.heads), w.layers),
        (PointwiseShape(m, 2 * (d + w.ffn)), w.layers),
        (gemm(d, w.vocab), 1),
    ]
    return ops


def _gemm_distance(p: DesignPoint, shape: GemmShape, arch: ArchConfig) -> int:
    # the prefetch amount is matrix SRAM rows ahead; a weight tile is
    # (k / MLEN) * BLEN rows
    return p.hbm_m_prefetch // ((shape.k // arch.mlen) * arch.blen)


def _latency_cycles(p: DesignPoint, workload: Workload, hbm: HbmConfig, fidelity: str) -> int:
    arch = arch_from_point(p)
    wf = DataFormat.mxint(WEIGHT_BITS, p.blen)
    total = 0
    for op, count in _workload_ops(workload, p):
        if isinstance(op, GemmShape):
            distance = _gemm_distance(p, op, arch)
            if fidelity == "simulate":
                # timing is data independent, so zero operands suffice
                art = build_gemm_program(
                    arch,
                    np.zeros((op.m, op.k)),
                    np.zeros((op.n, op.k)),
                    weight_fmt=wf,
                    prefetch_distance=distance,
                    hbm_config=hbm,
                )
                cycles = Machine(arch, image=art.image).run(art.program).cycles
            else:
                est = roofline_estimate(op, arch, hbm, weight_fmt=wf)
                cycles = est.est_cycles + gemm_stall_estimate(op, arch, hbm, distance, wf)
        else:
            cycles = roofline_estimate(op, arch, hbm, weight_fmt=wf).est_cycles
            if isinstance(op, AttentionShape):
                rows = op.heads * op.seq
                cycles += -(-rows // p.hbm_v_prefetch) * hbm.fixed_latency
            else:
                cycles += -(-op.rows // p.hbm_v_writeback) * hbm.fixed_latency
        total += cycles * count
    return total


# -- area -------------------------------------------------------------------------


def area_proxy(p: DesignPoint) -> float:
    """Analytic area in arbitrary units: datapath units plus SRAM bits.

    Monotone in PE count (MLEN * BLEN), in every memory size, and in the
    element widths; not calibrated to any process node.
    """
    act_bits = p.act_format.element_bits
    fpf = p.fp_format
    fp_unit = (fpf.mantissa_bits + 1) ** 2 + fpf.exponent_bits**2 + 8
    matrix_row_bits = port_bits(p.mlen, act_bits, p.blen)
    sram_bits = (
        MATRIX_SRAM_DEPTH * matrix_row_bits
        + VECTOR_SRAM_DEPTH * p.vlen * fpf.element_bits
        + FP_SRAM_DEPTH * fpf.element_bits
        + INT_SRAM_DEPTH * p.int_data_width
        + p.hbm_m_prefetch * matrix_row_bits
        + (p.hbm_v_prefetch + p.hbm_v_writeback) * p.vlen * fpf.element_bits
    )
    units = p.mlen * p.blen * act_bits**2 + p.vlen * fp_unit + 4 * p.int_data_width**2
    return MAC_UNIT_COST * units + SRAM_BIT_COST * sram_bits


# -- evaluation -------------------------------------------------------------------


def evaluate(
    p: DesignPoint,
    workload: Workload = TOY_WORKLOAD,
    fidelity: str = "roofline",
    *,
    seed: int = 0,
    hbm: HbmConfig | None = None,
) -> Objectives:
    """Objectives of one feasible candidate; deterministic per seed."""
    if fidelity not in FIDELITIES:
        raise ValueError(f"fidelity must be one of {FIDELITIES}")
    bad = check_constraints(p, head_dim=workload.head_dim, hidden_dim=workload.hidden)
    if bad:
        raise SearchError("infeasible design point: " + "; ".join(bad))
    hbm = hbm or HbmConfig()
    cycles = _latency_cycles(p, workload, hbm, fidelity)
    return Objectives(
        accuracy_proxy=accuracy_proxy(p, workload, seed),
        latency_seconds=cycles / (hbm.clock_ghz * 1e9),
        area_proxy=area_proxy(p),
    )


# -- front extraction -------------------------------------------------------------


def pareto_front(values) -> np.ndarray:
    """Indices of points not dominated (<= everywhere, < somewhere)."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] == 0:
        raise ValueError("need a nonempty (points, objectives) array")
    le = (v[:, None, :] <= v[None, :, :]).all(axis=-1)
    lt = (v[:, None, :] < v[None, :, :]).any(axis=-1)
    dominated = (le & lt).any(axis=0)
    return np.flatnonzero(~dominated)


def hypervolume_2d(values, ref) -> float:
    """Area dominated by a 2-D lower-better front, up to the ref point."""
    v = np.asarray(values, dtype=np.float64).reshape(-1, 2)
    ref = np.asarray(ref, dtype=np.float64)
    if len(v):
        v = v[(v < ref).all(axis=1)]
    if not len(v):
        return 0.0
    v = v[pareto_front(v)]
    v = v[np.argsort(v[:, 0])]
    hv, y_prev = 0.0, ref[1]
    for x, y in v:
        hv += (ref[0] - x) * (y_prev - y)
        y_prev = y
    return float(hv)


# -- exploration ------------------------------------------------------------------


@dataclass(frozen=True)
class TraceRow:
    index: int
    point: DesignPoint
    feasible: bool
    violations: str
    fidelity: str
    objectives: Objectives | None


@dataclass
class ExploreResult:
    workload: Workload
    sampler: str
    seed: int
    budget: int
    trace: list
    points: list  # unique feasible candidates, submission order
    objectives: list
    front: tuple  # indices into points, ascending
    front_fidelity: tuple


def explore(
    workload: Workload = TOY_WORKLOAD,
    budget: int = 50,
    sampler: str = "random",
    seed: int = 0,
    *,
    simulate_front: bool = True,
    hbm: HbmConfig | None = None,
) -> ExploreResult:
    """Draw `budget` candidates, evaluate the feasible ones, extract the front.

    random: uniform draws. greedy-local: a leading uniform batch for
    coverage, then front expansion: mutation alternates between the
    front member currently best in one objective (cycling through the
    objectives, to push each corner outward) and a random front member
    (to fill the middle); a nondominated mutant joins the front it was
    grown from. Corner mutations keep momentum: a step that improved a
    corner is repeated until it stops helping. Search runs at roofline
    fidelity; front candidates are then re-evaluated on the simulator
    when possible (front membership is kept from the search).
    """
    if sampler not in SAMPLERS:
        raise ValueError(f"sampler must be one of {SAMPLERS}")
    if budget < 1:
        raise ValueError("budget must be >= 1")
    hbm = hbm or HbmConfig()
    rng = np.random.default_rng(seed)
    seen: dict = {}
    points, objectives, trace = [], [], []
    front = np.empty(0, dtype=np.int64)

    seeding = -(-budget * SEED_FRACTION // 1)
    rotation = 0
    for i in range(budget):
        if sampler == "greedy-local" and i >= seeding and len(front):
            if rotation % 2 == 0:
                vals = np.array([objectives[j].as_tuple() for j in front])
                base = points[int(front[int(np.argmin(vals[:, (rotation // 2) % 3]))])]
            else:
                base = points[int(front[int(rng.integers(len(front)))])]
            rotation += 1
            cand = mutate(base, rng, MUTATE_RATE)
        else:
            cand = random_point(rng)
        bad = check_constraints(cand, head_dim=workload.head_dim, hidden_dim=workload.hidden)
        if bad:
            trace.append(TraceRow(i, cand, False, "; ".join(bad), "", None))
            continue
        if cand not in seen:
            seen[cand] = evaluate(cand, workload, "roofline", seed=seed, hbm=hbm)
            points.append(cand)
            objectives.append(seen[cand])
            front = pareto_front([o.as_tuple() for o in objectives])
        trace.append(TraceRow(i, cand, True, "", "roofline", seen[cand]))
    if not points:
        raise SearchError(f"no feasible design point in {budget} draws")
    fidelity = ["roofline"] * len(front)
    if simulate_front:
        for pos, idx in enumerate(front):
            try:
                objectives[idx] = evaluate(points[idx], workload, "simulate", seed=seed, hbm=hbm)
                fidelity[pos] = "simulate"
            except (LoweringError, MachineError):
                pass  # keep the roofline numbers for unbuildable kernels
    return ExploreResult(
        workload,
        sampler,
        seed,
        budget,
        trace,
        points,
        objectives,
        tuple(int(i) for i in front),
        tuple(fidelity),
    )


# -- artifacts --------------------------------------------------------------------

TRACE_COLUMNS = (
    "index",
    *FIELD_NAMES,
    "feasible",
    "violations",
    "fidelity",
    "accuracy_proxy",
    "latency_seconds",
    "area_proxy",
)


def write_trace_csv(result: ExploreResult, path) -> None:
    """One row per drawn candidate, objectives blank when infeasible."""
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(TRACE_COLUMNS)
        for row in result.trace:
            vals = ("", "", "") if row.objectives is None else tuple(
                repr(v) for v in row.objectives.as_tuple()
            )
            wr.writerow(
                (row.index, *row.point.as_dict().values(),
                 int(row.feasible), row.violations, row.fidelity, *vals)
            )


def write_front_json(result: ExploreResult, path) -> None:
    doc = {
        "workload": asdict(result.workload),
        "sampler": result.sampler,
        "seed": result.seed,
        "budget": result.budget,
        "front": [
            {
                "point": result.points[i].as_dict(),
                "fidelity": fid,
                "objectives": asdict(result.objectives[i]),
            }
            for i, fid in zip(result.front, result.front_fidelity)
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")

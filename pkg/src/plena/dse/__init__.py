"""Design-space exploration: constraints, objectives, Pareto search."""

from .explore import (
    FIDELITIES,
    SAMPLERS,
    TOY_WORKLOAD,
    TRACE_COLUMNS,
    WEIGHT_BITS,
    ExploreResult,
    Objectives,
    SearchError,
    TraceRow,
    Workload,
    accuracy_proxy,
    arch_from_point,
    area_proxy,
    evaluate,
    explore,
    hypervolume_2d,
    pareto_front,
    write_front_json,
    write_trace_csv,
)
from .space import (
    ACT_SCALE_WIDTH,
    BLEN_RANGE,
    ELEMENT_CHOICES,
    FIELD_NAMES,
    FP_CHOICES,
    INT_WIDTH_CHOICES,
    MLEN_RANGE,
    PORT_BIT_LIMIT,
    PREFETCH_RANGE,
    VLEN_RANGE,
    DesignPoint,
    check_constraints,
    mutate,
    port_bits,
    random_point,
)

__all__ = [
    "FIDELITIES",
    "SAMPLERS",
    "TOY_WORKLOAD",
    "TRACE_COLUMNS",
    "WEIGHT_BITS",
    "ExploreResult",
    "Objectives",
    "SearchError",
    "TraceRow",
    "Workload",
    "accuracy_proxy",
    "arch_from_point",
    "area_proxy",
    "evaluate",
    "explore",
    "hypervolume_2d",
    "pareto_front",
    "write_front_json",
    "write_trace_csv",
    "ACT_SCALE_WIDTH",
    "BLEN_RANGE",
    "ELEMENT_CHOICES",
    "FIELD_NAMES",
    "FP_CHOICES",
    "INT_WIDTH_CHOICES",
    "MLEN_RANGE",
    "PORT_BIT_LIMIT",
    "PREFETCH_RANGE",
    "VLEN_RANGE",
    "DesignPoint",
    "check_constraints",
    "mutate",
    "port_bits",
    "random_point",
]

"""Decoder model description and toy weight generation.

The compiler consumes a compact JSON model spec plus a dict of float64
weight arrays; there is no interchange-format parser. Weight conventions
are (out_features, in_features) with y = x @ W.T throughout.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class ModelSpec:
    """Shape of a decoder-only transformer with GQA."""

    d: int
    layers: int
    heads: int
    kv_heads: int
    head_dim: int
    ffn: int
    vocab: int
    seq: int
    batch: int = 1

    def __post_init__(self):
        if self.d != self.heads * self.head_dim:
            raise ValueError(f"d={self.d} != heads*head_dim={self.heads * self.head_dim}")
        if self.heads % self.kv_heads:
            raise ValueError(f"heads={self.heads} not a multiple of kv_heads={self.kv_heads}")
        for name in ("d", "layers", "heads", "kv_heads", "head_dim", "ffn", "vocab", "seq"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.batch != 1:
            raise ValueError("only batch 1 is modeled")

    @property
    def d_kv(self) -> int:
        return self.kv_heads * self.head_dim

    @property
    def group_size(self) -> int:
        """Query heads per KV head."""
        return self.heads // self.kv_heads

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        return cls(**json.loads(text))


def layer_weight_names(layer: int):
    base = f"L{layer}."
    return [base + n for n in ("rms1", "wq", "wk", "wv", "wo", "rms2", "w_up", "w_gate", "w_down")]


def make_random_weights(spec: ModelSpec, seed: int = 0) -> dict:
    """Seeded toy weights scaled to keep activations near unit magnitude."""
    rng = np.random.default_rng(seed)

    def w(out, in_):
        return rng.normal(size=(out, in_)) / np.sqrt(in_)

    weights = {"embed": rng.normal(size=(spec.vocab, spec.d))}
    for layer in range(spec.layers):
        p = f"L{layer}."
        weights[p + "rms1"] = 1.0 + 0.1 * rng.normal(size=spec.d)
        weights[p + "wq"] = w(spec.d, spec.d)
        weights[p + "wk"] = w(spec.d_kv, spec.d)
        weights[p + "wv"] = w(spec.d_kv, spec.d)
        weights[p + "wo"] = w(spec.d, spec.d)
        weights[p + "rms2"] = 1.0 + 0.1 * rng.normal(size=spec.d)
        weights[p + "w_up"] = w(spec.ffn, spec.d)
        weights[p + "w_gate"] = w(spec.ffn, spec.d)
        weights[p + "w_down"] = w(spec.d, spec.ffn)
    weights["lm_head"] = w(spec.vocab, spec.d)
    return weights


def rope_tables(seq: int, head_dim: int, base: float = 10000.0):
    """cos/sin tables (seq, head_dim), pairing lane 2i with 2i+1."""
    half = head_dim // 2
    inv_freq = base ** (-np.arange(half) / half)
    angles = np.outer(np.arange(seq), inv_freq)  # (seq, half)
    cos = np.repeat(angles, 2, axis=1)
    return np.cos(cos), np.sin(cos)


def rope_rotation_matrix(head_dim: int) -> np.ndarray:
    """R with rotate_half(x) = x @ R.T: pairs (2i, 2i+1) -> (-x[2i+1], x[2i])."""
    r = np.zeros((head_dim, head_dim))
    for i in range(0, head_dim, 2):
        r[i, i + 1] = -1.0
        r[i + 1, i] = 1.0
    return r


def apply_rope(x: np.ndarray, cos: np.ndarray, sin: np.ndarray, head_dim: int) -> np.ndarray:
    """Rotary embedding on (seq, n*head_dim), same rotation per head."""
    seq, width = x.shape
    reps = width // head_dim
    c = np.tile(cos[:seq], (1, reps))
    s = np.tile(sin[:seq], (1, reps))
    r = rope_rotation_matrix(head_dim)
    r_full = np.kron(np.eye(reps), r)
    return x * c + (x @ r_full.T) * s

"""Double-precision references for the lowered computations."""

import numpy as np

from .model import ModelSpec, apply_rope, rope_tables

RMS_EPS = 1e-6


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def reference_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """softmax(q k^T / sqrt(dh)) v for one head, float64, no mask."""
    scale = 1.0 / np.sqrt(q.shape[-1])
    return softmax((q @ k.T) * scale) @ v


def rmsnorm(x: np.ndarray, weight: np.ndarray) -> np.ndarray:
    ms = np.mean(x * x, axis=-1, keepdims=True)
    return x / np.sqrt(ms + RMS_EPS) * weight


def silu(x: np.ndarray) -> np.ndarray:
    return x / (1.0 + np.exp(-x))


def reference_decoder(spec: ModelSpec, weights: dict, tokens) -> np.ndarray:
    """Logits (seq, vocab) of the decoder flow the compiler lowers.

    Attention is unmasked and the MLP applies SiLU to the up projection
    with an elementwise gate, mirroring the lowered dataflow exactly.
    """
    tokens = np.asarray(tokens)
    if tokens.ndim != 1 or len(tokens) > spec.seq:
        raise ValueError(f"tokens must be 1-D with length <= {spec.seq}")
    if tokens.min() < 0 or tokens.max() >= spec.vocab:
        raise ValueError("token id outside vocabulary")
    cos, sin = rope_tables(spec.seq, spec.head_dim)
    dh, g = spec.head_dim, spec.group_size

    x = weights["embed"][tokens]
    for layer in range(spec.layers):
        p = f"L{layer}."
        xn = rmsnorm(x, weights[p + "rms1"])
        q = xn @ weights[p + "wq"].T
        k = xn @ weights[p + "wk"].T
        v = xn @ weights[p + "wv"].T
        q = apply_rope(q, cos, sin, dh)
        k = apply_rope(k, cos, sin, dh)
        attn = np.empty_like(q)
        for h in range(spec.heads):
            kv = h // g
            attn[:, h * dh : (h + 1) * dh] = reference_attention(
                q[:, h * dh : (h + 1) * dh],
                k[:, kv * dh : (kv + 1) * dh],
                v[:, kv * dh : (kv + 1) * dh],
            )
        x = x + attn @ weights[p + "wo"].T
        xn = rmsnorm(x, weights[p + "rms2"])
        up = silu(xn @ weights[p + "w_up"].T)
        gate = xn @ weights[p + "w_gate"].T
        x = x + (up * gate) @ weights[p + "w_down"].T
    return x @ weights["lm_head"].T

"""Multi-stage convolution-transformer segmentation network.

Stage 1 is a dilated temporal convolution stack over the input features;
every later stage refines the previous stage's prediction from the
concatenation of its softmax probabilities and its attention-enhanced
stage feature. Forward and backward passes are explicit numpy/numba code;
gradients are exercised against finite differences in the tests.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import backend
from .datamodel import NUM_CLASSES, FrameLabelSequence, ModelConfig

ATTENTION_EPS = 1e-9

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class SegmentationOutput:
    per_stage_logits: tuple[np.ndarray, ...]
    final_feature: np.ndarray
    predicted_labels: FrameLabelSequence


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_backward(probs: np.ndarray, dprobs: np.ndarray) -> np.ndarray:
    inner = (dprobs * probs).sum(axis=1, keepdims=True)
    return probs * (dprobs - inner)


def feature_map(x: np.ndarray) -> np.ndarray:
    """elu(x) + 1; strictly positive, so attention denominators never vanish."""
    return np.where(x > 0, x + 1.0, np.exp(np.minimum(x, 0.0)))


def feature_map_grad(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


# ---------------------------------------------------------------------------
# attention


def _project_qkv(f, wq, wk, wv):
    return f @ wq.T, f @ wk.T, f @ wv.T


def linear_attention(f: np.ndarray, wq: np.ndarray, wk: np.ndarray, wv: np.ndarray,
                     eps: float = ATTENTION_EPS) -> np.ndarray:
    """O(T) kernelized self-attention over the stage feature ``f`` (T x D)."""
    out, _ = linear_attention_with_cache(f, wq, wk, wv, eps)
    return out


def linear_attention_with_cache(f, wq, wk, wv, eps=ATTENTION_EPS):
    if f.ndim != 2:
        raise ValueError(f"stage feature must be T x D, got shape {f.shape}")
    d = wq.shape[1]
    if f.shape[1] != d or wq.shape != wk.shape or wq.shape != wv.shape:
        raise ValueError("attention weights must be square and match the feature dim")
    q, k, v = _project_qkv(f, wq, wk, wv)
    p = feature_map(q)
    kp = feature_map(k)
    out, num, den, s, z = backend.linear_attention_core(p, kp, v, eps)
    cache = {"f": f, "q": q, "k": k, "v": v, "p": p, "kp": kp,
             "num": num, "den": den, "s": s, "z": z}
    return out, cache


def attention_backward(cache, wq, wk, wv, dout):
    """Gradients of the attention output w.r.t. (f, wq, wk, wv)."""
    dp, dkp, dv = backend.linear_attention_core_backward(
        cache["p"], cache["kp"], cache["v"],
        cache["num"], cache["den"], cache["s"], cache["z"], dout,
    )
    dq = dp * feature_map_grad(cache["q"])
    dk = dkp * feature_map_grad(cache["k"])
    f = cache["f"]
    dwq = dq.T @ f
    dwk = dk.T @ f
    dwv = dv.T @ f
    df = dq @ wq + dk @ wk + dv @ wv
    return df, dwq, dwk, dwv


def quadratic_attention_reference(f, wq, wk, wv, eps=ATTENTION_EPS,
                                  block: int = 1024) -> np.ndarray:
    """O(T^2) attention with the explicit similarity matrix; same kernel,
    same output contract as linear_attention. Row blocks cap memory."""
    if f.ndim != 2 or f.shape[1] != wq.shape[1]:
        raise ValueError(f"stage feature must be T x D matching the weights, got {f.shape}")
    q, k, v = _project_qkv(f, wq, wk, wv)
    p = feature_map(q)
    kp = feature_map(k)
    num_frames = f.shape[0]
    out = np.empty_like(v)
    for lo in range(0, num_frames, block):
        hi = min(num_frames, lo + block)
        sim = p[lo:hi] @ kp.T
        out[lo:hi] = (sim @ v) / (sim.sum(axis=1, keepdims=True) + eps)
    return out


# ---------------------------------------------------------------------------
# stages


def init_stage_params(rng: np.random.Generator, in_dim: int, cfg: ModelConfig,
                      with_attention: bool) -> dict[str, np.ndarray]:
    d = cfg.hidden_dim
    k = cfg.kernel_size

    def he(shape, fan_in):
        return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)

    params = {
        "in_w": he((d, in_dim), in_dim),
        "in_b": np.zeros(d),
    }
    for l in range(cfg.layers_per_stage):
        params[f"layer{l}/dil_w"] = he((d, d, k), d * k)
        params[f"layer{l}/dil_b"] = np.zeros(d)
        params[f"layer{l}/pw_w"] = he((d, d), d)
        params[f"layer{l}/pw_b"] = np.zeros(d)
    params["out_w"] = he((NUM_CLASSES, d), d)
    params["out_b"] = np.zeros(NUM_CLASSES)
    if with_attention:
        params["att_wq"] = he((d, d), d)
        params["att_wk"] = he((d, d), d)
        params["att_wv"] = he((d, d), d)
    return params


def init_network_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """All segmentation parameters, keyed ``stage{s}/<name>``."""
    params = {}
    for s in range(cfg.stages):
        in_dim = cfg.input_dim if s == 0 else NUM_CLASSES + cfg.hidden_dim
        with_attention = s > 0 and cfg.attention_mode != "off"
        for name, value in init_stage_params(rng, in_dim, cfg, with_attention).items():
            params[f"stage{s}/{name}"] = value
    return params


def stage_forward(x: np.ndarray, params: dict, prefix: str, cfg: ModelConfig):
    """One stage: 1x1 input projection, dilated residual layers, classifier.

    Returns (logits T x C, feature T x D_n, cache)."""
    f = x @ params[f"{prefix}/in_w"].T + params[f"{prefix}/in_b"]
    layer_caches = []
    for l in range(cfg.layers_per_stage):
        h = backend.dilated_conv_forward(
            f, params[f"{prefix}/layer{l}/dil_w"], params[f"{prefix}/layer{l}/dil_b"], 2**l
        )
        r = np.maximum(h, 0.0)
        layer_caches.append((f, h, r))
        f = f + r @ params[f"{prefix}/layer{l}/pw_w"].T + params[f"{prefix}/layer{l}/pw_b"]
    logits = f @ params[f"{prefix}/out_w"].T + params[f"{prefix}/out_b"]
    cache = {"x": x, "layers": layer_caches, "feature": f}
    return logits, f, cache


def stage_backward(dlogits: np.ndarray, dfeature: np.ndarray, cache: dict,
                   params: dict, prefix: str, cfg: ModelConfig):
    """Returns (dx, grads) for one stage."""
    grads = {}
    feature = cache["feature"]
    grads[f"{prefix}/out_w"] = dlogits.T @ feature
    grads[f"{prefix}/out_b"] = dlogits.sum(axis=0)
    df = dfeature + dlogits @ params[f"{prefix}/out_w"]
    for l in reversed(range(cfg.layers_per_stage)):
        f_in, h, r = cache["layers"][l]
        pw_w = params[f"{prefix}/layer{l}/pw_w"]
        grads[f"{prefix}/layer{l}/pw_w"] = df.T @ r
        grads[f"{prefix}/layer{l}/pw_b"] = df.sum(axis=0)
        dr = df @ pw_w
        dh = dr * (h > 0)
        dxl, dw, db = backend.dilated_conv_backward(
            f_in, params[f"{prefix}/layer{l}/dil_w"], 2**l, dh
        )
        grads[f"{prefix}/layer{l}/dil_w"] = dw
        grads[f"{prefix}/layer{l}/dil_b"] = db
        df = df + dxl
    grads[f"{prefix}/in_w"] = df.T @ cache["x"]
    grads[f"{prefix}/in_b"] = df.sum(axis=0)
    dx = df @ params[f"{prefix}/in_w"]
    return dx, grads


def _enhanced_feature(feature, params, prefix, cfg):
    """Attention enhancement of the previous stage's feature (identity when off)."""
    if cfg.attention_mode == "off":
        return feature, None
    wq, wk, wv = params[f"{prefix}/att_wq"], params[f"{prefix}/att_wk"], params[f"{prefix}/att_wv"]
    if cfg.attention_mode == "quadratic-reference":
        out = quadratic_attention_reference(feature, wq, wk, wv)
        # Backward reuses the summary form; the two forwards compute the
        # same function, so the gradients coincide.
        _, cache = linear_attention_with_cache(feature, wq, wk, wv)
        return out, cache
    return linear_attention_with_cache(feature, wq, wk, wv)


def network_forward(features: np.ndarray, params: dict, cfg: ModelConfig,
                    want_cache: bool = False):
    """Run all stages; returns SegmentationOutput (and a cache when asked)."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != cfg.input_dim:
        raise ValueError(
            f"expected T x {cfg.input_dim} input features, got shape {x.shape}"
        )
    per_stage_logits = []
    stage_caches = []
    att_caches = []
    feature = None
    for s in range(cfg.stages):
        if s == 0:
            stage_in = x
            att_caches.append(None)
        else:
            probs = softmax(per_stage_logits[-1])
            enhanced, att_cache = _enhanced_feature(feature, params, f"stage{s}", cfg)
            att_caches.append(att_cache)
            stage_in = np.concatenate([probs, enhanced], axis=1)
        logits, feature, cache = stage_forward(stage_in, params, f"stage{s}", cfg)
        per_stage_logits.append(logits)
        stage_caches.append(cache)
    output = SegmentationOutput(
        per_stage_logits=tuple(per_stage_logits),
        final_feature=feature,
        predicted_labels=predict_labels_from_logits(per_stage_logits[-1]),
    )
    if not want_cache:
        return output
    cache = {"stage_caches": stage_caches, "att_caches": att_caches,
             "per_stage_logits": per_stage_logits}
    return output, cache


def network_backward(cache: dict, params: dict, cfg: ModelConfig,
                     dlogits_list, dfinal_feature: np.ndarray):
    """Backprop through every stage; returns (grads, dinput_features)."""
    grads: dict[str, np.ndarray] = {}
    n = cfg.stages
    extra_dlogits = [np.zeros_like(l) for l in cache["per_stage_logits"]]
    dfeature_carry = [None] * n
    dfeature_carry[n - 1] = np.asarray(dfinal_feature, dtype=np.float64)
    dx_input = None
    for s in reversed(range(n)):
        dlogits = np.asarray(dlogits_list[s], dtype=np.float64) + extra_dlogits[s]
        dfeature = dfeature_carry[s]
        if dfeature is None:
            dfeature = np.zeros_like(cache["stage_caches"][s]["feature"])
        dx, stage_grads = stage_backward(
            dlogits, dfeature, cache["stage_caches"][s], params, f"stage{s}", cfg
        )
        grads.update(stage_grads)
        if s == 0:
            dx_input = dx
            continue
        dprobs = dx[:, :NUM_CLASSES]
        denh = dx[:, NUM_CLASSES:]
        prev_logits = cache["per_stage_logits"][s - 1]
        extra_dlogits[s - 1] += softmax_backward(softmax(prev_logits), dprobs)
        if cfg.attention_mode == "off":
            dprev_feature = denh
        else:
            wq = params[f"stage{s}/att_wq"]
            wk = params[f"stage{s}/att_wk"]
            wv = params[f"stage{s}/att_wv"]
            dprev_feature, dwq, dwk, dwv = attention_backward(
                cache["att_caches"][s], wq, wk, wv, denh
            )
            grads[f"stage{s}/att_wq"] = dwq
            grads[f"stage{s}/att_wk"] = dwk
            grads[f"stage{s}/att_wv"] = dwv
        if dfeature_carry[s - 1] is None:
            dfeature_carry[s - 1] = dprev_feature
        else:
            dfeature_carry[s - 1] = dfeature_carry[s - 1] + dprev_feature
    return grads, dx_input


def predict_labels_from_logits(logits: np.ndarray) -> FrameLabelSequence:
    """Per-frame argmax; ties resolve to the lowest class index."""
    return FrameLabelSequence.from_frames(np.argmax(logits, axis=1))


def predict_labels(output: SegmentationOutput) -> FrameLabelSequence:
    return output.predicted_labels


# ---------------------------------------------------------------------------
# checkpoints


class CheckpointError(Exception):
    pass


def save_checkpoint(path: str, meta: dict, params: dict[str, np.ndarray]) -> None:
    """Versioned container: JSON metadata plus every named parameter tensor."""
    payload = {f"param/{k}": v for k, v in params.items()}
    payload["__meta__"] = np.frombuffer(
        json.dumps({"checkpoint_version": CHECKPOINT_VERSION, **meta}).encode("utf-8"),
        dtype=np.uint8,
    )
    np.savez(path, **payload)


def load_checkpoint(path: str) -> tuple[dict, dict[str, np.ndarray]]:
    with np.load(path) as data:
        if "__meta__" not in data:
            raise CheckpointError(f"{path}: missing metadata entry")
        meta = json.loads(bytes(data["__meta__"].tobytes()).decode("utf-8"))
        if meta.get("checkpoint_version") != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"{path}: unsupported checkpoint version {meta.get('checkpoint_version')}"
            )
        params = {
            k[len("param/"):]: data[k].astype(np.float64)
            for k in data.files if k.startswith("param/")
        }
    return meta, params


def check_param_shapes(params: dict[str, np.ndarray], expected: dict[str, tuple]) -> None:
    """Raise CheckpointError naming the first tensor whose shape disagrees."""
    for name, shape in expected.items():
        if name not in params:
            raise CheckpointError(f"checkpoint is missing tensor '{name}'")
        if tuple(params[name].shape) != tuple(shape):
            raise CheckpointError(
                f"tensor '{name}' has shape {tuple(params[name].shape)}, expected {tuple(shape)}"
            )
    for name in params:
        if name not in expected:
            raise CheckpointError(f"checkpoint has unexpected tensor '{name}'")

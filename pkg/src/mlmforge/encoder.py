"""Bidirectional transformer encoder with MLM and [CLS]-classifier heads.

Post-layer-norm stack: summed token/position/segment embeddings, then per
layer multi-head self-attention + residual + layer norm and a gelu FFN +
residual + layer norm. Padded positions are excluded from attention with
-inf pre-softmax scores. The MLM projection is weight-tied to the token
embedding matrix. The classifier head is dense -> tanh -> dense on the
position-0 hidden state of the last layer.

Forward functions optionally return a cache consumed by the matching
backward functions, which accumulate into ParameterStore gradients.
"""

from dataclasses import asdict, dataclass, replace

import numpy as np

from .errors import ConfigError, ShapeError
from .numerics import ParameterStore, ops
from .tokenizer import PAD_ID

INIT_STD = 0.02


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 4
    hidden: int = 128
    n_heads: int = 4
    ffn: int = 512
    vocab_size: int = 8192
    max_positions: int = 128
    n_segments: int = 2
    dropout: float = 0.1

    def __post_init__(self):
        for f in ("n_layers", "hidden", "n_heads", "ffn", "vocab_size", "max_positions", "n_segments"):
            if getattr(self, f) < 1:
                raise ConfigError(f"ModelConfig.{f} must be >= 1")
        if self.hidden % self.n_heads != 0:
            raise ConfigError(
                f"hidden ({self.hidden}) must be divisible by n_heads ({self.n_heads})"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    @classmethod
    def desk(cls, **overrides) -> "ModelConfig":
        """Minute-scale CPU default, structurally identical to the base layout."""
        return cls(**overrides)

    @classmethod
    def base(cls, **overrides) -> "ModelConfig":
        """The 12-layer / 768-hidden / 12-head base layout."""
        kw = dict(
            n_layers=12, hidden=768, n_heads=12, ffn=3072,
            vocab_size=30522, max_positions=512,
        )
        kw.update(overrides)
        return cls(**kw)

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def with_vocab(self, vocab_size: int) -> "ModelConfig":
        return replace(self, vocab_size=vocab_size)


@dataclass
class EncodedBatch:
    """Padded id matrix with attention mask (1 = real token, 0 = pad)."""

    ids: np.ndarray
    attention_mask: np.ndarray
    segment_ids: np.ndarray

    @classmethod
    def from_sequences(cls, seqs: list[list[int]], pad_to: int | None = None) -> "EncodedBatch":
        if not seqs:
            raise ShapeError("cannot build a batch from zero sequences")
        width = max(len(s) for s in seqs)
        if pad_to is not None:
            width = max(width, pad_to)
        n = len(seqs)
        ids = np.full((n, width), PAD_ID, dtype=np.int64)
        mask = np.zeros((n, width), dtype=np.int64)
        for i, s in enumerate(seqs):
            ids[i, : len(s)] = s
            mask[i, : len(s)] = 1
        seg = np.zeros((n, width), dtype=np.int64)
        return cls(ids=ids, attention_mask=mask, segment_ids=seg)


@dataclass
class EncoderOutput:
    hidden_states: np.ndarray  # [batch, seq, hidden]
    cls_vector: np.ndarray     # [batch, hidden], row 0 of hidden_states


# --- initialization ---------------------------------------------------------

def _trunc_normal(rng: np.random.Generator, shape, std: float, dtype) -> np.ndarray:
    """Normal(0, std^2) resampled until everything lies within +-2 std."""
    x = rng.normal(0.0, std, size=shape)
    while True:
        bad = np.abs(x) > 2.0 * std
        n_bad = int(bad.sum())
        if n_bad == 0:
            break
        x[bad] = rng.normal(0.0, std, size=n_bad)
    return x.astype(dtype)


def init_params(config: ModelConfig, seed: int, dtype=np.float32) -> ParameterStore:
    """Fresh encoder + MLM head. Weights truncated-normal, biases zero,
    layer-norm gains one. Deterministic given the seed."""
    rng = np.random.default_rng(seed)
    store = ParameterStore()

    def weight(name, shape):
        store.add(name, _trunc_normal(rng, shape, INIT_STD, dtype))

    def zeros(name, shape):
        store.add(name, np.zeros(shape, dtype=dtype))

    def ones(name, shape):
        store.add(name, np.ones(shape, dtype=dtype))

    h, v = config.hidden, config.vocab_size
    weight("encoder.tok_emb", (v, h))
    weight("encoder.pos_emb", (config.max_positions, h))
    weight("encoder.seg_emb", (config.n_segments, h))
    ones("encoder.emb_norm.gain", (h,))
    zeros("encoder.emb_norm.bias", (h,))
    for i in range(config.n_layers):
        pre = f"encoder.layer{i}"
        for proj in ("wq", "wk", "wv", "wo"):
            weight(f"{pre}.attn.{proj}", (h, h))
        for bias in ("bq", "bk", "bv", "bo"):
            zeros(f"{pre}.attn.{bias}", (h,))
        ones(f"{pre}.attn_norm.gain", (h,))
        zeros(f"{pre}.attn_norm.bias", (h,))
        weight(f"{pre}.ffn.w1", (h, config.ffn))
        zeros(f"{pre}.ffn.b1", (config.ffn,))
        weight(f"{pre}.ffn.w2", (config.ffn, h))
        zeros(f"{pre}.ffn.b2", (h,))
        ones(f"{pre}.ffn_norm.gain", (h,))
        zeros(f"{pre}.ffn_norm.bias", (h,))
    # MLM head; output projection is tied to encoder.tok_emb.
    weight("mlm.dense.w", (h, h))
    zeros("mlm.dense.b", (h,))
    ones("mlm.norm.gain", (h,))
    zeros("mlm.norm.bias", (h,))
    zeros("mlm.out_bias", (v,))
    return store


def init_classifier(store: ParameterStore, config: ModelConfig, n_classes: int, seed: int,
                    dtype=np.float32) -> None:
    """Attach a dense -> tanh -> dense head for n_classes."""
    if n_classes < 2:
        raise ConfigError(f"classifier needs >= 2 classes, got {n_classes}")
    if "cls.out.b" in store:
        raise ConfigError("classifier head already initialized")
    rng = np.random.default_rng(seed)
    h = config.hidden
    store.add("cls.dense.w", _trunc_normal(rng, (h, h), INIT_STD, dtype))
    store.add("cls.dense.b", np.zeros(h, dtype=dtype))
    store.add("cls.out.w", _trunc_normal(rng, (h, n_classes), INIT_STD, dtype))
    store.add("cls.out.b", np.zeros(n_classes, dtype=dtype))


def classifier_n_classes(store: ParameterStore) -> int:
    if "cls.out.b" not in store:
        raise ConfigError("no classifier head in parameter store")
    return int(store["cls.out.b"].value.shape[0])


def count_params(config: ModelConfig, n_classes: int | None = None) -> int:
    """Closed-form scalar count; matches allocation exactly (tied MLM
    projection counted once, inside the token embedding)."""
    h, v, f = config.hidden, config.vocab_size, config.ffn
    emb = v * h + config.max_positions * h + config.n_segments * h + 2 * h
    per_layer = 4 * (h * h + h) + 2 * h + (h * f + f) + (f * h + h) + 2 * h
    mlm = (h * h + h) + 2 * h + v
    total = emb + config.n_layers * per_layer + mlm
    if n_classes is not None:
        total += (h * h + h) + (h * n_classes + n_classes)
    return total


# --- encoder forward / backward ---------------------------------------------

def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    b, s, h = x.shape
    return x.reshape(b, s, n_heads, h // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, nh, s, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, s, nh * dh)


def _maybe_dropout(x, p, training, rng):
    if training and p > 0.0:
        if rng is None:
            raise ConfigError("training-mode forward with dropout needs an rng")
        return ops.dropout(x, p, rng)
    return x, None


def forward_hidden(params: ParameterStore, config: ModelConfig, batch: EncodedBatch,
                   training: bool = False, rng: np.random.Generator | None = None,
                   want_cache: bool = False):
    """Run the full encoder stack. Returns (hidden_states, cache or None)."""
    ids = np.asarray(batch.ids)
    if ids.ndim != 2:
        raise ShapeError(f"batch ids must be 2-d, got {ids.shape}")
    b, s = ids.shape
    if s > config.max_positions:
        raise ShapeError(f"sequence length {s} exceeds max_positions {config.max_positions}")
    att = np.asarray(batch.attention_mask)
    seg = np.asarray(batch.segment_ids)
    if att.shape != ids.shape or seg.shape != ids.shape:
        raise ShapeError("ids, attention_mask and segment_ids must share a shape")

    tok_emb = params["encoder.tok_emb"].value
    dtype = tok_emb.dtype
    p_drop = config.dropout

    x = ops.embedding_lookup(tok_emb, ids)
    x = x + params["encoder.pos_emb"].value[:s]
    x = x + ops.embedding_lookup(params["encoder.seg_emb"].value, seg)
    x, emb_norm_cache = ops.layer_norm(
        x, params["encoder.emb_norm.gain"].value, params["encoder.emb_norm.bias"].value
    )
    x, emb_keep = _maybe_dropout(x, p_drop, training, rng)

    # [b, 1, 1, s]: 0 at real keys, -inf at padded keys.
    key_bias = np.where(att[:, None, None, :] > 0, dtype.type(0.0), dtype.type(-np.inf))
    inv_sqrt_dh = dtype.type(1.0 / np.sqrt(config.hidden // config.n_heads))

    layer_caches = []
    for i in range(config.n_layers):
        pre = f"encoder.layer{i}"
        x_in = x
        q = ops.add_bias(ops.matmul(x_in, params[f"{pre}.attn.wq"].value),
                         params[f"{pre}.attn.bq"].value)
        k = ops.add_bias(ops.matmul(x_in, params[f"{pre}.attn.wk"].value),
                         params[f"{pre}.attn.bk"].value)
        v = ops.add_bias(ops.matmul(x_in, params[f"{pre}.attn.wv"].value),
                         params[f"{pre}.attn.bv"].value)
        qh = _split_heads(q, config.n_heads)
        kh = _split_heads(k, config.n_heads)
        vh = _split_heads(v, config.n_heads)
        scores = np.matmul(qh, kh.swapaxes(-1, -2)) * inv_sqrt_dh + key_bias
        probs = ops.softmax(scores)
        probs_d, att_keep = _maybe_dropout(probs, p_drop, training, rng)
        ctx = ops.matmul(probs_d, vh)
        ctxm = _merge_heads(ctx)
        ao = ops.add_bias(ops.matmul(ctxm, params[f"{pre}.attn.wo"].value),
                          params[f"{pre}.attn.bo"].value)
        ao, ao_keep = _maybe_dropout(ao, p_drop, training, rng)
        n1, n1_cache = ops.layer_norm(
            x_in + ao, params[f"{pre}.attn_norm.gain"].value, params[f"{pre}.attn_norm.bias"].value
        )
        a1 = ops.add_bias(ops.matmul(n1, params[f"{pre}.ffn.w1"].value),
                          params[f"{pre}.ffn.b1"].value)
        hmid = ops.gelu(a1)
        ff = ops.add_bias(ops.matmul(hmid, params[f"{pre}.ffn.w2"].value),
                          params[f"{pre}.ffn.b2"].value)
        ff, ff_keep = _maybe_dropout(ff, p_drop, training, rng)
        x, n2_cache = ops.layer_norm(
            n1 + ff, params[f"{pre}.ffn_norm.gain"].value, params[f"{pre}.ffn_norm.bias"].value
        )
        if want_cache:
            layer_caches.append({
                "x_in": x_in, "qh": qh, "kh": kh, "vh": vh,
                "probs": probs, "probs_d": probs_d, "att_keep": att_keep,
                "ctxm": ctxm, "ao_keep": ao_keep, "n1": n1, "n1_cache": n1_cache,
                "a1": a1, "hmid": hmid, "ff_keep": ff_keep, "n2_cache": n2_cache,
            })

    cache = None
    if want_cache:
        cache = {
            "ids": ids, "seg": seg, "seq_len": s,
            "emb_norm_cache": emb_norm_cache, "emb_keep": emb_keep,
            "inv_sqrt_dh": inv_sqrt_dh, "layers": layer_caches,
        }
    return x, cache


def backward_hidden(params: ParameterStore, config: ModelConfig, cache: dict,
                    d_hidden: np.ndarray) -> None:
    """Accumulate encoder gradients given d(loss)/d(hidden_states)."""
    inv_sqrt_dh = cache["inv_sqrt_dh"]
    dx = d_hidden
    for i in reversed(range(config.n_layers)):
        pre = f"encoder.layer{i}"
        lc = cache["layers"][i]

        dres2, dg2, db2 = ops.layer_norm_backward(dx, lc["n2_cache"])
        params[f"{pre}.ffn_norm.gain"].grad += dg2
        params[f"{pre}.ffn_norm.bias"].grad += db2
        dn1 = dres2
        dff = dres2
        if lc["ff_keep"] is not None:
            dff = ops.dropout_backward(dff, lc["ff_keep"])
        dff, dbf2 = ops.add_bias_backward(dff)
        params[f"{pre}.ffn.b2"].grad += dbf2
        dhmid, dw2 = ops.matmul_backward(dff, lc["hmid"], params[f"{pre}.ffn.w2"].value)
        params[f"{pre}.ffn.w2"].grad += dw2
        da1 = ops.gelu_backward(dhmid, lc["a1"])
        da1, dbf1 = ops.add_bias_backward(da1)
        params[f"{pre}.ffn.b1"].grad += dbf1
        dn1_ffn, dw1 = ops.matmul_backward(da1, lc["n1"], params[f"{pre}.ffn.w1"].value)
        params[f"{pre}.ffn.w1"].grad += dw1
        dn1 = dn1 + dn1_ffn

        dres1, dg1, db1 = ops.layer_norm_backward(dn1, lc["n1_cache"])
        params[f"{pre}.attn_norm.gain"].grad += dg1
        params[f"{pre}.attn_norm.bias"].grad += db1
        dx_in = dres1
        dao = dres1
        if lc["ao_keep"] is not None:
            dao = ops.dropout_backward(dao, lc["ao_keep"])
        dao, dbo = ops.add_bias_backward(dao)
        params[f"{pre}.attn.bo"].grad += dbo
        dctxm, dwo = ops.matmul_backward(dao, lc["ctxm"], params[f"{pre}.attn.wo"].value)
        params[f"{pre}.attn.wo"].grad += dwo
        dctx = _split_heads(dctxm, config.n_heads)
        dprobs_d, dvh = ops.matmul_backward(dctx, lc["probs_d"], lc["vh"])
        dprobs = dprobs_d
        if lc["att_keep"] is not None:
            dprobs = ops.dropout_backward(dprobs, lc["att_keep"])
        dscores = ops.softmax_backward(dprobs, lc["probs"]) * inv_sqrt_dh
        khT = lc["kh"].swapaxes(-1, -2)
        dqh, dkhT = ops.matmul_backward(dscores, lc["qh"], khT)
        dkh = dkhT.swapaxes(-1, -2)

        dq = _merge_heads(dqh)
        dk = _merge_heads(dkh)
        dv = _merge_heads(dvh)
        for dz, wname, bname in (
            (dq, "wq", "bq"), (dk, "wk", "bk"), (dv, "wv", "bv"),
        ):
            dz, dbz = ops.add_bias_backward(dz)
            params[f"{pre}.attn.{bname}"].grad += dbz
            dxz, dwz = ops.matmul_backward(dz, lc["x_in"], params[f"{pre}.attn.{wname}"].value)
            params[f"{pre}.attn.{wname}"].grad += dwz
            dx_in = dx_in + dxz
        dx = dx_in

    if cache["emb_keep"] is not None:
        dx = ops.dropout_backward(dx, cache["emb_keep"])
    demb, dg, db = ops.layer_norm_backward(dx, cache["emb_norm_cache"])
    params["encoder.emb_norm.gain"].grad += dg
    params["encoder.emb_norm.bias"].grad += db

    tok = params["encoder.tok_emb"]
    tok.grad += ops.embedding_lookup_backward(demb, cache["ids"], tok.value.shape[0])
    params["encoder.pos_emb"].grad[: cache["seq_len"]] += demb.sum(axis=0)
    seg = params["encoder.seg_emb"]
    seg.grad += ops.embedding_lookup_backward(demb, cache["seg"], seg.value.shape[0])


def encode_batch(params: ParameterStore, config: ModelConfig, batch: EncodedBatch,
                 training: bool = False, rng: np.random.Generator | None = None) -> EncoderOutput:
    hidden, _ = forward_hidden(params, config, batch, training=training, rng=rng)
    return EncoderOutput(hidden_states=hidden, cls_vector=hidden[:, 0, :])


# --- MLM head ----------------------------------------------------------------

def mlm_head(params: ParameterStore, hidden: np.ndarray, want_cache: bool = False):
    """dense -> gelu -> layer norm -> tied-embedding projection + bias."""
    t1 = ops.add_bias(ops.matmul(hidden, params["mlm.dense.w"].value),
                      params["mlm.dense.b"].value)
    t2 = ops.gelu(t1)
    t3, n_cache = ops.layer_norm(t2, params["mlm.norm.gain"].value, params["mlm.norm.bias"].value)
    emb_t = params["encoder.tok_emb"].value.T
    logits = ops.add_bias(ops.matmul(t3, emb_t), params["mlm.out_bias"].value)
    cache = {"hidden": hidden, "t1": t1, "t3": t3, "n_cache": n_cache} if want_cache else None
    return logits, cache


def mlm_head_backward(params: ParameterStore, cache: dict, dlogits: np.ndarray) -> np.ndarray:
    """Returns d(loss)/d(hidden); tied embedding grads flow into tok_emb."""
    dlogits, d_out_bias = ops.add_bias_backward(dlogits)
    params["mlm.out_bias"].grad += d_out_bias
    emb_t = params["encoder.tok_emb"].value.T
    dt3, demb_t = ops.matmul_backward(dlogits, cache["t3"], emb_t)
    params["encoder.tok_emb"].grad += demb_t.T
    dt2, dg, db = ops.layer_norm_backward(dt3, cache["n_cache"])
    params["mlm.norm.gain"].grad += dg
    params["mlm.norm.bias"].grad += db
    dt1 = ops.gelu_backward(dt2, cache["t1"])
    dt1, d_dense_b = ops.add_bias_backward(dt1)
    params["mlm.dense.b"].grad += d_dense_b
    dhidden, d_dense_w = ops.matmul_backward(dt1, cache["hidden"], params["mlm.dense.w"].value)
    params["mlm.dense.w"].grad += d_dense_w
    return dhidden


def mlm_logits(params: ParameterStore, output: EncoderOutput) -> np.ndarray:
    logits, _ = mlm_head(params, output.hidden_states)
    return logits


# --- classification head ------------------------------------------------------

def cls_head(params: ParameterStore, cls_vec: np.ndarray, want_cache: bool = False):
    u1 = ops.add_bias(ops.matmul(cls_vec, params["cls.dense.w"].value),
                      params["cls.dense.b"].value)
    u2 = ops.tanh(u1)
    logits = ops.add_bias(ops.matmul(u2, params["cls.out.w"].value),
                          params["cls.out.b"].value)
    cache = {"cls_vec": cls_vec, "u2": u2} if want_cache else None
    return logits, cache


def cls_head_backward(params: ParameterStore, cache: dict, dlogits: np.ndarray) -> np.ndarray:
    """Returns d(loss)/d(cls_vector)."""
    dlogits, db_out = ops.add_bias_backward(dlogits)
    params["cls.out.b"].grad += db_out
    du2, dw_out = ops.matmul_backward(dlogits, cache["u2"], params["cls.out.w"].value)
    params["cls.out.w"].grad += dw_out
    du1 = ops.tanh_backward(du2, cache["u2"])
    du1, db_d = ops.add_bias_backward(du1)
    params["cls.dense.b"].grad += db_d
    dcls, dw_d = ops.matmul_backward(du1, cache["cls_vec"], params["cls.dense.w"].value)
    params["cls.dense.w"].grad += dw_d
    return dcls


def cls_logits(params: ParameterStore, output: EncoderOutput, n_classes: int) -> np.ndarray:
    have = classifier_n_classes(params)
    if have != n_classes:
        raise ConfigError(f"classifier head has {have} classes, caller expects {n_classes}")
    logits, _ = cls_head(params, output.cls_vector)
    return logits

"""Tiny differentiable QA model with hand-derived gradients.

Question tokens and option tokens share one embedding table. Fusion is a
single hidden ReLU layer over [video ; question ; video*question]
(open-ended) or [video ; question ; option ; video*question ; video*option]
(multi-choice), where * is the elementwise product. The product blocks are
the video-text interaction: they make question/video alignment linearly
readable by the hidden layer, which a plain concatenation does not (the
abstention head has to detect mismatched pairs, an inherently multiplicative
signal). They require embed_dim == video_dim. The open-ended head emits C
answer logits plus one abstention logit; the multi-choice head emits one
scalar score per option. Output heads are zero-initialized so an untrained
abstention logit sits exactly at probability 0.5.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericError, UnknownTokenError
from .taskheads import NOT_GIVEN
from .worldgen import COUNT_RANGE, RELATIONS, TEMPLATES, OptionSet, QuestionSpec, Vocab

PROB_FLOOR = 1e-12


def model_tokens(vocab: Vocab) -> tuple:
    toks = list(vocab.subjects) + list(vocab.attributes) + list(vocab.actions)
    toks += [f"count:{c}" for c in range(COUNT_RANGE[0], COUNT_RANGE[1] + 1)]
    toks += list(RELATIONS)
    toks += [f"<tpl:{t}>" for t in TEMPLATES]
    toks.append(NOT_GIVEN)
    return tuple(toks)


@dataclass(frozen=True)
class ModelConfig:
    tokens: tuple
    answer_pool: tuple
    video_dim: int = 64
    embed_dim: int = 64
    hidden_dim: int = 128
    init_scale: float = 0.1
    seed: int = 0
    # When set, token embeddings shared with the video feature space start at
    # the featurizer's vectors, the desk-scale stand-in for pretrained aligned
    # encoders. None keeps a purely random initialization.
    featurizer_seed: int | None = None

    def __post_init__(self):
        if min(self.video_dim, self.embed_dim, self.hidden_dim) < 1:
            raise ConfigError("all model dimensions must be >= 1")
        if self.embed_dim != self.video_dim:
            raise ConfigError("embed_dim must equal video_dim for the "
                              "elementwise interaction features")
        if len(set(self.tokens)) != len(self.tokens):
            raise ConfigError("model token table contains duplicates")
        if not set(self.answer_pool) <= set(self.tokens):
            raise ConfigError("answer pool must be a subset of the token table")

    @property
    def num_classes(self) -> int:
        return len(self.answer_pool)


def model_config_from_vocab(vocab: Vocab, video_dim: int = 64, embed_dim: int = 64,
                            hidden_dim: int = 128, init_scale: float = 0.1,
                            seed: int = 0,
                            featurizer_seed: int | None = None) -> ModelConfig:
    return ModelConfig(tokens=model_tokens(vocab), answer_pool=tuple(vocab.actions),
                       video_dim=video_dim, embed_dim=embed_dim,
                       hidden_dim=hidden_dim, init_scale=init_scale, seed=seed,
                       featurizer_seed=featurizer_seed)


@dataclass
class ModelParams:
    config: ModelConfig
    emb: np.ndarray        # (T, embed_dim)
    W1: np.ndarray         # (hidden, 2 * video_dim + embed_dim)
    b1: np.ndarray
    W2: np.ndarray         # (C + 1, hidden)
    b2: np.ndarray
    U1: np.ndarray         # (hidden, 3 * video_dim + 2 * embed_dim)
    c1: np.ndarray
    u2: np.ndarray         # (hidden,)
    c2: float
    token_index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.token_index:
            self.token_index = {t: i for i, t in enumerate(self.config.tokens)}

    def named_arrays(self):
        return [("emb", self.emb), ("W1", self.W1), ("b1", self.b1),
                ("W2", self.W2), ("b2", self.b2), ("U1", self.U1),
                ("c1", self.c1), ("u2", self.u2)]

    def row(self, token: str) -> int:
        try:
            return self.token_index[token]
        except KeyError:
            raise UnknownTokenError(f"token {token!r} not in model vocabulary") from None


def init_params(config: ModelConfig, zero_heads: bool = True,
                rng=None) -> ModelParams:
    """Draw parameters; heads are zeroed by default (abstention starts at 0.5)."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    s, de, dv, hid = config.init_scale, config.embed_dim, config.video_dim, config.hidden_dim
    c = config.num_classes
    head = (lambda *shape: np.zeros(shape)) if zero_heads else \
           (lambda *shape: s * rng.standard_normal(shape))
    emb = s * rng.standard_normal((len(config.tokens), de))
    if config.featurizer_seed is not None:
        from .worldgen import MAX_POSITIONS, TokenFeaturizer
        shared = tuple(t for t in config.tokens
                       if "|" not in t and not t.startswith("<") and t not in RELATIONS)
        # Reconstructs featurizer_basis(vocab): model_tokens lists subjects,
        # attributes, actions, then counts in vocabulary order.
        basis = shared + tuple(f"pos:{p}" for p in range(MAX_POSITIONS))
        feat = TokenFeaturizer(config.featurizer_seed, de, basis)
        for i, token in enumerate(config.tokens):
            if token in shared:
                emb[i] = feat.embed(token)
            elif token.startswith("<tpl:") or token in RELATIONS:
                # Templates and relations have no video-space counterpart;
                # starting them at zero keeps the question encoding inside
                # the video feature geometry until training says otherwise.
                emb[i] = 0.0
    return ModelParams(
        config=config,
        emb=emb,
        W1=s * rng.standard_normal((hid, 2 * dv + de)), b1=np.zeros(hid),
        W2=head(c + 1, hid), b2=np.zeros(c + 1),
        U1=s * rng.standard_normal((hid, 3 * dv + 2 * de)), c1=np.zeros(hid),
        u2=head(hid).reshape(hid) if zero_heads else s * rng.standard_normal(hid),
        c2=0.0 if zero_heads else float(s * rng.standard_normal()),
    )


# ---------------------------------------------------------------------------
# Encoders and forward passes
# ---------------------------------------------------------------------------

def question_tokens(q: QuestionSpec) -> list:
    toks = []
    for name, value in q.slots:
        toks.append(f"count:{value}" if name == "count" else str(value))
    return toks


def encode_question(q: QuestionSpec, params: ModelParams):
    """Mean of slot-token embeddings plus a template embedding."""
    rows = np.array([params.row(t) for t in question_tokens(q)], dtype=np.intp)
    tpl_row = params.row(f"<tpl:{q.template}>")
    vec = params.emb[rows].mean(axis=0) + params.emb[tpl_row]
    return vec, rows, tpl_row


def _softmax(x):
    z = x - x.max()
    e = np.exp(z)
    return e / e.sum()


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def forward_oeqa(video: np.ndarray, q: QuestionSpec, params: ModelParams):
    qvec, rows, tpl_row = encode_question(q, params)
    x = np.concatenate([video, qvec, video * qvec])
    pre = params.W1 @ x + params.b1
    z = np.maximum(pre, 0.0)
    h = params.W2 @ z + params.b2
    if not np.all(np.isfinite(h)):
        raise NumericError("non-finite logits in open-ended forward pass")
    p = _softmax(h[:-1])
    p_i = float(_sigmoid(h[-1]))
    cache = {"task": "oeqa", "x": x, "video": video, "pre": pre, "z": z,
             "p": p, "p_i": p_i, "rows": rows, "tpl_row": tpl_row}
    return p, p_i, cache


def forward_mcqa(video: np.ndarray, q: QuestionSpec, options: OptionSet,
                 params: ModelParams):
    options.validate()
    qvec, rows, tpl_row = encode_question(q, params)
    opt_rows = np.array([params.row(t) for t in options.options], dtype=np.intp)
    n = len(opt_rows)
    dv, de = params.config.video_dim, params.config.embed_dim
    opt_emb = params.emb[opt_rows]
    X = np.empty((n, 3 * dv + 2 * de))
    X[:, :dv] = video
    X[:, dv:dv + de] = qvec
    X[:, dv + de:dv + 2 * de] = opt_emb
    X[:, dv + 2 * de:2 * dv + 2 * de] = video * qvec
    X[:, 2 * dv + 2 * de:] = video[None, :] * opt_emb
    pre = X @ params.U1.T + params.c1
    Z = np.maximum(pre, 0.0)
    scores = Z @ params.u2 + params.c2
    if not np.all(np.isfinite(scores)):
        raise NumericError("non-finite scores in multi-choice forward pass")
    cache = {"task": "mcqa", "X": X, "video": video, "pre": pre, "Z": Z,
             "scores": scores, "rows": rows, "tpl_row": tpl_row,
             "opt_rows": opt_rows}
    return scores, cache


def predict_option(scores: np.ndarray) -> int:
    """Argmax with ties broken toward the lowest index."""
    return int(np.argmax(scores))


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def loss_oeqa(p_answers: np.ndarray, p_i: float, answer_index: int, d: float) -> float:
    """Soft-label combined loss: answer CE weighted by (1 - d) plus abstention BCE
    with d as the soft target. Probabilities are clamped at 1e-12 before logs."""
    if not 0.0 <= d <= 1.0:
        raise ConfigError("distance must lie in [0, 1]")
    pa = max(float(p_answers[answer_index]), PROB_FLOOR)
    pi = min(max(p_i, PROB_FLOOR), 1.0 - PROB_FLOOR)
    return float(-(1.0 - d) * np.log(pa)
                 - (d * np.log(pi) + (1.0 - d) * np.log(1.0 - pi)))


def loss_oeqa_plain(p_answers: np.ndarray, answer_index: int) -> float:
    """Baseline cross-entropy without the abstention term."""
    return float(-np.log(max(float(p_answers[answer_index]), PROB_FLOOR)))


def loss_mcqa(scores: np.ndarray, target_index: int) -> float:
    if not 0 <= target_index < len(scores):
        raise ConfigError("target index out of range")
    z = scores - scores.max()
    return float(np.log(np.exp(z).sum()) - z[target_index])


# ---------------------------------------------------------------------------
# Backward passes
# ---------------------------------------------------------------------------

def backward_oeqa(cache: dict, answer_index: int, d: float,
                  params: ModelParams, include_ignorance: bool = True) -> dict:
    p, p_i = cache["p"], cache["p_i"]
    c = len(p)
    dh = np.empty(c + 1)
    dh[:c] = (1.0 - d) * p
    dh[answer_index] -= (1.0 - d)
    dh[c] = (p_i - d) if include_ignorance else 0.0
    z, pre, x = cache["z"], cache["pre"], cache["x"]
    dW2 = np.outer(dh, z)
    db2 = dh
    dpre = (params.W2.T @ dh) * (pre > 0)
    dW1 = np.outer(dpre, x)
    db1 = dpre
    dx = params.W1.T @ dpre
    dv = params.config.video_dim
    de = params.config.embed_dim
    dq = dx[dv:dv + de] + dx[dv + de:] * cache["video"]
    return _pack_emb_grads(cache, dq, params,
                           {"W1": dW1, "b1": db1, "W2": dW2, "b2": db2})


def backward_mcqa(cache: dict, target_index: int, params: ModelParams) -> dict:
    scores = cache["scores"]
    ds = _softmax(scores)
    ds[target_index] -= 1.0
    X, pre, Z = cache["X"], cache["pre"], cache["Z"]
    dpre = (ds[:, None] * params.u2[None, :]) * (pre > 0)
    dU1 = dpre.T @ X
    dc1 = dpre.sum(axis=0)
    du2 = Z.T @ ds
    dc2 = float(ds.sum())
    dX = dpre @ params.U1
    dv = params.config.video_dim
    de = params.config.embed_dim
    video = cache["video"]
    dq = (dX[:, dv:dv + de] + dX[:, dv + 2 * de:2 * dv + 2 * de] * video).sum(axis=0)
    grads = _pack_emb_grads(cache, dq, params,
                            {"U1": dU1, "c1": dc1, "u2": du2, "c2": dc2})
    for i, row in enumerate(cache["opt_rows"]):
        grads["emb"].append((int(row),
                             dX[i, dv + de:dv + 2 * de] + dX[i, 2 * dv + 2 * de:] * video))
    return grads


def _pack_emb_grads(cache, dq, params, dense: dict) -> dict:
    rows = cache["rows"]
    share = dq / len(rows)
    grads = dict(dense)
    grads["emb"] = [(int(r), share) for r in rows]
    grads["emb"].append((int(cache["tpl_row"]), dq))
    return grads


def apply_grads(params: ModelParams, grads: dict, lr: float):
    """One in-place SGD step. Sparse embedding entries accumulate additively."""
    for row, g in grads["emb"]:
        params.emb[row] -= lr * g
    for name in ("W1", "b1", "W2", "b2", "U1", "c1", "u2"):
        if name in grads:
            getattr(params, name).__isub__(lr * grads[name])
    if "c2" in grads:
        params.c2 -= lr * grads["c2"]


def dense_gradients(grads: dict, params: ModelParams) -> dict:
    """Expand a sparse gradient dict to full-size arrays (for verification)."""
    out = {name: np.zeros_like(arr) for name, arr in params.named_arrays()}
    out["c2"] = 0.0
    for row, g in grads["emb"]:
        out["emb"][row] += g
    for name in ("W1", "b1", "W2", "b2", "U1", "c1", "u2"):
        if name in grads:
            out[name] += grads[name]
    if "c2" in grads:
        out["c2"] += grads["c2"]
    return out


# ---------------------------------------------------------------------------
# Finite-difference gradient verification
# ---------------------------------------------------------------------------

def _fd_relative_error(analytic: float, fd: float) -> float:
    return abs(analytic - fd) / max(1.0, abs(analytic), abs(fd))


def grad_check(config: ModelConfig, n_samples: int = 20, tolerance: float = 1e-4,
               step: float = 1e-4, rng=None, vocab: Vocab | None = None) -> dict:
    """Compare analytic gradients against central finite differences.

    Per-coordinate error metric: |g_a - g_fd| / max(1, |g_a|, |g_fd|), i.e.
    relative for large gradients and absolute for small ones. Samples whose
    hidden pre-activations sit within 1e-3 of a ReLU kink are redrawn so the
    finite-difference stencil never crosses a kink.
    """
    from .worldgen import generate_question, generate_scene

    if vocab is None:
        vocab = Vocab()
    if rng is None:
        rng = np.random.default_rng(config.seed + 12345)
    d_values = (0.0, 0.3, 1.0)
    max_err = 0.0
    cases = []

    def fd_scan(params, loss_fn, analytic: dict, arrays) -> float:
        worst = 0.0
        for name, arr in arrays:
            an = analytic[name]
            if name == "emb":
                rows = sorted({int(r) for r in params_used_rows})
                coords = [(r, j) for r in rows for j in range(arr.shape[1])]
            else:
                coords = list(np.ndindex(arr.shape))
            for idx in coords:
                orig = arr[idx]
                arr[idx] = orig + step
                hi = loss_fn()
                arr[idx] = orig - step
                lo = loss_fn()
                arr[idx] = orig
                worst = max(worst, _fd_relative_error(float(an[idx]), (hi - lo) / (2 * step)))
        # scalar bias of the multi-choice head
        if "c2" in analytic and any(n == "u2" for n, _ in arrays):
            orig = params.c2
            params.c2 = orig + step
            hi = loss_fn()
            params.c2 = orig - step
            lo = loss_fn()
            params.c2 = orig
            worst = max(worst, _fd_relative_error(float(analytic["c2"]), (hi - lo) / (2 * step)))
        return worst

    for sample in range(n_samples):
        params = init_params(config, zero_heads=False,
                             rng=np.random.default_rng(rng.integers(2**31)))
        for attempt in range(50):
            seed = int(rng.integers(2**31))
            case_rng = np.random.default_rng(seed)
            scene = generate_scene(vocab, k=2, rng_seed=seed, scene_id=f"gc-{sample}-{attempt}")
            template = TEMPLATES[case_rng.integers(len(TEMPLATES))]
            q, answer = generate_question(scene, template, seed)
            video = case_rng.standard_normal(config.video_dim)
            _, _, cache_o = forward_oeqa(video, q, params)
            opts = tuple(case_rng.permutation(config.answer_pool))[:4] + (NOT_GIVEN,)
            option_set = OptionSet(options=opts, correct_index=0, not_given_index=4)
            _, cache_m = forward_mcqa(video, q, option_set, params)
            margin = min(np.abs(cache_o["pre"]).min(), np.abs(cache_m["pre"]).min())
            if margin > 1e-3:
                break
        else:
            raise NumericError("could not find a kink-free sample for the check")

        answer_index = config.answer_pool.index(answer)
        params_used_rows = list(cache_o["rows"]) + [cache_o["tpl_row"]]

        for d in d_values:
            def oeqa_loss():
                p, p_i, _ = forward_oeqa(video, q, params)
                return loss_oeqa(p, p_i, answer_index, d)

            _, _, cache = forward_oeqa(video, q, params)
            analytic = dense_gradients(backward_oeqa(cache, answer_index, d, params), params)
            err = fd_scan(params, oeqa_loss, analytic,
                          [("emb", params.emb), ("W1", params.W1), ("b1", params.b1),
                           ("W2", params.W2), ("b2", params.b2)])
            cases.append({"sample": sample, "loss": "oeqa", "d": d, "max_rel_err": err})
            max_err = max(max_err, err)

        params_used_rows = (list(cache_m["rows"]) + [cache_m["tpl_row"]]
                            + [int(r) for r in cache_m["opt_rows"]])
        target = int(np.random.default_rng(sample).integers(len(option_set.options)))

        def mcqa_loss():
            scores, _ = forward_mcqa(video, q, option_set, params)
            return loss_mcqa(scores, target)

        _, cache = forward_mcqa(video, q, option_set, params)
        analytic = dense_gradients(backward_mcqa(cache, target, params), params)
        err = fd_scan(params, mcqa_loss, analytic,
                      [("emb", params.emb), ("U1", params.U1), ("c1", params.c1),
                       ("u2", params.u2)])
        cases.append({"sample": sample, "loss": "mcqa", "max_rel_err": err})
        max_err = max(max_err, err)

    return {"max_rel_err": max_err, "tolerance": tolerance,
            "passed": bool(max_err < tolerance), "n_samples": n_samples,
            "step": step, "cases": cases}


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def config_hash(config: ModelConfig) -> str:
    blob = json.dumps({
        "tokens": list(config.tokens), "answer_pool": list(config.answer_pool),
        "video_dim": config.video_dim, "embed_dim": config.embed_dim,
        "hidden_dim": config.hidden_dim, "init_scale": config.init_scale,
        "seed": config.seed, "featurizer_seed": config.featurizer_seed},
        sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def params_to_json(params: ModelParams) -> str:
    payload = {"config_hash": config_hash(params.config),
               "config": {
                   "tokens": list(params.config.tokens),
                   "answer_pool": list(params.config.answer_pool),
                   "video_dim": params.config.video_dim,
                   "embed_dim": params.config.embed_dim,
                   "hidden_dim": params.config.hidden_dim,
                   "init_scale": params.config.init_scale,
                   "seed": params.config.seed,
                   "featurizer_seed": params.config.featurizer_seed},
               "tensors": {name: arr.tolist() for name, arr in params.named_arrays()},
               "c2": params.c2}
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def params_hash(params: ModelParams) -> str:
    return hashlib.sha256(params_to_json(params).encode("utf-8")).hexdigest()


def save_params(params: ModelParams, path):
    Path(path).write_text(params_to_json(params) + "\n", encoding="utf-8")


def load_params(path) -> ModelParams:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    cfg = payload["config"]
    config = ModelConfig(tokens=tuple(cfg["tokens"]), answer_pool=tuple(cfg["answer_pool"]),
                         video_dim=cfg["video_dim"], embed_dim=cfg["embed_dim"],
                         hidden_dim=cfg["hidden_dim"], init_scale=cfg["init_scale"],
                         seed=cfg["seed"],
                         featurizer_seed=cfg.get("featurizer_seed"))
    t = payload["tensors"]
    return ModelParams(config=config,
                       emb=np.asarray(t["emb"]), W1=np.asarray(t["W1"]),
                       b1=np.asarray(t["b1"]), W2=np.asarray(t["W2"]),
                       b2=np.asarray(t["b2"]), U1=np.asarray(t["U1"]),
                       c1=np.asarray(t["c1"]), u2=np.asarray(t["u2"]),
                       c2=float(payload["c2"]))

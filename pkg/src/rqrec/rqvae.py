"""Residual-quantized autoencoding of item embeddings into hierarchical codes.

A plain-numpy MLP encoder/decoder (affine layers with rectifier activations,
no dropout or batch normalization) is trained jointly with per-level codebooks.
Quantization recurses on residuals:

    r_0 = z,   c_l = argmin_w ||r_{l-1} - e_w^(l)||^2,   r_l = r_{l-1} - e_{c_l}^(l)

and the quantized latent is z* = sum_l e_{c_l}^(l). The reconstruction loss is
||x - x*||^2 (batch mean); the quantization loss per level is
||sg[r_{l-1}] - e||^2 + beta * ||r_{l-1} - sg[e]||^2 where sg stops gradients.
The encoder is trained with the decoder's input gradient passed straight through
the quantizer plus the commitment (beta) branch; codebooks receive only the
sg-protected codebook term. All arithmetic is 64-bit.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .dataio import EmbeddingMatrix

log = logging.getLogger(__name__)


@dataclass
class RqVaeConfig:
    latent_dim: int = 32
    code_len: int = 3          # L: quantization levels before the disambiguator
    codebook_size: int = 256   # W
    hidden_dim: int = 128
    n_layers: int = 5          # affine layers in the encoder and in the decoder
    beta: float = 0.25
    epochs: int = 300
    batch_size: int = 256
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    kmeans_iters: int = 100
    seed: int = 0

    def validate(self) -> None:
        if self.codebook_size < 2:
            raise ValueError(f"codebook_size must be >= 2, got {self.codebook_size}")
        if self.code_len < 1:
            raise ValueError(f"code_len must be >= 1, got {self.code_len}")
        if self.beta <= 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if self.n_layers < 1:
            raise ValueError(f"n_layers must be >= 1, got {self.n_layers}")


@dataclass
class Codebook:
    level: int                 # 1-based
    vectors: np.ndarray        # (W, latent_dim)


@dataclass
class RqVaeModel:
    encoder_weights: list[np.ndarray]
    encoder_biases: list[np.ndarray]
    decoder_weights: list[np.ndarray]
    decoder_biases: list[np.ndarray]
    codebooks: list[Codebook]
    config: RqVaeConfig
    input_dim: int
    # (l_rec, l_rq) on the full data: entry 0 before training, then one per epoch
    loss_history: list[tuple[float, float]] = field(default_factory=list)


@dataclass
class ItemCodeTable:
    """Per-item hierarchical code tuple: L codebook levels plus one disambiguator."""

    index_type: str            # "ceid" | "seid"
    code_len: int              # L
    codes: dict[str, tuple[int, ...]]

    @property
    def code_len_total(self) -> int:
        return self.code_len + 1


# ---------------------------------------------------------------------------
# k-means and quantization

def kmeans_init(latents: np.ndarray, n_centroids: int, iters: int,
                rng: np.random.Generator) -> np.ndarray:
    """Lloyd's algorithm seeded by uniform sampling of distinct rows.

    Empty clusters are reseeded to the point farthest from its assigned centroid.
    """
    n = latents.shape[0]
    if n < n_centroids:
        raise ValueError(f"need at least {n_centroids} rows, got {n}")
    pick = rng.choice(n, size=n_centroids, replace=False)
    centroids = latents[pick].copy()
    for _ in range(iters):
        d2 = _sq_dists(latents, centroids)
        assign = np.argmin(d2, axis=1)
        new = centroids.copy()
        point_err = d2[np.arange(n), assign]
        taken: set[int] = set()
        for w in range(n_centroids):
            members = assign == w
            if members.any():
                new[w] = latents[members].mean(axis=0)
        for w in range(n_centroids):
            if not (assign == w).any():
                order = np.argsort(-point_err, kind="stable")
                far = next(int(p) for p in order if int(p) not in taken)
                taken.add(far)
                new[w] = latents[far]
        if np.array_equal(new, centroids):
            break
        centroids = new
    return centroids


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # ||p - c||^2 without forming the (n, W, d) cube for large inputs
    p2 = np.sum(points * points, axis=1)[:, None]
    c2 = np.sum(centroids * centroids, axis=1)[None, :]
    d2 = p2 + c2 - 2.0 * points @ centroids.T
    return np.maximum(d2, 0.0)


def quantize_batch(latents: np.ndarray, codebooks: list[Codebook]
                   ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized residual quantization.

    Returns (codes (B, L), residuals (B, L+1, d) with residuals[:, 0] = z,
    z_star (B, d)). Argmin ties go to the smallest codeword index.
    """
    if not np.all(np.isfinite(latents)):
        raise ValueError("non-finite latent input to quantizer")
    n, d = latents.shape
    n_levels = len(codebooks)
    codes = np.zeros((n, n_levels), dtype=np.int64)
    residuals = np.zeros((n, n_levels + 1, d))
    residuals[:, 0] = latents
    z_star = np.zeros((n, d))
    r = latents
    for l, cb in enumerate(codebooks):
        c = np.argmin(_sq_dists(r, cb.vectors), axis=1)
        codes[:, l] = c
        picked = cb.vectors[c]
        z_star += picked
        r = r - picked
        residuals[:, l + 1] = r
    return codes, residuals, z_star


def quantize_residual(z: np.ndarray, codebooks: list[Codebook]
                      ) -> tuple[list[int], list[np.ndarray], np.ndarray]:
    """Single-vector residual quantization: (codes c_1..c_L, residuals r_0..r_L, z_star)."""
    z = np.asarray(z, dtype=np.float64)
    codes, residuals, z_star = quantize_batch(z[None, :], codebooks)
    return [int(c) for c in codes[0]], [residuals[0, l] for l in range(len(codebooks) + 1)], z_star[0]


# ---------------------------------------------------------------------------
# MLP forward/backward

def _mlp_forward(weights: list[np.ndarray], biases: list[np.ndarray],
                 x: np.ndarray) -> tuple[np.ndarray, list[tuple[np.ndarray, np.ndarray]]]:
    """Affine layers with ReLU between them (none after the last). Returns caches."""
    caches = []
    h = x
    last = len(weights) - 1
    for k, (w, b) in enumerate(zip(weights, biases)):
        pre = h @ w + b
        caches.append((h, pre))
        h = np.maximum(pre, 0.0) if k < last else pre
    return h, caches


def _mlp_backward(weights: list[np.ndarray], caches: list[tuple[np.ndarray, np.ndarray]],
                  grad_out: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray], np.ndarray]:
    grad_w = [np.zeros(0)] * len(weights)
    grad_b = [np.zeros(0)] * len(weights)
    g = grad_out
    last = len(weights) - 1
    for k in range(last, -1, -1):
        inp, pre = caches[k]
        if k < last:
            g = g * (pre > 0.0)
        grad_w[k] = inp.T @ g
        grad_b[k] = g.sum(axis=0)
        g = g @ weights[k].T
    return grad_w, grad_b, g


def encode(model: RqVaeModel, x: np.ndarray) -> np.ndarray:
    out, _ = _mlp_forward(model.encoder_weights, model.encoder_biases, x)
    return out


def decode(model: RqVaeModel, z: np.ndarray) -> np.ndarray:
    out, _ = _mlp_forward(model.decoder_weights, model.decoder_biases, z)
    return out


# ---------------------------------------------------------------------------
# Losses

def forward_loss(model: RqVaeModel, batch: np.ndarray
                 ) -> tuple[np.ndarray, np.ndarray, float, float, float]:
    """Forward pass: returns (x_star, codes, l_rec, l_rq, l_total), batch means."""
    if batch.ndim != 2 or batch.shape[0] == 0:
        raise ValueError("batch must be non-empty and 2-D")
    z = encode(model, batch)
    codes, residuals, z_star = quantize_batch(z, model.codebooks)
    x_star = decode(model, z_star)
    l_rec = float(np.mean(np.sum((batch - x_star) ** 2, axis=1)))
    # numerically both sg branches share the same value: (1 + beta) * ||r_l||^2
    level_err = np.sum(residuals[:, 1:] ** 2, axis=2)       # (B, L): ||r_{l-1} - e||^2
    l_rq = float((1.0 + model.config.beta) * np.mean(np.sum(level_err, axis=1)))
    return x_star, codes, l_rec, l_rq, l_rec + l_rq


def _forward_backward(model: RqVaeModel, batch: np.ndarray):
    """Loss values plus analytic gradients for all parameter groups."""
    n = batch.shape[0]
    beta = model.config.beta
    z, enc_caches = _mlp_forward(model.encoder_weights, model.encoder_biases, batch)
    codes, residuals, z_star = quantize_batch(z, model.codebooks)
    x_star, dec_caches = _mlp_forward(model.decoder_weights, model.decoder_biases, z_star)

    l_rec = float(np.mean(np.sum((batch - x_star) ** 2, axis=1)))
    level_err = np.sum(residuals[:, 1:] ** 2, axis=2)
    l_rq = float((1.0 + beta) * np.mean(np.sum(level_err, axis=1)))

    # decoder gradients from the reconstruction loss
    d_xstar = 2.0 * (x_star - batch) / n
    dec_gw, dec_gb, d_zstar = _mlp_backward(model.decoder_weights, dec_caches, d_xstar)

    # encoder: straight-through reconstruction gradient + commitment branch
    d_z = d_zstar + (2.0 * beta / n) * residuals[:, 1:].sum(axis=1)
    enc_gw, enc_gb, _ = _mlp_backward(model.encoder_weights, enc_caches, d_z)

    # codebooks: sg-protected term, grad e_w = (2/B) * sum_{c_l=w} (e_w - r_{l-1})
    cb_grads = []
    for l, cb in enumerate(model.codebooks):
        g = np.zeros_like(cb.vectors)
        np.add.at(g, codes[:, l], (-2.0 / n) * residuals[:, l + 1])
        cb_grads.append(g)

    return l_rec, l_rq, codes, enc_gw, enc_gb, dec_gw, dec_gb, cb_grads


# ---------------------------------------------------------------------------
# Training

class _AdamW:
    """Decoupled-weight-decay Adam over a dict of named parameter arrays."""

    def __init__(self, params: dict[str, np.ndarray], weight_decay: float):
        self.params = params
        self.weight_decay = weight_decay
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0
        self.b1, self.b2, self.eps = 0.9, 0.999, 1e-8

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            update = (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)
            p -= lr * (update + self.weight_decay * p)


def parameter_arrays(model: RqVaeModel) -> dict[str, np.ndarray]:
    """Live views of encoder/decoder parameters keyed by stable names."""
    out: dict[str, np.ndarray] = {}
    for k, (w, b) in enumerate(zip(model.encoder_weights, model.encoder_biases)):
        out[f"enc{k}_w"], out[f"enc{k}_b"] = w, b
    for k, (w, b) in enumerate(zip(model.decoder_weights, model.decoder_biases)):
        out[f"dec{k}_w"], out[f"dec{k}_b"] = w, b
    return out


def _layer_dims(d_in: int, d_out: int, cfg: RqVaeConfig) -> list[int]:
    if cfg.n_layers == 1:
        return [d_in, d_out]
    return [d_in] + [cfg.hidden_dim] * (cfg.n_layers - 1) + [d_out]


def _init_affine(dims: list[int], rng: np.random.Generator
                 ) -> tuple[list[np.ndarray], list[np.ndarray]]:
    # small positive bias keeps rectifier pre-activations off the exact kink,
    # where one-sided derivatives would make finite-difference checks ill-posed
    weights, biases = [], []
    for a, b in zip(dims[:-1], dims[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / a), size=(a, b)))
        biases.append(np.full(b, 0.01))
    return weights, biases


def initialize_model(embeddings: EmbeddingMatrix, cfg: RqVaeConfig) -> RqVaeModel:
    """Seeded weight init plus per-level k-means codebook init on the first batch."""
    cfg.validate()
    if not embeddings.rows:
        raise ValueError("embedding matrix is empty")
    items = sorted(embeddings.rows)
    x = embeddings.matrix(items)
    n = x.shape[0]
    first = min(cfg.batch_size, n)
    if first < cfg.codebook_size:
        raise ValueError(
            f"first batch has {first} rows, fewer than codebook_size {cfg.codebook_size}")
    rng = np.random.default_rng(cfg.seed)
    enc_w, enc_b = _init_affine(_layer_dims(embeddings.dim, cfg.latent_dim, cfg), rng)
    dec_w, dec_b = _init_affine(_layer_dims(cfg.latent_dim, embeddings.dim, cfg), rng)
    model = RqVaeModel(encoder_weights=enc_w, encoder_biases=enc_b,
                       decoder_weights=dec_w, decoder_biases=dec_b,
                       codebooks=[], config=cfg, input_dim=embeddings.dim)
    batch = x[rng.permutation(n)[:first]]
    r = encode(model, batch)
    for level in range(1, cfg.code_len + 1):
        vectors = kmeans_init(r, cfg.codebook_size, cfg.kmeans_iters, rng)
        model.codebooks.append(Codebook(level=level, vectors=vectors))
        c = np.argmin(_sq_dists(r, vectors), axis=1)
        r = r - vectors[c]
    return model


def train_rqvae(embeddings: EmbeddingMatrix, cfg: RqVaeConfig) -> RqVaeModel:
    """Train encoder, decoder, and codebooks; deterministic for a fixed seed.

    Uses decoupled-weight-decay adaptive gradient steps with a linearly decaying
    step size. Codewords never selected during an epoch are reseeded to the
    encoder output of a randomly drawn item.
    """
    model = initialize_model(embeddings, cfg)
    items = sorted(embeddings.rows)
    x = embeddings.matrix(items)
    n = x.shape[0]
    rng = np.random.default_rng([cfg.seed, 1])  # stream separate from init's

    params = parameter_arrays(model)
    for l, cb in enumerate(model.codebooks):
        params[f"cb{l}"] = cb.vectors
    opt = _AdamW(params, cfg.weight_decay)

    model.loss_history.append(_eval_losses(model, x))
    for epoch in range(cfg.epochs):
        lr = cfg.learning_rate * (1.0 - epoch / max(1, cfg.epochs))
        perm = rng.permutation(n)
        used = [np.zeros(cfg.codebook_size, dtype=bool) for _ in model.codebooks]
        for start in range(0, n, cfg.batch_size):
            batch = x[perm[start:start + cfg.batch_size]]
            try:
                (l_rec, l_rq, codes, enc_gw, enc_gb,
                 dec_gw, dec_gb, cb_grads) = _forward_backward(model, batch)
            except ValueError as exc:  # non-finite activations inside the quantizer
                raise RuntimeError(f"non-finite loss at epoch {epoch}") from exc
            if not np.isfinite(l_rec + l_rq):
                raise RuntimeError(f"non-finite loss at epoch {epoch}")
            grads = {}
            for k in range(len(enc_gw)):
                grads[f"enc{k}_w"], grads[f"enc{k}_b"] = enc_gw[k], enc_gb[k]
            for k in range(len(dec_gw)):
                grads[f"dec{k}_w"], grads[f"dec{k}_b"] = dec_gw[k], dec_gb[k]
            for l, g in enumerate(cb_grads):
                grads[f"cb{l}"] = g
            opt.step(grads, lr)
            for l in range(len(model.codebooks)):
                used[l][np.unique(codes[:, l])] = True
        for l, cb in enumerate(model.codebooks):
            dead = np.flatnonzero(~used[l])
            if dead.size:
                picks = rng.integers(0, n, size=dead.size)
                cb.vectors[dead] = encode(model, x[picks])
        model.loss_history.append(_eval_losses(model, x))
    log.info("rqvae: trained %d epochs, l_rec %.6f -> %.6f", cfg.epochs,
             model.loss_history[0][0], model.loss_history[-1][0])
    return model


def _eval_losses(model: RqVaeModel, x: np.ndarray) -> tuple[float, float]:
    _, _, l_rec, l_rq, _ = forward_loss(model, x)
    return l_rec, l_rq


# ---------------------------------------------------------------------------
# Gradient checking

def recon_loss_gradients(model: RqVaeModel, batch: np.ndarray) -> dict[str, np.ndarray]:
    """Analytic reconstruction-loss gradients for encoder/decoder parameters.

    Codes are frozen at the current quantization; the encoder gradient is the
    straight-through path only (no commitment branch, matching gradient_check).
    """
    n = batch.shape[0]
    z, enc_caches = _mlp_forward(model.encoder_weights, model.encoder_biases, batch)
    _, _, z_star = quantize_batch(z, model.codebooks)
    x_star, dec_caches = _mlp_forward(model.decoder_weights, model.decoder_biases, z_star)
    d_xstar = 2.0 * (x_star - batch) / n
    dec_gw, dec_gb, d_zstar = _mlp_backward(model.decoder_weights, dec_caches, d_xstar)
    enc_gw, enc_gb, _ = _mlp_backward(model.encoder_weights, enc_caches, d_zstar)
    out: dict[str, np.ndarray] = {}
    for k in range(len(enc_gw)):
        out[f"enc{k}_w"], out[f"enc{k}_b"] = enc_gw[k], enc_gb[k]
    for k in range(len(dec_gw)):
        out[f"dec{k}_w"], out[f"dec{k}_b"] = dec_gw[k], dec_gb[k]
    return out


def finite_difference_gradients(model: RqVaeModel, batch: np.ndarray,
                                epsilon: float) -> dict[str, np.ndarray]:
    """Central differences of the straight-through surrogate reconstruction loss.

    The quantization offset z* - z is frozen at the base point so the surrogate
    is differentiable and matches the straight-through analytic gradient.
    """
    n = batch.shape[0]
    z0 = encode(model, batch)
    _, _, z_star0 = quantize_batch(z0, model.codebooks)
    offset = z_star0 - z0

    def surrogate() -> float:
        z = encode(model, batch)
        x_star = decode(model, z + offset)
        return float(np.mean(np.sum((batch - x_star) ** 2, axis=1)))

    out: dict[str, np.ndarray] = {}
    for name, arr in parameter_arrays(model).items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            plus = surrogate()
            flat[i] = orig - epsilon
            minus = surrogate()
            flat[i] = orig
            gflat[i] = (plus - minus) / (2.0 * epsilon)
        out[name] = g
    return out


def max_relative_error(analytic: dict[str, np.ndarray],
                       numeric: dict[str, np.ndarray]) -> float:
    scale = max(1.0, max(float(np.max(np.abs(g))) for g in analytic.values()))
    worst = 0.0
    for name, ga in analytic.items():
        gf = numeric[name]
        denom = np.maximum(np.abs(ga) + np.abs(gf), 1e-6 * scale)
        worst = max(worst, float(np.max(np.abs(ga - gf) / denom)))
    return worst


def gradient_check(model: RqVaeModel, batch: np.ndarray, epsilon: float = 1e-5) -> float:
    """Max relative error between analytic and central finite-difference gradients."""
    if batch.shape[0] > 8:
        raise ValueError("gradient_check expects a small batch (<= 8 rows)")
    if not 1e-6 <= epsilon <= 1e-3:
        raise ValueError(f"epsilon must be in [1e-6, 1e-3], got {epsilon}")
    analytic = recon_loss_gradients(model, batch)
    numeric = finite_difference_gradients(model, batch, epsilon)
    return max_relative_error(analytic, numeric)


# ---------------------------------------------------------------------------
# Code assignment

def assign_codes(model: RqVaeModel, embeddings: EmbeddingMatrix) -> dict[str, tuple[int, ...]]:
    """Encode and quantize every item into its raw L-level code tuple."""
    if embeddings.dim != model.input_dim:
        raise ValueError(f"embedding dim {embeddings.dim} != model input dim {model.input_dim}")
    items = sorted(embeddings.rows)
    codes, _, _ = quantize_batch(encode(model, embeddings.matrix(items)), model.codebooks)
    return {item: tuple(int(c) for c in codes[k]) for k, item in enumerate(items)}


def resolve_collisions(raw_codes: dict[str, tuple[int, ...]], index_type: str) -> ItemCodeTable:
    """Append a disambiguator: 0 for unique prefixes, else 1..m in item-id order."""
    groups: dict[tuple[int, ...], list[str]] = {}
    for item in sorted(raw_codes):
        groups.setdefault(tuple(raw_codes[item]), []).append(item)
    code_len = len(next(iter(raw_codes.values()))) if raw_codes else 0
    codes: dict[str, tuple[int, ...]] = {}
    for prefix, members in groups.items():
        if len(members) == 1:
            codes[members[0]] = prefix + (0,)
        else:
            for rank, item in enumerate(members, start=1):
                codes[item] = prefix + (rank,)
    table = ItemCodeTable(index_type=index_type, code_len=code_len, codes=codes)
    if len(set(table.codes.values())) != len(table.codes):
        raise AssertionError("collision resolution produced duplicate tuples")
    return table


def write_code_table(table: ItemCodeTable, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for item in sorted(table.codes):
            fh.write(item + "\t" + "\t".join(str(c) for c in table.codes[item]) + "\n")


def load_code_table(path: str | Path, index_type: str) -> ItemCodeTable:
    codes: dict[str, tuple[int, ...]] = {}
    code_len = None
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        parts = line.split("\t")
        if len(parts) < 3:
            raise ValueError(f"{path}:{lineno}: expected item and code columns")
        tup = tuple(int(c) for c in parts[1:])
        if code_len is None:
            code_len = len(tup) - 1
        elif len(tup) - 1 != code_len:
            raise ValueError(f"{path}:{lineno}: inconsistent code length")
        codes[parts[0]] = tup
    if not codes:
        raise ValueError(f"{path}: empty code table")
    return ItemCodeTable(index_type=index_type, code_len=code_len, codes=codes)


# ---------------------------------------------------------------------------
# Checkpointing: flat binary of float64 arrays plus a text manifest

CKPT_MAGIC = "RQVAE_CKPT v1"


def save_model(model: RqVaeModel, prefix: str | Path) -> None:
    prefix = Path(prefix)
    arrays: list[tuple[str, np.ndarray]] = list(parameter_arrays(model).items())
    arrays += [(f"cb{l}", cb.vectors) for l, cb in enumerate(model.codebooks)]
    cfg = model.config
    cfg_line = " ".join(f"{f.name}={getattr(cfg, f.name)}" for f in fields(cfg))
    lines = [CKPT_MAGIC, f"input_dim {model.input_dim}", f"config {cfg_line}"]
    blob = bytearray()
    for name, arr in arrays:
        lines.append("array " + name + " " + " ".join(str(s) for s in arr.shape))
        blob += arr.astype("<f8").tobytes()
    prefix.with_suffix(".manifest").write_text("\n".join(lines) + "\n", encoding="utf-8")
    prefix.with_suffix(".bin").write_bytes(bytes(blob))


def load_model(prefix: str | Path) -> RqVaeModel:
    prefix = Path(prefix)
    lines = prefix.with_suffix(".manifest").read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != CKPT_MAGIC:
        raise ValueError(f"{prefix}: bad checkpoint magic")
    input_dim = int(lines[1].split()[1])
    cfg_kv = dict(kv.split("=", 1) for kv in lines[2].split(" ", 1)[1].split())
    cfg = RqVaeConfig(**{f.name: type(getattr(RqVaeConfig(), f.name))(cfg_kv[f.name])
                         for f in fields(RqVaeConfig) if f.name in cfg_kv})
    blob = prefix.with_suffix(".bin").read_bytes()
    offset = 0
    arrays: dict[str, np.ndarray] = {}
    for line in lines[3:]:
        if not line.startswith("array "):
            continue
        parts = line.split()
        name, shape = parts[1], tuple(int(s) for s in parts[2:])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset += count * 8
        arrays[name] = arr
    enc_w, enc_b, dec_w, dec_b = [], [], [], []
    k = 0
    while f"enc{k}_w" in arrays:
        enc_w.append(arrays[f"enc{k}_w"])
        enc_b.append(arrays[f"enc{k}_b"])
        k += 1
    k = 0
    while f"dec{k}_w" in arrays:
        dec_w.append(arrays[f"dec{k}_w"])
        dec_b.append(arrays[f"dec{k}_b"])
        k += 1
    codebooks = []
    l = 0
    while f"cb{l}" in arrays:
        codebooks.append(Codebook(level=l + 1, vectors=arrays[f"cb{l}"]))
        l += 1
    return RqVaeModel(encoder_weights=enc_w, encoder_biases=enc_b,
                      decoder_weights=dec_w, decoder_biases=dec_b,
                      codebooks=codebooks, config=cfg, input_dim=input_dim)

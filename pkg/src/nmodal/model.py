"""Projection heads, the multi-head model, training, and checkpoints.

Each modality owns a small trainable head that maps its frozen raw embedding
into the shared unit sphere:

    p = W1 x + b1
    h = W2 gelu(p) + b2
    h = dropout(h)            (training only, inverted scaling)
    z = l2_normalize(layer_norm(h + p))

Backward passes are written out by hand, including the Jacobians of layer
norm and of the final L2 normalization, so gradients are exact and the whole
trainer has no autodiff dependency.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from nmodal.errors import (
    DimMismatchError,
    MagicError,
    NumericError,
    SchemaError,
    TruncationError,
    VersionError,
)
from nmodal.data import EmbeddingBundle
from nmodal.losses import LossConfig, ModalBatch, nmodal_clip_loss, nmodal_triplet_loss
from nmodal.ops import AdamState, adam_step, gelu, gelu_grad
from nmodal.seeding import rng_for

NMCK_MAGIC = b"NMCK"
NMCK_VERSION = 1

LN_EPS = 1e-5

# Serialization and optimizer traversal both follow this order.
PARAM_NAMES = ("W1", "b1", "W2", "b2", "ln_gain", "ln_bias")


@dataclass
class ProjectionHead:
    """One modality's trainable map into the shared latent space."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    ln_gain: np.ndarray
    ln_bias: np.ndarray
    dropout_rate: float = 0.1

    @property
    def d_in(self) -> int:
        return self.W1.shape[0]

    @property
    def d_out(self) -> int:
        return self.W1.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def check(self) -> None:
        d_in, d_out = self.W1.shape
        if d_out < 1:
            raise ValueError("d_out must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        shapes = {
            "W1": (d_in, d_out),
            "b1": (d_out,),
            "W2": (d_out, d_out),
            "b2": (d_out,),
            "ln_gain": (d_out,),
            "ln_bias": (d_out,),
        }
        for name, want in shapes.items():
            arr = getattr(self, name)
            if arr.shape != want:
                raise DimMismatchError(f"head parameter {name} has shape {arr.shape}, expected {want}")
            if not np.all(np.isfinite(arr)):
                raise NumericError(f"head parameter {name} has non-finite entries")

    def copy(self) -> "ProjectionHead":
        return ProjectionHead(
            W1=self.W1.copy(),
            b1=self.b1.copy(),
            W2=self.W2.copy(),
            b2=self.b2.copy(),
            ln_gain=self.ln_gain.copy(),
            ln_bias=self.ln_bias.copy(),
            dropout_rate=self.dropout_rate,
        )


def init_head(d_in: int, d_out: int, dropout_rate: float, rng) -> ProjectionHead:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, identity norm."""
    s1 = 1.0 / np.sqrt(d_in)
    s2 = 1.0 / np.sqrt(d_out)
    return ProjectionHead(
        W1=rng.uniform(-s1, s1, size=(d_in, d_out)),
        b1=np.zeros(d_out),
        W2=rng.uniform(-s2, s2, size=(d_out, d_out)),
        b2=np.zeros(d_out),
        ln_gain=np.ones(d_out),
        ln_bias=np.zeros(d_out),
        dropout_rate=dropout_rate,
    )


@dataclass
class HeadCache:
    """Intermediates saved by a forward pass for the matching backward pass."""

    head: ProjectionHead
    x: np.ndarray
    p: np.ndarray
    g: np.ndarray
    mask: np.ndarray | None
    r: np.ndarray
    xhat: np.ndarray
    inv: np.ndarray
    z: np.ndarray
    norm: np.ndarray


def head_forward_batch(head: ProjectionHead, x: np.ndarray, train_mode: bool = False, rng=None):
    """Forward a (B, d_in) block through one head; returns ((B, d_out) unit rows, cache)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != head.d_in:
        raise DimMismatchError(f"input shape {x.shape} does not match head d_in {head.d_in}")
    p = x @ head.W1 + head.b1
    g = gelu(p)
    h = g @ head.W2 + head.b2
    mask = None
    if train_mode and head.dropout_rate > 0.0:
        if rng is None:
            raise ValueError("training-mode forward with nonzero dropout needs an rng")
        keep = 1.0 - head.dropout_rate
        mask = (rng.random(h.shape) < keep).astype(np.float64)
        h = h * mask / keep
    r = h + p
    mu = r.mean(axis=1, keepdims=True)
    var = np.mean((r - mu) ** 2, axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (r - mu) * inv
    y = head.ln_gain * xhat + head.ln_bias
    norm = np.linalg.norm(y, axis=1, keepdims=True)
    if np.any(norm == 0.0):
        raise NumericError("zero-norm pre-normalization output")
    z = y / norm
    cache = HeadCache(head=head, x=x, p=p, g=g, mask=mask, r=r, xhat=xhat, inv=inv, z=z, norm=norm)
    return z, cache


def head_forward(head: ProjectionHead, x: np.ndarray, train_mode: bool = False, rng=None):
    """Single-vector convenience wrapper around the batched forward."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimMismatchError(f"expected a vector, got shape {x.shape}")
    z, cache = head_forward_batch(head, x[None, :], train_mode=train_mode, rng=rng)
    return z[0], cache


def head_backward(cache: HeadCache, grad_z: np.ndarray):
    """Exact gradients of the forward map.

    Returns (parameter grads keyed like PARAM_NAMES, grad wrt the input block).
    Parameter grads are summed over the batch rows.
    """
    head = cache.head
    dz = np.asarray(grad_z, dtype=np.float64)
    if dz.ndim == 1:
        dz = dz[None, :]
    if dz.shape != cache.z.shape:
        raise DimMismatchError(f"grad shape {dz.shape} does not match cached output {cache.z.shape}")

    # l2 normalization: dy = (dz - z (z . dz)) / ||y||
    zdot = np.sum(dz * cache.z, axis=1, keepdims=True)
    dy = (dz - cache.z * zdot) / cache.norm

    dgain = np.sum(dy * cache.xhat, axis=0)
    dbias = np.sum(dy, axis=0)
    dxhat = dy * head.ln_gain
    dr = cache.inv * (
        dxhat
        - dxhat.mean(axis=1, keepdims=True)
        - cache.xhat * np.mean(dxhat * cache.xhat, axis=1, keepdims=True)
    )

    dh = dr
    if cache.mask is not None:
        dh = dh * cache.mask / (1.0 - head.dropout_rate)
    dW2 = cache.g.T @ dh
    db2 = np.sum(dh, axis=0)
    dg = dh @ head.W2.T

    dp = dg * gelu_grad(cache.p) + dr
    dW1 = cache.x.T @ dp
    db1 = np.sum(dp, axis=0)
    dx = dp @ head.W1.T

    grads = {"W1": dW1, "b1": db1, "W2": dW2, "b2": db2, "ln_gain": dgain, "ln_bias": dbias}
    return grads, dx


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 128
    learning_rate: float = 1e-3
    seed: int = 0
    loss_config: LossConfig = field(default_factory=LossConfig)
    d_out: int = 256
    dropout: float = 0.1
    shuffle: bool = True

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.d_out < 1:
            raise ValueError("d_out must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


@dataclass
class ModelState:
    """Everything a resumed trainer or an evaluator needs."""

    modality_names: list[str]
    modality_dims: list[int]
    heads: list[ProjectionHead]
    moments: list[dict[str, AdamState]]
    step_count: int
    rng_seed: int
    loss_config: LossConfig
    d_out: int

    def check(self) -> None:
        m = len(self.modality_names)
        if m < 2:
            raise SchemaError("a model needs at least two modalities")
        if not (len(self.heads) == len(self.modality_dims) == len(self.moments) == m):
            raise SchemaError("modality bookkeeping lists disagree in length")
        for name, dim, head in zip(self.modality_names, self.modality_dims, self.heads):
            head.check()
            if head.d_in != dim:
                raise DimMismatchError(f"head for {name!r} has d_in {head.d_in}, declared {dim}")
            if head.d_out != self.d_out:
                raise DimMismatchError(f"head for {name!r} has d_out {head.d_out}, expected {self.d_out}")

    def head_for(self, modality: str) -> ProjectionHead:
        try:
            return self.heads[self.modality_names.index(modality)]
        except ValueError:
            raise KeyError(f"model has no modality {modality!r}") from None


@dataclass
class TrainLog:
    step_losses: list[float]
    epoch_mean_losses: list[float]
    steps_per_epoch: int


def init_state(bundle: EmbeddingBundle, config: TrainConfig) -> ModelState:
    names = bundle.modality_names
    dims = [d for _, d in bundle.modalities]
    if len(names) < 2:
        raise SchemaError("training needs at least two modalities")
    heads = [
        init_head(dim, config.d_out, config.dropout, rng_for(config.seed, f"init:{name}"))
        for name, dim in zip(names, dims)
    ]
    moments = [
        {pname: AdamState.zeros_like(arr) for pname, arr in head.params().items()} for head in heads
    ]
    state = ModelState(
        modality_names=list(names),
        modality_dims=dims,
        heads=heads,
        moments=moments,
        step_count=0,
        rng_seed=config.seed,
        loss_config=config.loss_config,
        d_out=config.d_out,
    )
    state.check()
    return state


def _loss_fn(config: LossConfig):
    if config.kind == "clip":
        return nmodal_clip_loss
    if config.kind == "triplet":
        return nmodal_triplet_loss
    raise ValueError(f"unknown loss kind {config.kind!r}")


def train(bundle: EmbeddingBundle, config: TrainConfig) -> tuple[ModelState, TrainLog]:
    """Fit all projection heads on one bundle; deterministic given the seed."""
    bundle.check()
    if bundle.post_count < config.batch_size:
        raise ValueError(
            f"batch_size {config.batch_size} exceeds the {bundle.post_count}-post bundle"
        )
    state = init_state(bundle, config)
    loss_fn = _loss_fn(config.loss_config)
    raw = [bundle.matrix(name) for name in state.modality_names]
    m = len(raw)

    steps_per_epoch = bundle.post_count // config.batch_size
    step_losses: list[float] = []
    epoch_means: list[float] = []
    for epoch in range(config.epochs):
        if config.shuffle:
            perm = rng_for(config.seed, f"shuffle:{epoch}").permutation(bundle.post_count)
        else:
            perm = np.arange(bundle.post_count)
        epoch_losses: list[float] = []
        for step in range(steps_per_epoch):
            idx = perm[step * config.batch_size : (step + 1) * config.batch_size]
            zs = []
            caches = []
            for mi in range(m):
                rng = rng_for(config.seed, f"dropout:{epoch}:{step}:{mi}")
                z, cache = head_forward_batch(state.heads[mi], raw[mi][idx], train_mode=True, rng=rng)
                zs.append(z)
                caches.append(cache)
            batch = ModalBatch(embeddings=np.stack(zs, axis=0), validate=False)
            loss, grad_z = loss_fn(batch, config.loss_config)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch} step {step}")
            step_losses.append(loss)
            epoch_losses.append(loss)

            state.step_count += 1
            for mi in range(m):
                grads, _ = head_backward(caches[mi], grad_z[mi])
                head = state.heads[mi]
                for pname in PARAM_NAMES:
                    new_p, new_m = adam_step(
                        getattr(head, pname),
                        grads[pname],
                        state.moments[mi][pname],
                        state.step_count,
                        lr=config.learning_rate,
                    )
                    setattr(head, pname, new_p)
                    state.moments[mi][pname] = new_m
        epoch_means.append(float(np.mean(epoch_losses)))

    return state, TrainLog(step_losses=step_losses, epoch_mean_losses=epoch_means, steps_per_epoch=steps_per_epoch)


def embed(state: ModelState, raw: np.ndarray, modality: str) -> np.ndarray:
    """Project one raw vector of the named modality; unit-norm output."""
    head = state.head_for(modality)
    z, _ = head_forward(head, raw, train_mode=False)
    return z


def embed_matrix(state: ModelState, raw: np.ndarray, modality: str) -> np.ndarray:
    """Project a (P, d_in) block of one modality; (P, d_out) unit rows."""
    head = state.head_for(modality)
    z, _ = head_forward_batch(head, raw, train_mode=False)
    return z


def embed_bundle(state: ModelState, bundle: EmbeddingBundle) -> np.ndarray:
    """Project every artifact of a bundle; returns (M, P, d_out).

    The bundle must declare exactly the model's modalities, in order.
    """
    names = bundle.modality_names
    dims = [d for _, d in bundle.modalities]
    if names != state.modality_names or dims != state.modality_dims:
        raise DimMismatchError(
            f"bundle modalities {list(zip(names, dims))} do not match the model's "
            f"{list(zip(state.modality_names, state.modality_dims))}"
        )
    return np.stack([embed_matrix(state, bundle.matrix(name), name) for name in names], axis=0)


# --- checkpoint serialization ----------------------------------------------


def _loss_config_dict(cfg: LossConfig) -> dict:
    return {
        "kind": cfg.kind,
        "tau": cfg.tau,
        "margin": cfg.margin,
        "alpha": cfg.alpha,
        "pair_normalization": cfg.pair_normalization,
        "reversed_triplet_sign": cfg.reversed_triplet_sign,
    }


def save_checkpoint(state: ModelState, sink=None):
    """Serialize to NMCK bytes; pass a path or file object to write directly."""
    state.check()
    header = {
        "modalities": [[n, d] for n, d in zip(state.modality_names, state.modality_dims)],
        "d_out": state.d_out,
        "dropout": state.heads[0].dropout_rate,
        "loss_config": _loss_config_dict(state.loss_config),
        "step_count": state.step_count,
        "rng_seed": state.rng_seed,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf = io.BytesIO()
    buf.write(NMCK_MAGIC)
    buf.write(struct.pack("<H", NMCK_VERSION))
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    for head in state.heads:
        for pname in PARAM_NAMES:
            buf.write(np.ascontiguousarray(getattr(head, pname), dtype="<f8").tobytes())
    for mi, head in enumerate(state.heads):
        for pname in PARAM_NAMES:
            st = state.moments[mi][pname]
            buf.write(np.ascontiguousarray(st.m, dtype="<f8").tobytes())
            buf.write(np.ascontiguousarray(st.v, dtype="<f8").tobytes())
    data = buf.getvalue()
    if sink is None:
        return data
    if isinstance(sink, (str, bytes)) or hasattr(sink, "__fspath__"):
        with open(sink, "wb") as fh:
            fh.write(data)
    else:
        sink.write(data)
    return None


def _param_shapes(d_in: int, d_out: int) -> dict[str, tuple]:
    return {
        "W1": (d_in, d_out),
        "b1": (d_out,),
        "W2": (d_out, d_out),
        "b2": (d_out,),
        "ln_gain": (d_out,),
        "ln_bias": (d_out,),
    }


def load_checkpoint(source) -> ModelState:
    """Parse NMCK bytes (or a path) back into a ModelState, bit-exactly."""
    if isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    else:
        with open(source, "rb") as fh:
            data = fh.read()
    view = io.BytesIO(data)

    def take(n: int, what: str) -> bytes:
        chunk = view.read(n)
        if len(chunk) != n:
            raise TruncationError(f"checkpoint ended while reading {what}")
        return chunk

    magic = take(4, "magic")
    if magic != NMCK_MAGIC:
        raise MagicError(f"bad magic {magic!r}, expected {NMCK_MAGIC!r}")
    (version,) = struct.unpack("<H", take(2, "version"))
    if version != NMCK_VERSION:
        raise VersionError(f"unsupported checkpoint version {version}")
    (hlen,) = struct.unpack("<I", take(4, "header length"))
    try:
        header = json.loads(take(hlen, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SchemaError(f"unreadable checkpoint header: {exc}") from exc
    try:
        modalities = [(str(n), int(d)) for n, d in header["modalities"]]
        d_out = int(header["d_out"])
        dropout = float(header["dropout"])
        lc = header["loss_config"]
        loss_config = LossConfig(
            kind=str(lc["kind"]),
            tau=float(lc["tau"]),
            margin=float(lc["margin"]),
            alpha=float(lc["alpha"]),
            pair_normalization=str(lc["pair_normalization"]),
            reversed_triplet_sign=bool(lc["reversed_triplet_sign"]),
        )
        step_count = int(header["step_count"])
        rng_seed = int(header["rng_seed"])
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"checkpoint header missing or malformed field: {exc}") from exc

    def tensor(shape: tuple, what: str) -> np.ndarray:
        count = int(np.prod(shape)) if shape else 1
        raw = take(8 * count, what)
        return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()

    heads = []
    for name, d_in in modalities:
        shapes = _param_shapes(d_in, d_out)
        vals = {p: tensor(s, f"{name} parameter {p}") for p, s in shapes.items()}
        heads.append(ProjectionHead(dropout_rate=dropout, **vals))
    moments = []
    for name, d_in in modalities:
        shapes = _param_shapes(d_in, d_out)
        per = {}
        for p, s in shapes.items():
            m = tensor(s, f"{name} moment m of {p}")
            v = tensor(s, f"{name} moment v of {p}")
            per[p] = AdamState(m=m, v=v)
        moments.append(per)
    if view.read(1):
        raise SchemaError("trailing bytes after the declared tensors")

    state = ModelState(
        modality_names=[n for n, _ in modalities],
        modality_dims=[d for _, d in modalities],
        heads=heads,
        moments=moments,
        step_count=step_count,
        rng_seed=rng_seed,
        loss_config=loss_config,
        d_out=d_out,
    )
    state.check()
    return state

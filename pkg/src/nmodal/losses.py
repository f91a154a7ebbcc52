"""Batch losses for aligning M modalities on a shared unit sphere.

Two families are provided, each returning both the scalar loss and its exact
analytic gradient with respect to every projected embedding:

* a generalized triplet loss — every (anchor-modality, positive-modality,
  negative-modality) combination contributes a hinge term per batch element,
  with the negative drawn from the cyclically next element in the batch;
* a generalized CLIP/InfoNCE loss — one softmax cross-entropy direction per
  ordered modality pair, summed and averaged.

Similarity is the plain dot product; inputs are expected to be unit vectors
(the projection heads normalize their outputs), so dots equal cosines.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from nmodal.ops import l2_normalize

LOSS_KINDS = ("clip", "triplet")
PAIR_NORMALIZATIONS = ("ordered_pair_count", "two_n")


@dataclass
class LossConfig:
    """Hyperparameters shared by both loss families.

    ``tau`` only matters for the clip kind, ``margin``/``alpha`` only for the
    triplet kind.  ``pair_normalization`` picks the divisor applied to the
    clip loss's sum over ordered modality pairs: the pair count M(M-1)
    (default; makes M=2 reduce to the classic bimodal loss) or 2M.
    ``reversed_triplet_sign`` swaps the hinge orientation so that positives
    are pushed away instead of pulled close — useful only for comparing
    against the non-standard orientation; training with it diverges from the
    alignment objective.
    """

    kind: str = "clip"
    tau: float = 1.0
    margin: float = 0.2
    alpha: float = 1.0
    pair_normalization: str = "ordered_pair_count"
    reversed_triplet_sign: bool = False

    def __post_init__(self) -> None:
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {LOSS_KINDS}")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.margin < 0:
            raise ValueError("margin must be >= 0")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.pair_normalization not in PAIR_NORMALIZATIONS:
            raise ValueError(
                f"unknown pair_normalization {self.pair_normalization!r}; expected one of {PAIR_NORMALIZATIONS}"
            )


@dataclass
class ModalBatch:
    """B aligned posts, each with one unit embedding per modality.

    ``embeddings`` has shape (M, B, d); row i of every modality stack belongs
    to the same post, identified by ``post_ids[i]`` when ids are provided.
    """

    embeddings: np.ndarray
    post_ids: list[str] | None = None
    validate: bool = field(default=True, repr=False)

    def __post_init__(self) -> None:
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if self.embeddings.ndim != 3:
            raise ValueError("embeddings must have shape (modalities, batch, dim)")
        if self.validate:
            self.check()

    def check(self) -> None:
        m, b, d = self.embeddings.shape
        if m < 2:
            raise ValueError("a modal batch needs at least 2 modalities")
        if b < 1:
            raise ValueError("batch size must be >= 1")
        if d < 1:
            raise ValueError("embedding dim must be >= 1")
        if self.post_ids is not None and len(self.post_ids) != b:
            raise ValueError("post_ids length must equal the batch size")
        if not np.all(np.isfinite(self.embeddings)):
            raise ValueError("embeddings contain non-finite entries")
        norms = np.linalg.norm(self.embeddings, axis=2)
        if not np.allclose(norms, 1.0, atol=1e-8):
            worst = float(np.abs(norms - 1.0).max())
            raise ValueError(f"embeddings must be unit vectors (worst norm deviation {worst:.3g})")

    @classmethod
    def from_stacks(cls, stacks, post_ids=None, validate: bool = True) -> "ModalBatch":
        """Stack per-modality (B, d) arrays into a batch."""
        arr = np.stack([np.asarray(s, dtype=np.float64) for s in stacks], axis=0)
        return cls(embeddings=arr, post_ids=post_ids, validate=validate)

    @property
    def modality_count(self) -> int:
        return self.embeddings.shape[0]

    @property
    def batch_size(self) -> int:
        return self.embeddings.shape[1]


def triplet_term(anchor, positive, negative, margin: float = 0.2, reversed_sign: bool = False) -> float:
    """Single hinge term over one (anchor, positive, negative) triple.

    Standard orientation: max(sim(A,N) - sim(A,P) + margin, 0), where sim is
    the dot product of the normalized inputs.
    """
    if margin < 0:
        raise ValueError("margin must be >= 0")
    a = l2_normalize(anchor)
    p = l2_normalize(positive)
    n = l2_normalize(negative)
    if not (a.shape == p.shape == n.shape):
        raise ValueError("anchor, positive, and negative must share a dimension")
    sim_ap = float(a @ p)
    sim_an = float(a @ n)
    s = (sim_ap - sim_an + margin) if reversed_sign else (sim_an - sim_ap + margin)
    return max(s, 0.0)


def nmodal_triplet_loss(batch: ModalBatch, config: LossConfig) -> tuple[float, np.ndarray]:
    """Generalized triplet loss over a batch, with gradients.

    Every batch element i contributes the full M^3 grid of hinge terms
    max(sim(A,N) - sim(A,P) + margin, 0) with A = z[a][i], P = z[p][i] and
    N = z[q][(i+1) mod B] — the negative comes from the cyclically next post
    in the batch, for every combination of modalities (a, p, q), with no
    index exclusions.  The hinge subgradient takes the zero branch at the
    kink.  The scalar is accumulated with compensated summation so repeated
    identical terms add up exactly.
    """
    if config.kind != "triplet":
        raise ValueError(f"config.kind must be 'triplet', got {config.kind!r}")
    z = batch.embeddings
    mods, bsz, _ = z.shape
    if bsz == 0:
        raise ValueError("batch size must be >= 1")
    if mods < 2:
        raise ValueError("at least 2 modalities required")
    if bsz == 1:
        warnings.warn(
            "batch size 1: the cyclic negative (i+1) mod 1 falls back onto the "
            "anchor's own post, so every term degenerates to the margin hinge",
            stacklevel=2,
        )
    margin = config.margin
    reverse = config.reversed_triplet_sign
    terms: list[float] = []
    grads = np.zeros_like(z)
    for i in range(bsz):
        nxt = (i + 1) % bsz
        for a in range(mods):
            za = z[a, i]
            for p in range(mods):
                zp = z[p, i]
                sim_ap = float(za @ zp)
                for q in range(mods):
                    zq = z[q, nxt]
                    sim_aq = float(za @ zq)
                    s = (sim_ap - sim_aq + margin) if reverse else (sim_aq - sim_ap + margin)
                    if s > 0.0:
                        terms.append(s)
                        if reverse:
                            grads[a, i] += zp - zq
                            grads[p, i] += za
                            grads[q, nxt] -= za
                        else:
                            grads[a, i] += zq - zp
                            grads[p, i] -= za
                            grads[q, nxt] += za
    loss = config.alpha * math.fsum(terms)
    grads *= config.alpha
    return loss, grads


def _directional_clip(z_query: np.ndarray, z_key: np.ndarray, tau: float) -> tuple[float, np.ndarray, np.ndarray]:
    """One InfoNCE direction: queries classify their matching key in-batch.

    Returns (mean cross-entropy, grad wrt queries, grad wrt keys).
    """
    bsz = z_query.shape[0]
    logits = z_query @ z_key.T / tau
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1)) + logits.max(axis=1)
    loss = float(np.mean(lse - np.diag(logits)))
    probs = np.exp(logits - lse[:, None])
    dlogits = (probs - np.eye(bsz)) / bsz
    grad_query = dlogits @ z_key / tau
    grad_key = dlogits.T @ z_query / tau
    return loss, grad_query, grad_key


def bimodal_clip_loss(z1, z2, tau: float = 1.0) -> tuple[float, tuple[np.ndarray, np.ndarray]]:
    """Classic two-modality contrastive loss, with gradients.

    With S[i, j] = z1[i] . z2[j] / tau, returns
    -(1/2B) * sum_i [log softmax_row(S)[i, i] + log softmax_col(S)[i, i]].
    """
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    if z1.shape != z2.shape or z1.ndim != 2:
        raise ValueError("z1 and z2 must be (B, d) stacks of equal shape")
    if z1.shape[0] == 0:
        raise ValueError("batch size must be >= 1")
    if tau <= 0:
        raise ValueError("tau must be > 0")
    fwd_loss, g1a, g2a = _directional_clip(z1, z2, tau)
    bwd_loss, g2b, g1b = _directional_clip(z2, z1, tau)
    loss = 0.5 * (fwd_loss + bwd_loss)
    return loss, (0.5 * (g1a + g1b), 0.5 * (g2a + g2b))


def nmodal_clip_loss(batch: ModalBatch, config: LossConfig) -> tuple[float, np.ndarray]:
    """Generalized contrastive loss over all ordered modality pairs.

    Each ordered pair (m1, m2), m1 != m2, contributes a one-directional batch
    InfoNCE term in which modality-m1 embeddings classify their own post's
    modality-m2 embedding against the rest of the batch.  The M(M-1) terms
    are summed in fixed pair order and divided by the configured normalizer,
    so with the default pair-count normalizer the M=2 case equals
    ``bimodal_clip_loss`` term for term.
    """
    if config.kind != "clip":
        raise ValueError(f"config.kind must be 'clip', got {config.kind!r}")
    z = batch.embeddings
    mods, bsz, _ = z.shape
    if bsz == 0:
        raise ValueError("batch size must be >= 1")
    if mods < 2:
        raise ValueError("at least 2 modalities required")
    if config.pair_normalization == "ordered_pair_count":
        normalizer = mods * (mods - 1)
    else:
        normalizer = 2 * mods
    total = 0.0
    grads = np.zeros_like(z)
    for m1 in range(mods):
        for m2 in range(mods):
            if m1 == m2:
                continue
            term, g_query, g_key = _directional_clip(z[m1], z[m2], config.tau)
            total += term
            grads[m1] += g_query
            grads[m2] += g_key
    return total / normalizer, grads / normalizer

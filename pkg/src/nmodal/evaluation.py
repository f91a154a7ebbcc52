"""Cross-modal post-retrieval recall, the projection-dim sweep, and timing.

The retrieval protocol: every artifact of every population post becomes a
query. A query is compared, by dot product, against every artifact of every
OTHER modality in the population. Its own vector is never compared, but its
own post stays in the candidate set through that post's other-modality
artifacts. Each candidate post is scored by summing the similarities of its
compared artifacts, posts are ranked descending with ties broken by
ascending post id, and recall@K is the fraction of queries whose source post
lands in the top K.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from nmodal.data import EmbeddingBundle, SynthConfig, generate_synthetic, split_bundle
from nmodal.losses import LossConfig
from nmodal.model import ModelState, TrainConfig, embed_bundle, train
from nmodal.seeding import derive_seed, rng_for

AGGREGATIONS = ("sum_all", "topk_filter")


@dataclass
class EvalConfig:
    population_size: int = 100
    ks: list[int] = field(default_factory=lambda: [1, 5, 10, 25])
    trials: int = 5
    aggregation: str = "sum_all"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.ks:
            raise ValueError("at least one K required")
        if any(k < 1 for k in self.ks):
            raise ValueError("every K must be >= 1")
        if self.population_size < max(self.ks):
            raise ValueError("population_size must be >= max(ks)")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}")


@dataclass
class RecallReport:
    model: str
    ks: list[int]
    trials: int
    population_size: int
    queries_per_trial: int
    aggregation: str
    per_trial: dict[int, list[float]]
    mean: dict[int, float]
    stddev: dict[int, float]
    trial_runtimes: list[float]

    def rows(self, include_runtime: bool = False):
        runtime = float(np.mean(self.trial_runtimes)) if include_runtime else None
        return [
            {
                "model": self.model,
                "k": k,
                "mean": self.mean[k],
                "stddev": self.stddev[k],
                "trials": self.trials,
                "runtime_seconds": runtime,
            }
            for k in self.ks
        ]

    def to_json(self, include_runtime: bool = False) -> str:
        doc = {
            "aggregation": self.aggregation,
            "population_size": self.population_size,
            "queries_per_trial": self.queries_per_trial,
            "rows": self.rows(include_runtime=include_runtime),
        }
        return json.dumps(doc, sort_keys=True, indent=2)

    def format_table(self) -> str:
        head = ["model"] + [f"R@{k}" for k in self.ks]
        row = [self.model] + [f"{self.mean[k]:.4f}±{self.stddev[k]:.4f}" for k in self.ks]
        widths = [max(len(h), len(r)) for h, r in zip(head, row)]
        fmt = "  ".join(f"{{:<{w}}}" for w in widths)
        return fmt.format(*head) + "\n" + fmt.format(*row)


def _aggregate_report(model: str, cfg: EvalConfig, queries: int, per_trial, runtimes) -> RecallReport:
    mean = {k: float(np.mean(per_trial[k])) for k in cfg.ks}
    std = {
        k: float(np.std(per_trial[k], ddof=1)) if len(per_trial[k]) > 1 else 0.0 for k in cfg.ks
    }
    return RecallReport(
        model=model,
        ks=list(cfg.ks),
        trials=cfg.trials,
        population_size=cfg.population_size,
        queries_per_trial=queries,
        aggregation=cfg.aggregation,
        per_trial=per_trial,
        mean=mean,
        stddev=std,
        trial_runtimes=runtimes,
    )


def recall_over_population(z: np.ndarray, post_ids, ks, aggregation: str = "sum_all"):
    """Recall@K over one population given projected embeddings (M, P, d).

    Returns {k: recall}. The scorer is vectorized; every query-candidate
    similarity it uses pairs artifacts of different modalities only.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 3:
        raise ValueError(f"expected (M, P, d) embeddings, got shape {z.shape}")
    m_count, p_count, _ = z.shape
    if m_count < 2:
        raise ValueError("retrieval needs at least two modalities")
    ids = list(post_ids)
    if len(ids) != p_count:
        raise ValueError("post id count does not match the population size")
    if len(set(ids)) != p_count:
        raise ValueError("duplicate post ids in the population")
    if any(k > p_count for k in ks):
        raise ValueError("K exceeds the population size")

    # Sort the population by ascending id so a stable descending-score sort
    # breaks ties the documented way.
    order = sorted(range(p_count), key=lambda i: ids[i])
    zs = z[:, order, :]

    hits = {k: 0 for k in ks}
    total = z.shape[0] * p_count
    if aggregation == "sum_all":
        for m in range(m_count):
            # accumulate per modality pair rather than via sum-all-minus-self:
            # the subtraction would round exact ties away and the id tie-break
            # below would never see them
            scores = np.zeros((p_count, p_count))
            for other in range(m_count):
                if other != m:
                    scores += zs[m] @ zs[other].T
            ranking = np.argsort(-scores, axis=1, kind="stable")
            pos = np.empty_like(ranking)
            np.put_along_axis(pos, ranking, np.broadcast_to(np.arange(p_count), ranking.shape), axis=1)
            own = np.diagonal(pos)
            for k in ks:
                hits[k] += int(np.sum(own < k))
        return {k: hits[k] / total for k in ks}

    if aggregation != "topk_filter":
        raise ValueError(f"unknown aggregation {aggregation!r}")

    # topk_filter: per query keep only the K*M most similar cross-modal
    # artifacts, then sum the survivors per post. Rankings depend on K.
    out = {}
    others_by_m = [[o for o in range(m_count) if o != m] for m in range(m_count)]
    for k in ks:
        keep = min(k * m_count, (m_count - 1) * p_count)
        hit = 0
        for m in range(m_count):
            others = others_by_m[m]
            cand = zs[others]  # (M-1, P, d)
            post_of = np.tile(np.arange(p_count), len(others))
            for i in range(p_count):
                sims = (cand @ zs[m, i]).ravel()
                top = np.argsort(-sims, kind="stable")[:keep]
                scores = np.bincount(post_of[top], weights=sims[top], minlength=p_count)
                ranking = np.argsort(-scores, kind="stable")
                rank_of_own = int(np.where(ranking == i)[0][0])
                if rank_of_own < k:
                    hit += 1
        out[k] = hit / total
    return out


def default_model_label(state: ModelState) -> str:
    return f"{state.loss_config.kind}-{len(state.modality_names)}mod-d{state.d_out}"


def evaluate_recall(state: ModelState, bundle: EmbeddingBundle, cfg: EvalConfig, model_label: str | None = None) -> RecallReport:
    """Recall over cfg.trials freshly sampled populations of one bundle."""
    if bundle.post_count < cfg.population_size:
        raise ValueError(
            f"population_size {cfg.population_size} exceeds the {bundle.post_count}-post bundle"
        )
    z_all = embed_bundle(state, bundle)
    ids = np.array(bundle.post_ids())
    label = model_label or default_model_label(state)

    per_trial: dict[int, list[float]] = {k: [] for k in cfg.ks}
    runtimes: list[float] = []
    for t in range(cfg.trials):
        started = time.perf_counter()
        idx = rng_for(cfg.seed, f"trial:{t}").choice(bundle.post_count, size=cfg.population_size, replace=False)
        recalls = recall_over_population(z_all[:, idx, :], ids[idx], cfg.ks, cfg.aggregation)
        for k in cfg.ks:
            per_trial[k].append(recalls[k])
        runtimes.append(time.perf_counter() - started)
    queries = len(state.modality_names) * cfg.population_size
    return _aggregate_report(label, cfg, queries, per_trial, runtimes)


def run_retrieval_experiment(
    bundle: EmbeddingBundle,
    train_cfg: TrainConfig,
    eval_cfg: EvalConfig,
    retrain_per_trial: bool = True,
    model_label: str | None = None,
) -> RecallReport:
    """Train-and-evaluate with a held-out population pool.

    The bundle is split once; each trial samples a fresh population from the
    held-out posts. With retrain_per_trial a fresh model (derived seed) is
    trained for every trial; the fast mode trains a single model.
    """
    train_split, heldout = split_bundle(bundle)
    if heldout.post_count < eval_cfg.population_size:
        raise ValueError(
            f"held-out pool of {heldout.post_count} posts cannot host a "
            f"{eval_cfg.population_size}-post population"
        )

    per_trial: dict[int, list[float]] = {k: [] for k in eval_cfg.ks}
    runtimes: list[float] = []
    label = model_label
    if retrain_per_trial:
        for t in range(eval_cfg.trials):
            started = time.perf_counter()
            cfg_t = replace(train_cfg, seed=derive_seed(train_cfg.seed, f"trial-train:{t}"))
            state, _ = train(train_split, cfg_t)
            if label is None:
                label = default_model_label(state)
            one = replace(eval_cfg, trials=1, seed=derive_seed(eval_cfg.seed, f"trial-eval:{t}"))
            rep = evaluate_recall(state, heldout, one, model_label=label)
            for k in eval_cfg.ks:
                per_trial[k].append(rep.mean[k])
            runtimes.append(time.perf_counter() - started)
        queries = len(bundle.modality_names) * eval_cfg.population_size
        return _aggregate_report(label, eval_cfg, queries, per_trial, runtimes)

    state, _ = train(train_split, train_cfg)
    return evaluate_recall(state, heldout, eval_cfg, model_label=label)


def sweep_projection_dims(
    bundle: EmbeddingBundle,
    dims=None,
    train_cfg: TrainConfig | None = None,
    eval_cfg: EvalConfig | None = None,
) -> list[tuple[int, RecallReport]]:
    """Train one model per projection dimension and evaluate each."""
    dims = list(dims) if dims is not None else [64, 128, 256, 512, 768]
    train_cfg = train_cfg or TrainConfig()
    eval_cfg = eval_cfg or EvalConfig()
    out = []
    for dim in dims:
        cfg_d = replace(train_cfg, d_out=dim, seed=derive_seed(train_cfg.seed, f"sweep-dim:{dim}"))
        report = run_retrieval_experiment(bundle, cfg_d, eval_cfg, retrain_per_trial=False)
        out.append((dim, report))
    return out


def format_sweep_table(sweep: list[tuple[int, RecallReport]]) -> str:
    if not sweep:
        return ""
    ks = sweep[0][1].ks
    head = ["dim"] + [f"R@{k}" for k in ks]
    body = [[str(dim)] + [f"{rep.mean[k]:.4f}" for k in ks] for dim, rep in sweep]
    widths = [max(len(head[c]), *(len(r[c]) for r in body)) for c in range(len(head))]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    return "\n".join([fmt.format(*head)] + [fmt.format(*row) for row in body])


def sweep_to_json(sweep: list[tuple[int, RecallReport]], include_runtime: bool = False) -> str:
    doc = [
        {"dim": dim, "rows": rep.rows(include_runtime=include_runtime)} for dim, rep in sweep
    ]
    return json.dumps(doc, sort_keys=True, indent=2)


def format_hms(seconds: float) -> str:
    total = int(round(seconds))
    return f"{total // 3600:02d}:{total % 3600 // 60:02d}:{total % 60:02d}"


def time_training(specs, epochs_list, trials: int = 5, seed: int = 0, modalities=None, d_out: int = 256) -> list[dict]:
    """Wall-clock training time per (loss kind, train size, epochs) cell.

    Each cell is averaged over trials; synthetic data of the requested size
    is generated once per size and shared across cells. One untimed warmup
    run precedes the measurements so no cell pays first-call library setup.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    bundles: dict[int, EmbeddingBundle] = {}
    rows = []
    warm = generate_synthetic(SynthConfig(post_count=32, seed=derive_seed(seed, "timing-warmup")))
    for kind in sorted({k for k, _ in specs}):
        train(warm, TrainConfig(epochs=1, batch_size=32, d_out=d_out, loss_config=LossConfig(kind=kind), seed=seed))
    for kind, size in specs:
        if size not in bundles:
            synth = SynthConfig(post_count=size, seed=derive_seed(seed, f"timing-data:{size}"))
            if modalities is not None:
                synth = replace(synth, modalities=list(modalities))
            bundles[size] = generate_synthetic(synth)
        for epochs in epochs_list:
            seconds = []
            for t in range(trials):
                cfg = TrainConfig(
                    epochs=epochs,
                    d_out=d_out,
                    loss_config=LossConfig(kind=kind),
                    seed=derive_seed(seed, f"timing:{kind}:{size}:{epochs}:{t}"),
                )
                started = time.perf_counter()
                train(bundles[size], cfg)
                seconds.append(time.perf_counter() - started)
            mean_s = float(np.mean(seconds))
            rows.append(
                {
                    "model": f"{kind}-{size}",
                    "loss": kind,
                    "train_size": size,
                    "epochs": epochs,
                    "trials": trials,
                    "mean_seconds": mean_s,
                    "hms": format_hms(mean_s),
                }
            )
    return rows


def format_timing_table(rows: list[dict]) -> str:
    head = ["model", "epochs", "time"]
    body = [[r["model"], str(r["epochs"]), r["hms"]] for r in rows]
    widths = [max(len(head[c]), *(len(r[c]) for r in body)) for c in range(3)] if body else [5, 6, 4]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*head)] + [fmt.format(*row) for row in body]
    return "\n".join(lines)

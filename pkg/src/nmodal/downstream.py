"""Downstream classification over projected embeddings.

Two experiment harnesses run on a trained model's outputs: binary stance
classification and multiclass account-provenance classification. Every
artifact is one sample (its post's label applies to all of that post's
artifacts). Both use a multinomial logistic-regression classifier trained by
full-batch gradient descent, k-fold cross-validation, rank-based ROC/AUC,
and, for the account task, SMOTE oversampling applied inside each training
fold only so evaluation folds never see synthetic points.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from nmodal.data import EmbeddingBundle, STANCE_CLASS0, STANCE_CLASS1
from nmodal.model import ModelState, embed_matrix
from nmodal.seeding import derive_seed, rng_for


@dataclass
class LabeledEmbeddings:
    vectors: np.ndarray
    labels: np.ndarray
    class_count: int
    validate: bool = True

    def __post_init__(self) -> None:
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.validate:
            self.check()

    def check(self) -> None:
        if self.vectors.ndim != 2:
            raise ValueError(f"vectors must be (N, d), got shape {self.vectors.shape}")
        if self.labels.shape != (self.vectors.shape[0],):
            raise ValueError("labels must align one-to-one with vectors")
        if self.class_count < 2:
            raise ValueError("class_count must be >= 2")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("non-finite vectors")
        if self.labels.size == 0:
            raise ValueError("empty dataset")
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise ValueError("labels out of range")
        present = np.unique(self.labels)
        if len(present) < self.class_count:
            raise ValueError("every class needs at least one sample")

    @property
    def sample_count(self) -> int:
        return self.vectors.shape[0]

    def subset(self, indices) -> "LabeledEmbeddings":
        return LabeledEmbeddings(
            vectors=self.vectors[indices],
            labels=self.labels[indices],
            class_count=self.class_count,
            validate=False,
        )


@dataclass
class ClassifierModel:
    W: np.ndarray
    b: np.ndarray

    @property
    def class_count(self) -> int:
        return self.W.shape[0]


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def predict_proba(model: ClassifierModel, x: np.ndarray) -> np.ndarray:
    """softmax(Wx + b); accepts one vector or a stack of rows."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != model.W.shape[1]:
        raise ValueError(f"input dim {x.shape[1]} does not match classifier dim {model.W.shape[1]}")
    probs = _softmax_rows(x @ model.W.T + model.b)
    return probs[0] if single else probs


def train_linear_classifier(data: LabeledEmbeddings, epochs: int = 500, lr: float = 0.5, seed: int = 0) -> ClassifierModel:
    """Multinomial logistic regression by full-batch gradient descent.

    Zero-initialized, so zero epochs yield uniform predictions. The seed is
    part of the signature for reproducibility bookkeeping; training itself is
    deterministic.
    """
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    if len(np.unique(data.labels)) < 2:
        raise ValueError("training needs at least two classes present")
    n, d = data.vectors.shape
    c = data.class_count
    w = np.zeros((c, d))
    b = np.zeros(c)
    onehot = np.zeros((n, c))
    onehot[np.arange(n), data.labels] = 1.0
    x = data.vectors
    for _ in range(epochs):
        probs = _softmax_rows(x @ w.T + b)
        dlogits = (probs - onehot) / n
        w -= lr * (dlogits.T @ x)
        b -= lr * dlogits.sum(axis=0)
    return ClassifierModel(W=w, b=b)


def accuracy(model: ClassifierModel, data: LabeledEmbeddings) -> float:
    preds = np.argmax(predict_proba(model, data.vectors), axis=1)
    return float(np.mean(preds == data.labels))


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve by the rank (Mann-Whitney) formulation.

    Tied scores contribute 1/2 per tied positive-negative pair.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length vectors")
    pos = labels == 1
    neg = labels == 0
    if not np.any(pos) or not np.any(neg):
        raise ValueError("roc_auc needs both classes present")
    ranks = rankdata(scores)
    n_pos = int(pos.sum())
    n_neg = int(neg.sum())
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def roc_curve(scores, labels):
    """ROC points swept over score thresholds, from (0,0) to (1,1).

    Returns a list of (fpr, tpr) pairs, one per distinct score plus the
    origin, suitable for CSV export and external plotting.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    neg = labels == 0
    n_pos = int(pos.sum())
    n_neg = int(neg.sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_curve needs both classes present")
    order = np.argsort(-scores, kind="stable")
    points = [(0.0, 0.0)]
    tp = fp = 0
    i = 0
    n = len(scores)
    while i < n:
        j = i
        while j < n and scores[order[j]] == scores[order[i]]:
            j += 1
        block = order[i:j]
        tp += int(np.sum(pos[block]))
        fp += int(np.sum(neg[block]))
        points.append((fp / n_neg, tp / n_pos))
        i = j
    return points


def write_roc_csv(points, sink) -> None:
    own = isinstance(sink, str) or hasattr(sink, "__fspath__")
    fh = open(sink, "w", encoding="utf-8") if own else sink
    try:
        fh.write("fpr,tpr\n")
        for fpr, tpr in points:
            fh.write(f"{fpr!r},{tpr!r}\n")
    finally:
        if own:
            fh.close()


def smote_oversample(data: LabeledEmbeddings, k: int = 5, seed: int = 0) -> LabeledEmbeddings:
    """Balance every class up to the majority count with SMOTE interpolants.

    Each synthetic point is x + u(x' - x) for a random class member x, one of
    its k nearest same-class neighbors x', and u ~ Uniform(0,1). The original
    rows are returned unmodified as a prefix, synthetics appended grouped by
    ascending class.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    counts = np.bincount(data.labels, minlength=data.class_count)
    target = int(counts.max())
    rng = rng_for(seed, "smote")
    new_vecs = [data.vectors]
    new_labels = [data.labels]
    for c in range(data.class_count):
        need = target - int(counts[c])
        if need == 0:
            continue
        members = np.where(data.labels == c)[0]
        if len(members) < 2:
            raise ValueError(f"class {c} has {len(members)} sample(s); SMOTE needs at least 2")
        pts = data.vectors[members]
        diffs = pts[:, None, :] - pts[None, :, :]
        dist = np.sqrt(np.sum(diffs * diffs, axis=2))
        np.fill_diagonal(dist, np.inf)
        k_eff = min(k, len(members) - 1)
        neighbor_idx = np.argsort(dist, axis=1, kind="stable")[:, :k_eff]
        synth = np.empty((need, data.vectors.shape[1]))
        for s in range(need):
            a = int(rng.integers(len(members)))
            b = int(neighbor_idx[a, int(rng.integers(k_eff))])
            u = rng.random()
            synth[s] = pts[a] + u * (pts[b] - pts[a])
        new_vecs.append(synth)
        new_labels.append(np.full(need, c, dtype=np.int64))
    return LabeledEmbeddings(
        vectors=np.concatenate(new_vecs, axis=0),
        labels=np.concatenate(new_labels),
        class_count=data.class_count,
        validate=False,
    )


def kfold_split(n: int, folds: int = 5, seed: int = 0) -> list[np.ndarray]:
    """Shuffled disjoint exhaustive folds; the first n mod k folds get the extra."""
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if folds > n:
        raise ValueError(f"cannot split {n} samples into {folds} folds")
    perm = rng_for(seed, "kfold").permutation(n)
    base = n // folds
    extra = n % folds
    out = []
    start = 0
    for f in range(folds):
        size = base + (1 if f < extra else 0)
        out.append(perm[start : start + size])
        start += size
    return out


# --- experiment harnesses ---------------------------------------------------


@dataclass
class ExperimentConfig:
    folds: int = 5
    epochs: int = 500
    lr: float = 0.5
    smote: bool = False
    smote_k: int = 5
    seed: int = 0
    shuffle_labels: bool = False


def labeled_from_bundle(state: ModelState, bundle: EmbeddingBundle, label_kind: str):
    """Embed every artifact; label each with its post's label.

    Returns (LabeledEmbeddings, class name list). label_kind is "stance"
    (binary, unknown-stance posts dropped) or "account".
    """
    if label_kind == "stance":
        keep = [i for i, p in enumerate(bundle.posts) if p.stance_label in (STANCE_CLASS0, STANCE_CLASS1)]
        if not keep:
            raise ValueError("no posts carry a stance label")
        labels_per_post = np.array([bundle.posts[i].stance_label for i in keep], dtype=np.int64)
        class_names = ["class0", "class1"]
    elif label_kind == "account":
        keep = [i for i, p in enumerate(bundle.posts) if p.account_label]
        if not keep:
            raise ValueError("no posts carry an account label")
        names = sorted({bundle.posts[i].account_label for i in keep})
        index = {name: j for j, name in enumerate(names)}
        labels_per_post = np.array([index[bundle.posts[i].account_label] for i in keep], dtype=np.int64)
        class_names = names
    else:
        raise ValueError(f"unknown label kind {label_kind!r}")

    blocks = []
    for name in state.modality_names:
        raw = bundle.matrix(name)[keep]
        blocks.append(embed_matrix(state, raw, name))
    vectors = np.concatenate(blocks, axis=0)
    labels = np.tile(labels_per_post, len(state.modality_names))
    data = LabeledEmbeddings(vectors=vectors, labels=labels, class_count=len(class_names), validate=False)
    if len(np.unique(labels)) < 2:
        raise ValueError("labels collapse to a single class")
    return data, class_names


def _per_class_metrics(y_true: np.ndarray, y_pred: np.ndarray, class_names) -> list[dict]:
    rows = []
    for c, name in enumerate(class_names):
        tp = int(np.sum((y_pred == c) & (y_true == c)))
        predicted = int(np.sum(y_pred == c))
        support = int(np.sum(y_true == c))
        rows.append(
            {
                "label": name,
                "precision": tp / predicted if predicted else 0.0,
                "recall": tp / support if support else 0.0,
                "support": support,
            }
        )
    return rows


def run_classification(data: LabeledEmbeddings, class_names, cfg: ExperimentConfig, task: str) -> dict:
    """k-fold CV of the linear classifier; returns the report dict."""
    labels = data.labels.copy()
    if cfg.shuffle_labels:
        rng_for(cfg.seed, "label-shuffle").shuffle(labels)
        data = LabeledEmbeddings(data.vectors, labels, data.class_count, validate=False)

    folds = kfold_split(data.sample_count, cfg.folds, cfg.seed)
    all_idx = np.arange(data.sample_count)
    fold_accuracies = []
    y_true_parts = []
    y_pred_parts = []
    score_parts = []
    for f, test_idx in enumerate(folds):
        train_idx = np.setdiff1d(all_idx, test_idx)
        train_data = data.subset(train_idx)
        if cfg.smote:
            train_data = smote_oversample(train_data, k=cfg.smote_k, seed=derive_seed(cfg.seed, f"fold:{f}"))
        model = train_linear_classifier(train_data, epochs=cfg.epochs, lr=cfg.lr, seed=cfg.seed)
        test_data = data.subset(test_idx)
        probs = predict_proba(model, test_data.vectors)
        preds = np.argmax(probs, axis=1)
        fold_accuracies.append(float(np.mean(preds == test_data.labels)))
        y_true_parts.append(test_data.labels)
        y_pred_parts.append(preds)
        score_parts.append(probs)

    y_true = np.concatenate(y_true_parts)
    y_pred = np.concatenate(y_pred_parts)
    scores = np.concatenate(score_parts, axis=0)

    report = {
        "task": task,
        "classes": list(class_names),
        "samples": int(data.sample_count),
        "folds": cfg.folds,
        "smote": cfg.smote,
        "shuffled_labels": cfg.shuffle_labels,
        "accuracy": float(np.mean(y_pred == y_true)),
        "fold_accuracies": fold_accuracies,
        "accuracy_mean": float(np.mean(fold_accuracies)),
        "accuracy_std": float(np.std(fold_accuracies, ddof=1)) if len(fold_accuracies) > 1 else 0.0,
        "per_class": _per_class_metrics(y_true, y_pred, class_names),
    }

    if data.class_count == 2:
        auc = roc_auc(scores[:, 1], y_true)
        report["auc"] = auc
        report["macro_auc"] = auc
        report["roc_points"] = [[fpr, tpr] for fpr, tpr in roc_curve(scores[:, 1], y_true)]
    else:
        per_class_auc = {}
        aucs = []
        for c, name in enumerate(class_names):
            binary = (y_true == c).astype(np.int64)
            if binary.min() == binary.max():
                continue
            a = roc_auc(scores[:, c], binary)
            per_class_auc[name] = a
            aucs.append(a)
        report["macro_auc"] = float(np.mean(aucs)) if aucs else float("nan")
        report["per_class_auc"] = per_class_auc
    return report


def run_stance_experiment(state: ModelState, bundle: EmbeddingBundle, cfg: ExperimentConfig | None = None) -> dict:
    cfg = cfg or ExperimentConfig()
    data, class_names = labeled_from_bundle(state, bundle, "stance")
    return run_classification(data, class_names, cfg, task="stance")


def run_account_experiment(state: ModelState, bundle: EmbeddingBundle, cfg: ExperimentConfig | None = None) -> dict:
    cfg = cfg or ExperimentConfig(smote=True)
    data, class_names = labeled_from_bundle(state, bundle, "account")
    return run_classification(data, class_names, cfg, task="account")


def report_to_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2)


def format_report_table(report: dict) -> str:
    lines = [
        f"task: {report['task']}   samples: {report['samples']}   folds: {report['folds']}",
        f"accuracy: {report['accuracy']:.4f}  (fold mean {report['accuracy_mean']:.4f} "
        f"± {report['accuracy_std']:.4f})",
        f"macro AUC: {report['macro_auc']:.4f}",
        "",
        "class        precision  recall  support",
    ]
    for row in report["per_class"]:
        lines.append(
            f"{row['label']:<12} {row['precision']:>9.4f}  {row['recall']:>6.4f}  {row['support']:>7d}"
        )
    return "\n".join(lines)

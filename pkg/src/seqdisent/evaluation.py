"""Evaluation protocols: judge-based generation metrics, EER, latent classification,
swaps, view-quality analysis and the negative-mode ablation."""

import csv
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch
from sklearn.ensemble import RandomForestClassifier
from sklearn.model_selection import train_test_split
from sklearn.neighbors import KNeighborsClassifier
from sklearn.svm import SVC, LinearSVC
from torch import nn

from .data import LabeledDataset
from .distributions import pairwise_kl_matrix, pairwise_kl_sequence_matrix, similarity_phi
from .views import NegativeMode, generate_dynamic_view, generate_static_view, ranked_indices, thirds_bounds

log = logging.getLogger(__name__)


class JudgeQualityError(RuntimeError):
    """The judge classifier is too weak for judge-based metrics to mean anything."""


# --------------------------------------------------------------------------- judge


class _JudgeNet(nn.Module):
    def __init__(self, seq_len, frame_shape, n_classes, hidden=64):
        super().__init__()
        self.frame_shape = tuple(frame_shape)
        if len(frame_shape) == 3:
            c, h, w = frame_shape
            self.frame = nn.Sequential(nn.Conv2d(c, 16, 4, 2, 1), nn.ReLU(), nn.Conv2d(16, 32, 4, 2, 1), nn.ReLU(),
                                       nn.Flatten(), nn.Linear(32 * (h // 4) * (w // 4), hidden), nn.ReLU())
        else:
            self.frame = nn.Sequential(nn.Linear(frame_shape[0], hidden), nn.ReLU())
        self.head = nn.Sequential(nn.Linear(seq_len * hidden, hidden), nn.ReLU(), nn.Linear(hidden, n_classes))

    def forward(self, x):
        n, t = x.shape[:2]
        h = self.frame(x.reshape(n * t, *self.frame_shape)).reshape(n, -1)
        return self.head(h)


@dataclass
class JudgeModel:
    """Held-fixed sequence classifier used to score generated sequences."""

    net: _JudgeNet
    target: str
    n_classes: int
    test_accuracy: float = float("nan")

    @torch.no_grad()
    def predict_proba(self, x) -> np.ndarray:
        x = torch.as_tensor(np.asarray(x), dtype=torch.float32)
        out = [torch.softmax(self.net(x[i:i + 256].float()), -1) for i in range(0, len(x), 256)]
        return torch.cat(out).double().numpy()

    def predict(self, x) -> np.ndarray:
        return self.predict_proba(x).argmax(-1)

    def accuracy(self, x, labels) -> float:
        return float(np.mean(self.predict(x) == np.asarray(labels)))


def _labels_for(ds: LabeledDataset, target: str) -> np.ndarray:
    if target == "dynamic":
        return ds.dynamic_labels
    if target == "static":
        return ds.static_labels
    raise ValueError("target must be 'static' or 'dynamic'")


def train_judge(dataset: LabeledDataset, target: str = "dynamic", seed: int = 0, epochs: int = 30,
                batch_size: int = 32, min_accuracy: float = 0.8) -> JudgeModel:
    """Fit a judge on the train split and report its accuracy on the test split."""
    train, test = (dataset.train(), dataset.test()) if dataset.is_test.any() else (dataset, dataset)
    y = _labels_for(train, target)
    n_classes = int(max(y.max(), _labels_for(dataset, target).max()) + 1)
    if len(np.unique(y)) < 2:
        raise ValueError("a judge needs at least two classes in the training split")
    gen = torch.Generator().manual_seed(seed)
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        net = _JudgeNet(train.seq_len, train.frame_shape, n_classes)
    opt = torch.optim.Adam(net.parameters(), lr=1e-3)
    x = torch.as_tensor(train.data, dtype=torch.float32)
    yt = torch.as_tensor(y)
    for _ in range(epochs):
        perm = torch.randperm(len(x), generator=gen)
        for i in range(0, len(x), batch_size):
            idx = perm[i:i + batch_size]
            loss = nn.functional.cross_entropy(net(x[idx]), yt[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
    judge = JudgeModel(net.eval(), target, n_classes)
    judge.test_accuracy = judge.accuracy(test.data, _labels_for(test, target))
    if judge.test_accuracy < min_accuracy:
        raise JudgeQualityError(f"judge reached only {judge.test_accuracy:.1%} test accuracy on {target} labels")
    return judge


# --------------------------------------------------------------------------- generation metrics


@dataclass
class GenerationScores:
    inception_score: float
    intra_entropy: float
    inter_entropy: float
    n_samples: int
    degenerate: bool = False


def _entropy(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return -np.where(p > 0, p * np.log(p), 0.0).sum(-1)


def inception_metrics(probs) -> GenerationScores:
    """IS, ``H(y|x)`` and ``H(y)`` from a matrix of judge posteriors ``(k, classes)``."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or len(probs) == 0:
        raise ValueError("need a nonempty (samples, classes) probability matrix")
    marginal = probs.mean(0)
    with np.errstate(divide="ignore", invalid="ignore"):
        kl = np.where(probs > 0, probs * (np.log(probs) - np.log(marginal)), 0.0).sum(-1)
    degenerate = len(probs) == 1
    if degenerate:
        warnings.warn("H(y) from a single generated sample is degenerate", RuntimeWarning)
    return GenerationScores(float(np.exp(kl.mean())), float(_entropy(probs).mean()), float(_entropy(marginal)),
                            len(probs), degenerate)


def metric_is_and_entropies(judge: JudgeModel, generated) -> GenerationScores:
    return inception_metrics(judge.predict_proba(generated))


def generate_static_resampled(model, data, seed: int = 0, batch_size: int = 64) -> np.ndarray:
    """Keep each sequence's dynamics and draw a new static factor from the prior."""
    gen = torch.Generator().manual_seed(seed)
    data = np.asarray(data)
    out = [np.asarray(model.resample_static(torch.as_tensor(data[i:i + batch_size]), gen), dtype=np.float32)
           for i in range(0, len(data), batch_size)]
    return np.concatenate(out)


def metric_swap_accuracy(model, judge: JudgeModel, test_set: LabeledDataset, seed: int = 0,
                         return_generated: bool = False):
    """Fraction of static-resampled generations whose judged dynamic label is preserved."""
    if judge.target != "dynamic":
        raise ValueError("swap accuracy needs a judge of dynamic labels")
    if math.isnan(judge.test_accuracy):
        raise ValueError("judge is untrained")
    generated = generate_static_resampled(model, test_set.data, seed)
    acc = float(np.mean(judge.predict(generated) == test_set.dynamic_labels))
    return (acc, generated) if return_generated else acc


# --------------------------------------------------------------------------- EER


def pair_scores(embeddings, labels):
    """Cosine similarity and same-identity flag for every unordered pair."""
    emb = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    norms = np.linalg.norm(emb, axis=1)
    if (norms < 1e-12).any():
        raise ValueError("zero-norm embedding")
    unit = emb / norms[:, None]
    iu, ju = np.triu_indices(len(emb), k=1)
    return (unit[iu] * unit[ju]).sum(-1), labels[iu] == labels[ju]


def eer_from_scores(scores, same) -> float:
    """Equal error rate from pair scores, interpolating linearly between ROC vertices.

    A pair is accepted when ``score >= threshold``; equal scores form a single vertex.
    """
    scores = np.asarray(scores, dtype=np.float64)
    same = np.asarray(same, dtype=bool)
    n_pos, n_neg = int(same.sum()), int((~same).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("EER needs both genuine and impostor pairs")
    uniq, inverse = np.unique(scores, return_inverse=True)
    pos_at = np.bincount(inverse, weights=same, minlength=len(uniq))
    neg_at = np.bincount(inverse, weights=~same, minlength=len(uniq))
    # thresholds: each unique score ascending, then +inf (reject all)
    pos_rejected = np.concatenate([[0.0], np.cumsum(pos_at)])
    neg_rejected = np.concatenate([[0.0], np.cumsum(neg_at)])
    fnr = pos_rejected / n_pos
    fpr = (n_neg - neg_rejected) / n_neg
    diff = fnr - fpr
    k = int(np.argmax(diff >= 0))
    if diff[k] == 0:
        return float(fpr[k])
    alpha = -diff[k - 1] / (diff[k] - diff[k - 1])
    return float(fpr[k - 1] + alpha * (fpr[k] - fpr[k - 1]))


def metric_eer(embeddings, identity_labels) -> float:
    labels = np.asarray(identity_labels)
    ids, counts = np.unique(labels, return_counts=True)
    if len(ids) < 2:
        raise ValueError("EER is undefined with a single identity")
    if (counts < 2).any():
        raise ValueError("every identity needs at least two items")
    return eer_from_scores(*pair_scores(embeddings, labels))


# --------------------------------------------------------------------------- latent classification


CLASSIFIERS = {
    "svm": lambda seed: SVC(),
    "linear_svm": lambda seed: LinearSVC(random_state=seed),
    "random_forest": lambda seed: RandomForestClassifier(random_state=seed),
    "knn": lambda seed: KNeighborsClassifier(),
}


@dataclass
class LatentAccuracyTable:
    static_from_s: float
    dynamic_from_s: float
    static_from_d: float
    dynamic_from_d: float
    classifier: str = "svm"

    @property
    def static_gap(self) -> float:
        return self.static_from_s - self.dynamic_from_s

    @property
    def dynamic_gap(self) -> float:
        return self.dynamic_from_d - self.static_from_d

    def as_dict(self) -> Dict:
        return {**asdict(self), "static_gap": self.static_gap, "dynamic_gap": self.dynamic_gap}


def _split_indices(labels: np.ndarray, test_size: float, seed: int):
    idx = np.arange(len(labels))
    _, counts = np.unique(labels, return_counts=True)
    stratify = labels if counts.min() >= 2 else None
    for attempt in range(10):
        tr, te = train_test_split(idx, test_size=test_size, random_state=seed + attempt, stratify=stratify)
        if set(labels[tr]) == set(labels):
            return tr, te
    raise ValueError("could not find a split with every class in the training part")


def classify_features(features, labels, kind: str = "svm", seed: int = 0, test_size: float = 0.2,
                      split=None) -> float:
    features = np.asarray(features, dtype=np.float64).reshape(len(features), -1)
    labels = np.asarray(labels)
    tr, te = split if split is not None else _split_indices(labels, test_size, seed)
    if kind not in CLASSIFIERS:
        raise ValueError(f"unknown classifier kind {kind!r}; choose from {sorted(CLASSIFIERS)}")
    clf = CLASSIFIERS[kind](seed).fit(features[tr], labels[tr])
    return float(clf.score(features[te], labels[te]))


def latent_classification_from_features(static_feats, dynamic_feats, static_labels, dynamic_labels,
                                        kind: str = "svm", seed: int = 0, test_size: float = 0.2
                                        ) -> LatentAccuracyTable:
    """Four classifiers (s/d features x static/dynamic labels) on one shared 80-20 split.

    ``dynamic_feats`` may be ``(n, T, k)`` with per-step ``dynamic_labels`` ``(n, T)``;
    the dynamic-label tasks are then solved per step.
    """
    static_feats = np.asarray(static_feats)
    dynamic_feats = np.asarray(dynamic_feats)
    static_labels = np.asarray(static_labels)
    dynamic_labels = np.asarray(dynamic_labels)
    n = len(static_feats)
    per_step = dynamic_labels.ndim == 2
    tr, te = _split_indices(static_labels, test_size, seed)
    if per_step:
        T = dynamic_labels.shape[1]
        expand = lambda ix: (ix[:, None] * T + np.arange(T)).ravel()  # noqa: E731
        step_split = (expand(tr), expand(te))
        s_steps = np.repeat(static_feats.reshape(n, -1), T, axis=0)
        d_steps = dynamic_feats.reshape(n * T, -1)
        dyn_s = classify_features(s_steps, dynamic_labels.ravel(), kind, seed, split=step_split)
        dyn_d = classify_features(d_steps, dynamic_labels.ravel(), kind, seed, split=step_split)
    else:
        dyn_s = classify_features(static_feats, dynamic_labels, kind, seed, split=(tr, te))
        dyn_d = classify_features(dynamic_feats, dynamic_labels, kind, seed, split=(tr, te))
    return LatentAccuracyTable(
        static_from_s=classify_features(static_feats, static_labels, kind, seed, split=(tr, te)),
        dynamic_from_s=dyn_s,
        static_from_d=classify_features(dynamic_feats, static_labels, kind, seed, split=(tr, te)),
        dynamic_from_d=dyn_d,
        classifier=kind,
    )


@torch.no_grad()
def posterior_means(model, data, batch_size: int = 128):
    """Posterior means of ``s`` ``(n, d_s)`` and ``d_{1:T}`` ``(n, T, d_d)``."""
    s, d = [], []
    for i in range(0, len(data), batch_size):
        post = model.encode(torch.as_tensor(np.asarray(data[i:i + batch_size])))
        s.append(post.static.mean.double().numpy())
        d.append(post.dynamic.mean.double().numpy())
    return np.concatenate(s), np.concatenate(d)


def latent_classification_benchmark(model, test_set: LabeledDataset, classifier_kind: str = "svm", seed: int = 0,
                                    test_size: float = 0.2) -> LatentAccuracyTable:
    s, d = posterior_means(model, test_set.data)
    dyn = d if test_set.dynamic_labels.ndim == 2 else d.reshape(len(d), -1)
    return latent_classification_from_features(s, dyn, test_set.static_labels, test_set.dynamic_labels,
                                               classifier_kind, seed, test_size)


# --------------------------------------------------------------------------- swaps


@dataclass
class SwapResult:
    source: np.ndarray
    target: np.ndarray
    content_swap: np.ndarray
    pose_swap: np.ndarray
    recon_source: np.ndarray
    recon_target: np.ndarray


@torch.no_grad()
def swap_generate(model, src_seq, tgt_seq, generator: Optional[torch.Generator] = None,
                  use_mean: bool = True) -> SwapResult:
    """Generate ``(s_tgt, d_src)`` (content swap) and ``(s_src, d_tgt)`` (pose swap).

    Batched inputs ``(n, T, ...)`` are swapped pairwise; a single sequence is
    accepted too.  Latents are posterior means unless ``use_mean`` is off.
    """
    src = torch.as_tensor(np.asarray(src_seq))
    tgt = torch.as_tensor(np.asarray(tgt_seq))
    if src.shape != tgt.shape:
        raise ValueError(f"source shape {tuple(src.shape)} != target shape {tuple(tgt.shape)}")
    single = src.dim() == len(model.config.frame_shape) + 1
    if single:
        src, tgt = src[None], tgt[None]
    ps, pt = model.encode(src), model.encode(tgt)

    def latents(post):
        if use_mean:
            return post.static.mean, post.dynamic.mean
        return post.static.sample(generator), post.dynamic.as_gaussian().sample(generator)

    s_src, d_src = latents(ps)
    s_tgt, d_tgt = latents(pt)
    outs = [model.decode(s_tgt, d_src), model.decode(s_src, d_tgt), model.decode(s_src, d_src),
            model.decode(s_tgt, d_tgt)]
    outs = [o.float().numpy() for o in outs]
    if single:
        outs = [o[0] for o in outs]
        src, tgt = src[0], tgt[0]
    return SwapResult(src.numpy(), tgt.numpy(), *outs)


def swap_consistency(model, judge: JudgeModel, test_set: LabeledDataset, n_pairs: int = 200, seed: int = 0
                     ) -> Dict[str, float]:
    """Share of random pairs where the pose swap follows the target's motion and the
    content swap keeps the source's motion (judged)."""
    rng = np.random.default_rng(seed)
    i = rng.integers(len(test_set), size=n_pairs)
    j = rng.integers(len(test_set), size=n_pairs)
    res = swap_generate(model, test_set.data[i], test_set.data[j])
    y_src, y_tgt = test_set.dynamic_labels[i], test_set.dynamic_labels[j]
    return {"pose_follows_target": float(np.mean(judge.predict(res.pose_swap) == y_tgt)),
            "content_keeps_source": float(np.mean(judge.predict(res.content_swap) == y_src))}


def save_swap_grid(result: SwapResult, path) -> Path:
    """PNG with rows source, target, content swap, pose swap (image data only)."""
    from PIL import Image

    rows = [result.source, result.target, result.content_swap, result.pose_swap]
    if rows[0].ndim != 4:
        raise ValueError("image grids need single image sequences (T, C, H, W)")
    grid = np.concatenate([np.concatenate(list(r), axis=-1) for r in rows], axis=-2)
    img = (np.clip(grid, 0, 1) * 255).round().astype(np.uint8).transpose(1, 2, 0)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(img.squeeze() if img.shape[-1] == 1 else img).save(path)
    return path


def save_swap_csv(result: SwapResult, path) -> Path:
    """Long-format CSV of all six sequences (any frame shape)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sequence", "step", "index", "value"])
        for name in ("source", "target", "content_swap", "pose_swap", "recon_source", "recon_target"):
            arr = getattr(result, name)
            for t in range(arr.shape[0]):
                for k, v in enumerate(arr[t].ravel()):
                    w.writerow([name, t, k, repr(float(v))])
    return path


# --------------------------------------------------------------------------- view quality


THIRDS = ("first", "middle", "last")


@dataclass
class ThirdsHistogram:
    bin_edges: np.ndarray
    counts: Dict[str, np.ndarray]
    means: Dict[str, float]
    values: Dict[str, np.ndarray] = field(repr=False)
    anchors: int = 0


def thirds_similarities(codes, distances, tau: float = 0.5) -> Dict[str, np.ndarray]:
    """Similarity ``phi`` between each anchor and the members of each third of its ranked row.

    The anchor itself is left out of the first third.
    """
    codes = torch.as_tensor(np.asarray(codes, dtype=np.float64)).reshape(len(codes), -1)
    n = len(codes)
    lo, hi = thirds_bounds(n)
    out = {k: [] for k in THIRDS}
    for i in range(n):
        order = ranked_indices(distances[i], i)
        groups = {"first": order[1:lo], "middle": order[lo:hi], "last": order[hi:]}
        for name, members in groups.items():
            if len(members):
                out[name].append(similarity_phi(codes[i], codes[members], tau).numpy())
    return {k: (np.concatenate(v) if v else np.zeros(0)) for k, v in out.items()}


def thirds_histogram(values: Dict[str, np.ndarray], anchors: int, tau: float = 0.5, bins: int = 20
                     ) -> ThirdsHistogram:
    edges = np.linspace(math.exp(-1 / tau), math.exp(1 / tau), bins + 1)
    counts = {k: np.histogram(v, bins=edges)[0] for k, v in values.items()}
    means = {k: float(v.mean()) if len(v) else float("nan") for k, v in values.items()}
    return ThirdsHistogram(edges, counts, means, values, anchors)


@dataclass
class ViewQualityReport:
    static_view_lacc: Dict[str, float]
    dynamic_view_lacc: Dict[str, float]
    static_thirds: ThirdsHistogram
    dynamic_thirds: ThirdsHistogram


def _positive_members(distances, lo: int, gen) -> torch.Tensor:
    """One uniformly drawn member of each anchor's positive pool (the anchor included)."""
    picks = torch.randint(lo, (len(distances),), generator=gen)
    return torch.as_tensor([int(ranked_indices(distances[i], i)[int(picks[i])]) for i in range(len(distances))])


@torch.no_grad()
def analyze_view_quality(model, test_set: LabeledDataset, seed: int = 0, batch_size: int = 16, tau: float = 0.5,
                         bins: int = 20, classifier_kind: str = "svm") -> ViewQualityReport:
    """(a) How much label information the generated views keep; (b) per-third similarity histograms.

    For every anchor, a positive static view ``s+`` is generated from its
    positive pool with prior dynamics ``d~``; ``s+`` should predict the static
    label and ``d~`` should not predict the dynamic label.  The mirrored pair
    ``(s~, d+)`` is analysed the same way.
    """
    gen = torch.Generator().manual_seed(seed)
    T = model.config.seq_len
    rows = {k: [] for k in ("s_plus", "d_tilde", "s_tilde", "d_plus")}
    sims = {"static": {k: [] for k in THIRDS}, "dynamic": {k: [] for k in THIRDS}}
    anchors = 0
    order = np.random.default_rng(seed).permutation(len(test_set))
    labels_s, labels_d = [], []
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        if len(idx) < 3:
            continue
        post = model.encode(torch.as_tensor(test_set.data[idx]))
        n = len(idx)
        d_static = pairwise_kl_matrix(post.static)
        d_dynamic = pairwise_kl_sequence_matrix(post.dynamic)
        lo, _ = thirds_bounds(n)
        pos_s = _positive_members(d_static, lo, gen)
        pos_d = _positive_members(d_dynamic, lo, gen)
        s_src = post.static[pos_s].sample(gen)
        _, d_tilde = model.prior_dynamics_rollout(T, gen, n=n)
        rows["s_plus"].append(generate_static_view(model, s_src, d_tilde, gen).double().numpy())
        rows["d_tilde"].append(d_tilde.reshape(n, -1).double().numpy())
        d_src = post.dynamic[pos_d].as_gaussian().sample(gen)
        s_tilde = model.sample_prior_static(n, gen)
        rows["d_plus"].append(generate_dynamic_view(model, s_tilde, d_src, gen).reshape(n, -1).double().numpy())
        rows["s_tilde"].append(s_tilde.double().numpy())
        labels_s.append(test_set.static_labels[idx])
        labels_d.append(test_set.dynamic_labels[idx])
        for name, codes, dist in (("static", post.static.mean, d_static),
                                  ("dynamic", post.dynamic.mean.reshape(n, -1), d_dynamic)):
            for k, v in thirds_similarities(codes, dist, tau).items():
                sims[name][k].append(v)
        anchors += n
    feats = {k: np.concatenate(v) for k, v in rows.items()}
    ys, yd = np.concatenate(labels_s), np.concatenate(labels_d)
    static_view = {"static_from_s_plus": classify_features(feats["s_plus"], ys, classifier_kind, seed),
                   "dynamic_from_d_tilde": classify_features(feats["d_tilde"], yd, classifier_kind, seed)}
    dynamic_view = {"static_from_s_tilde": classify_features(feats["s_tilde"], ys, classifier_kind, seed),
                    "dynamic_from_d_plus": classify_features(feats["d_plus"], yd, classifier_kind, seed)}
    hists = {name: thirds_histogram({k: np.concatenate(v) for k, v in parts.items()}, anchors, tau, bins)
             for name, parts in sims.items()}
    return ViewQualityReport(static_view, dynamic_view, hists["static"], hists["dynamic"])


def write_thirds_csv(hist: ThirdsHistogram, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_low", "bin_high"] + list(THIRDS))
        for b in range(len(hist.bin_edges) - 1):
            w.writerow([repr(float(hist.bin_edges[b])), repr(float(hist.bin_edges[b + 1]))]
                       + [int(hist.counts[k][b]) for k in THIRDS])
    return path


# --------------------------------------------------------------------------- ablation


def run_negative_mode_ablation(base_config, dataset: LabeledDataset, model_config=None,
                               judge: Optional[JudgeModel] = None, seed: int = 0,
                               modes: Sequence[NegativeMode] = tuple(NegativeMode)) -> List[Dict]:
    """Train one model per negative-sampling mode with shared settings; one row per mode."""
    from dataclasses import replace

    from .trainer import train

    if judge is None:
        judge = train_judge(dataset, "dynamic", seed=seed)
    test = dataset.test() if dataset.is_test.any() else dataset
    rows = []
    for mode in modes:
        cfg = replace(base_config, negative_mode=NegativeMode(mode))
        state = train(cfg, dataset, model_config)
        state.model.eval()
        rows.append({"negative_mode": NegativeMode(mode).value,
                     "swap_accuracy": metric_swap_accuracy(state.model, judge, test, seed),
                     "final_total": state.metrics[-1]["total"] if state.metrics else float("nan")})
    return rows


# --------------------------------------------------------------------------- report


@dataclass
class EvalReport:
    acc: float
    is_score: float
    intra_entropy: float
    inter_entropy: float
    eer_static: float
    eer_dynamic: float
    lacc_table: LatentAccuracyTable
    thirds: Dict[str, ThirdsHistogram]
    judge_accuracy: float
    degenerate_entropy: bool = False

    def summary(self) -> Dict:
        return {
            "acc": self.acc, "is": self.is_score, "intra_entropy": self.intra_entropy,
            "inter_entropy": self.inter_entropy, "eer_static": self.eer_static, "eer_dynamic": self.eer_dynamic,
            "lacc": self.lacc_table.as_dict(), "judge_accuracy": self.judge_accuracy,
            "thirds_means": {k: h.means for k, h in self.thirds.items()},
            "degenerate_entropy": self.degenerate_entropy,
        }


def evaluate(model, dataset: LabeledDataset, judge: Optional[JudgeModel] = None, seed: int = 0,
             classifier_kind: str = "svm") -> EvalReport:
    """Full report on the test split; the judge is trained on the train split if not given."""
    test = dataset.test() if dataset.is_test.any() else dataset
    judge = judge or train_judge(dataset, "dynamic", seed=seed)
    acc, generated = metric_swap_accuracy(model, judge, test, seed, return_generated=True)
    scores = metric_is_and_entropies(judge, generated)
    s, d = posterior_means(model, test.data)
    d_flat = d.reshape(len(d), -1)
    views = analyze_view_quality(model, test, seed, classifier_kind=classifier_kind)
    return EvalReport(
        acc=acc, is_score=scores.inception_score, intra_entropy=scores.intra_entropy,
        inter_entropy=scores.inter_entropy,
        eer_static=metric_eer(s, test.static_labels), eer_dynamic=metric_eer(d_flat, test.static_labels),
        lacc_table=latent_classification_benchmark(model, test, classifier_kind, seed),
        thirds={"static": views.static_thirds, "dynamic": views.dynamic_thirds},
        judge_accuracy=judge.test_accuracy, degenerate_entropy=scores.degenerate,
    )


def write_report(report: EvalReport, out_dir, embeddings: Optional[Dict[str, np.ndarray]] = None) -> Path:
    """``report.json`` plus one CSV per metric family; optional raw embeddings for external plotting."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.summary(), indent=2, sort_keys=True))
    with (out / "generation.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["acc", "is", "intra_entropy", "inter_entropy", "judge_accuracy"])
        w.writerow([report.acc, report.is_score, report.intra_entropy, report.inter_entropy, report.judge_accuracy])
    with (out / "eer.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["features", "eer"])
        w.writerow(["static", report.eer_static])
        w.writerow(["dynamic", report.eer_dynamic])
    with (out / "lacc.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        row = report.lacc_table.as_dict()
        w.writerow(list(row))
        w.writerow(list(row.values()))
    for name, hist in report.thirds.items():
        write_thirds_csv(hist, out / f"thirds_{name}.csv")
    for name, arr in (embeddings or {}).items():
        np.savetxt(out / f"embeddings_{name}.csv", np.asarray(arr).reshape(len(arr), -1), delimiter=",")
    return out

"""End-to-end training: augmentation, masking, dual-branch encoding,
fusion, combined loss, optimization and metric reporting.

One Adam instance optimizes every registered parameter jointly. The
combined objective for the full model is the main cross entropy plus the
environment-branch objective; the ``subgraph`` objective center instead
applies the likelihood term to the invariant branch with positive sign,
keeping the prior KL term unchanged. Per-epoch metric rows decompose the
training loss exactly into those three components.

Determinism: every random choice draws from one of six named streams
spawned from the experiment seed (parameter init, split, augmentation,
epoch shuffling, mask sampling, attention noise), so a (seed, config,
data) triple fully determines the metric report. The best-validation
snapshot is rounded through float32, the checkpoint storage precision,
before the final metrics are computed; evaluating a reloaded checkpoint
therefore reproduces the reported numbers exactly.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .backbone import GnnConfig
from .datasets import SplitSpec, ood_split
from .errors import ArgumentError, ConfigError, NumericError, TrainingError
from .generator import FragmentLibrary, generate_augmented_dataset, starter_library
from .graphs import MolecularGraph, batch_graphs
from .interaction import InteractionConfig
from .logging_util import get_logger
from .masking import MaskConfig, env_head, environment_objective, prior_probability
from .metrics import accuracy, macro_roc_auc
from .model import MODEL_KINDS, build_model_params, forward_baseline, forward_full
from .optim import Adam

log = get_logger(__name__)

OBJECTIVE_CENTERS = ("environment", "subgraph")
GENERATOR_MODES = ("off", "knowledge", "random")


@dataclass(frozen=True)
class ExperimentConfig:
    """Every knob of one training run in a single hashable record."""

    model: str = "full"
    n_classes: int = 3
    gnn: GnnConfig = GnnConfig()
    mask: MaskConfig = MaskConfig()
    interaction: InteractionConfig = InteractionConfig()
    split: SplitSpec = SplitSpec()
    generator_mode: str = "off"
    per_graph: int = 1
    regrow_each_epoch: bool = False
    objective_center: str = "environment"
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    patience: int = 20

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")
        if self.objective_center not in OBJECTIVE_CENTERS:
            raise ConfigError(
                f"objective_center must be one of {OBJECTIVE_CENTERS}, "
                f"got {self.objective_center!r}"
            )
        if self.generator_mode not in GENERATOR_MODES:
            raise ConfigError(
                f"generator_mode must be one of {GENERATOR_MODES}, "
                f"got {self.generator_mode!r}"
            )
        if self.n_classes < 2:
            raise ConfigError("need at least two classes")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.per_graph < 0:
            raise ConfigError("per_graph must be nonnegative")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        if self.patience < 1:
            raise ConfigError("patience must be positive")
        if self.interaction.dim != self.gnn.hidden_dim:
            raise ConfigError(
                f"interaction dim {self.interaction.dim} must equal encoder "
                f"hidden_dim {self.gnn.hidden_dim}"
            )


def config_hash(config: ExperimentConfig) -> str:
    """Stable hex digest of the full nested configuration."""
    payload = json.dumps(asdict(config), sort_keys=True).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


@dataclass(frozen=True)
class EpochRow:
    epoch: int
    main_ce: float
    env_term: float
    kl_term: float
    val_acc: float
    val_auc: float
    test_acc: float
    test_auc: float


@dataclass(frozen=True)
class MetricsReport:
    """Per-epoch loss decomposition and final best-snapshot metrics."""

    rows: tuple[EpochRow, ...]
    best_epoch: int
    final_val_acc: float
    final_val_auc: float
    final_test_acc: float
    final_test_auc: float
    seed: int
    wall_time_s: float


@dataclass(frozen=True)
class EvalSlice:
    accuracy: float
    auc: float


@dataclass(frozen=True)
class TrainResult:
    store: ad.ParameterStore
    report: MetricsReport
    adam_state: tuple[int, dict, dict]
    config_hash: str


def total_loss(
    main_logits: ad.Tensor,
    branch_logits: ad.Tensor,
    labels: np.ndarray,
    p: ad.Tensor,
    store: ad.ParameterStore,
    config: ExperimentConfig,
) -> tuple[ad.Tensor, dict[str, float]]:
    """Combined objective and its exact three-part decomposition.

    ``branch_logits`` are the environment-head logits of the environment
    branch under the default objective center (reversed upstream, so the
    mask removes what the head can read), or of the invariant branch under
    the subgraph center (plain, so the mask keeps what the head can read).
    """
    main_ce = ad.cross_entropy(main_logits, labels)
    parts = {"main_ce": main_ce.item()}
    if config.objective_center == "environment":
        branch, branch_parts = environment_objective(
            branch_logits, labels, p, store, config.mask.beta
        )
        loss = ad.add(main_ce, branch)
        parts.update(branch_parts)
    else:
        aux_ce = ad.cross_entropy(branch_logits, labels)
        kl = ad.kl_bernoulli(p, prior_probability(store))
        loss = ad.sub(ad.add(main_ce, aux_ce), ad.scale(kl, config.mask.beta))
        parts.update({"env_term": aux_ce.item(), "kl_term": -config.mask.beta * kl.item()})
    return loss, parts


def _check_labels(graphs: Sequence[MolecularGraph], n_classes: int) -> None:
    for i, g in enumerate(graphs):
        if g.label is None:
            raise ArgumentError(f"graph {i} has no label")
        if not 0 <= g.label < n_classes:
            raise ArgumentError(
                f"graph {i} label {g.label} outside 0..{n_classes - 1}"
            )


def _refeaturize_molecular(graphs: Sequence[MolecularGraph]) -> list[MolecularGraph]:
    """Rebuild features with the molecular one-hot-plus-degree scheme.

    Needed when augmentation is on: grown graphs carry molecular features,
    so the originals must share that feature space regardless of how they
    were loaded.
    """
    return [
        MolecularGraph.from_elements(
            [n.element for n in g.nodes],
            [(e.u, e.v, e.order) for e in g.edges],
            label=g.label,
            meta=dict(g.meta),
        )
        for g in graphs
    ]


def _batches(n: int, batch_size: int, order: np.ndarray | None = None):
    idx = np.arange(n) if order is None else order
    for start in range(0, n, batch_size):
        yield idx[start : start + batch_size]


def _eval_tau(config: ExperimentConfig) -> float:
    # The mask temperature is unused at evaluation (alpha = p); any
    # positive value satisfies the sampler's precondition.
    return config.mask.tau


def predict_probabilities(
    store: ad.ParameterStore,
    graphs: Sequence[MolecularGraph],
    config: ExperimentConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic class probabilities and labels for ``graphs``."""
    if not graphs:
        raise ArgumentError("cannot evaluate an empty dataset")
    _check_labels(graphs, config.n_classes)
    probs_parts: list[np.ndarray] = []
    labels_parts: list[np.ndarray] = []
    for chunk in _batches(len(graphs), config.batch_size):
        batch = batch_graphs([graphs[int(i)] for i in chunk])
        features = ad.Tensor(batch.features)
        if config.model == "full":
            result = forward_full(
                features,
                batch,
                store,
                config.gnn,
                config.interaction,
                training=False,
                tau=_eval_tau(config),
            )
            logits = result.main_logits.data
        else:
            logits = forward_baseline(features, batch, store, config.gnn).data
        shifted = logits - logits.max(axis=1, keepdims=True)
        expv = np.exp(shifted)
        probs_parts.append(expv / expv.sum(axis=1, keepdims=True))
        labels_parts.append(batch.labels)
    return np.concatenate(probs_parts), np.concatenate(labels_parts)


def eval_feature_view(
    config: ExperimentConfig, graphs: Sequence[MolecularGraph]
) -> list[MolecularGraph]:
    """Graphs exactly as a training run would evaluate them.

    With the generator on, training refeaturizes every split into the
    molecular scheme; reproducing its metrics requires the same view.
    """
    if config.generator_mode != "off":
        return _refeaturize_molecular(graphs)
    return list(graphs)


def edge_probability_map(
    store: ad.ParameterStore,
    graphs: Sequence[MolecularGraph],
    config: ExperimentConfig,
) -> list[np.ndarray]:
    """Per-graph environment probabilities, aligned with each graph's bonds.

    Low values mark bonds the extractor keeps in the invariant part. Only
    the full model scores bonds.
    """
    if config.model != "full":
        raise ConfigError("edge probabilities require the full model")
    if not graphs:
        raise ArgumentError("cannot explain an empty dataset")
    out: list[np.ndarray] = []
    for chunk in _batches(len(graphs), config.batch_size):
        members = [graphs[int(i)] for i in chunk]
        batch = batch_graphs(members)
        result = forward_full(
            ad.Tensor(batch.features),
            batch,
            store,
            config.gnn,
            config.interaction,
            training=False,
            tau=_eval_tau(config),
        )
        p = result.p.data
        start = 0
        for graph in members:
            out.append(p[start : start + len(graph.edges)].copy())
            start += len(graph.edges)
    return out


def evaluate(
    store: ad.ParameterStore,
    graphs: Sequence[MolecularGraph],
    config: ExperimentConfig,
) -> EvalSlice:
    """Accuracy and macro one-vs-rest ROC-AUC, noise off, mask at its mean."""
    probs, labels = predict_probabilities(store, graphs, config)
    return EvalSlice(
        accuracy=accuracy(probs.argmax(axis=1), labels),
        auc=macro_roc_auc(probs, labels),
    )


def train_on_splits(
    config: ExperimentConfig,
    train_set: Sequence[MolecularGraph],
    val_set: Sequence[MolecularGraph],
    test_set: Sequence[MolecularGraph],
) -> TrainResult:
    """Run the full loop on pre-split data; see module docstring."""
    started = time.perf_counter()
    if not train_set or not val_set or not test_set:
        raise ArgumentError("all three splits must be nonempty")
    streams = np.random.SeedSequence(config.seed).spawn(6)
    rng_init, _rng_split, rng_augment, rng_shuffle, rng_mask, rng_noise = (
        np.random.default_rng(s) for s in streams
    )

    train_graphs = list(train_set)
    val_graphs = list(val_set)
    test_graphs = list(test_set)
    library: FragmentLibrary | None = None
    if config.generator_mode != "off":
        library = starter_library()
        # Originals are refeaturized into the molecular scheme so they can
        # share batches with grown graphs.
        train_graphs = _refeaturize_molecular(train_graphs)
        val_graphs = _refeaturize_molecular(val_graphs)
        test_graphs = _refeaturize_molecular(test_graphs)
    base_train = list(train_graphs)
    if library is not None:
        train_graphs = generate_augmented_dataset(
            base_train, library, config.per_graph, config.generator_mode, rng_augment
        )
    for part in (train_graphs, val_graphs, test_graphs):
        _check_labels(part, config.n_classes)

    feature_dim = train_graphs[0].feature_matrix.shape[1]
    store = ad.ParameterStore(rng_init)
    build_model_params(
        store,
        config.model,
        feature_dim,
        config.n_classes,
        config.gnn,
        config.mask,
        config.interaction,
    )
    adam = Adam(store, lr=config.lr)

    rows: list[EpochRow] = []
    best_acc = -1.0
    best_epoch = 0
    best_snapshot = store.snapshot("float32")
    stale = 0
    for epoch in range(1, config.epochs + 1):
        if library is not None and config.regrow_each_epoch and epoch > 1:
            train_graphs = generate_augmented_dataset(
                base_train, library, config.per_graph, config.generator_mode, rng_augment
            )
        tau = max(
            config.mask.tau_floor,
            config.mask.tau * config.mask.tau_anneal ** (epoch - 1),
        )
        order = rng_shuffle.permutation(len(train_graphs))
        sums = {"main_ce": 0.0, "env_term": 0.0, "kl_term": 0.0}
        seen = 0
        for chunk in _batches(len(train_graphs), config.batch_size, order):
            batch = batch_graphs([train_graphs[int(i)] for i in chunk])
            features = ad.Tensor(batch.features)
            labels = batch.labels
            try:
                if config.model == "full":
                    result = forward_full(
                        features,
                        batch,
                        store,
                        config.gnn,
                        config.interaction,
                        training=True,
                        tau=tau,
                        mask_rng=rng_mask,
                        noise_rng=rng_noise,
                    )
                    if config.objective_center == "environment":
                        branch_logits = result.env_logits
                    else:
                        branch_logits = env_head(result.z_c, store)
                    loss, parts = total_loss(
                        result.main_logits, branch_logits, labels, result.p, store, config
                    )
                else:
                    logits = forward_baseline(features, batch, store, config.gnn)
                    loss = ad.cross_entropy(logits, labels)
                    parts = {"main_ce": loss.item(), "env_term": 0.0, "kl_term": 0.0}
            except NumericError as exc:
                raise TrainingError(f"diverged: {exc}", epoch=epoch) from exc
            if not np.isfinite(loss.item()):
                raise TrainingError(
                    f"non-finite training loss {loss.item()!r}", epoch=epoch
                )
            ad.backward(loss)
            try:
                adam.step()
            except NumericError as exc:
                raise TrainingError(str(exc), epoch=epoch) from exc
            adam.zero_grad()
            for key in sums:
                sums[key] += parts[key] * len(chunk)
            seen += len(chunk)
        val = evaluate(store, val_graphs, config)
        test = evaluate(store, test_graphs, config)
        rows.append(
            EpochRow(
                epoch=epoch,
                main_ce=sums["main_ce"] / seen,
                env_term=sums["env_term"] / seen,
                kl_term=sums["kl_term"] / seen,
                val_acc=val.accuracy,
                val_auc=val.auc,
                test_acc=test.accuracy,
                test_auc=test.auc,
            )
        )
        if val.accuracy > best_acc:
            best_acc = val.accuracy
            best_epoch = epoch
            best_snapshot = store.snapshot("float32")
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                log.info("early stop at epoch %d (no val gain for %d)", epoch, stale)
                break

    store.load_state(best_snapshot)
    final_val = evaluate(store, val_graphs, config)
    final_test = evaluate(store, test_graphs, config)
    report = MetricsReport(
        rows=tuple(rows),
        best_epoch=best_epoch,
        final_val_acc=final_val.accuracy,
        final_val_auc=final_val.auc,
        final_test_acc=final_test.accuracy,
        final_test_auc=final_test.auc,
        seed=config.seed,
        wall_time_s=time.perf_counter() - started,
    )
    return TrainResult(store, report, adam.state(), config_hash(config))


def run_experiment(
    config: ExperimentConfig, dataset: Sequence[MolecularGraph]
) -> TrainResult:
    """Split ``dataset`` per the config's split stream and run the loop."""
    parts = split_dataset(config, dataset)
    return train_on_splits(config, *parts)


def split_dataset(
    config: ExperimentConfig, dataset: Sequence[MolecularGraph]
) -> tuple[list[MolecularGraph], list[MolecularGraph], list[MolecularGraph]]:
    """The exact train/val/test partition a training run would use."""
    streams = np.random.SeedSequence(config.seed).spawn(6)
    rng_split = np.random.default_rng(streams[1])
    return ood_split(list(dataset), config.split, rng_split)


def train(
    config: ExperimentConfig, dataset: Sequence[MolecularGraph]
) -> tuple[ad.ParameterStore, MetricsReport]:
    """Split ``dataset`` per the config and run the loop; returns the
    best-validation parameters (float32-rounded) and the metric report."""
    result = run_experiment(config, dataset)
    return result.store, result.report


METRIC_COLUMNS = (
    "epoch",
    "main_ce",
    "env_term",
    "kl_term",
    "val_acc",
    "val_auc",
    "test_acc",
    "test_auc",
)


def metrics_csv(report: MetricsReport) -> str:
    """Per-epoch rows as comma-separated text, headers first.

    Floats use repr, so identical runs serialize byte-identically.
    """
    lines = [",".join(METRIC_COLUMNS)]
    for row in report.rows:
        lines.append(
            ",".join(
                [
                    str(row.epoch),
                    repr(row.main_ce),
                    repr(row.env_term),
                    repr(row.kl_term),
                    repr(row.val_acc),
                    repr(row.val_auc),
                    repr(row.test_acc),
                    repr(row.test_auc),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def summary_text(report: MetricsReport) -> str:
    """Human-readable final summary; wall time makes it non-reproducible."""
    return (
        f"best_epoch: {report.best_epoch}\n"
        f"final_val_acc: {report.final_val_acc!r}\n"
        f"final_val_auc: {report.final_val_auc!r}\n"
        f"final_test_acc: {report.final_test_acc!r}\n"
        f"final_test_auc: {report.final_test_auc!r}\n"
        f"seed: {report.seed}\n"
        f"epochs_run: {len(report.rows)}\n"
        f"wall_time_s: {report.wall_time_s:.3f}\n"
    )

"""Mini-batch training of the two-head model with Adam.

One step is forward (both augmented views) -> joint loss -> backward ->
parameter update. The joint objective is the plain sum of the instance
and cluster terms; ablation switches drop either one. Everything is
seeded: batch order, per-sample augmentation streams, and the parameter
init, so identical configs reproduce byte-identical reports.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .augment import make_pair, pair_rng
from .config import ExperimentConfig, build_pipeline
from .data import Dataset
from .errors import ConfigError, ContractError, DegenerateInputError
from .kmeans import kmeans
from .losses import (
    ClusterLossConfig,
    InstanceLossConfig,
    cluster_loss,
    instance_loss,
    pair_similarity_stats,
)
from .metrics import ari, clustering_accuracy, nmi
from .model import (
    ModelParams,
    ParamNodes,
    forward,
    forward_graph,
    init_params,
    predict_assignments,
)

__all__ = [
    "OptimizerState",
    "EpochRecord",
    "TrainReport",
    "REPORT_COLUMNS",
    "adam_step",
    "total_loss",
    "train",
    "evaluate",
    "instance_space_assignments",
]

# Distinct stream family for batch shuffles, so epoch ordering can never
# collide with augmentation substreams.
SHUFFLE_STREAM_TAG = 0x53465631

REPORT_COLUMNS = (
    "epoch",
    "l_ins",
    "l_clu",
    "l_total",
    "nmi",
    "acc",
    "ari",
    "pos_sim_inst",
    "neg_sim_inst",
    "pos_sim_clu",
    "neg_sim_clu",
)


@dataclass
class OptimizerState:
    """Adam accumulators, aligned with ModelParams.items() order.

    Bias-corrected first/second moments, no weight decay, no schedule.
    """

    learning_rate: float = 0.0003
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(
        cls,
        params: ModelParams,
        learning_rate: float = 0.0003,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ) -> "OptimizerState":
        arrays = [array for _, array in params.items()]
        return cls(
            learning_rate=learning_rate,
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
            step=0,
            m=[np.zeros_like(a) for a in arrays],
            v=[np.zeros_like(a) for a in arrays],
        )


def adam_step(params: ModelParams, gradients: list, state: OptimizerState) -> None:
    """One Adam update, in place on the parameter arrays.

    A zero gradient leaves its parameter bit-identical: both moments stay
    zero and the update is exactly 0 / (0 + epsilon).
    """
    arrays = [array for _, array in params.items()]
    if len(gradients) != len(arrays):
        raise ContractError(
            f"optimizer: got {len(gradients)} gradients for {len(arrays)} parameters"
        )
    for i, (array, grad) in enumerate(zip(arrays, gradients)):
        if grad.shape != array.shape:
            raise ContractError(
                f"optimizer: gradient {i} has shape {grad.shape}, "
                f"parameter has {array.shape}"
            )
    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1**t
    correction2 = 1.0 - state.beta2**t
    for array, grad, m, v in zip(arrays, gradients, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        # Epsilon sits outside the square root: at step 1 with constant
        # gradient g the update is exactly -lr * g / (|g| + eps).
        array -= state.learning_rate * (m / correction1) / (
            np.sqrt(v / correction2) + state.epsilon
        )


def _combine(terms: list) -> ad.Node:
    if not terms:
        return ad.lift(np.zeros((1, 1)))
    if len(terms) == 1:
        return terms[0]
    return ad.add(terms[0], terms[1])


def total_loss(
    z_a,
    z_b,
    y_a,
    y_b,
    instance_config: InstanceLossConfig = InstanceLossConfig(),
    cluster_config: ClusterLossConfig = ClusterLossConfig(),
    include_instance: bool = True,
    include_cluster: bool = True,
) -> ad.Node:
    """Joint objective: unweighted sum of the two heads' losses.

    With one term switched off the result is the other term's node
    itself; with both off it is the constant 0.
    """
    terms = []
    if include_instance:
        terms.append(instance_loss(z_a, z_b, instance_config))
    if include_cluster:
        terms.append(cluster_loss(y_a, y_b, cluster_config))
    return _combine(terms)


def _term_switches(ablation: str) -> tuple[bool, bool]:
    # The raw_* modes ablate augmentation only; the objective stays joint.
    return ablation != "cch_only", ablation != "ich_only"


def _pair_mode(ablation: str) -> str:
    if ablation == "raw_second_view":
        return "raw_second"
    if ablation == "raw_both_views":
        return "raw_both"
    return "two_views"


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    l_ins: float | None
    l_clu: float | None
    l_total: float
    nmi: float | None
    acc: float | None
    ari: float | None
    pos_sim_inst: float
    neg_sim_inst: float
    pos_sim_clu: float
    neg_sim_clu: float

    def cells(self) -> list:
        return [getattr(self, column) for column in REPORT_COLUMNS]


@dataclass
class TrainReport:
    records: list = field(default_factory=list)

    def csv_text(self) -> str:
        lines = [",".join(REPORT_COLUMNS)]
        for record in self.records:
            lines.append(",".join(_format_cell(cell) for cell in record.cells()))
        return "\n".join(lines) + "\n"

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.csv_text())


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    # repr of a Python float is shortest-round-trip and deterministic.
    return repr(float(value))


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence((SHUFFLE_STREAM_TAG, seed, epoch)))
    return rng.permutation(n)


def train(config: ExperimentConfig, dataset: Dataset) -> tuple[ModelParams, TrainReport]:
    """Run the training loop and return final parameters plus the
    per-epoch report.

    Mini-batches are seeded shuffles with partial trailing batches
    dropped, so every loss is computed at the same batch size. Metrics
    columns are filled per epoch when the dataset has labels, always on
    raw (un-augmented) inputs.
    """
    if dataset.n == 0:
        raise ContractError("train: dataset is empty")
    config = config.resolve(dataset)
    settings = config.training
    if settings.batch_size > dataset.n:
        raise ConfigError(
            f"training: batch_size {settings.batch_size} exceeds "
            f"dataset size {dataset.n}"
        )
    if config.model.cluster_count < 2:
        raise ConfigError("training: need at least 2 clusters")

    params = init_params(config.model.model_config(dataset.dim))
    state = OptimizerState.for_params(
        params,
        learning_rate=settings.learning_rate,
        beta1=settings.beta1,
        beta2=settings.beta2,
        epsilon=settings.epsilon,
    )
    pipeline = build_pipeline(config.augmentation, dataset.geometry)
    include_instance, include_cluster = _term_switches(config.ablation)
    pair_mode = _pair_mode(config.ablation)
    instance_config = InstanceLossConfig(
        temperature=config.losses.instance_temperature,
        exclude_self_similarity=config.losses.exclude_self_similarity,
    )
    cluster_config = ClusterLossConfig(
        temperature=config.losses.cluster_temperature,
        entropy_weight=config.losses.entropy_weight,
        exclude_self_similarity=config.losses.exclude_self_similarity,
        literal_entropy_sign=config.losses.literal_entropy_sign,
    )

    # Parameter nodes share storage with the arrays Adam updates in
    # place, so the graph leaves stay valid across steps.
    param_nodes = ParamNodes.from_params(params)
    report = TrainReport()
    batch = settings.batch_size
    for epoch in range(settings.epochs):
        order = _epoch_order(config.seed, epoch, dataset.n)
        sums = {key: 0.0 for key in ("ins", "clu", "total", "pi", "ni", "pc", "nc")}
        batch_count = 0
        for start in range(0, dataset.n - batch + 1, batch):
            indices = order[start : start + batch]
            views_a, views_b = [], []
            for i in indices:
                rng = pair_rng(config.seed, epoch, int(i))
                xa, xb = make_pair(pipeline, dataset.samples[i], rng, mode=pair_mode)
                views_a.append(xa)
                views_b.append(xb)
            try:
                _, z_a, y_a = forward_graph(param_nodes, ad.lift(np.stack(views_a)))
                _, z_b, y_b = forward_graph(param_nodes, ad.lift(np.stack(views_b)))
                terms = []
                term_ins = term_clu = None
                if include_instance:
                    term_ins = instance_loss(z_a, z_b, instance_config)
                    terms.append(term_ins)
                if include_cluster:
                    term_clu = cluster_loss(y_a, y_b, cluster_config)
                    terms.append(term_clu)
                total = _combine(terms)
                # Pre-zero every parameter gradient: a head outside the
                # active objective is unreachable from the root and
                # would otherwise keep a stale gradient.
                for node in param_nodes.nodes():
                    node.grad = np.zeros_like(node.value)
                ad.backward(total)
                pos_i, neg_i = pair_similarity_stats(z_a.value, z_b.value)
                pos_c, neg_c = pair_similarity_stats(y_a.value.T, y_b.value.T)
            except DegenerateInputError as exc:
                raise DegenerateInputError(
                    f"epoch {epoch}, batch {batch_count}: {exc}"
                ) from exc
            gradients = [node.grad for node in param_nodes.nodes()]
            adam_step(params, gradients, state)
            if term_ins is not None:
                sums["ins"] += float(term_ins.value[0, 0])
            if term_clu is not None:
                sums["clu"] += float(term_clu.value[0, 0])
            sums["total"] += float(total.value[0, 0])
            sums["pi"] += pos_i
            sums["ni"] += neg_i
            sums["pc"] += pos_c
            sums["nc"] += neg_c
            batch_count += 1

        metrics = evaluate(params, dataset) if dataset.labels is not None else None
        report.records.append(
            EpochRecord(
                epoch=epoch,
                l_ins=sums["ins"] / batch_count if include_instance else None,
                l_clu=sums["clu"] / batch_count if include_cluster else None,
                l_total=sums["total"] / batch_count,
                nmi=metrics["nmi"] if metrics else None,
                acc=metrics["acc"] if metrics else None,
                ari=metrics["ari"] if metrics else None,
                pos_sim_inst=sums["pi"] / batch_count,
                neg_sim_inst=sums["ni"] / batch_count,
                pos_sim_clu=sums["pc"] / batch_count,
                neg_sim_clu=sums["nc"] / batch_count,
            )
        )
    return params, report


def evaluate(params: ModelParams, dataset: Dataset) -> dict:
    """Metric bundle of the argmax assignments against ground truth.

    Always runs on raw inputs; augmentation never touches evaluation.
    """
    if dataset.labels is None:
        raise ContractError("evaluate: dataset has no ground-truth labels")
    assignments = predict_assignments(params, dataset.samples)
    return {
        "nmi": float(nmi(dataset.labels, assignments)),
        "acc": float(clustering_accuracy(dataset.labels, assignments)),
        "ari": float(ari(dataset.labels, assignments)),
    }


def instance_space_assignments(params: ModelParams, samples, k: int, seed: int = 0):
    """Seeded k-means over unit-normalized instance-head features: the
    evaluation pathway for models trained with the instance term only."""
    _, z, _ = forward(params, samples)
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    labels, _, _ = kmeans(z / norms, k, seed=seed)
    return labels

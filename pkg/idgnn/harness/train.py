"""
Training harness
----------------
train() runs one configuration over every seed:

- shuffled mini-batches, ceil(|train| / batch_size) steps per epoch
- ICON step loss when icon is enabled, otherwise the single-forward RNI
  (or no-ID baseline) loss
- accuracy (and optionally the invariance ratio) every eval_every epochs
- model selection on the validation split only; test sets are scored once,
  with the selected parameters
- final metrics as mean/std over seeds

grid_search() sweeps the hyperparameter grid, optionally across processes.
"""
from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from multiprocessing import Pool
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from idgnn.core.graph import Dataset, TaskKind, make_batch
from idgnn.core.icon import IconConfig, icon_step_loss, rni_step_loss
from idgnn.core.layers import LayerKind, Model, ModelConfig, Readout, save_checkpoint
from idgnn.core.node_ids import IdConfig, IdDist, IdMode
from idgnn.core.tensor import Tape
from idgnn.errors import ContractViolation, TrainingDiverged
from idgnn.harness.evaluate import DEFAULT_EVAL_SEED, evaluate
from idgnn.harness.invariance import DEFAULT_CHUNK, evaluate_invariance
from idgnn.harness.metrics import MetricsLog, MetricsRow
from idgnn.harness.optim import make_optimizer

logger = logging.getLogger(__name__)

Evaluator = Callable[[Model, Dataset, str, int], Dict[str, float]]

# lr x batch size x layers x hidden width
HYPERPARAMETER_GRID: Dict[str, Tuple] = {
    "lr": (1e-3, 5e-4),
    "batch_size": (32, 64),
    "num_layers": (3, 5),
    "hidden_dim": (32, 64),
}


# task -> INI section layered over the defaults for that task
RECIPE_SECTIONS: Dict[str, str] = {
    "wlhard": "WLHardTraining",
}


class OptimizerKind(str, Enum):
    ADAM = "adam"
    SGD = "sgd"


class Method(str, Enum):
    BASELINE = "baseline"
    RNI = "rni"
    ICON = "icon"


def _int_list(value):
    if isinstance(value, str):
        return [int(x) for x in value.split(",") if x.strip()]
    if isinstance(value, int):
        return [value]
    return value


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    optimizer: OptimizerKind = OptimizerKind.ADAM
    lr: float = Field(1e-3, gt=0.0)
    batch_size: int = Field(32, ge=1)
    epochs: int = Field(500, ge=1)
    kind: LayerKind = LayerKind.GIN
    num_layers: int = Field(3, ge=1)
    hidden_dim: int = Field(64, ge=1)
    gat_heads: int = Field(1, ge=1)
    dropout_rate: float = Field(0.1, ge=0.0, lt=1.0)
    readout: Readout = Readout.SUM
    readout_layers: int = Field(1, ge=1)
    id_mode: IdMode = IdMode.RNI
    id_dim: int = Field(16, ge=1)
    id_dist: IdDist = IdDist.UNIFORM
    icon: IconConfig = Field(default_factory=IconConfig)
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2])
    eval_every: int = Field(10, ge=1)
    invariance_K: int = Field(200, ge=1)
    invariance_every: int = Field(0, ge=0)   # 0: only after training
    chunk_size: int = Field(DEFAULT_CHUNK, ge=1)
    eval_seed: int = DEFAULT_EVAL_SEED
    test_curve: bool = False                 # also log test accuracy per eval epoch (never used for selection)
    final_invariance: bool = True

    @field_validator("seeds", mode="before")
    @classmethod
    def _parse_seeds(cls, value):
        return _int_list(value)

    @field_validator("seeds")
    @classmethod
    def _seeds_present(cls, seeds: List[int]) -> List[int]:
        if not seeds:
            raise ValueError("seeds must not be empty")
        return seeds

    @model_validator(mode="after")
    def _icon_needs_ids(self) -> "TrainConfig":
        if self.icon.enabled and self.id_mode != IdMode.RNI:
            raise ValueError(f"icon.enabled needs id_mode=rni, got {self.id_mode.value}")
        return self

    @property
    def method(self) -> Method:
        if self.icon.enabled:
            return Method.ICON
        return Method.RNI if self.id_mode == IdMode.RNI else Method.BASELINE

    @property
    def id_config(self) -> IdConfig:
        return IdConfig(id_mode=self.id_mode, id_dim=self.id_dim, id_dist=self.id_dist)

    def for_method(self, method: Union[Method, str]) -> "TrainConfig":
        """Copy with id_mode / icon set for one of baseline, rni, icon."""
        method = Method(method)
        id_mode = IdMode.CONSTANT if method == Method.BASELINE else IdMode.RNI
        icon = self.icon.model_copy(update={"enabled": method == Method.ICON})
        return self.model_validate({**self.model_dump(), "id_mode": id_mode, "icon": icon.model_dump()})

    @classmethod
    def from_ini(
        cls, config: Dict[str, Dict[str, str]], recipe: Optional[str] = None, **overrides
    ) -> "TrainConfig":
        """[Model], [Ids], [Training] and [Icon], then the recipe section if one is named.

        A recipe section mixes training keys and [Icon] keys.
        """
        values: Dict[str, object] = {}
        for section in ("Model", "Ids", "Training"):
            values.update({k: v for k, v in config.get(section, {}).items() if k in cls.model_fields})
        if "eval_seed" in config.get("General", {}):
            values["eval_seed"] = config["General"]["eval_seed"]
        if "chunk_size" in config.get("Invariance", {}):
            values["chunk_size"] = config["Invariance"]["chunk_size"]
        icon = IconConfig.from_ini(config).model_dump()
        if recipe is not None:
            if recipe not in RECIPE_SECTIONS:
                raise ContractViolation(f"unknown training recipe {recipe!r}; expected one of {sorted(RECIPE_SECTIONS)}")
            section = config.get(RECIPE_SECTIONS[recipe], {})
            values.update({k: v for k, v in section.items() if k in cls.model_fields})
            icon.update({k: v for k, v in section.items() if k in IconConfig.model_fields})
        values["icon"] = icon
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.model_validate(values)


def model_config_for(cfg: TrainConfig, dataset: Dataset) -> ModelConfig:
    node_task = dataset.task_kind == TaskKind.NODE
    return ModelConfig(
        kind=cfg.kind,
        task_kind=dataset.task_kind,
        feature_dim=dataset.graphs[0].feature_dim if dataset.graphs else 0,
        ids=cfg.id_config,
        hidden_dim=cfg.hidden_dim,
        num_layers=cfg.num_layers,
        num_classes=dataset.num_classes,
        readout=Readout.NONE if node_task else (cfg.readout if cfg.readout != Readout.NONE else Readout.SUM),
        readout_layers=cfg.readout_layers,
        gat_heads=cfg.gat_heads,
        dropout_rate=cfg.dropout_rate,
    )


# ---- Records ----

@dataclass
class EpochMetrics:
    seed: int
    epoch: int
    loss: float
    accuracy: Dict[str, float] = field(default_factory=dict)
    invariance: Dict[str, float] = field(default_factory=dict)
    reg: Optional[float] = None


@dataclass
class RunRecord:
    config: Dict
    dataset: str
    model: str
    method: str
    epochs: List[EpochMetrics] = field(default_factory=list)
    steps: Dict[int, int] = field(default_factory=dict)
    best_epoch: Dict[int, int] = field(default_factory=dict)
    checkpoints: Dict[int, str] = field(default_factory=dict)
    per_seed: Dict[int, Dict[str, float]] = field(default_factory=dict)
    final: Dict[str, Dict[str, float]] = field(default_factory=dict)

    def curve(self, split: str, seed: Optional[int] = None, metric: str = "accuracy") -> List[Tuple[int, float]]:
        out = []
        for m in self.epochs:
            values = m.accuracy if metric == "accuracy" else m.invariance
            if (seed is None or m.seed == seed) and split in values:
                out.append((m.epoch, values[split]))
        return out

    def to_dict(self) -> Dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _summarize(per_seed: Mapping[int, Mapping[str, float]]) -> Dict[str, Dict[str, float]]:
    names = sorted({k for metrics in per_seed.values() for k in metrics})
    final = {}
    for name in names:
        values = [m[name] for m in per_seed.values() if name in m]
        final[name] = {"mean": float(np.mean(values)), "std": float(np.std(values)), "n": float(len(values))}
    return final


def _has_targets(dataset: Dataset, split: str) -> bool:
    graphs = dataset.subset(split)
    if not graphs:
        return False
    if dataset.task_kind == TaskKind.GRAPH:
        return True
    return any(g.supervised_nodes() for g in graphs)


# ---- Training ----

def train(
    model: Union[Model, ModelConfig, None],
    dataset: Dataset,
    cfg: TrainConfig,
    *,
    test_sets: Optional[Mapping[str, Dataset]] = None,
    metrics_log: Optional[MetricsLog] = None,
    evaluator: Evaluator = evaluate,
    checkpoint_dir: Optional[Union[str, Path]] = None,
) -> RunRecord:
    """Train one configuration on every seed in cfg.seeds.

    `model` is a template: a Model or ModelConfig (re-initialised per seed),
    or None to derive the architecture from `cfg` and `dataset`.
    `test_sets` maps names to extra datasets scored on their "test" split
    after model selection; the dataset's own test split is scored as "test".
    With `checkpoint_dir`, the selected parameters of every seed are saved there.
    """
    if isinstance(model, Model):
        model_cfg = model.config
    elif isinstance(model, ModelConfig):
        model_cfg = model
    else:
        model_cfg = model_config_for(cfg, dataset)
    if model_cfg.ids != cfg.id_config:
        model_cfg = model_cfg.model_copy(update={"ids": cfg.id_config})

    train_idx = list(dataset.split.get("train", []))
    if not train_idx:
        raise ContractViolation(f"{dataset.name} has no train split")
    select_split = "valid" if _has_targets(dataset, "valid") else "train"
    if select_split == "train":
        logger.warning("%s has no usable validation split; selecting on train accuracy", dataset.name)

    tests: Dict[str, Tuple[Dataset, str]] = {}
    if _has_targets(dataset, "test"):
        tests["test"] = (dataset, "test")
    for name, ds in (test_sets or {}).items():
        tests[name] = (ds, "test")

    record = RunRecord(
        config=cfg.model_dump(mode="json"),
        dataset=dataset.name,
        model=model_cfg.kind.value,
        method=cfg.method.value,
    )
    steps_per_epoch = math.ceil(len(train_idx) / cfg.batch_size)

    def log_row(seed: int, epoch: int, name: str, acc: float, inv: Optional[float] = None) -> None:
        if metrics_log is None:
            return
        ds_name, split = (tests[name][0].name, "test") if name in tests else (dataset.name, name)
        metrics_log.append(MetricsRow(
            dataset=ds_name,
            model=record.model,
            method=record.method,
            epoch=epoch,
            split=split,
            task_metric=acc,
            invariance_ratio=inv,
            K=cfg.invariance_K if inv is not None else None,
            seed=seed,
        ))

    for seed in cfg.seeds:
        init_seq, train_seq = np.random.SeedSequence(seed).spawn(2)
        net = Model(model_cfg, seed=init_seq)
        optimizer = make_optimizer(cfg.optimizer.value, net.parameters(), cfg.lr)
        rng = np.random.default_rng(train_seq)
        best_metric, best_state, best_epoch = -np.inf, net.state_dict(), 0
        steps = 0

        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(train_idx)
            losses: List[float] = []
            regs: List[float] = []
            for b in range(steps_per_epoch):
                graphs = [dataset.graphs[int(i)] for i in order[b * cfg.batch_size:(b + 1) * cfg.batch_size]]
                batch = make_batch(graphs)
                steps += 1
                if dataset.task_kind == TaskKind.NODE and not batch.labeled_mask.any():
                    continue
                optimizer.zero_grad()
                with Tape():
                    if cfg.method == Method.ICON:
                        loss, parts = icon_step_loss(net, batch, cfg.icon, rng)
                        regs.append(parts["reg"])
                    else:
                        loss = rni_step_loss(net, batch, rng)
                    value = loss.item()
                    if not np.isfinite(value):
                        record.steps[seed] = steps
                        record.final = _summarize(record.per_seed)
                        raise TrainingDiverged(
                            f"non-finite loss {value} at seed {seed}, epoch {epoch}, step {steps}", record
                        )
                    loss.backward()
                optimizer.step()
                losses.append(value)

            if epoch % cfg.eval_every != 0 and epoch != cfg.epochs:
                continue
            metrics = EpochMetrics(
                seed=seed,
                epoch=epoch,
                loss=float(np.mean(losses)) if losses else float("nan"),
                reg=float(np.mean(regs)) if regs else None,
            )
            eval_splits = ["train"] + (["valid"] if select_split == "valid" else [])
            for split in eval_splits:
                metrics.accuracy[split] = evaluator(net, dataset, split, cfg.eval_seed)["accuracy"]
            if cfg.test_curve:
                for name, (ds, split) in tests.items():
                    metrics.accuracy[name] = evaluator(net, ds, split, cfg.eval_seed)["accuracy"]
            if cfg.invariance_every and epoch % cfg.invariance_every == 0:
                for split in eval_splits:
                    metrics.invariance[split] = evaluate_invariance(
                        net, dataset.subset(split), cfg.invariance_K, cfg.eval_seed, split, cfg.chunk_size, epoch
                    ).mean
            record.epochs.append(metrics)
            for split, acc in metrics.accuracy.items():
                log_row(seed, epoch, split, acc, metrics.invariance.get(split))
            logger.info(
                "seed %d epoch %d: loss %.4f, %s",
                seed, epoch, metrics.loss, ", ".join(f"{k} {v:.4f}" for k, v in metrics.accuracy.items()),
            )

            selected = metrics.accuracy[select_split]
            if selected > best_metric:
                best_metric, best_state, best_epoch = selected, net.state_dict(), epoch

        net.load_state_dict(best_state)
        record.steps[seed] = steps
        record.best_epoch[seed] = best_epoch
        if checkpoint_dir is not None:
            path = Path(checkpoint_dir) / f"{dataset.name}-{record.model}-{record.method}-seed{seed}.json"
            record.checkpoints[seed] = save_checkpoint(net, path).as_posix()
        logger.info("seed %d: selected epoch %d (%s accuracy %.4f)", seed, best_epoch, select_split, best_metric)

        final: Dict[str, float] = {f"{select_split}/accuracy": float(best_metric)}
        for name, (ds, split) in tests.items():
            final[f"{name}/accuracy"] = evaluator(net, ds, split, cfg.eval_seed)["accuracy"]
        if cfg.final_invariance:
            targets = [("train", dataset, "train")] + [(name, ds, split) for name, (ds, split) in tests.items()]
            for name, ds, split in targets:
                report = evaluate_invariance(
                    net, ds.subset(split), cfg.invariance_K, cfg.eval_seed, split, cfg.chunk_size, best_epoch
                )
                final[f"{name}/invariance"] = report.mean
        record.per_seed[seed] = final

    record.final = _summarize(record.per_seed)
    return record


def first_epoch_sustaining(curve: Sequence[Tuple[int, float]], threshold: float = 0.95) -> Optional[int]:
    """First epoch from which every later point stays at or above `threshold`."""
    found: Optional[int] = None
    for epoch, value in curve:
        if value >= threshold:
            if found is None:
                found = epoch
        else:
            found = None
    return found


# ---- Grid search ----

def grid_cells(grid: Mapping[str, Sequence] = HYPERPARAMETER_GRID) -> List[Dict[str, object]]:
    keys = list(grid)
    return [dict(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]


def _run_cell(args) -> Dict[str, object]:
    cell, dataset, cfg, test_sets = args
    cell_cfg = cfg.model_validate({**cfg.model_dump(), **cell})
    record = train(None, dataset, cell_cfg, test_sets=test_sets)
    return {**cell, "final": record.final, "best_epoch": record.best_epoch}


def grid_search(
    dataset: Dataset,
    cfg: TrainConfig,
    grid: Mapping[str, Sequence] = HYPERPARAMETER_GRID,
    jobs: int = 1,
    test_sets: Optional[Mapping[str, Dataset]] = None,
) -> Tuple[List[Dict[str, object]], Dict[str, object]]:
    """Train every grid cell; returns (all cells, the cell with the best mean selection accuracy).

    Cells run in separate processes when jobs > 1; each trains with the
    seeds in `cfg`, so results do not depend on the job count.
    """
    cells = grid_cells(grid)
    work = [(cell, dataset, cfg, test_sets) for cell in cells]
    logger.info("Grid search over %d cells with %d job(s)", len(cells), jobs)
    if jobs > 1:
        with Pool(processes=jobs) as pool:
            results = pool.map(_run_cell, work)
    else:
        results = [_run_cell(w) for w in work]

    def score(result: Dict[str, object]) -> float:
        final = result["final"]
        key = "valid/accuracy" if "valid/accuracy" in final else "train/accuracy"
        return final[key]["mean"]

    best = max(results, key=score)
    return results, best


# ---- Seed-parallel runs ----

def _run_seed(args) -> Tuple[RunRecord, List[MetricsRow]]:
    model_cfg, dataset, cfg, seed, test_sets, checkpoint_dir = args
    log = MetricsLog()
    one = cfg.model_copy(update={"seeds": [seed]})
    record = train(model_cfg, dataset, one, test_sets=test_sets, metrics_log=log, checkpoint_dir=checkpoint_dir)
    return record, log.rows


def merge_records(records: Sequence[RunRecord], config: Dict) -> RunRecord:
    """Combine single-seed records (in the given order) into one multi-seed record."""
    merged = RunRecord(config=config, dataset=records[0].dataset, model=records[0].model, method=records[0].method)
    for r in records:
        merged.epochs.extend(r.epochs)
        merged.steps.update(r.steps)
        merged.best_epoch.update(r.best_epoch)
        merged.checkpoints.update(r.checkpoints)
        merged.per_seed.update(r.per_seed)
    merged.final = _summarize(merged.per_seed)
    return merged


def train_seeds(
    model: Union[Model, ModelConfig, None],
    dataset: Dataset,
    cfg: TrainConfig,
    jobs: int = 1,
    *,
    test_sets: Optional[Mapping[str, Dataset]] = None,
    metrics_log: Optional[MetricsLog] = None,
    checkpoint_dir: Optional[Union[str, Path]] = None,
) -> RunRecord:
    """train() with one process per seed when jobs > 1.

    Each seed owns its RNG streams, so the merged record and the metric rows
    (appended in seed order) match a sequential run exactly.
    """
    if jobs <= 1 or len(cfg.seeds) == 1:
        return train(model, dataset, cfg, test_sets=test_sets, metrics_log=metrics_log, checkpoint_dir=checkpoint_dir)
    template = model.config if isinstance(model, Model) else model
    work = [(template, dataset, cfg, seed, test_sets, checkpoint_dir) for seed in cfg.seeds]
    with Pool(processes=min(jobs, len(work))) as pool:
        results = pool.map(_run_seed, work)
    if metrics_log is not None:
        for _, rows in results:
            metrics_log.extend(rows)
    return merge_records([record for record, _ in results], cfg.model_dump(mode="json"))

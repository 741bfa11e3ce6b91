import math

import numpy as np
import pytest
from pydantic import ValidationError

from idgnn.core.icon import RegReduction
from idgnn.core.layers import LayerKind, load_checkpoint
from idgnn.core.node_ids import IdMode
from idgnn.core.tensor import Tensor
from idgnn.errors import ContractViolation, TrainingDiverged
from idgnn.harness import train as train_module
from idgnn.harness.evaluate import evaluate
from idgnn.harness.metrics import MetricsLog, read_metrics
from idgnn.harness.train import (
    HYPERPARAMETER_GRID,
    Method,
    TrainConfig,
    first_epoch_sustaining,
    grid_cells,
    merge_records,
    train,
    train_seeds,
)
from idgnn.loadConfig import read_config
from idgnn.tasks.synthetic import WLHardConfig, build_istriangle_dataset, build_wlhard_pairs


def _cfg(**kw):
    base = dict(epochs=3, batch_size=4, hidden_dim=8, num_layers=2, seeds=[0, 1], eval_every=1,
                invariance_K=5, id_dim=4, lr=0.01)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def pairs():
    return build_wlhard_pairs(num_pairs=10, sizes=(6, 8), seed=0)


def test_icon_requires_rni_ids():
    with pytest.raises(ValidationError):
        TrainConfig(id_mode="constant")
    assert TrainConfig(id_mode="constant", icon={"enabled": False}).method == Method.BASELINE


@pytest.mark.parametrize("method,mode,icon", [
    ("baseline", IdMode.CONSTANT, False),
    ("rni", IdMode.RNI, False),
    ("icon", IdMode.RNI, True),
])
def test_for_method(method, mode, icon):
    cfg = TrainConfig().for_method(method)
    assert cfg.id_mode == mode and cfg.icon.enabled == icon and cfg.method == Method(method)


def test_from_ini_reads_repository_config():
    cfg = TrainConfig.from_ini(read_config(), epochs=7)
    assert cfg.epochs == 7
    assert cfg.seeds == [0, 1, 2]
    assert cfg.eval_seed == 12345
    assert cfg.icon.enabled and cfg.id_dim == 16


def test_seeds_parse_from_text():
    assert TrainConfig(seeds="3, 4").seeds == [3, 4]
    with pytest.raises(ValidationError):
        TrainConfig(seeds="")


def test_training_run_shape(pairs):
    cfg = _cfg().for_method("rni")
    log = MetricsLog()
    record = train(None, pairs, cfg, metrics_log=log)
    n_train = len(pairs.split["train"])
    assert record.steps == {0: 3 * math.ceil(n_train / 4), 1: 3 * math.ceil(n_train / 4)}
    assert set(record.best_epoch.values()) <= {1, 2, 3}
    assert sorted(record.final) == ["test/accuracy", "test/invariance", "train/invariance", "valid/accuracy"]
    assert record.final["valid/accuracy"]["n"] == 2.0
    # train + valid per epoch per seed
    assert len(log.rows) == 2 * 3 * 2
    assert {r.split for r in log.rows} == {"train", "valid"}
    assert len(record.curve("valid", seed=0)) == 3


def test_training_is_reproducible(pairs):
    cfg = _cfg(seeds=[3]).for_method("icon")
    a = train(None, pairs, cfg)
    b = train(None, pairs, cfg)
    assert a.to_json() == b.to_json()
    assert all(m.reg is not None for m in a.epochs)


def test_baseline_has_full_invariance(pairs):
    record = train(None, pairs, _cfg(seeds=[0]).for_method("baseline"))
    assert record.final["train/invariance"]["mean"] == 1.0


def test_selection_never_reads_test(pairs):
    seen = []

    def spy(model, dataset, split, seed):
        seen.append(split)
        return evaluate(model, dataset, split, seed)

    train(None, pairs, _cfg(seeds=[0], epochs=2).for_method("rni"), evaluator=spy)
    per_epoch = seen[:-1]
    assert "test" not in per_epoch
    assert seen[-1] == "test"


def test_test_curve_is_logged_but_not_selected_on(pairs):
    log = MetricsLog()
    cfg = _cfg(seeds=[0], test_curve=True).for_method("rni")
    record = train(None, pairs, cfg, metrics_log=log)
    assert {r.split for r in log.rows} == {"train", "valid", "test"}
    assert "valid/accuracy" in record.final


def test_extra_test_sets_and_checkpoints(tmp_path):
    train_ds, interp, extrap = build_istriangle_dataset(num_graphs=6, n=12, seed=0, node_budget=20, num_test_graphs=2)
    cfg = _cfg(seeds=[0], epochs=2, invariance_K=3).for_method("icon")
    log = MetricsLog(tmp_path / "metrics.csv")
    record = train(None, train_ds, cfg, test_sets={"interp": interp, "extrap": extrap}, metrics_log=log,
                   checkpoint_dir=tmp_path / "ckpt")
    assert {"interp/accuracy", "extrap/accuracy", "interp/invariance", "extrap/invariance"} <= set(record.final)
    path = record.checkpoints[0]
    assert path.endswith("istriangle-GIN-icon-seed0.json")
    model = load_checkpoint(path)
    assert evaluate(model, interp, "test", cfg.eval_seed)["accuracy"] == record.per_seed[0]["interp/accuracy"]
    assert len(read_metrics(tmp_path / "metrics.csv")) == len(log.rows)


def test_diverging_loss_raises_with_partial_record(pairs, monkeypatch):
    monkeypatch.setattr(train_module, "rni_step_loss", lambda *a, **k: Tensor(np.nan))
    with pytest.raises(TrainingDiverged) as info:
        train(None, pairs, _cfg(seeds=[0]).for_method("rni"))
    assert info.value.record.steps == {0: 1}


def test_missing_train_split(pairs):
    empty = type(pairs)(graphs=pairs.graphs, split={"test": [0, 1]}, task_kind=pairs.task_kind, num_classes=2)
    with pytest.raises(ContractViolation):
        train(None, empty, _cfg())


def test_parallel_seeds_match_sequential(pairs, tmp_path):
    cfg = _cfg(epochs=2).for_method("rni")
    seq_log, par_log = MetricsLog(), MetricsLog()
    sequential = train_seeds(None, pairs, cfg, jobs=1, metrics_log=seq_log)
    parallel = train_seeds(None, pairs, cfg, jobs=2, metrics_log=par_log)
    assert sequential.final == parallel.final
    assert seq_log.rows == par_log.rows


def test_merge_records_combines_seeds(pairs):
    one = train(None, pairs, _cfg(seeds=[0], epochs=1))
    two = train(None, pairs, _cfg(seeds=[1], epochs=1))
    merged = merge_records([one, two], {})
    assert sorted(merged.per_seed) == [0, 1]
    assert merged.final["valid/accuracy"]["n"] == 2.0


def test_first_epoch_sustaining():
    curve = [(10, 0.9), (20, 0.96), (30, 0.94), (40, 0.97), (50, 0.99)]
    assert first_epoch_sustaining(curve) == 40
    assert first_epoch_sustaining(curve, threshold=0.999) is None
    assert first_epoch_sustaining([]) is None


def test_grid_has_every_combination():
    cells = grid_cells()
    assert len(cells) == int(np.prod([len(v) for v in HYPERPARAMETER_GRID.values()]))
    assert {"lr": 1e-3, "batch_size": 32, "num_layers": 3, "hidden_dim": 32} in cells



def test_wlhard_recipe_layers_over_ini_sections():
    cfg = TrainConfig.from_ini(read_config(), recipe="wlhard", epochs=4)
    assert cfg.kind == LayerKind.GRAPHCONV
    assert (cfg.num_layers, cfg.hidden_dim, cfg.id_dim, cfg.readout_layers) == (8, 64, 64, 3)
    assert cfg.lr == 0.0005 and cfg.test_curve
    assert cfg.icon.reg_reduction == RegReduction.MEAN
    assert cfg.epochs == 4
    with pytest.raises(ContractViolation, match="recipe"):
        TrainConfig.from_ini(read_config(), recipe="nope")


@pytest.mark.parametrize("kind", [LayerKind.GRAPHCONV, LayerKind.GIN, LayerKind.GAT])
def test_loss_decreases_on_istriangle(kind):
    train_ds, _, _ = build_istriangle_dataset(num_graphs=10, n=20, seed=0, node_budget=60, num_test_graphs=2)
    cfg = _cfg(kind=kind, epochs=10, seeds=[0], batch_size=16, dropout_rate=0.0, final_invariance=False)
    record = train(None, train_ds, cfg.for_method("baseline"))
    losses = [m.loss for m in record.epochs]
    assert len(losses) == 10 and all(np.isfinite(losses))
    assert np.mean(losses[-3:]) < np.mean(losses[:3])


def _median_sustaining(record, seeds):
    firsts = [first_epoch_sustaining(record.curve("test", seed)) for seed in seeds]
    return float(np.median([math.inf if e is None else e for e in firsts]))


@pytest.fixture(scope="module")
def pair_runs():
    ini = read_config()
    gen = WLHardConfig.from_ini(ini)
    data = build_wlhard_pairs(gen.num_pairs, gen.sizes, gen.seed)
    cfg = TrainConfig.from_ini(ini, recipe="wlhard", epochs=500, seeds=[0, 1, 2])
    runs = {method: train(None, data, cfg.for_method(method)) for method in ("rni", "icon")}
    constant_gin = TrainConfig.from_ini(ini, recipe="wlhard", kind="GIN", epochs=500, seeds=[0, 1, 2])
    runs["baseline"] = train(None, data, constant_gin.for_method("baseline"))
    return runs


@pytest.mark.slow
def test_ids_lift_the_pair_task_above_the_wl_ceiling(pair_runs):
    assert pair_runs["baseline"].final["test/accuracy"]["mean"] <= 0.55
    assert pair_runs["rni"].final["test/accuracy"]["mean"] >= 0.95
    assert pair_runs["icon"].final["test/accuracy"]["mean"] >= 0.95


@pytest.mark.slow
def test_icon_sustains_high_pair_accuracy_sooner(pair_runs):
    seeds = [0, 1, 2]
    icon = _median_sustaining(pair_runs["icon"], seeds)
    assert icon < math.inf
    assert icon < _median_sustaining(pair_runs["rni"], seeds)


@pytest.mark.slow
def test_icon_beats_rni_on_istriangle():
    train_ds, interp, extrap = build_istriangle_dataset(seed=0)
    tests = {"interp": interp, "extrap": extrap}
    fully_invariant = []
    for kind in ("GraphConv", "GIN", "GAT"):
        base = TrainConfig.from_ini(read_config(), kind=kind, epochs=500, seeds=[0, 1, 2], invariance_K=200)
        rni = train(None, train_ds, base.for_method("rni"), test_sets=tests)
        icon = train(None, train_ds, base.for_method("icon"), test_sets=tests)
        for split in ("train", "interp"):
            assert icon.final[f"{split}/invariance"]["mean"] >= rni.final[f"{split}/invariance"]["mean"]
        fully_invariant.append(
            icon.final["train/invariance"]["mean"] >= 0.99 and icon.final["interp/invariance"]["mean"] >= 0.99
        )
        assert icon.final["interp/accuracy"]["mean"] >= rni.final["interp/accuracy"]["mean"] + 0.05
        assert icon.final["extrap/accuracy"]["mean"] >= rni.final["extrap/accuracy"]["mean"] + 0.05
    assert any(fully_invariant)

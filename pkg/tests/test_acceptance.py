"""Exit criteria for the package, one test per criterion.

Each test records a PASS/FAIL line that pytest prints in an "acceptance
criteria" section of the terminal summary. Criteria 6, 7 and 10 share one
default-recipe Al training run (the ``trained_al`` fixture, several minutes).
"""

import json

import numpy as np
import pytest

from conftest import record
from mimnet import data, training
from mimnet.cli import main
from mimnet.data import GRID_STEP_NM, Metal, base_resonance, lorentzian_s11
from mimnet.model import init_params
from mimnet.numcore import loss_db
from mimnet.optim import AdamState, adam_step
from mimnet.sweeps import ModelBackend, OracleBackend, design_for_target, find_resonance

import test_model

DESIGN_TASK = dict(fixed={"H": 20, "P": 375, "T": 80}, vary="R", target=650.0, start=30, stop=150, step=0.25)


def test_c01_db_correspondence():
    al, ag = loss_db(1.4286e-5), loss_db(2.8e-4)
    ok = abs(al - -48.45) <= 0.01 and abs(ag - -35.53) <= 0.02
    record("C1 dB correspondence", ok, f"loss_db(1.4286e-5)={al:.4f}, loss_db(2.8e-4)={ag:.4f}")
    assert ok


def test_c02_gradient_correctness():
    errs = [test_model.gradient_check(5000 + s) for s in range(25)]
    ok = max(errs) < 1e-4
    record("C2 gradient check", ok, f"25 tiny configs, max relative error {max(errs):.2e} (< 1e-4)")
    assert ok


def test_c03_adam_unit():
    p = test_model.init_params(test_model.ModelConfig(4, 3, 3, 1, 2), 0)
    for a in p.arrays.values():
        a[...] = 0.0
    g = {k: np.zeros_like(a) for k, a in p.arrays.items()}
    g["stem.b"][0] = 1.0
    adam_step(p, g, AdamState.zeros_like(p), 1e-3)
    theta = p.arrays["stem.b"][0]
    first_ok = abs(theta - -9.99999990e-4) <= 1e-12

    q = init_params(test_model.ModelConfig(4, 3, 3, 1, 2), 1)
    before, state = q.copy(), AdamState.zeros_like(q)
    zeros = {k: np.zeros_like(a) for k, a in q.arrays.items()}
    for _ in range(10):
        adam_step(q, zeros, state, 1e-3)
    ok = first_ok and q.bit_equal(before)
    record("C3 Adam", ok, f"first step theta={theta:.10e}; zero-gradient run unchanged={q.bit_equal(before)}")
    assert ok


def test_c04_oracle_physics(al_grid, au_grid):
    max_mag = max(np.hypot(d.re, d.im).max() for d in (al_grid, au_grid))
    crit = max(abs(lorentzian_s11(c, [(c, 1.0, g)])) for c in (520.0, 634.0, 801.5) for g in (18.0, 45.0, 60.0))
    sym = 0.0
    for metal, ds in ((Metal.AL, al_grid), (Metal.AU, au_grid)):
        for i in range(0, len(ds), 97):
            center = metal.modes[0].center(float(base_resonance(ds.geoms[i])))
            m = metal.modes[0]
            off = np.array([0.5, 3.0, 17.0, 44.0])
            lo = lorentzian_s11(center - off, [(center, m.K, m.gamma)])
            hi = lorentzian_s11(center + off, [(center, m.K, m.gamma)])
            sym = max(sym, np.abs(lo.real - hi.real).max(), np.abs(lo.imag + hi.imag).max())
    ok = max_mag <= 1.0 and crit < 1e-12 and sym <= 1e-12
    record("C4 oracle physics", ok, f"max|S11|={max_mag:.6f}, critical |S11|={crit:.1e}, symmetry err={sym:.1e}")
    assert ok


def test_c05_recipe_fidelity(al_grid):
    default = training.TrainConfig()
    budget_ok = default.epochs_total == 1100 and default.within_budget
    over = not training.TrainConfig(epochs_per_fold=101).within_budget

    class Probe(training.Observer):
        def __init__(self):
            self.starts, self.ends, self.leaks, self.epochs = {}, {}, 0, 0

        def on_fold_start(self, fold, params):
            self.starts[fold] = params.copy()

        def on_fold_end(self, fold, params):
            self.ends[fold] = params.copy()

        def on_batch(self, stage, fold, epoch, ids):
            if stage == training.STAGE_KFOLD:
                self.leaks += len(held_out[fold].intersection(ids.tolist()))

        def on_epoch(self, stage, fold, epoch):
            self.epochs += 1

    cfg = training.TrainConfig(epochs_per_fold=1, finetune_epochs=1, seed=3)
    pool, _ = data.split(al_grid, cfg.seed)
    slices = training.fold_slices(len(pool), cfg.k)
    held_out = [set(pool.ids[sl].tolist()) for sl in slices]
    probe = Probe()
    _, _, report = training.train(al_grid, cfg, observer=probe)
    inherit = all(probe.starts[i].bit_equal(probe.ends[i - 1]) for i in range(1, cfg.k))
    sizes_ok = report.fold_sizes == [596, 596] + [595] * 8
    epochs_ok = probe.epochs == report.epochs_run == 11
    ok = budget_ok and over and inherit and sizes_ok and epochs_ok and probe.leaks == 0
    record(
        "C5 recipe fidelity", ok,
        f"default epochs={default.epochs_total}, fold sizes={report.fold_sizes}, inheritance={inherit}, "
        f"leaked samples={probe.leaks}, instrumented epochs={probe.epochs}",
    )
    assert ok


@pytest.mark.slow
def test_c06_end_to_end_convergence(trained_al):
    _, report, _ = trained_al
    ok = (
        report.test_db <= -30
        and report.finetune_train_db <= report.test_db + 5
        and report.epochs_run == 1100
        and report.stage1_final_train_db < report.initial_train_db
    )
    record(
        "C6 convergence", ok,
        f"Al test {report.test_db:.2f} dB (<= -30), train {report.finetune_train_db:.2f} dB, "
        f"epochs {report.epochs_run}, wall {report.wall_time:.0f}s",
    )
    assert ok


@pytest.mark.slow
def test_c07_transfer_benefit(trained_al, au_grid, ag_grid):
    _, _, al_ckpt = trained_al
    short = dict(epochs_per_fold=20, finetune_epochs=0, seed=11)
    _, _, fresh = training.train(au_grid, training.TrainConfig(**short))
    _, moved = training.transfer(al_ckpt, au_grid, training.TrainConfig(**short))
    gap = fresh.per_fold_val_db[0] - moved.per_fold_val_db[0]
    _, ag = training.transfer(al_ckpt, ag_grid, training.TrainConfig(epochs_per_fold=1, finetune_epochs=0, seed=11))
    ok = gap >= 3.0 and ag.stage1_lr == 3e-4
    record(
        "C7 transfer benefit", ok,
        f"Au fold-1 val: fresh {fresh.per_fold_val_db[0]:.2f} dB, transferred {moved.per_fold_val_db[0]:.2f} dB "
        f"(gap {gap:.2f} >= 3); Ag stage1_lr={ag.stage1_lr}",
    )
    assert ok


def test_c08_sweep_correctness(al_grid, au_grid):
    best = design_for_target(OracleBackend(Metal.AL), **DESIGN_TASK)
    worst = 0.0
    for metal, ds in ((Metal.AL, al_grid), (Metal.AU, au_grid)):
        centers = metal.modes[0].center(base_resonance(ds.geoms))
        for i in np.nonzero((centers >= 510) & (centers <= 840))[0]:
            worst = max(worst, abs(find_resonance(ds.re[i], ds.im[i]) - centers[i]))
    ok = abs(best - 73.25) <= 0.25 and worst <= GRID_STEP_NM
    record("C8 sweeps", ok, f"design R={best} (73.25 +- 0.25); worst resonance offset {worst:.3f} nm (<= 5.556)")
    assert ok


def test_c09_determinism(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["gen-data", "--metal", "ag", "--out", str(a), "--seed", "1"]) == 0
    assert main(["gen-data", "--metal", "ag", "--out", str(b), "--seed", "1"]) == 0
    data_same = a.read_bytes() == b.read_bytes()
    outs = []
    for tag in ("r1", "r2"):
        ckpt, rep = tmp_path / f"{tag}.ckpt", tmp_path / f"{tag}.json"
        argv = ["train", "--data", str(a), "--epochs-per-fold", "2", "--finetune-epochs", "2", "--seed", "4",
                "--out", str(ckpt), "--report", str(rep)]
        assert main(argv) == 0
        doc = json.loads(rep.read_text())
        doc.pop("wall_time")
        doc.pop("checkpoint")
        outs.append((ckpt.read_bytes(), doc))
    ok = data_same and outs[0][0] == outs[1][0] and outs[0][1] == outs[1][1]
    record("C9 determinism", ok, f"dataset bytes equal={data_same}, checkpoint bytes equal={outs[0][0] == outs[1][0]}, "
           f"reports equal={outs[0][1] == outs[1][1]} (abbreviated 2+2-epoch runs)")
    assert ok


@pytest.mark.slow
def test_c10_model_vs_oracle_design(trained_al):
    params, _, _ = trained_al
    oracle_r = design_for_target(OracleBackend(Metal.AL), **DESIGN_TASK)
    model_r = design_for_target(ModelBackend(params), **DESIGN_TASK)
    ok = abs(model_r - oracle_r) <= 2 * DESIGN_TASK["step"]
    record("C10 model-vs-oracle design", ok, f"oracle R={oracle_r}, model R={model_r} (within 2 steps = 0.5 nm)")
    assert ok

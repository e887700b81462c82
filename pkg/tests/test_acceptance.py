"""Acceptance suite: one test per criterion, each printing a pass line.

Criterion 7 notes: at 64x64 the benchmark's diagonal-fraction tolerance
(0.0075) comes to 0.68 px, admitting only exact-pixel hits -- stricter
than the full-scale benchmark convention it mirrors (about 4.3 px
absolute at classic 481x321 benchmark resolution). The desk-scale floor is therefore asserted at a
one-pixel matching radius (1.5 px, i.e. the 8-neighborhood), with the
strict diagonal-fraction score also reported. Training is pinned:
tiny preset, 64 images at 64x64, 20 epochs, batch 1, lr 1e-3,
momentum 0.9, weight decay 2e-4, dynamic focal loss (gamma 1, mu 0.5).
"""

import os
import time

import numpy as np
import pytest

from edgekit.bench import evaluate_dataset, match_boundaries, pr_curve
from edgekit.data import synth_dataset
from edgekit.losses import (
    LossConfig,
    dynamic_focal,
    dynamic_weight,
    focal,
    focal_weight,
    threshold_gt,
    wce,
)
from edgekit.model import EdgeNet, ModelConfig
from edgekit.tensor import Tensor
from edgekit.train import TrainConfig, train

from oracles import max_matching_exhaustive, pixel_weighted_sum, top_down_fusion_transcription

GOLDEN = os.path.join(os.path.dirname(__file__), "golden", "vgg16_shape_params.txt")

TRAIN_SEED = 10
TEST_SEED = 11
MODEL_SEED = 1
ONE_PX_TOL = 1.5 / float(np.hypot(64, 64))


def _report(n, text):
    print(f"PASS criterion {n}: {text}")


# -- criterion 1: gradient suite --------------------------------------------

def test_criterion_1_gradient_suite():
    from edgekit.gradsuite import run_gradient_suite

    t0 = time.perf_counter()
    worst = run_gradient_suite(full=True)
    elapsed = time.perf_counter() - t0
    assert worst < 1e-4, f"worst gradient error {worst:.3e}"
    assert elapsed < 120.0, f"gradient suite took {elapsed:.1f}s"
    _report(1, f"all gradient checks < 1e-4 (worst {worst:.2e}, {elapsed:.1f}s)")


# -- criterion 2: loss degeneracies ------------------------------------------

def test_criterion_2_loss_degeneracies():
    rng = np.random.default_rng(0)
    checked = 0
    for _ in range(1000):
        h, w = rng.integers(4, 12), rng.integers(4, 12)
        p = rng.uniform(0.02, 0.98, size=(h, w))
        gt = np.zeros((h, w), dtype=np.float32)
        gt[rng.random((h, w)) < 0.3] = 1.0
        gt[rng.random((h, w)) < 0.1] = 0.2
        labels = threshold_gt(gt, 0.3)
        gamma = float(rng.uniform(0.25, 3.0))
        mu = float(rng.uniform(0.05, 2.0))
        epoch = int(rng.integers(1, 8))

        base = float(wce(Tensor(p.copy()), labels))
        assert abs(float(dynamic_focal(Tensor(p.copy()), labels, gamma=gamma, mu=mu, epoch=0)) - base) <= 1e-12
        assert abs(float(dynamic_focal(Tensor(p.copy()), labels, gamma=0.0, mu=mu, epoch=epoch)) - base) <= 1e-12

        fl = float(focal(Tensor(p.copy()), labels, gamma=gamma))
        dfl_tiny_mu = float(dynamic_focal(Tensor(p.copy()), labels, gamma=gamma, mu=1e-9, epoch=epoch))
        assert abs(dfl_tiny_mu - fl) <= 1e-7 * max(1.0, abs(fl))

        omega = focal_weight(p, labels, gamma)
        omega_p = dynamic_weight(p, labels, gamma, mu, epoch)
        assert (omega_p >= np.minimum(omega, 1.0) - 1e-12).all()
        assert (omega_p <= np.maximum(omega, 1.0) + 1e-12).all()
        checked += 1
    _report(2, f"degeneracy chain and weight bounds hold on {checked} random maps")


# -- criterion 3: fusion oracles ---------------------------------------------

def test_criterion_3_fusion_oracles():
    rng = np.random.default_rng(1)
    worst_pw = 0.0
    worst_softmax = 0.0
    for i in range(200):
        model = EdgeNet(ModelConfig.from_preset("tiny"), seed=int(rng.integers(0, 10_000)))
        stacked = Tensor(rng.standard_normal((1, 5, 8, 8)).astype(np.float32))
        fused = model.fuse_pixel_weighted(stacked)
        ws = model.spatial_weights(stacked)
        wc = model.channel_weight.weight.data[0, :, 0, 0].astype(np.float64)
        oracle = pixel_weighted_sum(stacked.data[0].astype(np.float64), wc, ws.data[0].astype(np.float64))
        worst_pw = max(worst_pw, float(np.abs(fused.data[0, 0] - oracle).max()))
        worst_softmax = max(worst_softmax, float(np.abs(ws.data.sum(axis=1) - 1.0).max()))
    assert worst_pw < 1e-6
    assert worst_softmax < 1e-6

    worst_td = 0.0
    for size in (16, 24, 33, 48):
        model = EdgeNet(ModelConfig.from_preset("tiny"), seed=size)
        img = Tensor(np.random.default_rng(size).random((1, 3, size, size)).astype(np.float32))
        feats = model.extract_features(img)
        fused_feats = model.fuse_top_down(feats)
        oracle = top_down_fusion_transcription(
            [f.data[0].astype(np.float64) for f in feats],
            [l.weight.data.astype(np.float64) for l in model.lateral],
            [l.bias.data.astype(np.float64) for l in model.lateral],
            [n.gamma.data.astype(np.float64) for n in model.norms],
            [n.beta.data.astype(np.float64) for n in model.norms],
        )
        for got, want in zip(fused_feats, oracle):
            worst_td = max(worst_td, float(np.abs(got.data[0] - want).max()))
    assert worst_td < 1e-6
    _report(3, f"fusion matches oracles (pixel-weighted {worst_pw:.1e}, top-down {worst_td:.1e}, softmax {worst_softmax:.1e})")


# -- criterion 4: matching oracle --------------------------------------------

def test_criterion_4_matching_oracle():
    rng = np.random.default_rng(2)
    for _ in range(500):
        size = 12
        pred = np.zeros((size, size))
        gt = np.zeros((size, size))
        for m in (pred, gt):
            n = rng.integers(0, 9)
            m.flat[rng.choice(size * size, size=n, replace=False)] = 1
        max_dist = float(rng.uniform(0.5, 4.5))
        got, _ = match_boundaries(pred, gt, max_dist)
        pred_pts = np.argwhere(pred > 0)
        gt_pts = np.argwhere(gt > 0)
        adj = [
            [j for j, g in enumerate(gt_pts) if np.hypot(*(p - g)) <= max_dist]
            for p in pred_pts
        ]
        assert got == max_matching_exhaustive(adj)
    _report(4, "optimal matching equals exhaustive search on 500 instances")


# -- criterion 5: benchmark identity -----------------------------------------

def test_criterion_5_benchmark_identity():
    samples = synth_dataset(5, 20, 48)
    preds = [s.gt_maps[0] for s in samples]
    gts = [s.gt_maps for s in samples]
    result, _ = evaluate_dataset(preds, gts)
    assert result.ods_f == pytest.approx(1.0, abs=1e-12)
    assert result.ois_f == pytest.approx(1.0, abs=1e-12)
    assert result.ois_f >= result.ods_f

    empty = pr_curve(np.zeros((48, 48), dtype=np.float32), [samples[0].gt_maps[0]])
    assert all(pt.recall == 0.0 and pt.n_pred == 0 for pt in empty)
    _report(5, "GT-vs-GT gives ODS=OIS=1.0; empty predictions give R=0")


# -- criterion 6: parameter budget -------------------------------------------

def test_criterion_6_parameter_budget():
    model = EdgeNet(ModelConfig.from_preset("vgg16-shape"))
    counts = model.count_params()
    golden = dict(
        line.strip().split("=") for line in open(GOLDEN) if line.strip()
    )
    assert counts["non_backbone"] < 150_000
    assert counts["total"] == int(golden["total"])
    assert counts["non_backbone"] == int(golden["non_backbone"])
    print(f"vgg16-shape parameters: total={counts['total']} non_backbone={counts['non_backbone']}")
    _report(6, f"non-backbone {counts['non_backbone']} < 150000 and matches golden file")


# -- criteria 7 and 8: desk-scale training ------------------------------------

@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    train_set = synth_dataset(TRAIN_SEED, 64, 64)
    test_set = synth_dataset(TEST_SEED, 16, 64)
    out = {}
    for kind in ("dfl", "wce"):
        t0 = time.perf_counter()
        model = EdgeNet(ModelConfig.from_preset("tiny"), seed=MODEL_SEED)
        cfg = TrainConfig(
            lr=1e-3,
            momentum=0.9,
            weight_decay=2e-4,
            epochs=20,
            loss=LossConfig(kind=kind, gamma_focal=1.0, mu=0.5),
            seed=MODEL_SEED,
        )
        result = train(model, train_set, cfg, str(root / kind))
        preds = [model.forward(Tensor(s.image[None])).fused_prob.data[0, 0] for s in test_set]
        gts = [s.gt_maps for s in test_set]
        one_px, _ = evaluate_dataset(preds, gts, tol_frac=ONE_PX_TOL)
        strict, _ = evaluate_dataset(preds, gts)
        out[kind] = {
            "seconds": time.perf_counter() - t0,
            "ods": one_px.ods_f,
            "ois": one_px.ois_f,
            "strict_ods": strict.ods_f,
            "result": result,
        }
    return out


def test_criterion_7_desk_scale_training(desk_runs):
    dfl = desk_runs["dfl"]
    wce_run = desk_runs["wce"]
    print(
        f"DFL: ODS={dfl['ods']:.4f} OIS={dfl['ois']:.4f} ({dfl['seconds']:.0f}s); "
        f"strict diagonal-fraction ODS={dfl['strict_ods']:.4f}"
    )
    print(f"WCE: ODS={wce_run['ods']:.4f} (strict {wce_run['strict_ods']:.4f})")
    assert dfl["seconds"] < 600.0, f"DFL run took {dfl['seconds']:.0f}s"
    assert dfl["ods"] >= 0.85, f"DFL ODS {dfl['ods']:.4f} below floor"
    assert dfl["ois"] >= dfl["ods"]
    assert dfl["ods"] >= wce_run["ods"] - 0.02
    _report(7, f"DFL ODS {dfl['ods']:.4f} >= 0.85 in {dfl['seconds']:.0f}s; >= WCE {wce_run['ods']:.4f} - 0.02")


def test_criterion_8_determinism(tmp_path):
    samples = synth_dataset(50, 8, 32)
    outputs = []
    for tag in ("a", "b"):
        model = EdgeNet(ModelConfig.from_preset("tiny"), seed=3)
        cfg = TrainConfig(lr=1e-3, epochs=3, loss=LossConfig(kind="dfl"), seed=3)
        outputs.append(train(model, samples, cfg, str(tmp_path / tag)))
    a, b = outputs
    with open(a.final_path, "rb") as fa, open(b.final_path, "rb") as fb:
        assert fa.read() == fb.read()
    with open(a.best_path, "rb") as fa, open(b.best_path, "rb") as fb:
        assert fa.read() == fb.read()
    # logs agree on the deterministic columns; the seconds column is wall time
    rows_a = [line.rsplit(",", 1)[0] for line in open(a.log_path)]
    rows_b = [line.rsplit(",", 1)[0] for line in open(b.log_path)]
    assert rows_a == rows_b
    _report(8, "identical seeds reproduce checkpoints and loss logs byte-for-byte")

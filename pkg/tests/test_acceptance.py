"""Acceptance suite: one test per criterion, each printing a pass/fail line.

The directional experiments run on frozen synthetic-dataset configurations
whose class structure makes modality complementarity and cloud robustness
checkable at desk scale.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
import torch

from sitsfuse.analysis import gradient_flow_probe, predicted_vs_measured_decrease, robustness_curve
from sitsfuse.cli import main as cli_main
from sitsfuse.data.batch import collate, normalize
from sitsfuse.encoders.ltae import LTAE, LTAEConfig
from sitsfuse.encoders.pse import PixelSetConfig, PixelSetEncoder
from sitsfuse.encoders.utae import UTAE, UTAEConfig
from sitsfuse.fusion import FusionConfig, compute_losses, temporal_dropout
from sitsfuse.metrics import ConfusionMatrix, confusion_update, miou, overall_accuracy, panoptic_match, pq_sq_rq
from sitsfuse.models import ClassificationHead, SegmentationHead, build_model, init_parameters
from sitsfuse.seeding import rng_stream
from sitsfuse.synthgen import SynthConfig, generate_dataset
from sitsfuse.tasks import SitsDataset, TrainConfig, evaluate, make_parcel_batch, parcel_index, train

from gradcheck import fd_gradient_check
from test_metrics import brute_iou, brute_oa, brute_panoptic, _random_instances, _random_raster_pair

# frozen experiment configurations -----------------------------------------

ACC_SYNTH = SynthConfig(
    n_patches=320, height=24, width=24,
    optical_steps=(10, 14), radar_steps=(14, 18),
    cloud_rate=0.15, speckle_scale=0.25, pixel_jitter=0.04,
    plan="paired", seed=2024,
)
DOMINANT_SYNTH = SynthConfig(
    n_patches=240, height=24, width=24,
    optical_steps=(10, 14), radar_steps=(14, 18),
    cloud_rate=0.05, speckle_scale=0.3, pixel_jitter=0.04,
    plan="optical_dominant", seed=4096,
)
ACC_PSE = PixelSetConfig(n_pixels=16, pixel_mlp=(16, 32), out_mlp=(32,))
ACC_LTAE = LTAEConfig(width=32, n_heads=4, d_k=8, out_mlp=(32,))
ACC_TRAIN = TrainConfig(task="parcel", epochs=30, batch_size=128, seed=7, eval_every=0)
CHANNELS = (4, 3, 3)

MODEL_SET = (
    ("S2", "single", 0),
    ("S1A", "single", 1),
    ("S1D", "single", 2),
    ("early", "early", 0),
    ("mid", "mid", 0),
    ("late", "late", 0),
    ("decision", "decision", 0),
)


def _passline(criterion: int, text: str) -> None:
    print(f"[PASS] criterion {criterion}: {text}")


# shared fixtures -----------------------------------------------------------

@pytest.fixture(scope="module")
def acc_dataset(tmp_path_factory) -> SitsDataset:
    root = tmp_path_factory.mktemp("acc_paired")
    generate_dataset(ACC_SYNTH, root)
    return SitsDataset.load(root)


@pytest.fixture(scope="module")
def acc_checkpoints(acc_dataset):
    """The seven criterion-6 models, trained once with temporal dropout."""
    checkpoints, scores = {}, {}
    for name, scheme, modality in MODEL_SET:
        fusion = FusionConfig(scheme=scheme, single_modality=modality, aux_enabled=False, dropout=(0.4, 0.2, 0.2))
        model = build_model("parcel", fusion, CHANNELS, ACC_SYNTH.n_classes,
                            pse=ACC_PSE, ltae=ACC_LTAE, head_hidden=32, seed=7)
        checkpoints[name] = train(model, acc_dataset, ACC_TRAIN, fusion)
        scores[name] = evaluate(model, acc_dataset, ACC_TRAIN.test_fold, ACC_TRAIN, fusion).miou
    return checkpoints, scores


@pytest.fixture(scope="module")
def grad_dataset(tmp_path_factory) -> SitsDataset:
    root = tmp_path_factory.mktemp("acc_grad")
    generate_dataset(
        SynthConfig(n_patches=8, height=16, width=16, seed=55, optical_steps=(4, 5), radar_steps=(5, 6)),
        root,
    )
    return SitsDataset.load(root)


# criterion 1 ---------------------------------------------------------------

def test_criterion_1_attention_normalization():
    """Attention rows sum to 1 +- 1e-5 over unmasked steps, including after
    bilinear up-sampling, on 100 random configurations."""
    rng = np.random.default_rng(11)
    tol = 1e-5
    for trial in range(70):  # sequence attention
        heads = int(rng.choice([1, 2, 4]))
        group = int(rng.choice([2, 4, 8]))
        t = int(rng.integers(2, 9))
        cfg = LTAEConfig(width=heads * group, n_heads=heads, d_k=int(rng.choice([2, 4, 8])), out_mlp=(8,))
        ltae = init_parameters(LTAE(cfg), seed=trial)
        x = torch.from_numpy(rng.normal(size=(3, t, cfg.width))).float()
        dates = torch.from_numpy(np.sort(rng.choice(np.arange(1, 367), size=(3, t), replace=False), axis=1)).long()
        mask = torch.ones(3, t, dtype=torch.bool)
        if t > 1:
            mask[0, rng.integers(1, t):] = False
        _, attn = ltae(x, dates, mask)
        sums = attn.temporal_sums()
        assert torch.all((sums - 1.0).abs() < tol)
        assert torch.all(attn.weights[~mask.unsqueeze(1).expand_as(attn.weights)] == 0)
    for trial in range(30):  # pixelwise attention incl. up-sampling
        heads = int(rng.choice([1, 2]))
        widths = tuple(int(w) * heads for w in rng.choice([2, 4], size=3))
        cfg = UTAEConfig(level_widths=widths, n_heads=heads, d_k=4)
        utae = init_parameters(UTAE(2, cfg), seed=trial)
        t = int(rng.integers(2, 6))
        x = torch.from_numpy(rng.normal(size=(2, t, 2, 16, 16))).float()
        dates = torch.from_numpy(np.sort(rng.choice(np.arange(1, 367), size=(2, t), replace=False), axis=1)).long()
        mask = torch.ones(2, t, dtype=torch.bool)
        mask[0, rng.integers(1, t):] = False
        out = utae(x, dates, mask)
        for maps in out.attention:
            sums = maps.temporal_sums()
            assert torch.all((sums - 1.0).abs() < tol)
    _passline(1, "attention rows sum to 1 +- 1e-5 on 100 random configurations, up-sampling included")


# criterion 2 ---------------------------------------------------------------

def _double_parcel_batch(dataset, n=5, seed=0):
    refs = parcel_index(dataset.fold_samples((1, 2, 3, 4)))[:n]
    batch = make_parcel_batch(dataset, refs, 8, np.random.default_rng(seed))
    return batch.to(torch.float64)


def _double_patch_batch(dataset, n=2):
    samples = dataset.fold_samples((1, 2, 3, 4))[:n]
    return collate(samples).to(torch.float64)


TINY_PSE2 = PixelSetConfig(n_pixels=8, pixel_mlp=(6, 8), out_mlp=(8,))
TINY_LTAE2 = LTAEConfig(width=8, n_heads=2, d_k=4, out_mlp=(8,))
TINY_UTAE2 = UTAEConfig(level_widths=(4, 4, 8), n_heads=2, d_k=4)


def test_criterion_2_gradient_correctness(grad_dataset):
    """Analytic vs central finite-difference gradients (float64, step 1e-4)
    within 1e-3 relative error for every encoder, head, and one composed
    model per legal (scheme, task) pair."""
    worst = 0.0

    pse = init_parameters(PixelSetEncoder(3, TINY_PSE2), seed=1).double()
    pixels = torch.from_numpy(np.random.default_rng(2).normal(size=(2, 3, 3, 8))).double()
    worst = max(worst, fd_gradient_check(pse, lambda: (pse(pixels) ** 2).sum()))

    ltae = init_parameters(LTAE(TINY_LTAE2), seed=3).double()
    rng = np.random.default_rng(4)
    x = torch.from_numpy(rng.normal(size=(2, 5, 8))).double()
    dates = torch.from_numpy(np.sort(rng.choice(np.arange(1, 367), size=(2, 5), replace=False), axis=1)).long()
    mask = torch.ones(2, 5, dtype=torch.bool)
    mask[0, 3:] = False
    worst = max(worst, fd_gradient_check(ltae, lambda: (ltae(x, dates, mask)[0] ** 2).sum()))

    utae = init_parameters(UTAE(2, TINY_UTAE2), seed=5).double()
    xs = torch.from_numpy(rng.normal(size=(1, 3, 2, 8, 8))).double()
    du = torch.from_numpy(np.sort(rng.choice(np.arange(1, 367), size=(1, 3), replace=False), axis=1)).long()
    mu = torch.tensor([[True, True, False]])
    worst = max(worst, fd_gradient_check(utae, lambda: (utae(xs, du, mu).full_res ** 2).sum(), coords_per_tensor=3))

    cls_head = init_parameters(ClassificationHead(8, 6, hidden=6), seed=6).double()
    emb = torch.from_numpy(rng.normal(size=(4, 8))).double()
    worst = max(worst, fd_gradient_check(cls_head, lambda: (cls_head(emb) ** 2).sum()))

    seg_head = init_parameters(SegmentationHead(4, 7, hidden=6), seed=7).double()
    fmap = torch.from_numpy(rng.normal(size=(2, 4, 4, 4))).double()
    worst = max(worst, fd_gradient_check(seg_head, lambda: (seg_head(fmap) ** 2).sum()))

    parcel_batch = _double_parcel_batch(grad_dataset)
    for scheme in ("early", "mid", "late", "decision"):
        fusion = FusionConfig(scheme=scheme, aux_enabled=scheme in ("mid", "late"), dropout=(0.0,) * 3)
        model = build_model("parcel", fusion, CHANNELS, 6, pse=TINY_PSE2, ltae=TINY_LTAE2,
                            utae=TINY_UTAE2, head_hidden=6, seed=8, dtype=torch.float64)

        def loss_fn(model=model, fusion=fusion):
            return compute_losses(model(parcel_batch), parcel_batch.labels, fusion).total

        worst = max(worst, fd_gradient_check(model, loss_fn, coords_per_tensor=2))

    patch_batch = _double_patch_batch(grad_dataset)
    void = grad_dataset.manifest.n_classes + 1
    for scheme in ("early", "late"):
        fusion = FusionConfig(scheme=scheme, aux_enabled=scheme == "late", dropout=(0.0,) * 3)
        model = build_model("semantic", fusion, CHANNELS, 6, pse=TINY_PSE2, ltae=TINY_LTAE2,
                            utae=TINY_UTAE2, head_hidden=6, seed=9, dtype=torch.float64)

        def loss_fn(model=model, fusion=fusion):
            return compute_losses(model(patch_batch), patch_batch.semantic, fusion, ignore_value=void).total

        worst = max(worst, fd_gradient_check(model, loss_fn, coords_per_tensor=2))

    assert worst <= 1e-3
    _passline(2, f"gradients match central finite differences (worst relative error {worst:.2e})")


# criterion 3 ---------------------------------------------------------------

def test_criterion_3_metric_oracle_equivalence():
    """mIoU/OA equal per-pixel brute force and PQ/SQ/RQ equal all-pairs
    matching, exactly, on 50 random raster pairs; the worked example
    reproduces to 1e-12."""
    rng = np.random.default_rng(31)
    for _ in range(50):
        predicted, target = _random_raster_pair(rng)
        cm = confusion_update(ConfusionMatrix(5), predicted, target)
        mean_iou, per_class = miou(cm)
        assert per_class == brute_iou(predicted, target, 5)
        assert mean_iou == np.mean(list(brute_iou(predicted, target, 5).values()))
        assert overall_accuracy(cm) == brute_oa(predicted, target, 5)

        gt, gt_classes = _random_instances(rng)
        pred, pred_classes = _random_instances(rng)
        fast = panoptic_match(gt, gt_classes, pred, pred_classes)
        pairs, tallies = brute_panoptic(gt, gt_classes, pred, pred_classes)
        assert sorted((g, p) for g, p, *_ in fast.pairs) == sorted((g, p) for g, p, *_ in pairs)
        assert fast.tallies == tallies

    gt = np.zeros((10, 10), dtype=np.int64)
    gt[0:6, 0:10] = 1
    gt[8:10, 5:10] = 2
    pred = np.zeros((10, 10), dtype=np.int64)
    pred[1:6, 0:9] = 7
    pred[6:8, 0:7] = 7
    pred[8, 0] = 7
    report = pq_sq_rq(panoptic_match(gt, {1: 0, 2: 0}, pred, {7: 0}))
    assert abs(report.sq - 0.6) < 1e-12
    assert abs(report.rq - 2.0 / 3.0) < 1e-12
    assert abs(report.pq - 0.4) < 1e-12
    _passline(3, "metrics equal brute-force oracles exactly; worked SQ/RQ/PQ example reproduces to 1e-12")


# criterion 4 ---------------------------------------------------------------

def test_criterion_4_gradient_flow_consistency(grad_dataset):
    """Predicted objective decrease eta*<grad L, grad L_obj> matches the
    measured decrease with error shrinking >= 3x under eta halving; with
    L = L_obj the per-module fractions sum to 1 +- 1e-6."""
    batch = _double_parcel_batch(grad_dataset, n=6, seed=41)
    fusion_aux = FusionConfig(scheme="late", aux_enabled=True, dropout=(0.0,) * 3)
    model = build_model("parcel", fusion_aux, CHANNELS, 6, pse=TINY_PSE2, ltae=TINY_LTAE2,
                        head_hidden=6, seed=42, dtype=torch.float64)
    errors = []
    for eta in (2e-2, 1e-2):
        predicted, measured = predicted_vs_measured_decrease(model, batch, batch.labels, fusion_aux, eta)
        errors.append(abs(measured - predicted))
    assert errors[1] <= errors[0] / 3.0, f"eta-halving error ratio {errors[0] / max(errors[1], 1e-300):.2f} < 3"

    fusion_plain = FusionConfig(scheme="late", aux_enabled=False, dropout=(0.0,) * 3)
    plain = build_model("parcel", fusion_plain, CHANNELS, 6, pse=TINY_PSE2, ltae=TINY_LTAE2,
                        head_hidden=6, seed=43, dtype=torch.float64)
    record = gradient_flow_probe(plain, batch, batch.labels, fusion_plain, eta=0.01)
    assert record.total >= 0.0  # self inner product
    assert abs(sum(record.fractions.values()) - 1.0) <= 1e-6
    ratio = errors[0] / max(errors[1], 1e-300)
    _passline(4, f"first-order flow estimate consistent (error ratio {ratio:.1f}x >= 3x); fractions sum to 1")


# criterion 5 ---------------------------------------------------------------

def test_criterion_5_temporal_dropout_statistics(grad_dataset):
    """Empirical drop rate within 3 sigma for p in {0.2, 0.4} over >= 10^4
    acquisitions; p = 0 and eval phase are identities; no empty sequences."""
    samples = grad_dataset.fold_samples((1, 2, 3, 4))
    batch = collate(samples)
    for p in (0.2, 0.4):
        rng = rng_stream(51, f"drop/{p}")
        kept = total = 0
        while total < 10_000:
            out = temporal_dropout(batch, (p, p, p), rng, "train")
            for m in range(3):
                kept += int(out.mask[m].sum())
                total += int(batch.mask[m].sum())
                assert bool(out.mask[m].any(dim=1).all())  # never empty
        sigma = np.sqrt(p * (1 - p) / total)
        assert abs(kept / total - (1 - p)) < 3 * sigma, f"p={p}: kept {kept / total:.4f}"
    identity = temporal_dropout(batch, (0.0, 0.0, 0.0), rng_stream(52, "z"), "train")
    for m in range(3):
        assert torch.equal(identity.data[m], batch.data[m])
    eval_out = temporal_dropout(batch, (0.9, 0.9, 0.9), rng_stream(53, "e"), "eval")
    for m in range(3):
        assert torch.equal(eval_out.data[m], batch.data[m])
    _passline(5, "drop rates within 3 sigma; p=0 and eval phase are identities; no empty sequences")


# criterion 6 ---------------------------------------------------------------

def test_criterion_6_multimodality_benefit(acc_checkpoints):
    """Late fusion beats the best single modality by >= 5 mIoU points and
    every fusion scheme beats the optical-only model."""
    _, scores = acc_checkpoints
    best_single = max(scores[n] for n in ("S2", "S1A", "S1D"))
    margin = 100.0 * (scores["late"] - best_single)
    assert margin >= 5.0, f"late {scores['late']:.3f} vs best single {best_single:.3f}"
    for scheme in ("early", "mid", "late", "decision"):
        assert scores[scheme] > scores["S2"], f"{scheme} {scores[scheme]:.3f} <= optical {scores['S2']:.3f}"
    table = ", ".join(f"{n} {scores[n]:.3f}" for n, *_ in MODEL_SET)
    _passline(6, f"late-fusion margin +{margin:.1f} mIoU points over best single ({table})")


# criterion 7 ---------------------------------------------------------------

def test_criterion_7_cloud_robustness_ordering(acc_dataset, acc_checkpoints):
    """At optical keep-ratio 0.1, decision fusion beats early fusion and
    every fusion model beats optical-only, mean over 3 subsampling repeats."""
    checkpoints, _ = acc_checkpoints
    curves = robustness_curve(checkpoints, acc_dataset, grid=(0.1,), repeats=3, seed=99)
    at_01 = {name: curves[name].miou_mean[0] for name in curves}
    assert at_01["decision"] > at_01["early"], f"decision {at_01['decision']:.3f} <= early {at_01['early']:.3f}"
    for scheme in ("early", "mid", "late", "decision"):
        assert at_01[scheme] > at_01["S2"], f"{scheme} {at_01[scheme]:.3f} <= optical {at_01['S2']:.3f}"
    table = ", ".join(f"{k} {v:.3f}" for k, v in sorted(at_01.items()))
    _passline(7, f"keep-ratio 0.1 ordering holds ({table})")


# criterion 8 ---------------------------------------------------------------

def test_criterion_8_auxiliary_supervision_direction(tmp_path_factory):
    """With a dominant optical modality, late fusion + auxiliary supervision
    scores at least late fusion - 0.5 mIoU points, mean over 3 seeds."""
    root = tmp_path_factory.mktemp("acc_dominant")
    generate_dataset(DOMINANT_SYNTH, root)
    dataset = SitsDataset.load(root)
    means = {}
    for aux in (False, True):
        scores = []
        for seed in (1, 2, 3):
            fusion = FusionConfig(scheme="late", aux_enabled=aux, aux_weights=(0.5, 0.5, 0.5), dropout=(0.0,) * 3)
            model = build_model("parcel", fusion, CHANNELS, DOMINANT_SYNTH.n_classes,
                                pse=ACC_PSE, ltae=ACC_LTAE, head_hidden=32, seed=seed)
            config = dataclasses.replace(ACC_TRAIN, seed=seed)
            train(model, dataset, config, fusion)
            scores.append(evaluate(model, dataset, config.test_fold, config, fusion).miou)
        means[aux] = float(np.mean(scores))
    delta = 100.0 * (means[True] - means[False])
    assert delta >= -0.5, f"aux {means[True]:.3f} vs base {means[False]:.3f}"
    _passline(8, f"aux direction holds: {means[True]:.3f} (aux) vs {means[False]:.3f} (base), delta {delta:+.1f} points")


# criterion 9 ---------------------------------------------------------------

def test_criterion_9_configuration_rule_enforcement(tmp_path, capsys):
    """(mid, segmentation), (early + aux), and gradflow without SGD all exit
    with code 2 and an explanatory message."""
    base = {
        "seed": 5,
        "dataset_path": str(tmp_path / "dataset"),
        "synth": {"n_patches": 8, "height": 16, "width": 16, "optical_steps": [4, 5], "radar_steps": [5, 6]},
        "train": {"task": "parcel", "epochs": 1, "batch_size": 16, "eval_every": 0},
        "fusion": {"scheme": "late", "dropout": [0.0, 0.0, 0.0]},
        "pse": {"n_pixels": 8, "pixel_mlp": [8, 12], "out_mlp": [12]},
        "ltae": {"width": 12, "n_heads": 2, "d_k": 4, "out_mlp": [12]},
        "utae": {"level_widths": [4, 8, 8], "n_heads": 2, "d_k": 4},
        "head_hidden": 8,
    }

    def write(name, **patch):
        payload = json.loads(json.dumps(base))
        for key, value in patch.items():
            payload[key] = {**payload.get(key, {}), **value} if isinstance(value, dict) else value
        path = tmp_path / name
        path.write_text(json.dumps(payload))
        return str(path)

    mid_seg = write("mid_seg.json", train={"task": "semantic"}, fusion={"scheme": "mid"})
    assert cli_main(["train", "--config", mid_seg, "--out", str(tmp_path / "r1")]) == 2
    assert "mid fusion" in capsys.readouterr().err

    early_aux = write("early_aux.json", fusion={"scheme": "early", "aux_enabled": True})
    assert cli_main(["train", "--config", early_aux, "--out", str(tmp_path / "r2")]) == 2
    assert "early fusion" in capsys.readouterr().err

    adam_cfg = write("adam.json")
    assert cli_main(["train", "--config", adam_cfg, "--out", str(tmp_path / "r3")]) == 0
    capsys.readouterr()
    assert cli_main(["gradflow", "--run", str(tmp_path / "r3")]) == 2
    assert "SGD" in capsys.readouterr().err
    _passline(9, "illegal combinations exit 2 with explanatory messages")


# criterion 10 --------------------------------------------------------------

def _tree_bytes(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_10_reproducibility(tmp_path):
    """Identical seeds produce byte-identical datasets, checkpoints, and
    reports across two runs."""
    config = {
        "seed": 17,
        "synth": {"n_patches": 10, "height": 16, "width": 16, "optical_steps": [5, 7], "radar_steps": [7, 9],
                  "cloud_rate": 0.2, "speckle_scale": 0.2},
        "train": {"task": "parcel", "epochs": 2, "batch_size": 16, "eval_every": 1},
        "fusion": {"scheme": "late", "dropout": [0.2, 0.1, 0.1]},
        "pse": {"n_pixels": 8, "pixel_mlp": [8, 12], "out_mlp": [12]},
        "ltae": {"width": 12, "n_heads": 2, "d_k": 4, "out_mlp": [12]},
        "utae": {"level_widths": [4, 8, 8], "n_heads": 2, "d_k": 4},
        "head_hidden": 8,
    }
    # datasets: two generations of the same config are byte-identical
    for name in ("ds_a", "ds_b"):
        payload = dict(config, dataset_path=str(tmp_path / name))
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps(payload))
        assert cli_main(["synth", "--config", str(path)]) == 0
    assert _tree_bytes(tmp_path / "ds_a") == _tree_bytes(tmp_path / "ds_b")

    # two trainings on the same dataset: run dirs byte-identical
    # (same basename so the run label in derived reports matches too)
    shared = dict(config, dataset_path=str(tmp_path / "ds_a"))
    cfg_path = tmp_path / "train.json"
    cfg_path.write_text(json.dumps(shared))
    runs = (tmp_path / "a" / "run", tmp_path / "b" / "run")
    for run in runs:
        assert cli_main(["train", "--config", str(cfg_path), "--out", str(run)]) == 0
    assert _tree_bytes(runs[0]) == _tree_bytes(runs[1])

    # reports over the two runs: byte-identical artifacts
    for run, out in zip(runs, ("rep_a", "rep_b")):
        assert cli_main(["report", "--run", str(run), "--out", str(tmp_path / out)]) == 0
    rep_a = _tree_bytes(tmp_path / "rep_a")
    rep_b = _tree_bytes(tmp_path / "rep_b")
    assert set(rep_a) == set(rep_b)
    for name in rep_a:
        assert rep_a[name] == rep_b[name], f"report artifact differs: {name}"
    _passline(10, "datasets, checkpoints, and reports are byte-identical across same-seed runs")

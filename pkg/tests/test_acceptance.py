"""Release acceptance suite.

One test per release criterion, each at its stated tolerance, printing one
``[ACCEPTANCE] <criterion>: PASS/FAIL`` line (run pytest with ``-s`` or
read the captured output).  The full-dataset reproduction is an optional
offline run, gated behind environment variables (see README).
"""

from __future__ import annotations

import itertools
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from miniatures.cli import main
from miniatures.dataset import ArtSchool, stratified_kfold
from miniatures.evaluation import coefficient_of_variation, normalize_and_average
from miniatures.fusion import decide, fuse
from miniatures.head import HeadParams, forward, loss_and_grad
from miniatures.patching import PatchPosition, PatchRect, patch_rects

from conftest import make_fake_manifest
from test_evaluation import two_pass_cv_oracle
from test_fusion import majority_vote_oracle, one_hot
from test_head import finite_difference_grads, max_relative_error, random_case
from test_patching import rect_intersection_area

TABLE_COUNTS = {
    ArtSchool.HERAT: 202,
    ArtSchool.QAJAR: 150,
    ArtSchool.SHIRAZ_E_AVVAL: 193,
    ArtSchool.TABRIZ_E_AVVAL: 190,
    ArtSchool.TABRIZ_E_DOVVOM: 155,
}


def verdict(name: str, ok: bool, detail: str = "") -> None:
    print(f"[ACCEPTANCE] {name}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip())
    assert ok, f"{name}: {detail}"


@pytest.fixture(scope="module")
def desk_runs(desk_dataset_dir, tmp_path_factory):
    """prepare + extract + two seeded evaluate runs on the 5x20 corpus."""
    base = tmp_path_factory.mktemp("acceptance")
    manifest = base / "manifest.json"
    cache = base / "cache"
    started = time.perf_counter()
    assert main(["prepare", "--dataset", str(desk_dataset_dir), "--out", str(manifest)]) == 0
    assert main(["extract", "--manifest", str(manifest),
                 "--backbone", "stub:7:64", "--cache", str(cache)]) == 0
    reports = []
    for run in ("a", "b"):
        out = base / f"runs-{run}"
        rc = main([
            "evaluate", "--manifest", str(manifest), "--backbone", "stub:7:64",
            "--cache", str(cache), "--out", str(out), "--seed", "0",
            "--epochs", "15", "--batch-size", "32", "--dropout", "0.3",
        ])
        assert rc == 0
        (run_dir,) = [p for p in out.iterdir() if p.is_dir()]
        reports.append(run_dir / "report.json")
    elapsed = time.perf_counter() - started
    return {"reports": reports, "elapsed": elapsed}


class TestAcceptance:
    def test_patch_geometry_exactness(self):
        started = time.perf_counter()
        rects = patch_rects(512, 512)
        expected = {
            PatchPosition.TOP_LEFT: PatchRect(0, 0, 256, 256),
            PatchPosition.TOP_RIGHT: PatchRect(256, 0, 256, 256),
            PatchPosition.BOTTOM_LEFT: PatchRect(0, 256, 256, 256),
            PatchPosition.BOTTOM_RIGHT: PatchRect(256, 256, 256, 256),
            PatchPosition.CENTER: PatchRect(128, 128, 256, 256),
        }
        exact = rects == expected
        corners = [expected[p] for p in list(PatchPosition)[:4]]
        tiling = (
            all(
                rect_intersection_area(a, b) == 0
                for i, a in enumerate(corners)
                for b in corners[i + 1 :]
            )
            and sum(r.w * r.h for r in corners) == 512 * 512
        )
        quarter = all(
            rect_intersection_area(rects[PatchPosition.CENTER], c) == 256 * 256 // 4
            for c in corners
        )
        elapsed = time.perf_counter() - started
        verdict(
            "patch-geometry-exactness",
            exact and tiling and quarter and elapsed < 1.0,
            f"exact={exact} tiling={tiling} quarter-overlap={quarter} elapsed={elapsed:.3f}s",
        )

    def test_gradient_oracle(self):
        started = time.perf_counter()
        rng = np.random.default_rng(20260809)
        worst = 0.0
        cases = 100
        for _ in range(cases):
            params, batch, masks, rate = random_case(rng)
            _, analytic = loss_and_grad(params, batch, dropout_masks=masks, dropout_rate=rate)
            numeric = finite_difference_grads(params, batch, masks, rate)
            worst = max(worst, max_relative_error(analytic, numeric))
        elapsed = time.perf_counter() - started
        verdict(
            "gradient-oracle",
            worst < 1e-4 and elapsed < 30.0,
            f"cases={cases} worst-rel-err={worst:.2e} elapsed={elapsed:.1f}s",
        )

    def test_softmax_loss_anchors(self):
        params = HeadParams(
            W1=np.zeros((32, 6)), b1=np.zeros(32), W2=np.zeros((5, 32)), b2=np.zeros(5)
        )
        probs, _ = forward(params, np.random.default_rng(0).normal(size=6))
        uniform = bool(np.all(probs == 0.2))
        loss, _ = loss_and_grad(params, [(np.random.default_rng(1).normal(size=6), np.eye(5)[3])])
        anchored = abs(loss - np.log(5)) < 1e-9
        verdict(
            "softmax-loss-anchors",
            uniform and anchored,
            f"probs-uniform={uniform} |loss-ln5|={abs(loss - np.log(5)):.2e}",
        )

    def test_fusion_brute_force_equivalence(self):
        started = time.perf_counter()
        agree = 0
        total = 0
        for votes in itertools.product(range(5), repeat=5):
            total += 1
            if decide(fuse([one_hot(v) for v in votes])) == majority_vote_oracle(votes):
                agree += 1
        elapsed = time.perf_counter() - started
        verdict(
            "fusion-brute-force-equivalence",
            agree == total == 3125 and elapsed < 1.0,
            f"agreement={agree}/{total} elapsed={elapsed:.3f}s",
        )

    def test_fold_protocol(self):
        fixture = make_fake_manifest({s: 10 for s in ArtSchool})
        folds = stratified_kfold(fixture, k=5, seed=1)
        ids = set(fixture.ids())
        disjoint = all(not (a.test_ids & b.test_ids) for a, b in itertools.combinations(folds, 2))
        covering = set().union(*(f.test_ids for f in folds)) == ids
        by_label = {s: {r.id for r in fixture.records if r.label is s} for s in ArtSchool}
        stratified = all(
            max(counts) - min(counts) <= 1
            for counts in (
                [len(by_label[s] & f.test_ids) for f in folds] for s in ArtSchool
            )
        )
        deterministic = folds == stratified_kfold(fixture, k=5, seed=1)

        table = make_fake_manifest(TABLE_COUNTS)
        sizes = [len(f.test_ids) for f in stratified_kfold(table, k=5, seed=0)]
        exact_178 = sizes == [178] * 5
        verdict(
            "fold-protocol",
            disjoint and covering and stratified and deterministic and exact_178,
            f"disjoint={disjoint} covering={covering} stratified={stratified} "
            f"deterministic={deterministic} table-fold-sizes={sizes}",
        )

    def test_metric_anchors(self):
        cv_exact = coefficient_of_variation([8, 12]) == 20.0
        values = [86, 87, 88, 89, 90]
        cv_oracle_err = abs(coefficient_of_variation(values) - two_pass_cv_oracle(values))
        rng = np.random.default_rng(5)
        mats = [rng.integers(1, 30, size=(5, 5)) for _ in range(5)]
        rows = normalize_and_average(mats).sum(axis=1)
        rows_ok = bool(np.all(np.abs(rows - 1.0) < 1e-6))
        verdict(
            "metric-anchors",
            cv_exact and cv_oracle_err < 1e-9 and rows_ok,
            f"cv([8,12])==20: {cv_exact}; |cv-oracle|={cv_oracle_err:.2e}; "
            f"normalized-rows-sum-1: {rows_ok}",
        )

    def test_desk_scale_end_to_end(self, desk_runs):
        doc = json.loads(desk_runs["reports"][0].read_text())
        fused = doc["means"]["fused_test_acc"]
        patch = doc["means"]["patch_test_acc"]
        elapsed = desk_runs["elapsed"]
        verdict(
            "desk-scale-end-to-end",
            fused >= 0.90 and fused >= patch and elapsed < 120.0,
            f"fused-test={fused:.4f} patch-test={patch:.4f} elapsed={elapsed:.1f}s",
        )

    def test_determinism(self, desk_runs):
        a, b = (p.read_bytes() for p in desk_runs["reports"])
        verdict(
            "determinism",
            a == b,
            f"report-bytes-equal={a == b} size={len(a)}",
        )

    @pytest.mark.skipif(
        not (os.environ.get("MINIATURES_DATASET") and os.environ.get("MINIATURES_BACKBONE")),
        reason="full reproduction needs MINIATURES_DATASET and MINIATURES_BACKBONE "
        "(offline, real corpus + exported backbone); see README",
    )
    def test_full_reproduction_offline(self, tmp_path):
        dataset = os.environ["MINIATURES_DATASET"]
        backbone = os.environ["MINIATURES_BACKBONE"]
        manifest = tmp_path / "manifest.json"
        cache = Path(os.environ.get("MINIATURES_CACHE", tmp_path / "cache"))
        out = tmp_path / "runs"
        assert main(["prepare", "--dataset", dataset, "--out", str(manifest)]) == 0
        counts = json.loads(manifest.read_text())["counts"]
        assert counts == {
            "Herat": 202, "Qajar": 150, "Shiraz-e Avval": 193,
            "Tabriz-e Avval": 190, "Tabriz-e Dovvom": 155,
        }, f"corpus counts differ from the published distribution: {counts}"
        assert main(["extract", "--manifest", str(manifest),
                     "--backbone", backbone, "--cache", str(cache)]) == 0
        assert main(["evaluate", "--manifest", str(manifest), "--backbone", backbone,
                     "--cache", str(cache), "--out", str(out), "--seed", "0"]) == 0
        (run_dir,) = [p for p in out.iterdir() if p.is_dir()]
        doc = json.loads((run_dir / "report.json").read_text())
        fused = 100 * doc["means"]["fused_test_acc"]
        patch = 100 * doc["means"]["patch_test_acc"]
        verdict(
            "full-reproduction-offline",
            abs(fused - 91.69) <= 3.0 and abs(patch - 86.67) <= 3.0,
            f"fused-test={fused:.2f}% (target 91.69±3) patch-test={patch:.2f}% (target 86.67±3)",
        )

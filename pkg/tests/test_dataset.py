from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from miniatures.dataset import (
    ArtSchool,
    DatasetManifest,
    one_hot,
    scan_dataset,
    stratified_kfold,
)
from miniatures.errors import (
    ConfigurationError,
    DatasetLayoutError,
    DatasetRootError,
    LabelError,
    StratificationError,
)

from conftest import make_fake_manifest

TABLE_COUNTS = {
    ArtSchool.HERAT: 202,
    ArtSchool.QAJAR: 150,
    ArtSchool.SHIRAZ_E_AVVAL: 193,
    ArtSchool.TABRIZ_E_AVVAL: 190,
    ArtSchool.TABRIZ_E_DOVVOM: 155,
}


class TestArtSchool:
    def test_five_members_with_stable_indices(self):
        assert len(ArtSchool) == 5
        assert [int(s) for s in ArtSchool] == [0, 1, 2, 3, 4]
        assert ArtSchool.HERAT == 0
        assert ArtSchool.TABRIZ_E_DOVVOM == 4

    def test_from_name_is_case_and_separator_insensitive(self):
        assert ArtSchool.from_name("herat") is ArtSchool.HERAT
        assert ArtSchool.from_name("TABRIZ-E DOVVOM") is ArtSchool.TABRIZ_E_DOVVOM
        assert ArtSchool.from_name("Shiraz_e_Avval") is ArtSchool.SHIRAZ_E_AVVAL
        assert ArtSchool.from_name("tabrizeavval") is ArtSchool.TABRIZ_E_AVVAL

    def test_unknown_name_rejected(self):
        with pytest.raises(DatasetLayoutError):
            ArtSchool.from_name("Isfahan")


class TestScanDataset:
    def test_fixture_counts(self, tiny_dataset_dir):
        manifest = scan_dataset(tiny_dataset_dir)
        assert len(manifest.records) == 10
        assert all(manifest.counts[s] == 2 for s in ArtSchool)
        assert manifest.skipped == []

    def test_records_sorted_and_ids_relative(self, tiny_dataset_dir):
        manifest = scan_dataset(tiny_dataset_dir)
        ids = manifest.ids()
        assert ids == sorted(ids)
        assert all("/" in rid and not rid.startswith("/") for rid in ids)

    def test_dimensions_match_files(self, tiny_dataset_dir):
        manifest = scan_dataset(tiny_dataset_dir)
        rec = manifest.records[0]
        with Image.open(rec.path) as im:
            assert im.size == (rec.width, rec.height)

    def test_idempotent(self, tiny_dataset_dir):
        assert scan_dataset(tiny_dataset_dir) == scan_dataset(tiny_dataset_dir)

    def test_missing_root(self, tmp_path):
        with pytest.raises(DatasetRootError):
            scan_dataset(tmp_path / "nope")

    def test_empty_root(self, tmp_path):
        with pytest.raises(DatasetRootError):
            scan_dataset(tmp_path)

    def test_unknown_subdirectory_named_in_error(self, tmp_path):
        (tmp_path / "Herat").mkdir()
        (tmp_path / "NotASchool").mkdir()
        with pytest.raises(DatasetLayoutError, match="NotASchool"):
            scan_dataset(tmp_path)

    def test_undecodable_image_skipped(self, tmp_path):
        for school in ArtSchool:
            (tmp_path / school.display_name).mkdir()
        good = tmp_path / "Herat" / "ok.png"
        Image.fromarray(np.zeros((8, 8, 3), dtype=np.uint8)).save(good)
        (tmp_path / "Herat" / "broken.png").write_bytes(b"not a png at all")
        manifest = scan_dataset(tmp_path)
        assert [r.id for r in manifest.records] == ["Herat/ok.png"]
        assert len(manifest.skipped) == 1
        assert manifest.skipped[0].path == "Herat/broken.png"

    def test_too_small_image_skipped(self, tmp_path):
        for school in ArtSchool:
            (tmp_path / school.display_name).mkdir()
        Image.fromarray(np.zeros((1, 1, 3), dtype=np.uint8)).save(tmp_path / "Qajar" / "dot.png")
        manifest = scan_dataset(tmp_path)
        assert manifest.records == []
        assert manifest.skipped[0].reason.startswith("too small")

    def test_non_image_files_ignored(self, tmp_path):
        for school in ArtSchool:
            (tmp_path / school.display_name).mkdir()
        (tmp_path / "Herat" / "README.txt").write_text("notes")
        manifest = scan_dataset(tmp_path)
        assert manifest.records == [] and manifest.skipped == []


class TestManifestJson:
    def test_round_trip(self, tiny_dataset_dir, tmp_path):
        manifest = scan_dataset(tiny_dataset_dir)
        path = tmp_path / "manifest.json"
        manifest.save(path)
        assert DatasetManifest.load(path) == manifest

    def test_counts_mismatch_detected(self, tiny_dataset_dir):
        doc = scan_dataset(tiny_dataset_dir).to_json()
        doc["counts"]["Herat"] = 99
        with pytest.raises(ConfigurationError, match="counts"):
            DatasetManifest.from_json(doc)

    def test_duplicate_ids_rejected(self, tiny_dataset_dir):
        doc = scan_dataset(tiny_dataset_dir).to_json()
        doc["records"].append(dict(doc["records"][0]))
        with pytest.raises(ConfigurationError, match="duplicate"):
            DatasetManifest.from_json(doc)


class TestStratifiedKFold:
    def test_folds_partition_ids(self):
        manifest = make_fake_manifest({s: 10 for s in ArtSchool})
        folds = stratified_kfold(manifest, k=5, seed=3)
        all_ids = set(manifest.ids())
        seen = set()
        for fold in folds:
            assert fold.train_ids & fold.test_ids == set()
            assert fold.train_ids | fold.test_ids == all_ids
            assert not (seen & fold.test_ids)
            seen |= fold.test_ids
        assert seen == all_ids

    def test_stratification_within_one(self):
        manifest = make_fake_manifest(TABLE_COUNTS)
        folds = stratified_kfold(manifest, k=5, seed=11)
        by_label = {s: [r.id for r in manifest.records if r.label is s] for s in ArtSchool}
        for school in ArtSchool:
            per_fold = [len(set(by_label[school]) & fold.test_ids) for fold in folds]
            assert max(per_fold) - min(per_fold) <= 1

    def test_table_counts_give_exact_178(self):
        manifest = make_fake_manifest(TABLE_COUNTS)
        folds = stratified_kfold(manifest, k=5, seed=0)
        assert [len(f.test_ids) for f in folds] == [178] * 5
        assert all(len(f.train_ids) == 712 for f in folds)

    def test_two_per_class_k2(self):
        manifest = make_fake_manifest({s: 2 for s in ArtSchool})
        folds = stratified_kfold(manifest, k=2, seed=5)
        by_label = {s: {r.id for r in manifest.records if r.label is s} for s in ArtSchool}
        for fold in folds:
            for school in ArtSchool:
                assert len(by_label[school] & fold.test_ids) == 1

    def test_deterministic_under_seed(self):
        manifest = make_fake_manifest({s: 7 for s in ArtSchool})
        assert stratified_kfold(manifest, 3, seed=42) == stratified_kfold(manifest, 3, seed=42)

    def test_seed_changes_assignment(self):
        manifest = make_fake_manifest({s: 20 for s in ArtSchool})
        a = stratified_kfold(manifest, 5, seed=1)
        b = stratified_kfold(manifest, 5, seed=2)
        assert any(x.test_ids != y.test_ids for x, y in zip(a, b))

    def test_k_too_small(self):
        manifest = make_fake_manifest({s: 5 for s in ArtSchool})
        with pytest.raises(StratificationError):
            stratified_kfold(manifest, k=1, seed=0)

    def test_class_smaller_than_k(self):
        manifest = make_fake_manifest({s: 2 for s in ArtSchool})
        with pytest.raises(StratificationError):
            stratified_kfold(manifest, k=3, seed=0)

    @settings(max_examples=30, deadline=None)
    @given(
        sizes=st.lists(st.integers(min_value=6, max_value=40), min_size=5, max_size=5),
        k=st.integers(min_value=2, max_value=6),
        seed=st.integers(min_value=0, max_value=2**32),
    )
    def test_partition_and_stratification_properties(self, sizes, k, seed):
        manifest = make_fake_manifest(dict(zip(ArtSchool, sizes)))
        folds = stratified_kfold(manifest, k=k, seed=seed)
        all_ids = set(manifest.ids())
        test_sets = [fold.test_ids for fold in folds]
        assert set().union(*test_sets) == all_ids
        assert sum(len(t) for t in test_sets) == len(all_ids)
        by_label = {s: {r.id for r in manifest.records if r.label is s} for s in ArtSchool}
        for school in ArtSchool:
            per_fold = [len(by_label[school] & t) for t in test_sets]
            assert max(per_fold) - min(per_fold) <= 1


class TestOneHot:
    def test_first_class(self):
        assert one_hot(ArtSchool.HERAT, 5).tolist() == [1.0, 0.0, 0.0, 0.0, 0.0]

    def test_last_class(self):
        assert one_hot(ArtSchool.TABRIZ_E_DOVVOM, 5).tolist() == [0.0, 0.0, 0.0, 0.0, 1.0]

    def test_wider_encoding_allowed(self):
        vec = one_hot(ArtSchool.QAJAR, 6)
        assert vec.shape == (6,) and vec[1] == 1.0 and vec.sum() == 1.0

    def test_narrow_encoding_rejected(self):
        with pytest.raises(LabelError):
            one_hot(ArtSchool.QAJAR, 3)

    def test_dtype(self):
        assert one_hot(ArtSchool.HERAT, 5).dtype == np.float32

"""
Tests for labels, scored items and the dataset manifest.
"""

import json
import math
from pathlib import Path

import pytest

from conftest import make_manifest

from cle_triage.errors import ValidationError
from cle_triage.models import (
    DatasetManifest,
    Label,
    ManifestRecord,
    ScoredItem,
    scored_items,
)

D, N = Label.DIAGNOSTIC, Label.NONDIAGNOSTIC


class TestLabel:
    """Test the label enum."""

    def test_diagnostic_is_class_one(self):
        assert D.class_index == 1
        assert N.class_index == 0
        assert D.is_positive and not N.is_positive

    def test_parse(self):
        assert Label.parse("nondiagnostic") is N
        assert Label.parse(D) is D

    def test_parse_unknown(self):
        with pytest.raises(ValidationError, match="'blurry'"):
            Label.parse("blurry")


class TestScoredItem:
    """Test score validation."""

    @pytest.mark.parametrize("score", [0.0, 0.5, 1.0])
    def test_valid(self, score):
        assert ScoredItem(score, D).score == score

    @pytest.mark.parametrize("score", [-0.1, 1.1, math.nan])
    def test_out_of_range(self, score):
        with pytest.raises(ValidationError):
            ScoredItem(score, D)

    def test_scored_items_length_mismatch(self):
        with pytest.raises(ValidationError, match="2 scores but 1 labels"):
            scored_items([0.1, 0.2], [D])

    def test_scored_items_parses_strings(self):
        items = scored_items([0.3], ["diagnostic"])
        assert items[0].positive


class TestManifestRecord:
    """Test record (de)serialization."""

    def test_optional_fields_omitted(self):
        assert ManifestRecord("a.pgm", D).to_dict() == {"path": "a.pgm", "label": "diagnostic", "fold": None}

    def test_from_dict(self):
        record = ManifestRecord.from_dict({"path": "b.pgm", "label": "nondiagnostic", "fold": "2",
                                           "patient": "p1", "subclass": "motion"})
        assert record == ManifestRecord("b.pgm", N, 2, "p1", "motion")

    def test_missing_fields(self):
        with pytest.raises(ValidationError, match="missing"):
            ManifestRecord.from_dict({"path": "c.pgm"})


class TestDatasetManifest:
    """Test manifest files and fold access."""

    def test_save_and_load(self, temp_dir: Path):
        manifest = make_manifest([D, N, D], temp_dir, folds=[0, 1, 0])
        manifest.meta = {"k": 2}
        manifest.save(temp_dir / "manifest.jsonl")
        loaded = DatasetManifest.load(temp_dir / "manifest.jsonl")
        assert loaded.records == manifest.records
        assert loaded.meta == {"k": 2}
        assert loaded.root == temp_dir
        assert json.loads((temp_dir / "dataset_meta.json").read_text()) == {"k": 2}

    def test_blank_lines_ignored(self, temp_dir: Path):
        path = temp_dir / "manifest.jsonl"
        path.write_text('{"path": "a.pgm", "label": "diagnostic"}\n\n')
        assert len(DatasetManifest.load(path)) == 1

    def test_invalid_json_names_line(self, temp_dir: Path):
        path = temp_dir / "manifest.jsonl"
        path.write_text('{"path": "a.pgm", "label": "diagnostic"}\n{oops\n')
        with pytest.raises(ValidationError, match=":2:"):
            DatasetManifest.load(path)

    def test_missing_file(self, temp_dir: Path):
        with pytest.raises(FileNotFoundError):
            DatasetManifest.load(temp_dir / "absent.jsonl")

    def test_malformed_meta(self, temp_dir: Path):
        make_manifest([D, N], temp_dir).save(temp_dir / "manifest.jsonl")
        (temp_dir / "dataset_meta.json").write_text("{not json")
        with pytest.raises(ValidationError, match="dataset_meta.json"):
            DatasetManifest.load(temp_dir / "manifest.jsonl")

    def test_meta_must_be_an_object(self, temp_dir: Path):
        make_manifest([D, N], temp_dir).save(temp_dir / "manifest.jsonl")
        (temp_dir / "dataset_meta.json").write_text("[1, 2]")
        with pytest.raises(ValidationError, match="expected a JSON object"):
            DatasetManifest.load(temp_dir / "manifest.jsonl")

    def test_record_line_not_an_object(self, temp_dir: Path):
        path = temp_dir / "manifest.jsonl"
        path.write_text('["a.pgm", "diagnostic"]\n')
        with pytest.raises(ValidationError):
            DatasetManifest.load(path)

    def test_duplicate_paths(self, temp_dir: Path):
        with pytest.raises(ValidationError, match="Duplicate"):
            DatasetManifest([ManifestRecord("a.pgm", D), ManifestRecord("a.pgm", N)], root=temp_dir)

    def test_folds_and_k(self, temp_dir: Path):
        manifest = make_manifest([D, N, D, N], temp_dir, folds=[0, 1, 2, 1])
        assert manifest.folds().tolist() == [0, 1, 2, 1]
        assert manifest.k == 3

    def test_unassigned_folds(self, temp_dir: Path):
        with pytest.raises(ValidationError, match="no fold"):
            make_manifest([D, N], temp_dir).folds()

    def test_with_folds_copies(self, temp_dir: Path):
        manifest = make_manifest([D, N], temp_dir)
        updated = manifest.with_folds([1, 0])
        assert [r.fold for r in updated.records] == [1, 0]
        assert manifest.records[0].fold is None
        with pytest.raises(ValidationError):
            manifest.with_folds([0])

    def test_resolve(self, temp_dir: Path):
        manifest = make_manifest([D], temp_dir)
        assert manifest.resolve(manifest.records[0]) == temp_dir / "images" / "00000.pgm"
        absolute = ManifestRecord(str(temp_dir / "x.pgm"), D)
        assert manifest.resolve(absolute) == temp_dir / "x.pgm"

    def test_summary_and_subset(self, temp_dir: Path):
        manifest = make_manifest([D, N, N], temp_dir)
        assert manifest.summary() == {"records": 3, "diagnostic": 1, "nondiagnostic": 2}
        assert [r.label for r in manifest.subset([2, 0])] == [N, D]

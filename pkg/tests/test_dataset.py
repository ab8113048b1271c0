import numpy as np
import pytest

from longiflow.models.scan import PairKind, PairRecord, ScanRecord
from longiflow.services.dataset_service import (
    DatasetService, build_pairs, filter_pairs, load_manifest, save_manifest, select_prior, subject_split,
)
from longiflow.utils.data_storage import DataStorage
from longiflow.utils.errors import DataError
from longiflow.utils.volume_io import write_volume


def scan(subject_id, t, label=0):
    return ScanRecord(subject_id=subject_id, t=t, volume_path=f"volumes/{subject_id}_t{t:g}.raw", label=label)


def write_manifest(path, rows):
    path.write_text("subject_id,t_years,label,volume_path\n" + "".join(f"{r}\n" for r in rows), encoding="utf-8")
    return path


class TestManifest:
    def test_round_trip_with_volumes(self, tmp_path):
        records = [scan("sub-000", 0.0, 1), scan("sub-000", 1.0, 1), scan("sub-001", 0.0, 0)]
        for r in records:
            write_volume(tmp_path / r.volume_path, np.zeros((2, 2, 2)))
        path = save_manifest(tmp_path / "manifest.csv", records)
        assert load_manifest(path) == records

    def test_duplicate_scan_time_names_both_lines(self, tmp_path):
        path = write_manifest(tmp_path / "m.csv", ["a,0,1,a0.raw", "a,1,1,a1.raw", "a,0,1,a0b.raw"])
        with pytest.raises(DataError, match=r"m\.csv:4: duplicate scan time.*line 2"):
            load_manifest(path, check_files=False)

    def test_inconsistent_label(self, tmp_path):
        path = write_manifest(tmp_path / "m.csv", ["a,0,1,a0.raw", "a,1,0,a1.raw"])
        with pytest.raises(DataError, match="inconsistent label"):
            load_manifest(path, check_files=False)

    @pytest.mark.parametrize("row, message", [
        ("a,0,2,a0.raw", "label must be 0 or 1"),
        ("a,nan,1,a0.raw", "finite"),
        ("a,soon,1,a0.raw", "finite"),
    ])
    def test_bad_values(self, tmp_path, row, message):
        path = write_manifest(tmp_path / "m.csv", [row])
        with pytest.raises(DataError, match=message):
            load_manifest(path, check_files=False)

    def test_missing_column(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("subject_id,t_years,volume_path\na,0,a.raw\n", encoding="utf-8")
        with pytest.raises(DataError, match="label"):
            load_manifest(path)

    def test_missing_volume_names_the_row(self, tmp_path):
        path = write_manifest(tmp_path / "m.csv", ["a,0,1,volumes/a0.raw"])
        with pytest.raises(DataError, match=r"m\.csv:2: missing volume file volumes/a0.raw"):
            load_manifest(path)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_manifest(tmp_path / "nope.csv")

    def test_header_only_is_empty(self, tmp_path):
        assert load_manifest(write_manifest(tmp_path / "m.csv", [])) == []


class TestBuildPairs:
    def test_pair_kinds(self):
        records = [
            scan("a", 0.0), scan("a", 1.0),           # 目标间隔
            scan("b", 0.0), scan("b", 0.5),           # 窗口内但偏离目标
            scan("c", 0.0), scan("c", 3.0),           # 窗口外
            scan("d", 2.0),                           # 单次扫描
        ]
        pairs = build_pairs(records)
        assert [p.sample_id for p in pairs] == [r.scan_id for r in records]
        kinds = [p.pair_kind for p in pairs]
        assert kinds == [PairKind.SINGLE_EMPTY, PairKind.MULTI, PairKind.SINGLE_EMPTY, PairKind.SINGLE_SCALED,
                         PairKind.SINGLE_EMPTY, PairKind.SINGLE_EMPTY, PairKind.SINGLE_EMPTY]
        assert pairs[1].prior == records[0]
        assert pairs[3].gap_years == 0.5
        assert [p.needs_flow() for p in pairs].count(True) == 2

    def test_prior_is_closest_to_target_gap(self):
        records = [scan("a", 0.0), scan("a", 1.0), scan("a", 2.0)]
        assert build_pairs(records)[2].prior.t == 1.0

    def test_tie_prefers_earlier_scan(self):
        records = [scan("a", 0.0), scan("a", 1.0), scan("a", 1.5)]
        current = records[2]
        assert select_prior(current, records, 1.0, (0.25, 1.75)).t == 0.0
        assert build_pairs(records)[2].pair_kind == PairKind.SINGLE_SCALED

    def test_unsorted_input_order_is_kept(self):
        records = [scan("a", 1.0), scan("b", 0.0), scan("a", 0.0)]
        pairs = build_pairs(records)
        assert [p.sample_id for p in pairs] == ["a@1", "b@0", "a@0"]
        assert pairs[0].pair_kind == PairKind.MULTI

    def test_pair_index_round_trip(self, tmp_path):
        records = [scan("a", 0.0, 1), scan("a", 1.0, 1)]
        pairs = build_pairs(records)
        pairs[1].flow_path = "flows/a_t1.flow"
        service = DatasetService(DataStorage(tmp_path / "flows"))
        service.save_pair_index(pairs, tmp_path / "data" / "manifest.csv", {"flow_method": "optical_flow"})
        loaded, manifest = service.load_pair_index()
        assert [p.to_dict() for p in loaded] == [p.to_dict() for p in pairs]
        assert manifest.resolve() == (tmp_path / "data" / "manifest.csv").resolve()


class TestSubjectSplit:
    @staticmethod
    def records(n):
        return [scan(f"sub-{i:03d}", t, i % 2) for i in range(n) for t in (0.0, 1.0)]

    def test_ten_subjects_split_eight_two(self):
        train, test = subject_split(self.records(10), 0.8, seed=0)
        assert len(train) == 8 and len(test) == 2
        assert not set(train) & set(test)
        labels = {f"sub-{i:03d}": i % 2 for i in range(10)}
        assert {labels[s] for s in test} == {0, 1}

    def test_deterministic_given_seed(self):
        assert subject_split(self.records(20), 0.8, seed=3) == subject_split(self.records(20), 0.8, seed=3)

    def test_needs_two_subjects_per_class(self):
        with pytest.raises(DataError, match="class 1"):
            subject_split(self.records(3), 0.8)

    def test_filter_pairs_keeps_whole_subjects(self):
        pairs = build_pairs(self.records(4))
        kept = filter_pairs(pairs, ["sub-001"])
        assert [p.sample_id for p in kept] == ["sub-001@0", "sub-001@1"]

    def test_pair_record_from_dict(self):
        pair = PairRecord(current=scan("a", 1.0), pair_kind=PairKind.MULTI, prior=scan("a", 0.0))
        assert PairRecord.from_dict(pair.to_dict()) == pair

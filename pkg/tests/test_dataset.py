import json
import os

import pytest

from uqdet.dataset import (CategoryTable, DatasetIndex, ImageRecord,
                           ObjectAnnotation, dataset_stats, parse_dataset,
                           write_dataset)
from uqdet.errors import DatasetParseError, IntegrityError


def minimal_payload():
    return {
        "images": [{"id": 1, "width": 100, "height": 80, "file_name": "a.jpg"}],
        "annotations": [{"id": 10, "image_id": 1, "category_id": 3,
                         "bbox": [5, 5, 20, 30], "iscrowd": 0}],
        "categories": [{"id": 3, "name": "cat"}],
    }


def write_payload(tmp_path, payload, name="ann.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return path


def test_parse_minimal(tmp_path):
    index = parse_dataset(write_payload(tmp_path, minimal_payload()))
    assert len(index.images) == 1
    assert len(index.annotations) == 1
    assert len(index.categories) == 1
    ann = index.annotations[0]
    assert ann.bbox == (5.0, 5.0, 20.0, 30.0)
    assert not ann.is_crowd


def test_parse_missing_image_reference(tmp_path):
    payload = minimal_payload()
    payload["annotations"][0]["image_id"] = 99
    with pytest.raises(IntegrityError, match=r"annotation 10 .*image_id 99"):
        parse_dataset(write_payload(tmp_path, payload))


def test_parse_missing_category_reference(tmp_path):
    payload = minimal_payload()
    payload["annotations"][0]["category_id"] = 42
    with pytest.raises(IntegrityError, match=r"annotation 10 .*category_id 42"):
        parse_dataset(write_payload(tmp_path, payload))


@pytest.mark.parametrize("section,key", [("images", "id"), ("annotations", "id"),
                                         ("categories", "id")])
def test_parse_duplicate_ids(tmp_path, section, key):
    payload = minimal_payload()
    payload[section] = payload[section] + [dict(payload[section][0])]
    with pytest.raises(IntegrityError, match="duplicate"):
        parse_dataset(write_payload(tmp_path, payload))


def test_parse_malformed_json_reports_offset(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"images": [,]}')
    with pytest.raises(DatasetParseError, match=r"line 1 column \d+"):
        parse_dataset(path)


def test_parse_missing_top_level_key(tmp_path):
    payload = minimal_payload()
    del payload["categories"]
    with pytest.raises(DatasetParseError, match="categories"):
        parse_dataset(write_payload(tmp_path, payload))


def test_parse_negative_box_rejected(tmp_path):
    payload = minimal_payload()
    payload["annotations"][0]["bbox"] = [5, 5, -1, 30]
    with pytest.raises(IntegrityError, match="negative box"):
        parse_dataset(write_payload(tmp_path, payload))


def test_zero_area_retained_but_flagged(tmp_path, caplog):
    payload = minimal_payload()
    payload["annotations"].append({"id": 11, "image_id": 1, "category_id": 3,
                                   "bbox": [1, 1, 0, 5]})
    with caplog.at_level("WARNING"):
        index = parse_dataset(write_payload(tmp_path, payload))
    assert len(index.annotations) == 2
    assert [a.annotation_id for a in index.scoreable_annotations()] == [10]
    assert "zero-area" in caplog.text


def test_bbox_clamped_to_border_and_logged(tmp_path, caplog):
    payload = minimal_payload()
    payload["annotations"][0]["bbox"] = [90, -10, 30, 50]
    with caplog.at_level("WARNING"):
        index = parse_dataset(write_payload(tmp_path, payload))
    assert index.annotations[0].bbox == (90.0, 0.0, 10.0, 40.0)
    assert "clamped 1" in caplog.text


def test_crowd_excluded_from_scoreable_by_default(tmp_path):
    payload = minimal_payload()
    payload["annotations"].append({"id": 11, "image_id": 1, "category_id": 3,
                                   "bbox": [1, 1, 5, 5], "iscrowd": 1})
    index = parse_dataset(write_payload(tmp_path, payload))
    assert [a.annotation_id for a in index.scoreable_annotations()] == [10]
    both = index.scoreable_annotations(include_crowd=True)
    assert [a.annotation_id for a in both] == [10, 11]


def test_round_trip_identity(tmp_path):
    payload = minimal_payload()
    payload["images"].append({"id": 2, "width": 64, "height": 64, "file_name": "b.jpg"})
    payload["annotations"].append({
        "id": 11, "image_id": 2, "category_id": 3, "bbox": [0, 0, 10, 10],
        "iscrowd": 1,
        "segmentation": {"size": [64, 64], "counts": [10, 20, 64 * 64 - 30]}})
    payload["annotations"].append({
        "id": 12, "image_id": 2, "category_id": 3, "bbox": [2.5, 3.5, 10.25, 11.75],
        "segmentation": [[2.5, 3.5, 12.75, 3.5, 12.75, 15.25]]})
    index = parse_dataset(write_payload(tmp_path, payload))
    out = tmp_path / "out.json"
    write_dataset(index, out)
    assert parse_dataset(out) == index


def test_write_empty_annotations(tmp_path):
    payload = minimal_payload()
    payload["annotations"] = []
    index = parse_dataset(write_payload(tmp_path, payload))
    out = tmp_path / "empty.json"
    write_dataset(index, out)
    reread = parse_dataset(out)
    assert len(reread.annotations) == 0
    assert json.loads(out.read_text())["annotations"] == []


def test_write_unwritable_path_raises(tmp_path):
    index = parse_dataset(write_payload(tmp_path, minimal_payload()))
    with pytest.raises(OSError):
        write_dataset(index, tmp_path / "no_such_dir" / "x.json")


def test_write_validates_invariants(tmp_path):
    index = DatasetIndex(
        images=(ImageRecord(1, 10, 10),),
        annotations=(ObjectAnnotation(1, 99, 3, (0, 0, 1, 1)),),
        categories=CategoryTable({3: "cat"}))
    with pytest.raises(IntegrityError):
        write_dataset(index, tmp_path / "x.json")


def test_stats_mean_and_max(tmp_path):
    payload = minimal_payload()
    payload["images"].append({"id": 2, "width": 10, "height": 10, "file_name": "b.jpg"})
    payload["annotations"] = [
        {"id": i, "image_id": 1 if i <= 3 else 2, "category_id": 3,
         "bbox": [0, 0, 1, 1]} for i in range(1, 9)]
    stats = dataset_stats(parse_dataset(write_payload(tmp_path, payload)))
    assert stats.instances_per_image_mean == 4.0
    assert stats.instances_per_image_max == 5
    assert stats.per_category_counts == {3: 8}
    assert sum(stats.per_category_counts.values()) == stats.annotation_count


def test_stats_empty_dataset():
    index = DatasetIndex(images=(), annotations=(),
                         categories=CategoryTable({1: "x"}))
    stats = dataset_stats(index)
    assert stats.instances_per_image_mean == 0
    assert stats.instances_per_image_max == 0


@pytest.mark.skipif("UQDET_COCO_ANNOTATIONS" not in os.environ,
                    reason="set UQDET_COCO_ANNOTATIONS to a COCO train2017 file")
def test_parse_real_coco_train2017():
    index = parse_dataset(os.environ["UQDET_COCO_ANNOTATIONS"])
    assert len(index.categories) == 80
    assert len(index.images) > 110_000
    stats = dataset_stats(index)
    assert 6.0 <= stats.instances_per_image_mean <= 8.0
    assert stats.instances_per_image_max == 63

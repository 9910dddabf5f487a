import json

import pytest

from funduskit.errors import ParseError, ValidationError
from funduskit.modelconfig import (LrStage, ModelTrainConfig, default_paper_config,
                                   read_config, write_config)


def test_defaults_match_reported_training_setup():
    cfg = default_paper_config()
    assert cfg.rpn_anchor_min == 8
    assert cfg.rpn_train_anchors_per_image == 512
    assert cfg.train_rois_per_image == 512
    assert cfg.detection_max_instances == 256
    assert cfg.detection_min_confidence == 0.35
    assert cfg.num_classes == 3
    assert cfg.use_mini_mask is False
    assert cfg.optimizer == "adam"
    assert cfg.input_side == 1024
    assert cfg.total_epochs == 65
    assert sum(stage.epochs for stage in cfg.lr_schedule) == 65
    assert [stage.lr for stage in cfg.lr_schedule] == [1e-4, 1e-5, 1e-6]
    assert [stage.epochs for stage in cfg.lr_schedule] == [25, 25, 15]


def test_default_passes_its_own_validation():
    default_paper_config().validate()


def test_round_trip(tmp_path):
    path = tmp_path / "train.json"
    write_config(default_paper_config(), path)
    assert read_config(path) == default_paper_config()


def test_num_classes_must_be_three(tmp_path):
    doc = default_paper_config().to_json_dict()
    doc["num_classes"] = 2
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ValidationError, match="num_classes"):
        read_config(path)


def test_lr_schedule_sum_checked(tmp_path):
    doc = default_paper_config().to_json_dict()
    doc["lr_schedule"][-1]["epochs"] = 14  # sums to 64 against declared 65
    path = tmp_path / "sum.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ValidationError, match="64"):
        read_config(path)


def test_confidence_range_checked():
    cfg = ModelTrainConfig(
        rpn_anchor_min=8, rpn_train_anchors_per_image=512, train_rois_per_image=512,
        detection_max_instances=256, detection_min_confidence=1.5, num_classes=3,
        use_mini_mask=False, optimizer="adam", lr_schedule=(LrStage(1e-4, 65),),
        total_epochs=65, input_side=1024)
    with pytest.raises(ValidationError, match="detection_min_confidence"):
        cfg.validate()


def test_malformed_file_is_parse_error(tmp_path):
    path = tmp_path / "junk.json"
    path.write_text("[1, 2")
    with pytest.raises(ParseError):
        read_config(path)

"""Training hyperparameter configuration emitted for downstream detectors.

The default configuration is tuned for finding very small lesions in
1024x1024 fundus images: an 8-pixel RPN anchor floor, doubled anchor and
ROI budgets, a generous detection cap, a lowered confidence floor, Adam,
and a three-stage decaying learning-rate ladder. Confidence is stored as a
fraction in (0, 1); a trainer quoting percentages must convert.
"""

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ParseError, ValidationError


@dataclass(frozen=True)
class LrStage:
    lr: float
    epochs: int


@dataclass(frozen=True)
class ModelTrainConfig:
    rpn_anchor_min: int
    rpn_train_anchors_per_image: int
    train_rois_per_image: int
    detection_max_instances: int
    detection_min_confidence: float
    num_classes: int
    use_mini_mask: bool
    optimizer: str
    lr_schedule: tuple  # of LrStage
    total_epochs: int
    input_side: int

    def validate(self) -> None:
        problems = []
        if self.num_classes != 3:
            problems.append(f"num_classes must be 3 (background + 2 lesion types), "
                            f"got {self.num_classes}")
        if not 0.0 < self.detection_min_confidence < 1.0:
            problems.append(f"detection_min_confidence must be in (0, 1), "
                            f"got {self.detection_min_confidence}")
        for field_name in ("rpn_anchor_min", "rpn_train_anchors_per_image",
                           "train_rois_per_image", "detection_max_instances", "input_side"):
            if getattr(self, field_name) < 1:
                problems.append(f"{field_name} must be >= 1, got {getattr(self, field_name)}")
        if any(stage.lr <= 0 or stage.epochs < 1 for stage in self.lr_schedule):
            problems.append("every lr_schedule stage needs lr > 0 and epochs >= 1")
        schedule_sum = sum(stage.epochs for stage in self.lr_schedule)
        if schedule_sum != self.total_epochs:
            problems.append(f"lr_schedule epochs sum to {schedule_sum}, "
                            f"declared total_epochs is {self.total_epochs}")
        if problems:
            raise ValidationError("; ".join(problems))

    def to_json_dict(self) -> dict:
        return {
            "rpn_anchor_min": self.rpn_anchor_min,
            "rpn_train_anchors_per_image": self.rpn_train_anchors_per_image,
            "train_rois_per_image": self.train_rois_per_image,
            "detection_max_instances": self.detection_max_instances,
            "detection_min_confidence": self.detection_min_confidence,
            "num_classes": self.num_classes,
            "use_mini_mask": self.use_mini_mask,
            "optimizer": self.optimizer,
            "lr_schedule": [{"lr": s.lr, "epochs": s.epochs} for s in self.lr_schedule],
            "total_epochs": self.total_epochs,
            "input_side": self.input_side,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ModelTrainConfig":
        try:
            cfg = cls(
                rpn_anchor_min=int(d["rpn_anchor_min"]),
                rpn_train_anchors_per_image=int(d["rpn_train_anchors_per_image"]),
                train_rois_per_image=int(d["train_rois_per_image"]),
                detection_max_instances=int(d["detection_max_instances"]),
                detection_min_confidence=float(d["detection_min_confidence"]),
                num_classes=int(d["num_classes"]),
                use_mini_mask=bool(d["use_mini_mask"]),
                optimizer=str(d["optimizer"]),
                lr_schedule=tuple(LrStage(lr=float(s["lr"]), epochs=int(s["epochs"]))
                                  for s in d["lr_schedule"]),
                total_epochs=int(d["total_epochs"]),
                input_side=int(d["input_side"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad model config object: {exc}") from exc
        cfg.validate()
        return cfg


def default_paper_config() -> ModelTrainConfig:
    """The hyperparameter set used for the reported training runs."""
    return ModelTrainConfig(
        rpn_anchor_min=8,
        rpn_train_anchors_per_image=512,
        train_rois_per_image=512,
        detection_max_instances=256,
        detection_min_confidence=0.35,
        num_classes=3,
        use_mini_mask=False,
        optimizer="adam",
        lr_schedule=(LrStage(1e-4, 25), LrStage(1e-5, 25), LrStage(1e-6, 15)),
        total_epochs=65,
        input_side=1024,
    )


def write_config(cfg: ModelTrainConfig, path) -> None:
    cfg.validate()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(cfg.to_json_dict(), indent=2) + "\n", encoding="utf-8")


def read_config(path) -> ModelTrainConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON in {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"{path} must contain a JSON object")
    return ModelTrainConfig.from_json_dict(doc)

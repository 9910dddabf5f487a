"""funduskit: fundus lesion preprocessing, annotation, and evaluation toolkit."""

from .augment import AugmentPolicy, Sample, apply_policy, flip, rotate90, translate_scale
from .dataset import (DatasetManifest, ImageEntry, generate_synthetic_fundus, read_manifest,
                      shuffle_split, write_manifest)
from .errors import (CapacityError, NoForegroundError, ParseError, UndefinedIoUError,
                     ValidationError)
from .evaluate import (DetectionRecord, EvalConfig, EvalReport, average_precision, bbox_iou,
                       evaluate_dataset, filter_by_annotated_type, mask_iou, match_detections,
                       read_predictions, write_predictions)
from .instances import (InstanceAnnotation, bbox_of, build_annotations, connected_components,
                        decode_rle, encode_rle)
from .modelconfig import ModelTrainConfig, default_paper_config, read_config, write_config
from .preprocess import (GeometricTransform, PreprocessConfig, blend_normalize, circularize,
                         crop_blank_margins, dilate, gaussian_blur, preprocess_pair, resize)

__version__ = "0.1.0"

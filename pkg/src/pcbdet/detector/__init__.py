"""Single-stage detection head: FPN, sub-nets, anchors, losses, NMS, training."""

from pcbdet.boxes import Detection
from pcbdet.detector.anchors import (
    IGNORE,
    NEGATIVE,
    AnchorGrid,
    decode_boxes,
    encode_boxes,
    generate_anchors,
    match_anchors,
)
from pcbdet.detector.config import (
    AnchorConfig,
    DetectorConfig,
    FpnConfig,
    efficientnet_det_config,
    pcbdet_config,
    toy_baseline_config,
    toy_dcac_config,
)
from pcbdet.detector.losses import focal_loss, sigmoid_cross_entropy, smooth_l1
from pcbdet.detector.model import (
    Detector,
    anchors_for,
    build_fpn,
    describe,
    detect,
    detect_batch,
    forward,
    init_detector,
)
from pcbdet.detector.nms import nms
from pcbdet.detector.train import Batch, LossBreakdown, LRSchedule, OptimizerState, total_loss, train_step

"""Running a detector over a dataset and scoring it."""

from __future__ import annotations

import numpy as np

from ..autograd import Tensor, no_grad
from ..detector.decode import decode
from .ap import EvalConfig, ap_r40, evaluate

HEADLINE = ("Car", "3d", 0.5, "moderate")
DEFAULT_THRESHOLDS = {"Car": [0.7, 0.5], "Pedestrian": [0.5, 0.25], "Cyclist": [0.5, 0.25]}


def predict(model, dataset, input_kind="rgb", batch_size=8, conf_threshold=0.05, max_dets=50,
            confidence_mode="exp"):
    """Detections per scene (unflipped views), in dataset order."""
    out = []
    for start in range(0, len(dataset), batch_size):
        views = [dataset.view(i) for i in range(start, min(start + batch_size, len(dataset)))]
        x = np.stack([v.rgb if input_kind == "rgb" else v.depth_input for v in views])
        with no_grad():
            _, heads = model(Tensor(x))
        for j, v in enumerate(views):
            out.append(decode(heads, v.calib, conf_threshold, dataset.mean_dims, batch_index=j,
                              max_dets=max_dets, confidence_mode=confidence_mode))
    return out


def eval_config_for(dataset):
    return EvalConfig.for_focal(dataset.config.focal)


def dataset_labels(dataset):
    return [s.labels for s in dataset.samples]


def headline_ap(detections, dataset, cls="Car", metric="3d", threshold=0.5, difficulty="moderate"):
    cid = dataset.class_names.index(cls)
    return ap_r40(detections, dataset_labels(dataset), cid, cls, difficulty, metric, threshold,
                  eval_config_for(dataset))


def full_report(detections, dataset, thresholds=None):
    thresholds = thresholds or DEFAULT_THRESHOLDS
    return evaluate(detections, dataset_labels(dataset), dataset.class_names,
                    eval_config_for(dataset), thresholds=thresholds)

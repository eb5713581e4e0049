"""From-scratch 3D Vision Transformer pipeline for MGMT status prediction
from multi-parametric MRI: DICOM ingestion, volume preprocessing,
augmentation, a numpy ViT with hand-written gradients, training,
ensembling and ROC evaluation."""

__version__ = "0.1.0"

from .dicom import DatasetIndex, DicomSlice, decode_pixel_data, parse_dicom_file, read_dicom, scan_dataset
from .ensemble import Prediction, StackingModel, average_ensemble, fit_stacking, predict_stacking
from .metrics import MetricsReport, classification_metrics, confusion_matrix, emit_report, roc_auc
from .modality import MODALITIES, Modality
from .vit3d import Vit3d, Vit3dConfig, patchify, unpatchify
from .volume import Volume, apply_voi_lut, build_volume, normalize_volume, order_slices, resize_volume

__all__ = [
    "DatasetIndex", "DicomSlice", "decode_pixel_data", "parse_dicom_file", "read_dicom", "scan_dataset",
    "Prediction", "StackingModel", "average_ensemble", "fit_stacking", "predict_stacking",
    "MetricsReport", "classification_metrics", "confusion_matrix", "emit_report", "roc_auc",
    "MODALITIES", "Modality", "Vit3d", "Vit3dConfig", "patchify", "unpatchify",
    "Volume", "apply_voi_lut", "build_volume", "normalize_volume", "order_slices", "resize_volume",
]

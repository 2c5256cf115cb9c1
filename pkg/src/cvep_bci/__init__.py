"""
cVEP/SSVEP decoding package

This package designs white-noise and JFPM stimulus codes, fits TDCA spatial
filters and TRF temporal models on short calibration runs, builds linear and
transfer-learning templates for untrained codes and scores decoded trials with
ITR, spectral SNR and mutual information. A forward simulator produces virtual
subjects for end-to-end experiments.
"""

from importlib.metadata import PackageNotFoundError, version

from cvep_bci.containers import (
    Codebook,
    EpochSet,
    RunConfig,
    load_run_config,
    read_codebook,
    read_epochs,
    save_run_config,
    write_codebook,
    write_epochs,
)
from cvep_bci.decoder import (
    TemplateBank,
    batch_decode,
    match,
    onset_scan,
    sine_templates,
)
from cvep_bci.errors import CvepError
from cvep_bci.metrics import (
    confusion_and_accuracy,
    itr,
    itr_bpm,
    large_target_sweep,
    mutual_information,
    snr_spectrum,
)
from cvep_bci.pipeline import (
    ExperimentConfig,
    Pipeline,
    calibration_sweep,
    run_pipeline,
)
from cvep_bci.preprocess import default_filterbank, downsample, notch_50hz
from cvep_bci.stimulus import (
    anneal_codes,
    generate_jfpm,
    generate_wn_pool,
    optimize_layout,
    select_codes,
)
from cvep_bci.synth import make_population, simulate_continuous, simulate_epochs
from cvep_bci.tdca import TdcaModel, fit_pooled_tdca, fit_tdca, spatial_filter
from cvep_bci.transfer import (
    TransferWeights,
    build_transfer_templates,
    fit_weights,
    leave_one_out_transfer,
)
from cvep_bci.trf import (
    Trf,
    average_trf,
    build_linear_templates,
    fit_trf,
    fit_trf_from_epochs,
    reconstruct_ssvep_templates,
)

try:
    __version__ = version("cvep-bci")
except PackageNotFoundError:
    __version__ = "0.0.0"

__all__ = [
    "Codebook",
    "CvepError",
    "EpochSet",
    "ExperimentConfig",
    "Pipeline",
    "RunConfig",
    "TdcaModel",
    "TemplateBank",
    "TransferWeights",
    "Trf",
    "anneal_codes",
    "average_trf",
    "batch_decode",
    "build_linear_templates",
    "build_transfer_templates",
    "calibration_sweep",
    "confusion_and_accuracy",
    "default_filterbank",
    "downsample",
    "fit_pooled_tdca",
    "fit_tdca",
    "fit_trf",
    "fit_trf_from_epochs",
    "fit_weights",
    "generate_jfpm",
    "generate_wn_pool",
    "itr",
    "itr_bpm",
    "large_target_sweep",
    "leave_one_out_transfer",
    "load_run_config",
    "make_population",
    "match",
    "mutual_information",
    "notch_50hz",
    "onset_scan",
    "optimize_layout",
    "read_codebook",
    "read_epochs",
    "reconstruct_ssvep_templates",
    "run_pipeline",
    "save_run_config",
    "select_codes",
    "simulate_continuous",
    "simulate_epochs",
    "sine_templates",
    "snr_spectrum",
    "spatial_filter",
    "write_codebook",
    "write_epochs",
]

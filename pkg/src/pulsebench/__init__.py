"""pulsebench: remote heart-rate estimation toolkit.

Face video + landmarks -> spatial-temporal maps -> classical (GREEN/CHROM/
POS) or learned HR estimates, with a synthetic ground-truth generator,
degradation study harness, and six-metric evaluation.
"""

from .signal_core import (BandConfig, HrEstimate, PulseTrace, bandpass,
                          detrend, spectral_hr)
from .stmap import (FrameSequence, LandmarkTrack, RoiBox, SpatialTemporalMap,
                    build_stmap, compute_roi, mask_augment, rgb_to_yuv,
                    skin_mask, sliding_clips, smooth_landmarks)
from .classic import (ESTIMATORS, RgbTrace, chrom_hr, extract_rgb_trace,
                      green_hr, pos_hr)
from .synth import (DegradeOp, SynthConfig, compression_study, degrade,
                    gen_bvp, gen_synth_dataset, gen_synth_map, gen_video)
from .nnet import (Model, RegressorConfig, StageSpec, TrainStagePlan,
                   denormalize_target, forward, gradient_check, l1_loss,
                   normalize_target, predict_video, train)
from .metrics import HrReport, MetricSummary, metrics

__version__ = "0.1.0"

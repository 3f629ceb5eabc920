"""Multi-view attention transfer distillation for time-domain speech
enhancement, at desk scale."""

from .distill import (
    DistillConfig,
    PairEntry,
    PairMap,
    Tam,
    TamParams,
    align_lengths,
    at_loss,
    compute_tam,
    distill_loss,
    dual_depth_map,
    kd_loss,
    mv_at_loss,
    total_training_loss,
)
from .model import ForwardTrace, Model, ModelConfig, MultiViewActivations
from .counting import count_flops, count_params
from .signal import (
    AudioClip,
    DataConfig,
    MixSpec,
    StftConfig,
    load_wav,
    mix_at_snr,
    mrstft_loss,
    save_wav,
    si_sdr,
    stft,
    synth_clean,
    synth_noise,
)
from .tensor import Tensor, no_grad

# the student-under-teacher training loop stays at mvat.trainer.distill so
# the name does not shadow the mvat.distill module
from .trainer import (
    Adam,
    TrainConfig,
    enhance,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

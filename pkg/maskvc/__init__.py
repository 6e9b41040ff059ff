from .presets import ABLATION_MATRICES, PRESETS
from .errors import *
from .features import (MelSpectrogram, NormStats, StftConfig, Waveform, compute_norm_stats, denormalize,
                       griffin_lim_audition, load_features, load_waveform, mel_spectrogram, normalize,
                       save_features)
from .masks import MaskPolicy, Mask, MaskedMel, all_ones_mask, apply_mask, sample_mask
from .models import Converter, Discriminator, converter_forward, discriminator_forward
from .objectives import LossBreakdown, LossWeights, full_objective
from .trainer import TrainConfig, TrainState, crop_frames, run_training, resume_training, train_step
from .runtime import ConversionEngine, convert, convert_corpus
from .evaluation import AblationReport, dtw_align, mcd, mel_cepstrum, run_ablation
from .synth import SynthSpec, generate

__version__ = '0.1.0'

"""Gated dilated-convolution CTC speech recogniser with a numpy training stack."""

from .ctc import ctc_loss, edit_distance, greedy_decode, label_error_rate, log_softmax
from .dsp import AudioClip, FeatureConfig, MelSpectrogram, log_mel, read_wav, resample
from .model import NetworkConfig, init_params, network_forward, param_count, receptive_field
from .translit import Alphabet, TranslitTable, arabic_to_roman, roman_to_arabic

__version__ = "0.1.0"

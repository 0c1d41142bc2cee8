"""EEG to speech synthesis: EEG cleanup, windowed features, kernel PCA, GRU
regression to MFCC, Griffin-Lim reconstruction and evaluation metrics."""
from .acoustic import MfccConfig, griffin_lim, invert_mfcc, mfcc, synthesize
from .dataset import Recording, SyntheticTaskSpec, generate_synthetic_session, split_dataset
from .dsp import apply_iir, design_bandpass, design_notch, fit_fastica, istft, stft
from .eeg_features import EEGFeatureExtractor, FeatureSequence, extract_features, get_preset
from .kpca import KernelPCA
from .metrics import evaluate, mcd, normalized_rmse, rmse
from .nn import GRURegressor

__version__ = "0.1.0"

__all__ = [
    "EEGFeatureExtractor", "FeatureSequence", "GRURegressor", "KernelPCA", "MfccConfig", "Recording",
    "SyntheticTaskSpec", "apply_iir", "design_bandpass", "design_notch", "evaluate", "extract_features",
    "fit_fastica", "generate_synthetic_session", "get_preset", "griffin_lim", "invert_mfcc", "istft",
    "mcd", "mfcc", "normalized_rmse", "rmse", "split_dataset", "stft", "synthesize",
]

"""Secret-free authentication of analog sensors by frequency-swept fingerprinting."""

from .fingerprint import (
    FrequencyGrid,
    FullFingerprint,
    MatchResult,
    PartialFingerprint,
    bootstrap,
    expected_fn_after_retries,
    extract_partial,
    load_fingerprint,
    match,
    save_fingerprint,
    schedule_challenges,
)
from .sensors import (
    Challenge,
    CircuitParams,
    Environment,
    Responder,
    SensorInstance,
    SensorModel,
    builtin_presets,
    default_challenge,
    get_preset,
    instantiate,
    respond,
)
from .waveform import ConverterSpec, ResponseStats, Waveform, quantize, rms, synthesize_sine, variance

__version__ = "0.1.0"

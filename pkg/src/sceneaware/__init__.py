"""Scene-aware selection of real acoustic impulse responses.

Label a catalog of impulse responses with octave-band T60s, model a target
scene's T60 distribution as a Gaussian, pick the catalog subset that best
matches samples from it, and reverberate clean speech with that subset.
"""
from .acoustics import (
    BAND_CENTERS,
    Air,
    AirCatalog,
    DecayCurve,
    InsufficientDecayRange,
    SubbandT60,
    build_catalog,
    load_catalog,
    octave_filter,
    schroeder_edc,
    subband_t60,
    synth_air,
    t60_from_edc,
)
from .audio import (
    AudioBuffer,
    convolve,
    downmix_mono,
    mix_at_snr,
    read_audio,
    resample,
    write_audio,
)
from .augment import (
    AugmentationManifest,
    SegmentationConfig,
    augment_utterance,
    build_training_set,
    replay_manifest,
    split_on_silence,
)
from .matcher import (
    Assignment,
    DistanceMatrix,
    brute_force_assignment,
    distance_matrix,
    select_subset,
    solve_assignment,
)
from .scene import (
    SceneDistribution,
    SceneObservations,
    TargetSamples,
    catalog_bounds,
    fit_gaussian,
    inflate,
    load_observations,
    sample_gaussian,
    sample_uniform,
)

__version__ = "0.1.0"

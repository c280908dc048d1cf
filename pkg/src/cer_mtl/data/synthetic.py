"""Synthetic dyadic-affect recordings standing in for licensed corpora.

Latent activation/valence/dominance trajectories are Gaussian-smoothed
correlated random walks.  Speech features are a strong nonlinear mixture of
the latents, body features a weaker one that carries almost no valence.
Both get white per-frame noise, so wider temporal windows average more of it
away.  The mixing matrices depend only on ``seed``; trajectories and noise
depend on ``(seed, recording)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .features import FeatureTrack, LabelTrack, compute_deltas, with_deltas
from .io import Recording

# activation, valence, dominance
LATENT_CORR = np.array(
    [
        [1.0, 0.4, 0.7],
        [0.4, 1.0, 0.4],
        [0.7, 0.4, 1.0],
    ]
)
LABEL_SCALE = 0.5


@dataclass(frozen=True)
class Difficulty:
    speech_noise: float
    body_noise: float
    # Gaussian sigma of the latent affect trajectories; 400 frames is ~6.7 s at 60 fps
    smoothing_frames: float = 400.0


DIFFICULTIES = {
    "easy": Difficulty(speech_noise=0.3, body_noise=0.6),
    "medium": Difficulty(speech_noise=10.0, body_noise=12.0),
    "hard": Difficulty(speech_noise=16.0, body_noise=20.0),
}

# latent loadings per modality: (activation, valence, dominance).
# Valence is only weakly visible in either stream, so a model mostly reaches it
# through its correlation with the other two latents.
SPEECH_LOADINGS = np.array([1.0, 0.2, 0.6])
BODY_LOADINGS = np.array([0.6, 0.03, 0.6])


def _mixing(rng: np.random.Generator, n_out: int, loadings: np.ndarray) -> np.ndarray:
    m = rng.standard_normal((n_out, 3))
    m /= np.linalg.norm(m, axis=0, keepdims=True)
    return m * loadings * np.sqrt(n_out / 3.0)


def latent_trajectories(rng: np.random.Generator, frames: int, smoothing: float) -> np.ndarray:
    pad = int(4 * smoothing)
    white = rng.standard_normal((frames + 2 * pad, 3)) @ np.linalg.cholesky(LATENT_CORR).T
    smooth = gaussian_filter1d(white, smoothing, axis=0, mode="nearest")[pad : pad + frames]
    smooth -= smooth.mean(axis=0)
    return smooth / smooth.std(axis=0)


def generate_synthetic(
    seed: int,
    duration_frames: int,
    difficulty: str = "medium",
    recording: int = 0,
    frame_rate_hz: float = 60.0,
    min_frames: int = 400,
) -> tuple[FeatureTrack, FeatureTrack, LabelTrack]:
    """One recording: (speech 39-dim, body 24-dim, labels).

    ``min_frames`` defaults to two feature-image extents of the default framing
    (2 * 20 * 10).
    """
    if difficulty not in DIFFICULTIES:
        raise ValueError(f"difficulty must be one of {sorted(DIFFICULTIES)}")
    if duration_frames < min_frames:
        raise ValueError(f"duration {duration_frames} shorter than minimum {min_frames} frames")
    level = DIFFICULTIES[difficulty]

    design = np.random.default_rng([seed, 0xC0FFEE])
    m_speech = _mixing(design, 13, SPEECH_LOADINGS)
    b_speech = 0.3 * design.standard_normal(13)
    m_body = _mixing(design, 12, BODY_LOADINGS)
    b_body = 0.3 * design.standard_normal(12)

    rng = np.random.default_rng([seed, recording])
    latent = latent_trajectories(rng, duration_frames, level.smoothing_frames)
    speech_static = np.tanh(latent @ m_speech.T + b_speech)
    speech_static += level.speech_noise * rng.standard_normal(speech_static.shape)
    body_static = np.tanh(latent @ m_body.T + b_body)
    body_static += level.body_noise * rng.standard_normal(body_static.shape)

    speech = with_deltas(FeatureTrack("speech", frame_rate_hz, speech_static))
    body = FeatureTrack("body", frame_rate_hz, body_static)
    body = FeatureTrack("body", frame_rate_hz, np.hstack([body.vectors, compute_deltas(body).vectors]))
    labels = LabelTrack(
        {
            "activation": LABEL_SCALE * latent[:, 0],
            "valence": LABEL_SCALE * latent[:, 1],
            "dominance": LABEL_SCALE * latent[:, 2],
        },
        annotator_count=1,
        frame_rate_hz=frame_rate_hz,
    )
    return speech, body, labels


def synthetic_recordings(
    seed: int,
    n_recordings: int = 10,
    frames: int = 6000,
    difficulty: str = "medium",
    per_dyad: int = 2,
    frame_rate_hz: float = 60.0,
) -> list[Recording]:
    """A small corpus of dyadic sessions; recordings of one dyad share both speakers."""
    recs = []
    for i in range(n_recordings):
        dyad = i // per_dyad
        speech, body, labels = generate_synthetic(seed, frames, difficulty, i, frame_rate_hz)
        recs.append(
            Recording(
                f"rec{i:03d}",
                (f"spk{2 * dyad:02d}", f"spk{2 * dyad + 1:02d}"),
                {"speech": speech, "body": body},
                labels,
                frame_rate_hz,
            )
        )
    return recs

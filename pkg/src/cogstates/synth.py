"""Synthetic multichannel recordings with planted, recoverable structure.

Each recording is 1/f (pink) noise on all 214 channels plus a task
signature: a band-limited oscillation, phase-coherent across the planted
channels (with per-channel jitter and offsets), injected only into that
task's planted networks. Session-level
signal-to-noise follows task performance (SNR factor = 0.5 + performance
percentile) when behavior coupling is enabled, which plants the
correct-predictions-have-higher-EBQ effect by construction. Every task,
including rest, carries a signature in a distinct network pair and
frequency band; five networks are never planted and should show ~zero
permutation importance.

Output is exactly the dataio on-disk layout (manifest + binary series +
grouping), so synthetic and real data are interchangeable downstream.
``ground_truth.json`` records the signature map and per-session SNR for
recovery tests.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as dio
from .data import TASKS, ManifestRow, NetworkGrouping


class SynthError(Exception):
    pass


@dataclass
class TaskSignature:
    networks: tuple
    amplitude: float
    freq_band: tuple  # (lo, hi) in cycles per sample

    def __post_init__(self):
        for nid in self.networks:
            if nid not in dio.NETWORK_IDS:
                raise SynthError(f"signature network {nid!r} is not one of N1..N17")
        if self.amplitude < 0:
            raise SynthError(f"signature amplitude must be >= 0, got {self.amplitude}")
        lo, hi = self.freq_band
        if not 0 < lo <= hi < 0.5:
            raise SynthError(f"freq band {self.freq_band} must satisfy 0 < lo <= hi < 0.5")


def default_signatures(amplitude: float = 1.2) -> dict:
    # bands sit in the mid/high range where short conv kernels respond
    # strongly and the 1/f baseline carries little power
    return {
        "PVT": TaskSignature(("N1", "N5"), amplitude, (0.080, 0.100)),
        "VWM": TaskSignature(("N2", "N10"), amplitude, (0.140, 0.160)),
        "DOT": TaskSignature(("N3", "N7"), amplitude, (0.200, 0.220)),
        "MOD": TaskSignature(("N4", "N11"), amplitude, (0.260, 0.280)),
        "DYN": TaskSignature(("N6", "N12"), amplitude, (0.320, 0.340)),
        "REST": TaskSignature(("N13", "N16"), amplitude, (0.380, 0.400)),
    }


@dataclass
class BehaviorModel:
    coupling: bool = True
    ability_mean: float = 0.5
    ability_std: float = 0.25
    score_jitter: float = 0.04


@dataclass
class SynthSpec:
    n_subjects: int = 12
    sessions_per_subject: int = 4
    length_ranges: dict = field(default_factory=lambda: {t: (290, 800) for t in TASKS})
    signatures: dict = field(default_factory=default_signatures)
    noise_exponent: float = 1.0
    behavior: BehaviorModel = field(default_factory=BehaviorModel)
    seed: int = 0

    def __post_init__(self):
        if self.n_subjects < 1 or self.sessions_per_subject < 1:
            raise SynthError("need at least one subject and one session")
        if not 1 <= self.sessions_per_subject <= 8:
            raise SynthError("sessions_per_subject must be in 1..8")
        if set(self.signatures) != set(TASKS):
            raise SynthError(f"signatures must cover exactly {TASKS}")
        for task, (lo, hi) in self.length_ranges.items():
            if task not in TASKS:
                raise SynthError(f"length range for unknown task {task!r}")
            if not 290 <= lo <= hi <= 800:
                raise SynthError(f"{task}: length range ({lo}, {hi}) outside [290, 800]")

    def planted_networks(self) -> set:
        return {nid for sig in self.signatures.values() for nid in sig.networks}


@dataclass
class SynthResult:
    out_dir: Path
    manifest_rows: list
    ground_truth: dict


def _pink_noise(rng: np.random.Generator, t_len: int, n_chan: int,
                alpha: float) -> np.ndarray:
    """Unit-variance 1/f^alpha noise per channel via spectral synthesis."""
    freqs = np.fft.rfftfreq(t_len)
    scale = np.zeros_like(freqs)
    scale[1:] = freqs[1:] ** (-alpha / 2.0)
    spectrum = (rng.standard_normal((freqs.size, n_chan))
                + 1j * rng.standard_normal((freqs.size, n_chan))) * scale[:, None]
    spectrum[0] = 0.0
    if t_len % 2 == 0:
        spectrum[-1] = spectrum[-1].real
    series = np.fft.irfft(spectrum, n=t_len, axis=0)
    return series / series.std(axis=0, keepdims=True)


def _session_scores(ability: float, rng: np.random.Generator,
                    jitter: float) -> dict:
    """Per-task performance, monotone in ability (reaction time inverted)."""
    def eff():
        return float(np.clip(ability + rng.normal(0.0, jitter), 0.0, 1.0))

    return {
        "PVT": 650.0 - 400.0 * eff(),
        "VWM": 0.35 + 0.60 * eff(),
        "DOT": 0.40 + 0.55 * eff(),
        "MOD": 0.30 + 0.65 * eff(),
        "DYN": 0.45 + 0.50 * eff(),
        "REST": None,
    }


def generate(spec: SynthSpec, out_dir) -> SynthResult:
    """Write a complete synthetic dataset (manifest, series, grouping,
    ground truth) under ``out_dir``; byte-identical for identical specs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grouping = dio.make_contiguous_grouping()
    dio.write_grouping(out_dir / "grouping.csv", grouping)

    subjects = [f"sub{i:02d}" for i in range(spec.n_subjects)]
    sessions = list(range(1, spec.sessions_per_subject + 1))

    abilities = {}
    for si, subject in enumerate(subjects):
        for se in sessions:
            rng = np.random.default_rng([spec.seed, 7001, si, se])
            abilities[(subject, se)] = float(np.clip(
                rng.normal(spec.behavior.ability_mean, spec.behavior.ability_std),
                0.0, 1.0))
    keys = list(abilities)
    values = np.array([abilities[k] for k in keys])
    ranks = np.argsort(np.argsort(values, kind="stable"), kind="stable")
    denom = max(len(keys) - 1, 1)
    percentiles = {k: float(ranks[i]) / denom for i, k in enumerate(keys)}
    snr_factors = {k: (0.5 + percentiles[k]) if spec.behavior.coupling else 1.0
                   for k in keys}

    rows: list[ManifestRow] = []
    session_meta = []
    for si, subject in enumerate(subjects):
        for se in sessions:
            ability = abilities[(subject, se)]
            snr = snr_factors[(subject, se)]
            score_rng = np.random.default_rng([spec.seed, 5001, si, se])
            scores = _session_scores(ability, score_rng, spec.behavior.score_jitter)
            session_meta.append({
                "subject_id": subject, "session_index": se, "ability": ability,
                "percentile": percentiles[(subject, se)], "snr_factor": snr,
            })
            for ti, task in enumerate(TASKS):
                rng = np.random.default_rng([spec.seed, 11, si, se, ti])
                lo, hi = spec.length_ranges[task]
                t_len = int(rng.integers(lo, hi + 1))
                series = _pink_noise(rng, t_len, dio.N_CHANNELS, spec.noise_exponent)
                sig = spec.signatures[task]
                channels = [c for nid in sig.networks for c in grouping.channels(nid)]
                if channels and sig.amplitude > 0:
                    f0 = rng.uniform(*sig.freq_band)
                    # coherent within the recording: channels sum constructively
                    phases = rng.uniform(0.0, 2.0 * np.pi) + rng.normal(0.0, 0.3, len(channels))
                    amp = sig.amplitude * snr * rng.uniform(0.8, 1.2, len(channels))
                    offsets = rng.normal(0.0, 0.3, len(channels))
                    t_grid = np.arange(t_len)[:, None]
                    series[:, channels] += (amp * np.sin(2.0 * np.pi * f0 * t_grid + phases)
                                            + offsets)
                name = f"{subject}_s{se}_{task}.bin"
                dio.write_series_bin(out_dir / name, series)
                rows.append(ManifestRow(subject, se, task, name, scores[task]))

    dio.write_manifest(out_dir / "manifest.csv", rows)
    planted = sorted(spec.planted_networks())
    ground_truth = {
        "seed": spec.seed,
        "coupling_enabled": spec.behavior.coupling,
        "noise_exponent": spec.noise_exponent,
        "signatures": {task: {"networks": list(sig.networks),
                              "amplitude": sig.amplitude,
                              "freq_band": list(sig.freq_band)}
                       for task, sig in spec.signatures.items()},
        "planted_networks": planted,
        "unplanted_networks": [n for n in dio.NETWORK_IDS if n not in planted],
        "sessions": session_meta,
    }
    (out_dir / "ground_truth.json").write_text(
        json.dumps(ground_truth, indent=2, sort_keys=True))
    return SynthResult(out_dir, rows, ground_truth)


def bandpower_fraction(series: np.ndarray, band: tuple) -> np.ndarray:
    """Fraction of non-DC spectral power inside ``band``, per channel."""
    spectrum = np.abs(np.fft.rfft(series, axis=0)) ** 2
    freqs = np.fft.rfftfreq(series.shape[0])
    in_band = (freqs >= band[0]) & (freqs <= band[1])
    total = spectrum[1:].sum(axis=0)
    return spectrum[in_band].sum(axis=0) / total

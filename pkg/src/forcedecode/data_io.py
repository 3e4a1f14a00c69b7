"""Trial file format, dataset layout, the synthetic forward-model generator,
and the adapter for pre-converted external recordings.

Disk layout: ``<dataset>/subject_<id>/trial_<id>.json`` manifests next to
their payloads (``.bin`` little-endian float32, channels then force,
column-major; or ``.csv`` with one column per channel plus ``force_n``).
Synthetic trials additionally carry a ``.truth.json`` sidecar with the
ground-truth coupling so tests can check the forward model independently.

The forward model couples grasp force to mu-band desynchronisation on the
coupled channels: the shared 10 Hz task source's amplitude scales as
(1 - alpha * normalized_force), so band power drops as force rises. The
amplitude also carries slow multiplicative noise calibrated so the
power/force correlation magnitude lands near coupling_strength.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field, replace

import numpy as np

from ._parallel import map_ordered
from .errors import ConfigError, DataError
from .features import MU_BAND, band_power, psd
from .selection import PAPER_CHANNELS
from .signal_core import ForceTrace, SignalMatrix, WindowSpec, sliding_windows

__all__ = [
    "Trial",
    "TrialSet",
    "SynthConfig",
    "DEFAULT_MONTAGE",
    "WEIGHT_PLATEAU_N",
    "generate_synthetic",
    "write_trial",
    "read_trial",
    "write_dataset",
    "load_dataset",
    "import_external",
]

FORMAT_VERSION = 1

DEFAULT_MONTAGE = PAPER_CHANNELS + ("Fp2", "F7", "F8", "Fz", "Pz", "O1", "O2")

# Plateau force per weight condition: grip force scales with load plus margin.
# Generator constants, not measurements.
WEIGHT_PLATEAU_N = {165: 1.6, 330: 3.2, 660: 6.5}
FORCE_NORMALIZER_N = max(WEIGHT_PLATEAU_N.values())

# Source amplitudes of the forward model. With 100 ms Hann windows every
# source within ~20 Hz beats against the mu peak inside one wide mainlobe,
# so the low-frequency background levels set the per-window band-power noise
# directly. The high-band noise sits outside that mainlobe: it inflates
# broadband window variance (and the time-domain statistics) while leaving
# the mu-band estimate almost untouched.
TASK_MU_AMP = 2.0
GAIN_DRIFT_SD = 0.2
GAIN_DRIFT_CUTOFF_HZ = 0.4
IDLE_MU_AMP = 1.8
THETA_AMP = 0.06
PINK_AMP = 0.06
HIGHBAND_AMP = 1.2
HIGHBAND_LO_HZ = 30.0
HIGHBAND_HI_HZ = 45.0
BLINK_AMP = 6.0
SPIKE_AMP = 3.0
SPIKE_RATE_HZ = 0.2


@dataclass(frozen=True)
class Trial:
    """One grasp-and-lift recording: signal, aligned force, condition metadata."""

    subject_id: str
    trial_id: int
    weight_g: int
    signal: SignalMatrix
    force: ForceTrace
    truth: dict | None = None


@dataclass(frozen=True)
class TrialSet:
    """An ordered collection of trials spanning one or more subjects."""

    trials: tuple[Trial, ...]

    def __post_init__(self):
        object.__setattr__(self, "trials", tuple(self.trials))
        if not self.trials:
            raise DataError("empty trial set")

    def subjects(self) -> list[str]:
        seen = []
        for t in self.trials:
            if t.subject_id not in seen:
                seen.append(t.subject_id)
        return seen

    def by_subject(self, subject_id: str) -> list[Trial]:
        out = [t for t in self.trials if t.subject_id == subject_id]
        if not out:
            raise DataError(f"no trials for subject {subject_id!r}")
        return out

    def __len__(self) -> int:
        return len(self.trials)


# ---------------------------------------------------------------------------
# Synthetic forward model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    n_subjects: int = 3
    trials_per_subject: int = 4
    fs: float = 200.0
    duration_s: float = 12.0
    channel_labels: tuple[str, ...] = DEFAULT_MONTAGE
    coupled_channels: tuple[str, ...] = ("C3", "CP1", "CP2", "Cz", "C4", "P3")
    coupling_strength: float = 0.9      # target |corr(mu power, force)|
    noise_floor: float = 0.1
    mains_hz: float = 50.0
    mains_amplitude: float = 1.2
    seed: int = 0
    weights_g: tuple[int, ...] = (165, 330, 660)
    window: WindowSpec = WindowSpec()

    def __post_init__(self):
        if self.n_subjects < 1 or self.trials_per_subject < 1:
            raise ConfigError("need at least one subject and one trial")
        if not (0.0 <= self.coupling_strength <= 1.0):
            raise ConfigError(
                f"coupling_strength must lie in [0, 1], got {self.coupling_strength}"
            )
        if not self.coupled_channels:
            raise ConfigError("coupled_channels must be non-empty")
        missing = [c for c in self.coupled_channels if c not in self.channel_labels]
        if missing:
            raise ConfigError(f"coupled channels {missing} not in the montage")
        unknown = [w for w in self.weights_g if w not in WEIGHT_PLATEAU_N]
        if unknown:
            raise ConfigError(
                f"unknown weight conditions {unknown}; known: {sorted(WEIGHT_PLATEAU_N)}"
            )
        if self.duration_s < 6.0:
            raise ConfigError("trials shorter than 6 s leave no room for the force profile")


def _smoothstep(u: np.ndarray) -> np.ndarray:
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def _slow_noise(rng: np.random.Generator, n: int, fs: float, cutoff_hz: float = 1.0) -> np.ndarray:
    """Unit-variance noise with power below cutoff_hz (linear interpolation grid)."""
    knots = max(int(np.ceil(n / fs * cutoff_hz * 2)) + 2, 4)
    coarse = rng.standard_normal(knots)
    x = np.interp(np.linspace(0, knots - 1, n), np.arange(knots), coarse)
    sd = x.std()
    return x / sd if sd > 0 else x


def _pink_noise(rng: np.random.Generator, n: int) -> np.ndarray:
    """1/f-shaped unit-variance noise via spectral shaping."""
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    f = np.fft.rfftfreq(n)
    f[0] = f[1]
    spec /= np.sqrt(f)
    x = np.fft.irfft(spec, n)
    return x / x.std()


def _band_noise(rng: np.random.Generator, n: int, fs: float, lo_hz: float, hi_hz: float) -> np.ndarray:
    """Unit-variance noise band-limited to [lo_hz, hi_hz] via spectral masking."""
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    f = np.fft.rfftfreq(n, 1.0 / fs)
    spec[(f < lo_hz) | (f > hi_hz)] = 0.0
    x = np.fft.irfft(spec, n)
    sd = x.std()
    return x / sd if sd > 0 else x


def _force_profile(rng: np.random.Generator, n: int, fs: float, plateau_n: float):
    """Rest -> ramp -> plateau -> release -> rest, with small sensor noise."""
    t = np.arange(n) / fs
    dur = n / fs
    ramp_start = 2.0 + rng.uniform(-0.2, 0.2)
    ramp_len = 1.2 + rng.uniform(-0.2, 0.2)
    release_start = dur - 2.5 + rng.uniform(-0.2, 0.2)
    release_len = 1.0

    profile = _smoothstep((t - ramp_start) / ramp_len) - _smoothstep(
        (t - release_start) / release_len
    )
    wobble = 1.0 + 0.04 * _slow_noise(rng, n, fs, cutoff_hz=0.8)
    clean = plateau_n * profile * wobble
    noisy = clean + 0.03 * rng.standard_normal(n)
    return clean, noisy


def _am_noise_sigma(rho: float) -> float:
    # Multiplicative amplitude noise sized so corr(mu power, force) ~ -rho.
    if rho >= 1.0:
        return 0.0
    if rho <= 0.0:
        return 0.2
    return min(0.8, 0.07 * np.sqrt(1.0 / rho**2 - 1.0) / np.sqrt(1.0 / 0.9**2 - 1.0))


def _f32(x: np.ndarray) -> np.ndarray:
    # Quantize to float32 precision so binary payload round-trips are bit-exact.
    return x.astype(np.float32).astype(np.float64)


@dataclass(frozen=True)
class _SubjectParams:
    """Per-subject forward-model parameters (the 'head geometry'): drawn once
    so mixing weights and amplitude levels stay consistent across trials."""

    task_w: dict
    theta_w: np.ndarray
    mains_w: np.ndarray
    idle_mu_amp: np.ndarray
    pink_amp: float
    highband_amp: np.ndarray
    spike_amp: np.ndarray


def _subject_params(cfg: SynthConfig, subject_idx: int) -> _SubjectParams:
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=cfg.seed, spawn_key=(subject_idx,))
    )
    n_ch = len(cfg.channel_labels)
    return _SubjectParams(
        task_w={ch: TASK_MU_AMP * rng.uniform(0.8, 1.2) for ch in cfg.coupled_channels},
        theta_w=THETA_AMP * rng.uniform(0.6, 1.4, size=n_ch),
        mains_w=rng.uniform(0.5, 1.5, size=n_ch),
        idle_mu_amp=IDLE_MU_AMP * rng.uniform(0.8, 1.2, size=n_ch),
        pink_amp=PINK_AMP * rng.uniform(0.85, 1.15),
        highband_amp=HIGHBAND_AMP * rng.uniform(0.7, 1.3, size=n_ch),
        spike_amp=SPIKE_AMP * rng.uniform(0.8, 1.2, size=n_ch),
    )


def _generate_trial(cfg: SynthConfig, params: _SubjectParams,
                    subject_idx: int, trial_idx: int) -> Trial:
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=cfg.seed, spawn_key=(subject_idx, trial_idx, 1))
    )
    fs = cfg.fs
    n = int(round(cfg.duration_s * fs))
    t = np.arange(n) / fs
    labels = cfg.channel_labels
    n_ch = len(labels)

    weight = cfg.weights_g[trial_idx % len(cfg.weights_g)]
    plateau = WEIGHT_PLATEAU_N[weight]
    force_clean, force_noisy = _force_profile(rng, n, fs, plateau)
    f_norm = force_clean / FORCE_NORMALIZER_N

    rho = cfg.coupling_strength
    alpha = 0.5 if rho > 0 else 0.0
    sigma_am = _am_noise_sigma(rho)

    # Shared 10 Hz task source: amplitude drops linearly with normalized
    # force (desynchronisation), so band power is a gentle quadratic in force
    # and the inverse map stays learnable across weight conditions.
    am = np.clip(1.0 + sigma_am * _slow_noise(rng, n, fs, cutoff_hz=0.8), 0.1, None)
    task_env = (1.0 - alpha * f_norm) * am
    task_src = task_env * np.sin(2 * np.pi * 10.0 * t + rng.uniform(0, 2 * np.pi))
    task_w = params.task_w

    # One common theta oscillator (uncoupled), diffusely mixed.
    theta_am = 1.0 + 0.2 * _slow_noise(rng, n, fs, cutoff_hz=0.5)
    theta_src = theta_am * np.sin(2 * np.pi * 6.0 * t + rng.uniform(0, 2 * np.pi))

    # Common-mode mains and a frontal blink source for the cleaning stage.
    mains_src = np.sin(2 * np.pi * cfg.mains_hz * t + rng.uniform(0, 2 * np.pi))

    blink_src = np.zeros(n)
    rest_mask = force_clean < 0.1
    rest_times = t[rest_mask]
    n_blinks = rng.poisson(max(rest_times.size / fs, 0.0) * 0.4)
    for _ in range(max(n_blinks, 1)):
        bt = rng.choice(rest_times)
        blink_src += np.exp(-0.5 * ((t - bt) / 0.08) ** 2)
    blink_w = np.array(
        [
            {"Fp1": 1.0, "Fp2": 0.6, "F7": 0.3, "F8": 0.3}.get(ch, 0.02)
            for ch in labels
        ]
    )

    data = np.empty((n_ch, n))
    for ci, ch in enumerate(labels):
        x = params.pink_amp * _pink_noise(rng, n)
        x += cfg.noise_floor * rng.standard_normal(n)
        x += params.theta_w[ci] * theta_src
        x += params.highband_amp[ci] * _band_noise(
            rng, n, fs, HIGHBAND_LO_HZ, HIGHBAND_HI_HZ
        )
        if ch in task_w:
            x += task_w[ch] * task_src
        else:
            # idle mu rhythm, uncoupled to force
            bg_am = 1.0 + 0.2 * _slow_noise(rng, n, fs, cutoff_hz=0.5)
            x += params.idle_mu_amp[ci] * bg_am * np.sin(
                2 * np.pi * 10.0 * t + rng.uniform(0, 2 * np.pi)
            )
        x += cfg.mains_amplitude * params.mains_w[ci] * mains_src
        x += BLINK_AMP * blink_w[ci] * blink_src
        # Sparse broadband transients: they dominate the time-domain window
        # statistics they land in but spread thinly over the spectrum.
        n_spikes = rng.poisson(cfg.duration_s * SPIKE_RATE_HZ)
        for _ in range(n_spikes):
            si_ = rng.integers(1, n - 1)
            a_ = params.spike_amp[ci] * rng.uniform(0.7, 1.3) * rng.choice((-1.0, 1.0))
            x[si_] += a_
            x[si_ - 1] += 0.5 * a_
            x[si_ + 1] += 0.5 * a_
        # Slow per-channel gain drift (electrode impedance wander).
        gain = 1.0 + GAIN_DRIFT_SD * _slow_noise(rng, n, fs, cutoff_hz=GAIN_DRIFT_CUTOFF_HZ)
        data[ci] = x * np.clip(gain, 0.2, None)

    signal = SignalMatrix(_f32(data), fs, labels)
    force = ForceTrace(_f32(force_noisy), fs)

    # Ground-truth sidecar: realized per-window mu power of the task source.
    windows = sliding_windows(n, fs, cfg.window)
    nfft = max(windows[0][1] - windows[0][0], int(np.ceil(fs / 2.0)))
    mu_power = [
        band_power(psd(task_src[a:b], fs, nfft=nfft), MU_BAND) for a, b in windows
    ]
    window_force = [float(force_clean[a:b].mean()) for a, b in windows]
    truth = {
        "coupled_channels": list(cfg.coupled_channels),
        "alpha": alpha,
        "rho_target": rho,
        "weight_g": int(weight),
        "plateau_n": plateau,
        "task_mixing": {ch: float(w) for ch, w in task_w.items()},
        "window_mu_power": [float(p) for p in mu_power],
        "window_force": window_force,
    }
    return Trial(
        subject_id=f"s{subject_idx:02d}",
        trial_id=trial_idx,
        weight_g=int(weight),
        signal=signal,
        force=force,
        truth=truth,
    )


def generate_synthetic(cfg: SynthConfig) -> TrialSet:
    """Seed-deterministic synthetic dataset with a known force->mu-power coupling."""
    params = {si: _subject_params(cfg, si) for si in range(cfg.n_subjects)}
    jobs = [
        (si, ti)
        for si in range(cfg.n_subjects)
        for ti in range(cfg.trials_per_subject)
    ]
    trials = map_ordered(
        lambda st: _generate_trial(cfg, params[st[0]], st[0], st[1]), jobs
    )
    return TrialSet(tuple(trials))


# ---------------------------------------------------------------------------
# Trial file IO
# ---------------------------------------------------------------------------

def _atomic_write(path: str, payload: bytes) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp_")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, indent=1) + "\n").encode("utf-8")


def write_trial(trial: Trial, directory: str, payload_kind: str = "bin") -> str:
    """Write manifest + payload (+ truth sidecar); returns the manifest path."""
    if payload_kind not in ("bin", "csv"):
        raise ConfigError(f"payload kind must be 'bin' or 'csv', got {payload_kind!r}")
    os.makedirs(directory, exist_ok=True)
    stem = f"trial_{trial.trial_id:03d}"
    payload_name = f"{stem}.{payload_kind}"
    sig, force = trial.signal, trial.force
    if force.n_samples != sig.n_samples:
        raise DataError(
            f"force ({force.n_samples}) and signal ({sig.n_samples}) sample counts differ"
        )

    if payload_kind == "bin":
        cols = [sig.data[c].astype("<f4").tobytes() for c in range(sig.n_channels)]
        cols.append(force.values.astype("<f4").tobytes())
        _atomic_write(os.path.join(directory, payload_name), b"".join(cols))
    else:
        header = ",".join(list(sig.channel_labels) + ["force_n"])
        mat = np.vstack([sig.data, force.values[None, :]]).T
        rows = [header] + [
            ",".join(f"{v:.9g}" for v in row) for row in mat
        ]
        _atomic_write(
            os.path.join(directory, payload_name), ("\n".join(rows) + "\n").encode()
        )

    manifest = {
        "format_version": FORMAT_VERSION,
        "subject_id": trial.subject_id,
        "trial_id": trial.trial_id,
        "weight_g": trial.weight_g,
        "fs": sig.fs,
        "t0": sig.t0,
        "channel_labels": list(sig.channel_labels),
        "n_samples": sig.n_samples,
        "payload": payload_name,
        "payload_kind": payload_kind,
    }
    if trial.truth is not None:
        truth_name = f"{stem}.truth.json"
        _atomic_write(os.path.join(directory, truth_name), _json_bytes(trial.truth))
        manifest["truth"] = truth_name
    manifest_path = os.path.join(directory, f"{stem}.json")
    _atomic_write(manifest_path, _json_bytes(manifest))
    return manifest_path


def read_trial(manifest_path: str) -> Trial:
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise DataError(
            f"unsupported trial format version {version!r} (expected {FORMAT_VERSION}) "
            f"in {manifest_path}"
        )
    directory = os.path.dirname(manifest_path)
    labels = tuple(manifest["channel_labels"])
    n = int(manifest["n_samples"])
    fs = float(manifest["fs"])
    kind = manifest["payload_kind"]
    payload_path = os.path.join(directory, manifest["payload"])

    if kind == "bin":
        raw = np.fromfile(payload_path, dtype="<f4")
        expected = (len(labels) + 1) * n
        if raw.size != expected:
            raise DataError(
                f"truncated payload {payload_path}: expected {expected} float32 values "
                f"({len(labels)} channels + force, {n} samples), found {raw.size}"
            )
        mat = raw.reshape(len(labels) + 1, n).astype(np.float64)
    elif kind == "csv":
        with open(payload_path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
        expect_header = list(labels) + ["force_n"]
        if header != expect_header:
            raise DataError(
                f"CSV header mismatch in {payload_path}: expected {expect_header}, "
                f"found {header}"
            )
        body = np.loadtxt(payload_path, delimiter=",", skiprows=1, ndmin=2)
        if body.shape != (n, len(labels) + 1):
            raise DataError(
                f"truncated payload {payload_path}: expected {n} rows x "
                f"{len(labels) + 1} columns, found {body.shape[0]} x {body.shape[1]}"
            )
        mat = body.T
    else:
        raise DataError(f"unknown payload kind {kind!r} in {manifest_path}")

    truth = None
    if "truth" in manifest:
        with open(os.path.join(directory, manifest["truth"]), "r", encoding="utf-8") as fh:
            truth = json.load(fh)
    return Trial(
        subject_id=manifest["subject_id"],
        trial_id=int(manifest["trial_id"]),
        weight_g=int(manifest["weight_g"]),
        signal=SignalMatrix(mat[:-1], fs, labels, t0=float(manifest.get("t0", 0.0))),
        force=ForceTrace(mat[-1], fs),
        truth=truth,
    )


def write_dataset(dataset: TrialSet, out_dir: str, payload_kind: str = "bin",
                  config_echo: dict | None = None) -> None:
    """Write all trials under <out_dir>/subject_<id>/ plus a dataset manifest."""
    os.makedirs(out_dir, exist_ok=True)
    for trial in dataset.trials:
        write_trial(trial, os.path.join(out_dir, f"subject_{trial.subject_id}"), payload_kind)
    manifest = {
        "format_version": FORMAT_VERSION,
        "subjects": dataset.subjects(),
        "n_trials": len(dataset),
        "payload_kind": payload_kind,
    }
    if config_echo is not None:
        manifest["config"] = config_echo
    _atomic_write(os.path.join(out_dir, "dataset.json"), _json_bytes(manifest))


def load_dataset(directory: str) -> TrialSet:
    """Load every subject_*/trial_*.json under the directory, sorted."""
    if not os.path.isdir(directory):
        raise DataError(f"dataset directory {directory!r} does not exist")
    trials = []
    for sub in sorted(os.listdir(directory)):
        sub_dir = os.path.join(directory, sub)
        if not (sub.startswith("subject_") and os.path.isdir(sub_dir)):
            continue
        for name in sorted(os.listdir(sub_dir)):
            if name.startswith("trial_") and name.endswith(".json") and ".truth." not in name:
                trials.append(read_trial(os.path.join(sub_dir, name)))
    if not trials:
        raise DataError(f"no trials found under {directory!r}")
    return TrialSet(tuple(trials))


# ---------------------------------------------------------------------------
# External adapter
# ---------------------------------------------------------------------------

def import_external(directory: str, mapping: dict | str) -> TrialSet:
    """Convert a documented CSV layout into standard trials.

    The mapping manifest names the channel columns (label -> CSV column, in
    montage order) and exactly two finger-force columns, which are summed
    into the total grasp force. Example::

        {
          "fs": 500.0,
          "channel_columns": {"C3": "eeg_c3", "C4": "eeg_c4"},
          "force_columns": ["force_finger1", "force_finger2"],
          "trials": [
            {"file": "rec01.csv", "subject_id": "p1", "trial_id": 0, "weight_g": 330}
          ]
        }
    """
    if isinstance(mapping, str):
        with open(mapping, "r", encoding="utf-8") as fh:
            mapping = json.load(fh)
    for key in ("fs", "channel_columns", "force_columns", "trials"):
        if key not in mapping:
            raise ConfigError(f"mapping manifest is missing {key!r}")
    force_cols = list(mapping["force_columns"])
    if len(force_cols) != 2:
        raise ConfigError(
            f"expected exactly two finger-force columns, got {force_cols}"
        )
    channel_map = dict(mapping["channel_columns"])
    fs = float(mapping["fs"])

    trials = []
    for entry in mapping["trials"]:
        path = os.path.join(directory, entry["file"])
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
        col_index = {name: i for i, name in enumerate(header)}
        missing = [c for c in list(channel_map.values()) + force_cols if c not in col_index]
        if missing:
            raise DataError(
                f"{path}: missing mapped columns {missing}; available: {header}"
            )
        body = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        data = np.vstack([body[:, col_index[c]] for c in channel_map.values()])
        force = (
            body[:, col_index[force_cols[0]]] + body[:, col_index[force_cols[1]]]
        )
        trials.append(
            Trial(
                subject_id=str(entry["subject_id"]),
                trial_id=int(entry["trial_id"]),
                weight_g=int(entry.get("weight_g", 0)),
                signal=SignalMatrix(data, fs, tuple(channel_map.keys())),
                force=ForceTrace(force, fs),
            )
        )
    return TrialSet(tuple(trials))

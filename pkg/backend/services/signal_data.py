"""
IQ capture containers, power normalization, train/val splitting, batching
and the synthetic impaired-transmitter generator.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import DegenerateInputError, DimensionError, InputError, ParameterError
from services.tensor_core import Rng, rng_permutation

logger = logging.getLogger(__name__)

SIGNAL_LEN = 256
PROVENANCE_INGESTED = "ingested"
PROVENANCE_SYNTHETIC = "synthetic"
PREAMBLE = "preamble"
QPSK = "qpsk"
CARRIER = "carrier"
WAVEFORMS = (PREAMBLE, QPSK, CARRIER)


@dataclass(frozen=True)
class SignalRecord:
    """One capture: iq is float32 [256, 2] (I, Q columns); label is the transmitter id."""
    iq: np.ndarray
    label: int

    def __post_init__(self):
        if self.iq.shape != (SIGNAL_LEN, 2):
            raise DimensionError(f"Capture must be [{SIGNAL_LEN}, 2], got {self.iq.shape}")

    def as_complex(self) -> np.ndarray:
        return self.iq[:, 0].astype(np.float64) + 1j * self.iq[:, 1].astype(np.float64)


@dataclass
class Dataset:
    """
    Ordered captures held as one [N, 256, 2] float32 block plus labels.

    Treated as immutable once built: every transformation returns a new Dataset.
    """
    iq: np.ndarray
    labels: np.ndarray
    num_classes: int
    class_names: List[str] = field(default_factory=list)
    provenance: str = PROVENANCE_INGESTED
    seed: Optional[int] = None

    def __post_init__(self):
        self.iq = np.ascontiguousarray(self.iq, dtype=np.float32).reshape(-1, SIGNAL_LEN, 2)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if len(self.iq) != len(self.labels):
            raise DimensionError(f"{len(self.iq)} captures but {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise InputError(f"Labels must lie in [0, {self.num_classes})")
        if not self.class_names:
            self.class_names = [f"tx{i:02d}" for i in range(self.num_classes)]
        if len(self.class_names) != self.num_classes:
            raise InputError(f"{len(self.class_names)} class names for {self.num_classes} classes")

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> SignalRecord:
        return SignalRecord(self.iq[i], int(self.labels[i]))

    @property
    def records(self) -> List[SignalRecord]:
        return [self[i] for i in range(len(self))]

    @classmethod
    def from_records(cls, records: Sequence[SignalRecord], num_classes: int, **kwargs) -> "Dataset":
        iq = np.stack([r.iq for r in records]) if records else np.zeros((0, SIGNAL_LEN, 2), np.float32)
        return cls(iq, [r.label for r in records], num_classes, **kwargs)

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return replace(self, iq=self.iq[idx], labels=self.labels[idx], class_names=list(self.class_names))

    def with_iq(self, iq: np.ndarray) -> "Dataset":
        return replace(self, iq=iq, labels=self.labels.copy(), class_names=list(self.class_names))

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def covers_all_classes(self) -> bool:
        return bool(np.all(self.class_counts() > 0))

    def as_model_input(self) -> np.ndarray:
        """[N, 256, 2, 1] view expected by the models."""
        return self.iq[..., None]


# --- Preprocessing ---

def normalize_power(record: SignalRecord) -> SignalRecord:
    """Scale a capture to unit RMS, sqrt(mean(I^2 + Q^2)) == 1."""
    return SignalRecord(_unit_rms(record.iq[None])[0], record.label)


def _unit_rms(iq: np.ndarray) -> np.ndarray:
    power = np.mean(np.sum(iq.astype(np.float64) ** 2, axis=-1), axis=-1)
    if np.any(power <= 0.0):
        bad = int(np.argmax(power <= 0.0))
        raise DegenerateInputError(f"Capture {bad} is identically zero and cannot be power-normalized")
    return (iq / np.sqrt(power)[:, None, None]).astype(np.float32)


def normalize_dataset(dataset: Dataset) -> Dataset:
    if len(dataset) == 0:
        return dataset
    return dataset.with_iq(_unit_rms(dataset.iq))


# --- Split / batching ---

def split(dataset: Dataset, train_fraction: float = 0.8, seed: int = 0) -> Tuple[Dataset, Dataset]:
    """Seeded shuffle, then the first floor(N * train_fraction) records train."""
    if not 0.0 < train_fraction < 1.0:
        raise ParameterError(f"train_fraction must be in (0, 1), got {train_fraction}")
    if len(dataset) == 0:
        raise InputError("Cannot split an empty dataset")
    order = rng_permutation(Rng(seed, stream=0x5917), len(dataset))
    n_train = int(np.floor(len(dataset) * train_fraction))
    return dataset.subset(order[:n_train]), dataset.subset(order[n_train:])


class BatchStream:
    """
    Re-iterable batch source; each full iteration is one epoch.

    With shuffling on, epoch e uses the permutation drawn from stream (seed, e),
    so reruns reproduce every epoch. Single consumer.
    """

    def __init__(self, dataset: Dataset, batch_size: int = 32, shuffle_each_epoch: bool = True, seed: int = 0):
        if batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {batch_size}")
        self.dataset = dataset
        self.batch_size = batch_size
        self.shuffle_each_epoch = shuffle_each_epoch
        self.rng = Rng(seed, stream=0xBA7C)
        self.epoch = 0

    def __len__(self) -> int:
        return -(-len(self.dataset) // self.batch_size)

    def order(self, epoch: int) -> List[int]:
        if not self.shuffle_each_epoch:
            return list(range(len(self.dataset)))
        return rng_permutation(self.rng.child(epoch), len(self.dataset))

    def __iter__(self) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        order = np.asarray(self.order(self.epoch), dtype=np.int64)
        self.epoch += 1
        x = self.dataset.as_model_input()
        for start in range(0, len(order), self.batch_size):
            idx = order[start:start + self.batch_size]
            yield x[idx], self.dataset.labels[idx]


def batches(dataset: Dataset, batch_size: int = 32, shuffle_each_epoch: bool = True, seed: int = 0) -> BatchStream:
    return BatchStream(dataset, batch_size, shuffle_each_epoch, seed)


# --- 합성 데이터 (impaired transmitters) ---

@dataclass(frozen=True)
class ImpairmentProfile:
    gain: float = 1.0
    phase: float = 0.0
    dc_offset: complex = 0j
    cfo: float = 0.0
    phase_noise_std: float = 0.0
    nonlinearity: float = 0.0

    def __post_init__(self):
        if self.gain <= 0.0:
            raise ParameterError(f"IQ gain must be > 0, got {self.gain}")
        if abs(self.cfo) >= 0.5:
            raise ParameterError(f"|CFO| must be < 0.5 cycles/sample, got {self.cfo}")
        if self.phase_noise_std < 0.0:
            raise ParameterError("Phase-noise std must be >= 0")


@dataclass(frozen=True)
class ProfileRanges:
    gain_range: Tuple[float, float] = (0.9, 1.1)
    phase_range: Tuple[float, float] = (-0.1, 0.1)
    dc_max: float = 0.05
    cfo_range: Tuple[float, float] = (-0.02, 0.02)
    phase_noise_max: float = 0.01
    nonlinearity_range: Tuple[float, float] = (-0.05, 0.05)

    def __post_init__(self):
        for name in ("gain_range", "phase_range", "cfo_range", "nonlinearity_range"):
            low, high = getattr(self, name)
            if low > high:
                raise ParameterError(f"{name} is empty: ({low}, {high})")
        if self.gain_range[0] <= 0.0:
            raise ParameterError("gain_range must be strictly positive")
        if max(abs(self.cfo_range[0]), abs(self.cfo_range[1])) >= 0.5:
            raise ParameterError("cfo_range must stay inside (-0.5, 0.5) cycles/sample")
        if self.dc_max < 0.0 or self.phase_noise_max < 0.0:
            raise ParameterError("dc_max and phase_noise_max must be >= 0")

    @classmethod
    def from_config(cls, config: Dict) -> "ProfileRanges":
        keys = ("gain_range", "phase_range", "cfo_range", "nonlinearity_range")
        kwargs = {k: tuple(config[k]) for k in keys if k in config}
        for k in ("dc_max", "phase_noise_max"):
            if k in config:
                kwargs[k] = float(config[k])
        return cls(**kwargs)

    def draw(self, rng: Rng) -> ImpairmentProfile:
        dc_mag = rng.uniform(0.0, self.dc_max)
        dc_angle = rng.uniform(-np.pi, np.pi)
        return ImpairmentProfile(
            gain=float(rng.uniform(*self.gain_range)),
            phase=float(rng.uniform(*self.phase_range)),
            dc_offset=complex(dc_mag * np.exp(1j * dc_angle)),
            cfo=float(rng.uniform(*self.cfo_range)),
            phase_noise_std=float(rng.uniform(0.0, self.phase_noise_max)),
            nonlinearity=float(rng.uniform(*self.nonlinearity_range)),
        )


def qpsk_waveform(rng: Rng, length: int = SIGNAL_LEN, oversample: int = 2) -> np.ndarray:
    """Random unit-power QPSK symbols held for `oversample` samples each."""
    n_symbols = -(-length // oversample)
    bits = rng.integers(0, 2, size=(n_symbols, 2))
    symbols = ((2 * bits[:, 0] - 1) + 1j * (2 * bits[:, 1] - 1)) / np.sqrt(2.0)
    return np.repeat(symbols, oversample)[:length]


def apply_impairments(x: np.ndarray, profile: ImpairmentProfile, rng: Rng, snr_db: Optional[float] = 20.0) -> np.ndarray:
    """
    Transmit chain: CFO with phase noise on the baseband stream, then the I/Q
    modulator (IQ imbalance, DC offset), the cubic PA term and AWGN.

    Modulator and PA impairments come after the rotation and stay fixed in
    the capture frame.
    """
    n = np.arange(len(x))
    if profile.phase_noise_std > 0.0:
        jitter = np.cumsum(rng.normal(0.0, profile.phase_noise_std, size=len(x)))
    else:
        jitter = np.zeros(len(x))
    x = x * np.exp(1j * (2.0 * np.pi * profile.cfo * n + jitter))
    i, q = x.real, x.imag
    i_out = profile.gain * i
    q_out = q * np.cos(profile.phase) + i * np.sin(profile.phase)
    x = i_out + 1j * q_out + profile.dc_offset
    x = x + profile.nonlinearity * x * np.abs(x) ** 2
    if snr_db is not None:
        signal_power = np.mean(np.abs(x) ** 2)
        noise_power = signal_power / (10.0 ** (snr_db / 10.0))
        noise = rng.normal(0.0, np.sqrt(noise_power / 2.0), size=(len(x), 2))
        x = x + noise[:, 0] + 1j * noise[:, 1]
    return x


def synthesize_dataset(
    num_devices: int,
    signals_per_device: int,
    seed: int,
    profile_ranges: Optional[ProfileRanges] = None,
    snr_db: Optional[float] = 20.0,
    waveform: str = PREAMBLE,
    profiles: Optional[Sequence[ImpairmentProfile]] = None,
) -> Dataset:
    """
    Device d keeps one ImpairmentProfile for all of its captures; records are
    ordered device by device. `profiles` pins the per-device profiles instead
    of drawing them from `profile_ranges`.

    Waveforms: "preamble" sends one QPSK training sequence (drawn once from
    the seed) in every capture, "qpsk" draws fresh symbols per capture and
    "carrier" is a constant tone.
    """
    if num_devices < 2:
        raise ParameterError(f"num_devices must be >= 2, got {num_devices}")
    if signals_per_device < 1:
        raise ParameterError(f"signals_per_device must be >= 1, got {signals_per_device}")
    if waveform not in WAVEFORMS:
        raise ParameterError(f"Unknown waveform '{waveform}', expected one of {WAVEFORMS}")
    if profiles is not None and len(profiles) != num_devices:
        raise ParameterError(f"{len(profiles)} profiles given for {num_devices} devices")
    ranges = profile_ranges or ProfileRanges()
    root = Rng(seed, stream=0x5A7)
    preamble = qpsk_waveform(Rng(seed, stream=0x9EA))

    iq = np.empty((num_devices * signals_per_device, SIGNAL_LEN, 2), dtype=np.float32)
    labels = np.repeat(np.arange(num_devices), signals_per_device)
    for device in range(num_devices):
        device_rng = root.child(device)
        profile = profiles[device] if profiles is not None else ranges.draw(device_rng)
        logger.debug(f"Device {device}: {profile}")
        for k in range(signals_per_device):
            signal_rng = device_rng.child(k)
            if waveform == CARRIER:
                clean = np.ones(SIGNAL_LEN, dtype=np.complex128)
            elif waveform == QPSK:
                clean = qpsk_waveform(signal_rng)
            else:
                clean = preamble
            out = apply_impairments(clean, profile, signal_rng, snr_db)[:SIGNAL_LEN]
            row = device * signals_per_device + k
            iq[row, :, 0] = out.real
            iq[row, :, 1] = out.imag

    logger.info(f"Synthesized {len(labels)} {waveform} captures from {num_devices} devices (seed={seed})")
    return Dataset(iq, labels, num_devices, provenance=PROVENANCE_SYNTHETIC, seed=seed)

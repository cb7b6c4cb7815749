"""Band-limited Gaussian generator noise and bit-exchange start points.

Records are synthesized in the frequency domain, stored one per file, and
scanned for zero crossings that the slope-matching defense can start from.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidParameterError, InvalidSpecError, PairingExhaustedError

log = logging.getLogger(__name__)

ROLES = ("HA", "LA", "HB", "LB")

MAGIC = b"KLJNNOIS"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sQ")
_SPEC_FIELDS = struct.Struct("<dddQQ8s")
DATA_OFFSET = _HEADER.size + _SPEC_FIELDS.size

DEFAULT_START_THRESHOLD = 1e-3
DEFAULT_SLOPE_TOLERANCE = 0.01
DEFAULT_ATTEMPT_BUDGET = 1000


@dataclass(frozen=True)
class NoiseSpec:
    sample_rate: float
    bandwidth: float
    target_rms: float
    length: int

    def validate(self) -> None:
        if not (self.sample_rate > 0 and self.bandwidth > 0):
            raise InvalidSpecError("sample_rate and bandwidth must be positive")
        if not self.bandwidth < self.sample_rate / 2:
            raise InvalidSpecError(
                f"bandwidth {self.bandwidth:g} Hz is not below Nyquist {self.sample_rate / 2:g} Hz"
            )
        if not self.target_rms > 0:
            raise InvalidSpecError(f"target_rms must be positive, got {self.target_rms!r}")
        n = self.length
        if int(n) != n or n < 2**16 or (int(n) & (int(n) - 1)):
            raise InvalidSpecError(f"length must be a power of two >= 2**16, got {n!r}")

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    def in_band_bins(self) -> int:
        """Number of positive-frequency DFT bins with 0 < f <= bandwidth."""
        return int(math.floor(self.bandwidth * self.length / self.sample_rate + 1e-9))


@dataclass(frozen=True, eq=False)
class NoiseRecord:
    samples: np.ndarray
    spec: NoiseSpec
    seed: int
    role: str = ""

    def __len__(self) -> int:
        return len(self.samples)

    def rms(self) -> float:
        return float(np.sqrt(np.mean(np.square(self.samples))))


@dataclass(frozen=True)
class StartCandidate:
    record_index: int
    start_index: int
    slope: float

    @property
    def slope_sign(self) -> int:
        return 1 if self.slope > 0 else -1


@dataclass(frozen=True)
class DefensePairing:
    alice_candidate: StartCandidate
    bob_candidate: StartCandidate
    achieved_ratio: float
    target_ratio: float

    def check(self, slope_tolerance: float) -> bool:
        """Post-hoc ratio and sign invariants, recomputed from the stored candidates."""
        a, b = self.alice_candidate.slope, self.bob_candidate.slope
        ratio = a / b
        return (
            ratio > 0
            and ratio == self.achieved_ratio
            and abs(ratio - self.target_ratio) / self.target_ratio <= slope_tolerance
        )


def synthesize(spec: NoiseSpec, seed: int) -> NoiseRecord:
    """Gaussian noise with a flat spectrum up to `spec.bandwidth` and nothing above.

    Every bin with 0 < f <= bandwidth gets an independent complex Gaussian
    coefficient; DC, the out-of-band bins and Nyquist are zero. Scaling uses
    the expected power of those coefficients, so the record RMS fluctuates
    around the target with about 2 * in_band_bins degrees of freedom.
    """
    spec.validate()
    n = int(spec.length)
    k = spec.in_band_bins()
    if k < 1:
        raise InvalidSpecError("bandwidth is below the frequency resolution of the record")
    rng = np.random.default_rng(seed)
    coeffs = np.zeros(n // 2 + 1, dtype=complex)
    coeffs[1 : k + 1] = rng.standard_normal(k) + 1j * rng.standard_normal(k)
    samples = np.fft.irfft(coeffs, n=n)
    # each in-band bin contributes 4/n^2 to E[x^2] when E|c|^2 = 2
    samples *= spec.target_rms * n / (2.0 * math.sqrt(k))
    return NoiseRecord(samples=samples, spec=spec, seed=int(seed))


def target_slope_ratio(r_high: float, r_low: float, z0: float) -> float:
    """Required initial-slope ratio (R_high + z0)/(R_low + z0) of the two generators."""
    if not (r_high > 0 and r_low > 0 and z0 > 0):
        raise InvalidParameterError("resistances and z0 must be positive")
    return (r_high + z0) / (r_low + z0)


def curvature_limited_fit_window(bandwidth: float, dt: float, slope_tolerance: float) -> int:
    """Longest slope-fit window (samples) whose curvature bias stays within the slope tolerance.

    A least-squares line over a window of duration T starting at a crossing
    reads the slope as m + c*T/2, where c is the second derivative. For flat
    band-limited noise the RMS slope and curvature are 2*pi*B*sigma/sqrt(3)
    and (2*pi*B)**2*sigma/sqrt(5), so keeping c*T/2 below slope_tolerance * m
    for typical values gives T = 2 * tol * sqrt(5) / (sqrt(3) * 2*pi*B).
    """
    if not (bandwidth > 0 and dt > 0 and slope_tolerance > 0):
        raise InvalidParameterError("bandwidth, dt and slope_tolerance must be positive")
    t_fit = 2.0 * slope_tolerance * math.sqrt(5.0) / (math.sqrt(3.0) * 2.0 * math.pi * bandwidth)
    return max(2, int(t_fit / dt) + 1)


def _crossing_starts(x: np.ndarray) -> np.ndarray:
    i = np.flatnonzero(x[:-1] * x[1:] < 0)
    # the interpolated crossing is nearer to i exactly when |x_i| <= |x_i+1|
    starts = np.where(np.abs(x[i]) <= np.abs(x[i + 1]), i, i + 1)
    return np.unique(starts)


def fit_slopes(x: np.ndarray, starts: np.ndarray, fit_window: int, dt: float) -> np.ndarray:
    """Least-squares slope (units of x per second) over [s, s + fit_window) for each start s."""
    t = np.arange(fit_window) * dt
    tc = t - t.mean()
    windows = x[starts[:, None] + np.arange(fit_window)]
    return windows @ tc / np.dot(tc, tc)


def scan_start_candidates(
    record: NoiseRecord,
    fit_window: int,
    delta: float = DEFAULT_START_THRESHOLD,
    record_index: int = 0,
    min_headroom: int | None = None,
) -> list[StartCandidate]:
    """Zero-crossing start points whose amplitude is within `delta` * target RMS of zero.

    A candidate must leave `max(fit_window, min_headroom)` samples before the
    end of the record. Results are sorted by start index.
    """
    if int(fit_window) != fit_window or fit_window < 2:
        raise InvalidParameterError(f"fit_window must be an integer >= 2, got {fit_window!r}")
    x = np.asarray(record.samples)
    if len(x) < fit_window:
        raise InvalidParameterError(f"record of {len(x)} samples is shorter than the fit window {fit_window}")
    headroom = max(int(fit_window), int(min_headroom or 0))
    starts = _crossing_starts(x)
    keep = (np.abs(x[starts]) <= delta * record.spec.target_rms) & (starts + headroom <= len(x))
    starts = starts[keep]
    slopes = fit_slopes(x, starts, int(fit_window), record.spec.dt)
    nonzero = slopes != 0
    return [
        StartCandidate(record_index=record_index, start_index=int(s), slope=float(m))
        for s, m in zip(starts[nonzero], slopes[nonzero])
    ]


@dataclass(frozen=True, eq=False)
class CandidatePool:
    """Array-backed candidate list, so pairing can test every partner at once."""

    record_index: np.ndarray
    start_index: np.ndarray
    slope: np.ndarray

    @classmethod
    def from_candidates(cls, candidates: Iterable[StartCandidate]) -> "CandidatePool":
        cands = list(candidates)
        return cls(
            record_index=np.array([c.record_index for c in cands], dtype=np.int64),
            start_index=np.array([c.start_index for c in cands], dtype=np.int64),
            slope=np.array([c.slope for c in cands], dtype=float),
        )

    def __len__(self) -> int:
        return len(self.slope)

    def __getitem__(self, k: int) -> StartCandidate:
        return StartCandidate(int(self.record_index[k]), int(self.start_index[k]), float(self.slope[k]))


def _as_pool(cands) -> CandidatePool:
    return cands if isinstance(cands, CandidatePool) else CandidatePool.from_candidates(cands)


def select_defense_pair(
    cands_a: Sequence[StartCandidate] | CandidatePool,
    cands_b: Sequence[StartCandidate] | CandidatePool,
    target_ratio: float,
    slope_tolerance: float,
    rng: np.random.Generator,
    attempt_budget: int = DEFAULT_ATTEMPT_BUDGET,
) -> DefensePairing:
    """Draw a start pair whose slope ratio slope_a/slope_b matches `target_ratio`.

    Each attempt takes a uniform candidate from `cands_a` and a uniform pick
    among the same-sign partners in `cands_b` within the relative tolerance
    (the same law as scanning `cands_b` in random order and keeping the
    first hit).
    """
    pool_a, pool_b = _as_pool(cands_a), _as_pool(cands_b)
    if len(pool_a) == 0 or len(pool_b) == 0:
        raise InvalidParameterError("candidate lists must be non-empty")
    if not target_ratio > 0:
        raise InvalidParameterError(f"target_ratio must be positive, got {target_ratio!r}")
    if not 0 < slope_tolerance < 1:
        raise InvalidParameterError(f"slope tolerance must lie in (0, 1), got {slope_tolerance!r}")
    for _ in range(attempt_budget):
        ka = int(rng.integers(len(pool_a)))
        ratios = pool_a.slope[ka] / pool_b.slope
        ok = np.flatnonzero((ratios > 0) & (np.abs(ratios - target_ratio) <= slope_tolerance * target_ratio))
        if len(ok) == 0:
            continue
        kb = int(ok[rng.integers(len(ok))])
        return DefensePairing(
            alice_candidate=pool_a[ka],
            bob_candidate=pool_b[kb],
            achieved_ratio=float(ratios[kb]),
            target_ratio=target_ratio,
        )
    raise PairingExhaustedError(
        f"no slope pair within {slope_tolerance:.3g} of ratio {target_ratio:.6g} "
        f"after {attempt_budget} attempts; enlarge the noise database"
    )


def random_start(record: NoiseRecord, min_headroom: int, rng: np.random.Generator) -> int:
    """Uniform start index leaving `min_headroom` samples to the end of the record."""
    n = len(record)
    if not n > min_headroom:
        raise InvalidParameterError(f"record of {n} samples cannot leave {min_headroom} samples of headroom")
    return int(rng.integers(0, n - min_headroom))


# -- persistence -----------------------------------------------------------


def record_filename(role: str, seed: int) -> str:
    return f"noise_{role}_{seed}.knr"


def write_record(record: NoiseRecord, path: str | Path) -> Path:
    path = Path(path)
    spec = record.spec
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION))
        fh.write(
            _SPEC_FIELDS.pack(
                spec.sample_rate,
                spec.bandwidth,
                spec.target_rms,
                int(spec.length),
                int(record.seed),
                record.role.encode("ascii"),
            )
        )
        fh.write(np.ascontiguousarray(record.samples, dtype="<f8").tobytes())
    return path


def read_record(path: str | Path, mmap: bool = True) -> NoiseRecord:
    path = Path(path)
    with path.open("rb") as fh:
        head = fh.read(DATA_OFFSET)
    if len(head) < DATA_OFFSET:
        raise InvalidParameterError(f"{path}: truncated header")
    magic, version = _HEADER.unpack_from(head)
    if magic != MAGIC:
        raise InvalidParameterError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise InvalidParameterError(f"{path}: unsupported format version {version}")
    fs, bw, rms, length, seed, role = _SPEC_FIELDS.unpack_from(head, _HEADER.size)
    if mmap:
        samples = np.memmap(path, dtype="<f8", mode="r", offset=DATA_OFFSET, shape=(length,))
    else:
        samples = np.fromfile(path, dtype="<f8", offset=DATA_OFFSET, count=length)
    if len(samples) != length:
        raise InvalidParameterError(f"{path}: expected {length} samples, found {len(samples)}")
    spec = NoiseSpec(sample_rate=fs, bandwidth=bw, target_rms=rms, length=int(length))
    return NoiseRecord(samples=samples, spec=spec, seed=int(seed), role=role.rstrip(b"\0").decode("ascii"))


# -- database --------------------------------------------------------------


def record_seeds(db_seed: int, role: str, count: int) -> list[int]:
    """Per-record seeds: SeedSequence(db_seed, spawn_key=(role index, k)) -> one uint64 word."""
    r = ROLES.index(role)
    return [
        int(np.random.SeedSequence(db_seed, spawn_key=(r, k)).generate_state(1, np.uint64)[0])
        for k in range(count)
    ]


@dataclass
class NoiseDatabase:
    """Pre-generated records per generator role; read-only once built."""

    records: dict[str, list[NoiseRecord]]
    _pools: dict = field(default_factory=dict, repr=False)

    @classmethod
    def build(
        cls,
        role_rms: dict[str, float],
        sample_rate: float,
        bandwidth: float,
        length: int,
        records_per_role: int,
        seed: int,
        roles: Iterable[str] | None = None,
    ) -> "NoiseDatabase":
        roles = list(roles) if roles is not None else list(role_rms)
        records = {}
        for role in roles:
            spec = NoiseSpec(sample_rate, bandwidth, role_rms[role], length)
            # ascending seed is the canonical record order, shared with load()
            records[role] = [
                _with_role(synthesize(spec, s), role) for s in sorted(record_seeds(seed, role, records_per_role))
            ]
        return cls(records)

    @classmethod
    def load(cls, directory: str | Path, roles: Iterable[str] | None = None, mmap: bool = True) -> "NoiseDatabase":
        directory = Path(directory)
        wanted = set(roles) if roles is not None else set(ROLES)
        records: dict[str, list[NoiseRecord]] = {}
        for path in sorted(directory.glob("noise_*_*.knr")):
            rec = read_record(path, mmap=mmap)
            if rec.role in wanted:
                records.setdefault(rec.role, []).append(rec)
        if not records:
            raise InvalidParameterError(f"no noise records found in {directory}")
        for role in records:
            records[role].sort(key=lambda r: r.seed)
        return cls(records)

    def save(self, directory: str | Path) -> list[Path]:
        """Write every record, replacing any records previously stored for the same roles."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for role in self.records:
            for stale in directory.glob(f"noise_{role}_*.knr"):
                stale.unlink()
        return [
            write_record(rec, directory / record_filename(role, rec.seed))
            for role, recs in self.records.items()
            for rec in recs
        ]

    def roles(self) -> list[str]:
        return list(self.records)

    def candidate_pool(self, role: str, fit_window: int, delta: float, min_headroom: int = 0) -> CandidatePool:
        key = (role, int(fit_window), float(delta), int(min_headroom))
        if key not in self._pools:
            cands = []
            for k, rec in enumerate(self.records[role]):
                cands.extend(scan_start_candidates(rec, fit_window, delta, record_index=k, min_headroom=min_headroom))
            self._pools[key] = CandidatePool.from_candidates(cands)
            log.debug("role %s: %d defense candidates", role, len(cands))
        return self._pools[key]

    def random_segment_start(self, role: str, n_steps: int, rng: np.random.Generator) -> tuple[int, int]:
        recs = self.records[role]
        k = int(rng.integers(len(recs)))
        return k, random_start(recs[k], n_steps, rng)

    def segment(self, role: str, record_index: int, start: int, n_steps: int) -> np.ndarray:
        return np.asarray(self.records[role][record_index].samples[start : start + n_steps], dtype=float)


def _with_role(record: NoiseRecord, role: str) -> NoiseRecord:
    return NoiseRecord(samples=record.samples, spec=record.spec, seed=record.seed, role=role)

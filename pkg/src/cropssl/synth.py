"""Synthetic two-domain crop-phenology generator.

Each class is a set of per-band seasonal curves (baseline plus a smooth
bell-shaped pulse); a sample is the curve evaluated at t dates plus
per-sample nuisance jitter and per-entry Gaussian noise. A
:class:`DomainShift` turns the source distribution into a target one via an
affine band response change, a peak-time delay, and its own noise level —
enough to make a source-only classifier visibly degrade on the target.

Every sample has its own RNG derived from (seed, class, index), so
generation is order-independent and reproducible down to the bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Task, TaskDataset

CLASS_NAMES = ("wheat", "corn", "rice", "other")


@dataclass(frozen=True)
class CropTemplate:
    """Per-band curve parameters for one crop class.

    ``peak_time`` is in timestep units, the rest in scaled-reflectance
    units. The curve for band b is
    ``baseline[b] + (peak_height[b] - baseline[b]) * exp(-(t - peak_time[b])^2 / (2 width[b]^2))``.
    """

    class_id: int
    peak_time: np.ndarray
    peak_height: np.ndarray
    baseline: np.ndarray
    width: np.ndarray

    def __post_init__(self):
        for name in ("peak_time", "peak_height", "baseline", "width"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.ndim != 1:
                raise ValueError(f"{name} must be a 1-D per-band array")
            if not np.isfinite(arr).all():
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, arr)
        sizes = {self.peak_time.size, self.peak_height.size,
                 self.baseline.size, self.width.size}
        if len(sizes) != 1:
            raise ValueError("per-band parameter arrays must have equal length")
        if (self.width <= 0).any():
            raise ValueError("width must be positive")
        if (self.peak_time < 0).any():
            raise ValueError("peak_time must be >= 0")
        if (self.peak_height < self.baseline).any():
            raise ValueError("peak_height must be >= baseline")

    @property
    def bands(self) -> int:
        return self.peak_time.size

    def curve(self, t_steps: int, peak_shift=0.0) -> np.ndarray:
        """Evaluate the clean class curve at ``t_steps`` dates -> (t, b).

        ``peak_shift`` delays the pulse; a scalar shifts every band, an
        array of length b shifts each band separately.
        """
        if (self.peak_time >= t_steps).any():
            raise ValueError(
                f"peak_time {self.peak_time.max()} outside [0, {t_steps})"
            )
        t = np.arange(t_steps, dtype=np.float64)[:, None]
        peak = self.peak_time[None, :] + np.asarray(peak_shift, dtype=np.float64)
        amp = (self.peak_height - self.baseline)[None, :]
        pulse = np.exp(-0.5 * ((t - peak) / self.width[None, :]) ** 2)
        return self.baseline[None, :] + amp * pulse


@dataclass(frozen=True)
class DomainShift:
    """Source-to-target distribution change.

    Applied as ``gain * x + offset`` after a ``peak_shift`` delay of the
    seasonal pulse; ``noise_std`` is the target domain's per-entry noise
    level (it replaces the source noise, it is not added to it).
    """

    offset: float = 0.0
    gain: float = 1.0
    peak_shift: float = 0.0
    noise_std: float = 0.0

    def __post_init__(self):
        if self.gain <= 0:
            raise ValueError(f"gain must be positive, got {self.gain}")
        if self.noise_std < 0:
            raise ValueError(f"noise_std must be >= 0, got {self.noise_std}")


# Clutter frequencies in cycles per observation window: faster than any
# crop pulse, so the clutter subspace is separable from the class signal.
# Radiometric clutter and gain/offset nuisance are optical phenomena; the
# thermal band (always the last) sees them strongly damped.
_CLUTTER_FREQS = np.array([2.5, 3.5, 4.5])
_CLUTTER_THERMAL_FACTOR = 0.25
_JITTER_THERMAL_FACTOR = 0.3


def generate(templates: list[CropTemplate], n_per_class: int, seed,
             shift: DomainShift | None = None, t_steps: int = 10,
             noise_std: float = 0.0, gain_jitter: float = 0.0,
             offset_jitter: float = 0.0, time_jitter: float = 0.0,
             cohort_shift: float = 0.0, relative_jitter: float = 0.0,
             band_gain_jitter: float = 0.0,
             band_offset_jitter: float = 0.0, clutter_std: float = 0.0,
             clutter_tail_prob: float = 0.0,
             clutter_tail_mult: float = 4.0) -> TaskDataset:
    """Draw ``n_per_class`` samples per template, labeled by class.

    Per sample: every band's peak moves together by a planting cohort drawn
    uniformly from {-cohort_shift, 0, +cohort_shift} plus N(0, time_jitter)
    timesteps (season-wide timing: weather year, latitude), and all bands
    except the last additionally move by N(0, relative_jitter) (crop timing
    relative to the season; the last band is thermal and tracks the season
    itself); the curve gets a global gain drawn from
    U(1 - gain_jitter, 1 + gain_jitter) and a global offset drawn from
    N(0, offset_jitter), plus an independent gain/offset pair per band
    (latent soil, moisture, and atmosphere nuisance); then random fast
    sinusoid clutter with per-band N(0, clutter_std) amplitudes and uniform
    phases (atmosphere/BRDF/sub-pixel texture, uninformative of the class),
    where a ``clutter_tail_prob`` fraction of samples carries
    ``clutter_tail_mult`` times stronger clutter (undetected thin clouds);
    then the domain shift's affine map; then per-entry Gaussian noise. With
    all noise knobs at zero and no shift, every sample equals its template
    curve exactly.
    """
    if n_per_class < 1:
        raise ValueError(f"n_per_class must be >= 1, got {n_per_class}")
    if len(templates) != len(CLASS_NAMES):
        raise ValueError(f"expected {len(CLASS_NAMES)} templates, got {len(templates)}")
    base = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    key_prefix = tuple(base.spawn_key)
    sigma = shift.noise_std if shift is not None else noise_std
    peak_shift = shift.peak_shift if shift is not None else 0.0

    chunks = []
    labels = []
    for template in templates:
        clean = template.curve(t_steps, peak_shift)  # (t, b)
        block = np.empty((n_per_class,) + clean.shape)
        for i in range(n_per_class):
            ss = np.random.SeedSequence(
                entropy=base.entropy,
                spawn_key=key_prefix + (template.class_id, i),
            )
            rng = np.random.default_rng(ss)
            # Fixed draw order keeps source/target sample pairs aligned
            # when the same seed is used with and without a shift.
            delta_i = rng.normal(0.0, time_jitter) if time_jitter > 0 else 0.0
            if cohort_shift > 0:
                delta_i += cohort_shift * (int(rng.integers(3)) - 1)
            rel_i = rng.normal(0.0, relative_jitter) if relative_jitter > 0 else 0.0
            gain_i = rng.uniform(1.0 - gain_jitter, 1.0 + gain_jitter)
            offset_i = rng.normal(0.0, offset_jitter) if offset_jitter > 0 else 0.0
            bands = clean.shape[1]
            band_gain = (rng.uniform(1.0 - band_gain_jitter, 1.0 + band_gain_jitter,
                                     size=bands)
                         if band_gain_jitter > 0 else 1.0)
            band_offset = (rng.normal(0.0, band_offset_jitter, size=bands)
                           if band_offset_jitter > 0 else 0.0)
            if delta_i == 0.0 and rel_i == 0.0:
                curve_i = clean
            elif rel_i == 0.0:
                curve_i = template.curve(t_steps, peak_shift + delta_i)
            else:
                shift_vec = np.full(bands, peak_shift + delta_i + rel_i)
                shift_vec[-1] = peak_shift + delta_i
                curve_i = template.curve(t_steps, shift_vec)
            eff_gain = np.broadcast_to(np.asarray(gain_i * band_gain), (bands,)).copy()
            eff_offset = np.broadcast_to(np.asarray(offset_i + band_offset), (bands,)).copy()
            eff_gain[-1] = 1.0 + (eff_gain[-1] - 1.0) * _JITTER_THERMAL_FACTOR
            eff_offset[-1] *= _JITTER_THERMAL_FACTOR
            sample = eff_gain * curve_i + eff_offset
            if clutter_std > 0:
                scale = clutter_std
                if clutter_tail_prob > 0 and rng.random() < clutter_tail_prob:
                    scale *= clutter_tail_mult
                amps = rng.normal(0.0, scale, size=(_CLUTTER_FREQS.size, bands))
                # Radiometric clutter is an optical phenomenon; the thermal
                # band (last) is hit far less.
                amps[:, -1] *= _CLUTTER_THERMAL_FACTOR
                phases = rng.uniform(0.0, 2.0 * np.pi, size=(_CLUTTER_FREQS.size, bands))
                t_grid = np.arange(t_steps)[:, None, None]
                waves = np.sin(2.0 * np.pi * _CLUTTER_FREQS[None, :, None] * t_grid
                               / t_steps + phases[None, :, :])
                sample = sample + (waves * amps[None, :, :]).sum(axis=1)
            if shift is not None:
                sample = shift.gain * sample + shift.offset
            if sigma > 0:
                sample = sample + rng.normal(0.0, sigma, size=clean.shape)
            block[i] = sample
        chunks.append(block)
        labels.append(np.full(n_per_class, template.class_id, dtype=np.int64))
    return TaskDataset(
        np.concatenate(chunks, axis=0),
        np.concatenate(labels),
        Task.CROP,
        len(templates),
    )


def default_templates(bands: int = 7) -> list[CropTemplate]:
    """Four crop classes with distinct seasonal timing and band response.

    Bands follow the usual blue/green/red/NIR/SWIR1/SWIR2/thermal layout:
    the NIR-like band carries the strongest vegetation pulse, visible bands
    a weak one, and the thermal band a broad warm-season bump. Classes
    differ mainly in peak time (early / mid / late season) and pulse
    strength; "other" is a flat mixed-background class.
    """
    # Relative pulse strength per band (NIR strongest).
    response = np.array([0.10, 0.18, 0.12, 1.00, 0.55, 0.35, 0.25])[:bands]
    base = np.array([0.09, 0.11, 0.10, 0.22, 0.18, 0.14, 0.55])[:bands]

    def template(class_id, peak_t, strength, width):
        return CropTemplate(
            class_id=class_id,
            peak_time=np.full(bands, float(peak_t)),
            peak_height=base + strength * response,
            baseline=base.copy(),
            width=np.full(bands, float(width)),
        )

    return [
        template(0, peak_t=2.0, strength=0.30, width=1.6),   # wheat: early season
        template(1, peak_t=5.0, strength=0.34, width=1.8),   # corn: mid season
        template(2, peak_t=6.5, strength=0.28, width=2.2),   # rice: late, broad
        template(3, peak_t=4.5, strength=0.10, width=4.0),   # other: flat mixture
    ]


def default_shift() -> DomainShift:
    """Shift used by the default scenario; strong enough that a source-only
    model visibly degrades on the target domain."""
    return DomainShift(offset=0.08, gain=1.15, peak_shift=1.0, noise_std=0.02)


# Source-domain nuisance defaults for the stock scenario.
DEFAULT_NOISE_STD = 0.02
DEFAULT_GAIN_JITTER = 0.15
DEFAULT_OFFSET_JITTER = 0.03
DEFAULT_TIME_JITTER = 1.0


def scenario(seed, n_source: int, n_few: int, n_target: int,
             shift: DomainShift, t_steps: int = 10, bands: int = 7,
             noise_std: float = DEFAULT_NOISE_STD,
             gain_jitter: float = DEFAULT_GAIN_JITTER,
             offset_jitter: float = DEFAULT_OFFSET_JITTER,
             time_jitter: float = DEFAULT_TIME_JITTER,
             ) -> tuple[TaskDataset, TaskDataset, TaskDataset]:
    """Two-domain setup: (source train, source few-shot pool, target).

    Source and few-shot pool are drawn from the same distribution; the
    target applies ``shift``. Sizes are per class.
    """
    templates = default_templates(bands)
    root = np.random.SeedSequence(seed)
    roles = [np.random.SeedSequence(entropy=root.entropy, spawn_key=(role,))
             for role in range(3)]
    common = dict(
        t_steps=t_steps,
        noise_std=noise_std,
        gain_jitter=gain_jitter,
        offset_jitter=offset_jitter,
        time_jitter=time_jitter,
    )
    source = generate(templates, n_source, roles[0], shift=None, **common)
    few = generate(templates, n_few, roles[1], shift=None, **common)
    target = generate(templates, n_target, roles[2], shift=shift, **common)
    return source, few, target


def default_scenario(seed, n_source: int = 2000, n_few: int = 100,
                     n_target: int = 2000, t_steps: int = 10,
                     bands: int = 7) -> tuple[TaskDataset, TaskDataset, TaskDataset]:
    """The stock scenario: per-class sizes 2000/100/2000, default nuisance
    levels, and :func:`default_shift` applied to the target."""
    return scenario(seed, n_source, n_few, n_target, default_shift(),
                    t_steps=t_steps, bands=bands)

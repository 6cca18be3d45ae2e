"""Dual-stage attack detection.

Stage one is a comparator on the difference between a vehicle's perceived
front and rear gaps: steady gaps whose difference stays near the nominal mean
no attack, a breach of the threshold flags one.  Its documented blind spot,
both gaps shifted equally, is covered by stage two: per vehicle, two online
extreme-learning-machine regressors forecast the position and velocity
observations one step ahead, and a large deviation between the observed and
predicted value is reported as an anomaly.  While a step is flagged the
models freeze, so corrupted observations never enter the training data.

The monitored position/velocity series are the forward-channel values each
vehicle consumes (the predecessor's broadcast after any corruption), which is
what an on-board detector actually has access to.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .mpc_controller import PerceptionRecord


class DetectionError(ValueError):
    pass


class FrozenModelError(RuntimeError):
    """Raised when a fit is attempted on a frozen model."""


POS_ANOM = "PosAnom"
VEL_ANOM = "VelAnom"

ANOMALY_CSV_COLUMNS = (
    "anomaly_type",
    "control_step",
    "vehicle_no",
    "actual_value",
    "predicted_value",
)


@dataclass(frozen=True)
class ComparatorConfig:
    threshold: float = 2.0
    nominal_diff: float = 0.0

    def __post_init__(self):
        if self.threshold <= 0:
            raise DetectionError(f"comparator threshold must be > 0, got {self.threshold}")


@dataclass(frozen=True)
class NormalizationState:
    """Affine map of [data_min, data_max] onto [target_lo, target_hi]."""

    data_min: float
    data_max: float
    target_lo: float
    target_hi: float


@dataclass(frozen=True)
class AnomalyEvent:
    kind: str  # POS_ANOM | VEL_ANOM
    control_step: int
    vehicle: int
    actual: float
    predicted: float


@dataclass(frozen=True)
class ElmModel:
    """Single-hidden-layer network with fixed random input weights.

    Only the output weights are trained (ridge least squares); the input
    weights and hidden biases are drawn once from ``random_state`` and never
    touched again.  When frozen, the output weights are immutable.
    """

    hidden_count: int
    random_state: int
    input_weights: np.ndarray  # (hidden_count, lag)
    hidden_biases: np.ndarray  # (hidden_count,)
    lag: int
    step_forward: int
    output_weights: Optional[np.ndarray] = None
    frozen: bool = False

    def __post_init__(self):
        self.input_weights.flags.writeable = False
        self.hidden_biases.flags.writeable = False
        if self.output_weights is not None:
            self.output_weights.flags.writeable = False


def create_elm(
    hidden_count: int, random_state: int, lag: int = 2, step_forward: int = 1
) -> ElmModel:
    rng = np.random.default_rng(random_state)
    return ElmModel(
        hidden_count=hidden_count,
        random_state=random_state,
        input_weights=rng.uniform(-1.0, 1.0, size=(hidden_count, lag)),
        hidden_biases=rng.uniform(-1.0, 1.0, size=hidden_count),
        lag=lag,
        step_forward=step_forward,
    )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(x, -500.0, 500.0)))


def comparator_check(
    gap_front: float, gap_rear: float, nominal_diff: float, cfg: ComparatorConfig
) -> bool:
    """Flag when the gap difference deviates from its nominal by more than
    the threshold.  Invariant under adding the same constant to both gaps."""
    return abs((gap_front - gap_rear) - nominal_diff) > cfg.threshold


def minmax_fit(
    series: Sequence[float], target_lo: float = 0.0, target_hi: float = 1.0
) -> NormalizationState:
    if target_lo >= target_hi:
        raise DetectionError(f"bad target range [{target_lo}, {target_hi}]")
    data = np.asarray(series, dtype=float)
    if data.size < 2:
        raise DetectionError("normalization fit needs at least 2 values")
    lo = float(data.min())
    hi = float(data.max())
    if not hi > lo:
        raise DetectionError(f"degenerate series range [{lo}, {hi}]")
    return NormalizationState(data_min=lo, data_max=hi, target_lo=target_lo, target_hi=target_hi)


def minmax_transform(state: NormalizationState, values):
    scale = (state.target_hi - state.target_lo) / (state.data_max - state.data_min)
    return (np.asarray(values, dtype=float) - state.data_min) * scale + state.target_lo


def minmax_inverse(state: NormalizationState, values):
    scale = (state.data_max - state.data_min) / (state.target_hi - state.target_lo)
    return (np.asarray(values, dtype=float) - state.target_lo) * scale + state.data_min


def sliding_window(
    series: Sequence[float], lag: int, step_forward: int
) -> tuple[np.ndarray, np.ndarray]:
    """Lagged input windows paired with the value step_forward ahead.

    inputs[i] = series[i : i+lag], targets[i] = series[i + lag + step_forward - 1],
    giving len(series) - lag - step_forward + 1 pairs.
    """
    data = np.asarray(series, dtype=float)
    count = data.size - lag - step_forward + 1
    if count < 1:
        raise DetectionError(
            f"series of length {data.size} too short for lag={lag}, "
            f"step_forward={step_forward}"
        )
    inputs = np.empty((count, lag))
    targets = np.empty(count)
    for i in range(count):
        inputs[i] = data[i : i + lag]
        targets[i] = data[i + lag + step_forward - 1]
    return inputs, targets


class NumericalFitError(RuntimeError):
    pass


def elm_fit(
    model: ElmModel, inputs: np.ndarray, targets: np.ndarray, ridge: float = 1e-6
) -> ElmModel:
    """Ridge least-squares solve for the output weights; input weights untouched."""
    if model.frozen:
        raise FrozenModelError("cannot fit a frozen model")
    H = _sigmoid(inputs @ model.input_weights.T + model.hidden_biases)
    gram = H.T @ H + ridge * np.eye(model.hidden_count)
    rhs = H.T @ np.asarray(targets, dtype=float)
    weights = np.linalg.solve(gram, rhs)
    if not np.all(np.isfinite(weights)):
        raise NumericalFitError(
            f"non-finite output weights (ridge={ridge}, samples={len(targets)})"
        )
    return replace(model, output_weights=weights)


def elm_predict(model: ElmModel, window: Sequence[float]) -> float:
    if model.output_weights is None:
        raise DetectionError("model has no trained output weights")
    window = np.asarray(window, dtype=float)
    if window.shape != (model.lag,):
        raise DetectionError(f"window must have length {model.lag}, got {window.shape}")
    h = _sigmoid(window @ model.input_weights.T + model.hidden_biases)
    return float(h @ model.output_weights)


def detect_anomaly(
    kind: str,
    control_step: int,
    vehicle: int,
    actual: float,
    predicted: float,
    threshold: float,
) -> Optional[AnomalyEvent]:
    """An event iff |actual - predicted| strictly exceeds the threshold."""
    if not (math.isfinite(actual) and math.isfinite(predicted)):
        raise DetectionError(f"non-finite anomaly inputs: {actual}, {predicted}")
    if abs(actual - predicted) > threshold:
        return AnomalyEvent(
            kind=kind,
            control_step=control_step,
            vehicle=vehicle,
            actual=actual,
            predicted=predicted,
        )
    return None


@dataclass(frozen=True)
class DetectionConfig:
    comparator: ComparatorConfig = ComparatorConfig()
    pos_threshold: float = 2.5
    vel_threshold: float = 2.0
    hidden_count: int = 50
    ridge: float = 1e-6
    lag: int = 2
    step_forward: int = 1
    norm_window: int = 200
    # Flags and events are suppressed while the models accumulate data.
    warmup_steps: int = 12
    target_lo: float = 0.0
    target_hi: float = 1.0
    seed: int = 0


class SeriesDetector:
    """Online one-step-ahead forecaster for a single scalar series.

    The forecaster models one-step increments rather than raw levels: a
    steadily growing series (a vehicle position) has stationary increments,
    so the model stays valid however far the level drifts, including across
    frozen attack windows.  A level prediction is reconstructed as the last
    observation plus the predicted increment.

    Two views of the data are kept: ``train_diffs`` holds increments between
    consecutive unflagged observations (tainted values never enter it), while
    ``recent`` holds the raw trailing observations used as prediction input.
    When the training window is constant, min-max normalization is degenerate
    and the predictor falls back to repeating the last trained increment.
    """

    def __init__(self, model: ElmModel, cfg: DetectionConfig):
        self.model = model
        self.cfg = cfg
        self.norm: Optional[NormalizationState] = None
        self.train_diffs: list[float] = []
        self.recent: list[float] = []
        self._last_train_value: Optional[float] = None
        self._resume_gap = False

    def predict_next(self) -> Optional[float]:
        if len(self.recent) < self.model.lag + 1:
            return None
        anchor = self.recent[-1]
        diffs = [
            self.recent[i + 1] - self.recent[i]
            for i in range(len(self.recent) - self.model.lag - 1, len(self.recent) - 1)
        ]
        if self.norm is None or self.model.output_weights is None:
            if not self.train_diffs:
                return None
            return anchor + self.train_diffs[-1]
        window = minmax_transform(self.norm, diffs)
        predicted = elm_predict(self.model, window)
        return anchor + float(minmax_inverse(self.norm, predicted))

    def observe(self, value: float, flagged: bool) -> None:
        """Fold in one observation; training is skipped while flagged."""
        if not flagged:
            if self._last_train_value is not None and not self._resume_gap:
                self.train_diffs.append(value - self._last_train_value)
                window = self.train_diffs[-self.cfg.norm_window:]
                if len(window) >= self.model.lag + self.model.step_forward + 1:
                    try:
                        norm = minmax_fit(window, self.cfg.target_lo, self.cfg.target_hi)
                    except DetectionError:
                        norm = None  # constant increments; last-value fallback
                    if norm is not None:
                        normalized = minmax_transform(norm, window)
                        inputs, targets = sliding_window(
                            normalized, self.model.lag, self.model.step_forward
                        )
                        self.model = elm_fit(
                            replace(self.model, frozen=False),
                            inputs,
                            targets,
                            self.cfg.ridge,
                        )
                        self.norm = norm
            self._last_train_value = value
            self._resume_gap = False
            if self.model.frozen:
                self.model = replace(self.model, frozen=False)
        else:
            # Increments spanning an excluded window would mix clean and
            # tainted data, so the first post-freeze observation only
            # re-anchors the series.
            self._resume_gap = True
            if not self.model.frozen:
                self.model = replace(self.model, frozen=True)
        self.recent.append(value)
        del self.recent[: -(self.model.lag + 1)]


class VehicleDetector:
    """Per-vehicle detector state: one position and one velocity forecaster."""

    def __init__(self, vehicle: int, cfg: DetectionConfig):
        self.vehicle = vehicle
        self.cfg = cfg
        base = cfg.seed * 1000 + vehicle * 2
        self.position = SeriesDetector(
            create_elm(cfg.hidden_count, base, cfg.lag, cfg.step_forward), cfg
        )
        self.velocity = SeriesDetector(
            create_elm(cfg.hidden_count, base + 1, cfg.lag, cfg.step_forward), cfg
        )

    @property
    def frozen(self) -> bool:
        return self.position.model.frozen


def update_or_freeze(
    detector: VehicleDetector, attack_flag: bool, position: float, velocity: float
) -> VehicleDetector:
    """Freeze-on-attack: flagged steps keep the stored weights and exclude the
    observation from training; unflagged steps resume online fitting."""
    detector.position.observe(position, attack_flag)
    detector.velocity.observe(velocity, attack_flag)
    return detector


class DetectorState:
    """Detector bank for the whole platoon, mutated only by detect_step."""

    def __init__(self, n: int, cfg: DetectionConfig):
        self.cfg = cfg
        self.vehicles = [VehicleDetector(i, cfg) for i in range(1, n + 1)]


@dataclass(frozen=True)
class StepDetection:
    """Per-vehicle flags and predictions for one control step."""

    flags: tuple[bool, ...]
    comparator_flags: tuple[bool, ...]
    pos_predictions: tuple[Optional[float], ...]
    vel_predictions: tuple[Optional[float], ...]
    events: tuple[AnomalyEvent, ...]


def detect_step(
    observations: Sequence[PerceptionRecord],
    state: DetectorState,
    control_step: int,
    comparator_flags_override: Optional[Sequence[bool]] = None,
) -> StepDetection:
    """Run both detection stages on one control step of channel observations.

    A vehicle is flagged when either its comparator or one of its forecasters
    fires; the combined flag drives freeze-on-attack.  During the warmup
    window flags and events are suppressed while the models train.  The
    override argument replays recorded comparator flags instead of
    recomputing them (used when rerunning detection from a trace).
    """
    cfg = state.cfg
    active = control_step >= cfg.warmup_steps
    flags, comp_flags, pos_preds, vel_preds, events = [], [], [], [], []
    for idx, obs in enumerate(observations):
        detector = state.vehicles[idx]
        pos_pred = detector.position.predict_next()
        vel_pred = detector.velocity.predict_next()

        if comparator_flags_override is not None:
            comp = bool(comparator_flags_override[idx])
        elif active and obs.rear_spacing_error is not None:
            # Perceived rear gap reconstructed from the successor's reported
            # spacing error, sharing the front gap's nominal-spacing term.
            gap_rear = obs.rear_spacing_error + (obs.gap_front - obs.spacing_error)
            comp = comparator_check(
                obs.gap_front, gap_rear, cfg.comparator.nominal_diff, cfg.comparator
            )
        else:
            comp = False

        vehicle_events = []
        if active and pos_pred is not None:
            event = detect_anomaly(
                POS_ANOM, control_step, obs.vehicle, obs.front_x, pos_pred,
                cfg.pos_threshold,
            )
            if event:
                vehicle_events.append(event)
        if active and vel_pred is not None:
            event = detect_anomaly(
                VEL_ANOM, control_step, obs.vehicle, obs.front_v, vel_pred,
                cfg.vel_threshold,
            )
            if event:
                vehicle_events.append(event)

        flagged = comp or bool(vehicle_events)
        update_or_freeze(detector, flagged, obs.front_x, obs.front_v)

        flags.append(flagged)
        comp_flags.append(comp)
        pos_preds.append(pos_pred)
        vel_preds.append(vel_pred)
        events.extend(vehicle_events)
    return StepDetection(
        flags=tuple(flags),
        comparator_flags=tuple(comp_flags),
        pos_predictions=tuple(pos_preds),
        vel_predictions=tuple(vel_preds),
        events=tuple(events),
    )

"""Advanced-step closed-loop MPC driver.

Each step ``j`` splits into an apply stage and a precompute stage:

* apply: the control for ``[t_j, t_j + T)`` is taken from the plan that was
  prepared ``lead`` steps earlier for the model-predicted state, optionally
  corrected by the first-order sensitivity update (or replaced by a full
  re-solve) against the measurement ``y_j`` and the measured road;
* precompute: the plan for step ``j + lead`` is solved for the state
  predicted from ``y_j`` under the controls already committed for the
  intervening intervals.

The plant then advances one interval on the true road and is kicked by the
seeded state disturbance before the next measurement.  Precompute wall
time is measured but never gates logical time, so traces are reproducible.
"""

from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import _kernels
from .errors import (
    InvalidInputError,
    NonConvergenceError,
    SchedulingError,
    SensitivityUnavailableError,
    UpdateRefusedError,
)
from .nlp_solver import KktPoint, SolverConfig, solve
from .ocp import HorizonOcp, OcpConfig, disturbance_from_signals, nominal_forces
from .road_profile import (
    AxleDelay,
    RoadMeasurement,
    RoadSignal,
    perturb_uniform,
    reconstruct,
    rear_wheel_signal,
)
from .sensitivity import (
    SensitivityBundle,
    apply_update,
    compute_sensitivities,
    detect_structure_change,
)
from .simulation import IntegratorConfig, integrate_interval, road_table
from .vehicle_model import HalfCarParams, HalfCarState, static_equilibrium

log = logging.getLogger(__name__)


class ControllerMode(str, enum.Enum):
    NOMINAL = "nominal"
    SENSITIVITY_UPDATE = "sensitivity_update"
    FULL_REOPTIMIZATION = "full_reoptimization"


@dataclass(frozen=True)
class DisturbanceConfig:
    """Uniform disturbance half-widths in metres.

    ``road_amplitude`` perturbs each raw road sample before the true road is
    reconstructed: the plant drives on it and the controller measures it,
    while predictions use the unperturbed road.  ``state_amplitude`` acts on
    the four position coordinates at every sampling instant after the first,
    either as measurement noise on the state fed to the controller
    (``state_channel = "measurement"``) or as a kick to the plant state
    itself (``"process"``).
    """

    state_amplitude: float = 0.0
    road_amplitude: float = 0.025
    state_channel: str = "measurement"

    def __post_init__(self):
        if not (self.state_amplitude >= 0 and self.road_amplitude >= 0):
            raise InvalidInputError("disturbance amplitudes must be non-negative")
        if self.state_channel not in ("measurement", "process"):
            raise InvalidInputError("state_channel must be 'measurement' or 'process'")

    @property
    def active(self) -> bool:
        return self.state_amplitude > 0 or self.road_amplitude > 0


STRUCTURE_POLICIES = ("nominal", "clamp", "truncate")


@dataclass(frozen=True)
class MpcConfig:
    ocp: OcpConfig = field(default_factory=OcpConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    prediction_lead: int = 2
    plant_substep_factor: int = 5
    disturbance: DisturbanceConfig = field(default_factory=DisturbanceConfig)
    seed: int = 0
    run_length: int = 40
    horizon_check_index: int = 1
    trust_state_norm: float = 0.05
    trust_road_norm: float = 0.05
    jerk_sample_period: float = 0.002
    # what to apply when the update flags a structure change at k <= check index
    structure_fallback: str = "truncate"

    def __post_init__(self):
        if self.prediction_lead < 0:
            raise InvalidInputError("prediction_lead must be >= 0")
        if self.prediction_lead > self.ocp.horizon_N:
            raise InvalidInputError("prediction_lead cannot exceed the horizon")
        if self.plant_substep_factor < 1:
            raise InvalidInputError("plant_substep_factor must be >= 1")
        if self.structure_fallback not in STRUCTURE_POLICIES:
            raise InvalidInputError(f"structure_fallback must be one of {STRUCTURE_POLICIES}")
        if self.run_length < 0:
            raise InvalidInputError("run_length must be >= 0")
        nsub = self.ocp.substeps * self.plant_substep_factor
        per = self.jerk_sample_period * nsub / self.ocp.sampling_period_T
        if abs(per - round(per)) > 1e-9 or round(per) < 1:
            raise InvalidInputError("jerk_sample_period must be a multiple of the plant step")

    @property
    def model_integrator(self) -> IntegratorConfig:
        return IntegratorConfig(self.ocp.substeps, self.ocp.sampling_period_T)

    @property
    def plant_integrator(self) -> IntegratorConfig:
        return self.model_integrator.refined(self.plant_substep_factor)


@dataclass(frozen=True)
class Scenario:
    """Vehicle, raw road samples and the road-processing settings."""

    vehicle: HalfCarParams
    measurement: RoadMeasurement
    cutoff_hz: float = 50.0
    delay: AxleDelay = AxleDelay(0.1)
    start_time: Optional[float] = None
    # keep the simulated window this far from the ends of the record
    edge_margin: float = 0.1

    def t0(self) -> float:
        if self.start_time is not None:
            return float(self.start_time)
        return self.measurement.start_time + self.delay.delta + self.edge_margin

    def check_window(self, cfg: MpcConfig) -> None:
        t0 = self.t0()
        T = cfg.ocp.sampling_period_T
        lo = self.measurement.start_time + self.delay.delta
        hi = self.measurement.end_time
        t_end = t0 + T * (cfg.run_length + cfg.ocp.horizon_N)
        if t0 < lo or t_end > hi:
            raise InvalidInputError(
                f"closed loop needs road data on [{t0:.4g}, {t_end:.4g}] s for both wheels, "
                f"available [{lo:.4g}, {hi:.4g}] s"
            )


@dataclass(frozen=True)
class RoadPair:
    front: RoadSignal
    rear: RoadSignal

    @classmethod
    def from_measurement(cls, m: RoadMeasurement, cutoff_hz: float, delay: AxleDelay):
        front = reconstruct(m, cutoff_hz)
        return cls(front, rear_wheel_signal(front, delay))

    def grid(self, t0: float, cfg: OcpConfig) -> np.ndarray:
        return disturbance_from_signals(self.front, self.rear, t0, cfg)

    def table(self, t0: float, period: float, nsub: int) -> np.ndarray:
        return road_table((self.front, self.rear), t0, period, nsub)


@dataclass(frozen=True)
class Disturbances:
    """One seeded realisation: true road and per-step state kicks."""

    true_road: RoadPair
    kicks: np.ndarray  # (run_length + 1, 8); row 0 is zero


def draw_disturbances(cfg: MpcConfig, scenario: Scenario, nominal: RoadPair) -> Disturbances:
    road_seed, kick_seed = np.random.SeedSequence(cfg.seed).generate_state(2)
    amp = cfg.disturbance
    if amp.road_amplitude > 0:
        m = scenario.measurement
        heights = perturb_uniform(m.heights, amp.road_amplitude, int(road_seed))
        true_road = RoadPair.from_measurement(
            RoadMeasurement(m.sample_period, heights, m.start_time),
            scenario.cutoff_hz, scenario.delay,
        )
    else:
        true_road = nominal
    kicks = np.zeros((cfg.run_length + 1, 8))
    if amp.state_amplitude > 0 and cfg.run_length > 0:
        rng = np.random.default_rng(int(kick_seed))
        kicks[1:, :4] = rng.uniform(-amp.state_amplitude, amp.state_amplitude, (cfg.run_length, 4))
    return Disturbances(true_road, kicks)


def predict_initial_state(
    cfg: MpcConfig, vehicle: HalfCarParams, measured: np.ndarray, committed, road, t: float
) -> np.ndarray:
    """Nominal-model state ``lead`` intervals after ``t``.

    ``committed`` holds the ``(u1, u2)`` pairs for those intervals.  ``t``
    may also be the sequence of interval start times, so a caller can pass
    exactly the instants its plant uses.  The plant-grade integrator is
    used, so without disturbances the prediction reproduces the plant
    exactly.
    """
    lead = cfg.prediction_lead
    if len(committed) < lead:
        raise SchedulingError(f"need {lead} committed controls, got {len(committed)}")
    icfg = cfg.plant_integrator
    T = icfg.sampling_period_T
    starts = np.atleast_1d(np.asarray(t, dtype=float))
    if starts.size == 1:
        starts = starts[0] + T * np.arange(lead)
    x = np.concatenate([np.asarray(measured, dtype=float)[:8], [0.0, 0.0]])
    for k in range(lead):
        table = road.table(float(starts[k]), T, icfg.substeps_per_sample)
        x = integrate_interval(icfg, vehicle, x, committed[k], table, dense=True)[-1].copy()
        x[8:] = 0.0
    return x[:8]


@dataclass
class Plan:
    """Precomputed horizon solution for one application step."""

    step: int
    x_pred: np.ndarray
    w_nom: np.ndarray
    z: np.ndarray
    ok: bool
    iterations: int
    point: Optional[KktPoint] = None
    bundle: Optional[SensitivityBundle] = None
    precompute_s: float = 0.0


@dataclass
class StepRecord:
    step: int
    time: float
    plant: np.ndarray
    measured: np.ndarray
    u: np.ndarray
    stage_cost: float
    cum_cost: float
    solver_iterations: int
    solver_ok: bool
    structure_change: bool
    clamped: int
    fallback: bool
    precompute_s: float
    mode: ControllerMode


@dataclass
class ClosedLoopResult:
    mode: ControllerMode
    trace: list[StepRecord]
    jerk_time: np.ndarray
    jerk: np.ndarray
    total_cost: float
    timing: "TimingReport"

    @property
    def summary(self) -> dict:
        return {
            "mode": self.mode.value,
            "total_cost": self.total_cost,
            "structure_changes": sum(r.structure_change for r in self.trace),
            "clamps": sum(r.clamped for r in self.trace),
            "fallbacks": sum(r.fallback for r in self.trace),
            "solver_failures": sum(not r.solver_ok for r in self.trace),
            **self.timing.as_dict(),
        }


@dataclass(frozen=True)
class TimingReport:
    """Precompute wall times against the ``lead * T`` budget."""

    times: np.ndarray
    budget: float

    @property
    def count(self) -> int:
        return int(self.times.size)

    @property
    def max(self) -> float:
        return float(self.times.max()) if self.count else 0.0

    @property
    def mean(self) -> float:
        return float(self.times.mean()) if self.count else 0.0

    @property
    def within_budget(self) -> int:
        return int(np.count_nonzero(self.times <= self.budget))

    @property
    def margin(self) -> float:
        """Smallest slack to the budget (negative when it was exceeded)."""
        return self.budget - self.max

    def as_dict(self) -> dict:
        return {
            "precompute_count": self.count,
            "precompute_max_s": self.max,
            "precompute_mean_s": self.mean,
            "budget_s": self.budget,
            "within_budget": self.within_budget,
            "min_margin_s": self.margin,
        }


class AdvancedStepScheduler:
    """Holds the pipeline state of one closed-loop run."""

    def __init__(self, cfg: MpcConfig, scenario: Scenario, mode: ControllerMode):
        self.cfg = cfg
        self.scenario = scenario
        self.mode = ControllerMode(mode)
        self.vehicle = scenario.vehicle
        scenario.check_window(cfg)
        self.t0 = scenario.t0()
        self.T = cfg.ocp.sampling_period_T
        self.nominal_road = RoadPair.from_measurement(
            scenario.measurement, scenario.cutoff_hz, scenario.delay
        )
        self.dist = draw_disturbances(cfg, scenario, self.nominal_road)
        self._plant_cfg = cfg.plant_integrator
        self._p = self.vehicle.as_array()
        self._F = nominal_forces(self.vehicle)
        self._jerk_stride = int(round(
            cfg.jerk_sample_period * self._plant_cfg.substeps_per_sample / self.T
        ))

        w_front, _ = self.dist.true_road.front.evaluate(self.t0)
        w_rear, _ = self.dist.true_road.rear.evaluate(self.t0)
        self.plant = static_equilibrium(self.vehicle, float(w_front), float(w_rear)).as_array()
        self.measured = self.plant.copy()
        self.step_index = 0
        self.cum_cost = 0.0
        self.plans: dict[int, Plan] = {}
        self.applied: list[np.ndarray] = []
        self.last_u = np.array([cfg.ocp.u_min, cfg.ocp.u_min], dtype=float)
        self.prime = None
        self._last_z = None

    # helpers

    def time_of(self, j: int) -> float:
        return self.t0 + j * self.T

    def _solve(self, x0, w, z_init) -> tuple[np.ndarray, bool, int, Optional[KktPoint], HorizonOcp]:
        problem = HorizonOcp(self.cfg.ocp, self.vehicle, x0, w)
        try:
            point = solve(self.cfg.solver, problem, z_init)
            return point.z_star, True, point.iterations, point, problem
        except NonConvergenceError as exc:
            log.warning("horizon solve failed: %s", exc)
            it = exc.point.iterations if getattr(exc, "point", None) is not None else 0
            return np.asarray(z_init, dtype=float), False, it, None, problem

    def _warm_start(self) -> np.ndarray:
        if self._last_z is None:
            lo, hi = self.cfg.ocp.bounds()
            return 0.5 * (lo + hi)
        z = self._last_z
        return np.concatenate([z[2:], z[-2:]])

    def _prime(self) -> None:
        w = self.nominal_road.grid(self.t0, self.cfg.ocp)
        start = time.perf_counter()
        z, ok, it, point, _ = self._solve(self.measured, w, self._warm_start())
        elapsed = time.perf_counter() - start
        self.prime = Plan(0, self.measured.copy(), w, z, ok, it, point, None, elapsed)
        self._last_z = z

    def _committed(self, j: int) -> list[np.ndarray]:
        """Controls for steps ``j .. j + lead - 1`` as known at step ``j``."""
        out = []
        for k in range(j, j + self.cfg.prediction_lead):
            if k == j:
                out.append(self.applied[j])
            elif k < self.cfg.prediction_lead:
                out.append(self.prime.z[2 * k : 2 * k + 2])
            else:
                out.append(self.plans[k].z[:2])
        return out

    def _precompute(self, j: int) -> None:
        """Plan for step ``j + lead`` from the measurement at step ``j``."""
        target = j + self.cfg.prediction_lead
        if target >= self.cfg.run_length:
            return
        start = time.perf_counter()
        x_pred = predict_initial_state(
            self.cfg, self.vehicle, self.measured, self._committed(j), self.nominal_road,
            [self.time_of(k) for k in range(j, target)],
        )
        w_nom = self.nominal_road.grid(self.time_of(target), self.cfg.ocp)
        z, ok, it, point, problem = self._solve(x_pred, w_nom, self._warm_start())
        bundle = None
        if ok and self.mode is ControllerMode.SENSITIVITY_UPDATE and point.regular:
            try:
                bundle = compute_sensitivities(problem, point)
            except SensitivityUnavailableError as exc:
                log.warning("step %d: %s", target, exc)
        elapsed = time.perf_counter() - start
        self.plans[target] = Plan(target, x_pred, w_nom, z, ok, it, point, bundle, elapsed)
        self._last_z = z

    def _control(self, j: int) -> tuple[np.ndarray, dict]:
        info = dict(iterations=0, ok=True, structure=False, clamped=0, fallback=False,
                    precompute_s=0.0)
        if j < self.cfg.prediction_lead:
            # open-loop warm-up on the solution for the initial measurement
            if j == 0:
                self._prime()
                info["precompute_s"] = self.prime.precompute_s
            p = self.prime
            info.update(iterations=p.iterations if j == 0 else 0, ok=p.ok)
            if not p.ok:
                return self.last_u.copy(), info
            return p.z[2 * j : 2 * j + 2].copy(), info

        plan = self.plans.get(j)
        if plan is None:
            raise SchedulingError(f"no precomputed plan for step {j}")
        info.update(iterations=plan.iterations, ok=plan.ok, precompute_s=plan.precompute_s)
        if not plan.ok:
            return self.last_u.copy(), info
        u_nom = plan.z[:2].copy()
        if self.mode is ControllerMode.NOMINAL:
            return u_nom, info

        w_meas = self.dist.true_road.grid(self.time_of(j), self.cfg.ocp)
        if self.mode is ControllerMode.FULL_REOPTIMIZATION:
            z, ok, it, _, _ = self._solve(self.measured, w_meas, plan.z)
            info["iterations"] += it
            if not ok:
                info["ok"] = False
                return self.last_u.copy(), info
            return z[:2].copy(), info

        if plan.bundle is None:
            info["fallback"] = True
            return u_nom, info
        try:
            report = apply_update(
                plan.bundle, self.measured, w_meas,
                self.cfg.trust_state_norm, self.cfg.trust_road_norm,
            )
        except UpdateRefusedError:
            info["fallback"] = True
            return u_nom, info
        early = detect_structure_change(plan.bundle, report.raw_u, self.cfg.horizon_check_index)
        info["clamped"] = len(report.clamped_components)
        info["structure"] = early or report.out_of_trust
        policy = self.cfg.structure_fallback
        if report.out_of_trust or (early and policy == "nominal"):
            info["fallback"] = True
            return u_nom, info
        if early and policy == "truncate":
            return truncated_update(plan.bundle, report.raw_u, self.cfg.horizon_check_index)[:2], info
        return report.updated_u[:2].copy(), info

    def _advance_plant(self, j: int, u: np.ndarray):
        icfg = self._plant_cfg
        nsub = icfg.substeps_per_sample
        table = self.dist.true_road.table(self.time_of(j), self.T, nsub)
        x = np.concatenate([self.plant, [0.0, 0.0]])
        traj = integrate_interval(icfg, self.vehicle, x, u, table, dense=True)
        nodes = table[::2]
        idx = np.arange(0, nsub, self._jerk_stride)
        jerk = _kernels.jerk_along(self._p, np.ascontiguousarray(traj[idx]), u[0], u[1],
                                   np.ascontiguousarray(nodes[idx]))
        end = traj[-1]
        stage = self.cfg.ocp.mu_R * end[8] + self.cfg.ocp.mu_A * end[9]
        # index the jerk grid globally so it stays uniform over the whole run
        times = self.t0 + (j * idx.size + np.arange(idx.size)) * self.cfg.jerk_sample_period
        return end[:8].copy(), float(stage), times, jerk

    def step(self) -> tuple[np.ndarray, StepRecord, np.ndarray, np.ndarray]:
        """One closed-loop step: apply, precompute ahead, advance the plant."""
        j = self.step_index
        if j >= self.cfg.run_length:
            raise SchedulingError("run_length reached")
        if self.cfg.prediction_lead == 0:
            self._precompute(j)
        u, info = self._control(j)
        u = np.clip(u, self.cfg.ocp.u_min, self.cfg.ocp.u_max)
        self.applied.append(u)
        measured = self.measured.copy()
        if self.cfg.prediction_lead:
            self._precompute(j)
        plant_end, stage, jt, jerk = self._advance_plant(j, u)
        self.cum_cost += stage
        rec = StepRecord(
            step=j, time=self.time_of(j), plant=self.plant.copy(), measured=measured, u=u,
            stage_cost=stage, cum_cost=self.cum_cost,
            solver_iterations=info["iterations"], solver_ok=info["ok"],
            structure_change=info["structure"], clamped=info["clamped"],
            fallback=info["fallback"], precompute_s=info["precompute_s"], mode=self.mode,
        )
        kick = self.dist.kicks[j + 1]
        if self.cfg.disturbance.state_channel == "process":
            self.plant = plant_end + kick
            self.measured = self.plant.copy()
        else:
            self.plant = plant_end
            self.measured = plant_end + kick
        self.last_u = u
        self.step_index += 1
        # plans older than the current step are no longer needed
        self.plans.pop(j, None)
        return u, rec, jt, jerk


def truncated_update(bundle: SensitivityBundle, raw_u, horizon_check_index: int = 1) -> np.ndarray:
    """Shorten the update step to the first bound hit in the checked window.

    The first-order predictor is only valid while the active set is
    unchanged, so the step is cut where the first free component inside
    the first ``horizon_check_index + 1`` intervals reaches a bound.
    """
    base = bundle.base_u
    delta = np.asarray(raw_u, dtype=float) - base
    stop = min(delta.size, (horizon_check_index + 1) * bundle.controls_per_step)
    t = 1.0
    for i in range(stop):
        if delta[i] > 0:
            t = min(t, (bundle.upper[i] - base[i]) / delta[i])
        elif delta[i] < 0:
            t = min(t, (bundle.lower[i] - base[i]) / delta[i])
    return np.clip(base + max(t, 0.0) * delta, bundle.lower, bundle.upper)


def mpc_step(scheduler: AdvancedStepScheduler):
    """Functional wrapper: ``(applied control, scheduler, trace record)``."""
    u, rec, _, _ = scheduler.step()
    return u, scheduler, rec


def run_closed_loop(cfg: MpcConfig, scenario: Scenario, mode, on_step=None) -> ClosedLoopResult:
    """Run ``cfg.run_length`` steps in one controller mode.

    ``on_step(record, jerk_time, jerk)`` is called after every step, so a
    caller can stream the trace and keep it if a later step fails.
    """
    mode = ControllerMode(mode)
    budget = cfg.prediction_lead * cfg.ocp.sampling_period_T
    if cfg.run_length == 0:
        empty = np.zeros(0)
        return ClosedLoopResult(mode, [], empty, empty, 0.0, TimingReport(empty, budget))
    sched = AdvancedStepScheduler(cfg, scenario, mode)
    trace, jt, jv = [], [], []
    for _ in range(cfg.run_length):
        _, rec, t, jerk = sched.step()
        trace.append(rec)
        jt.append(t)
        jv.append(jerk)
        if on_step is not None:
            on_step(rec, t, jerk)
    times = np.array([r.precompute_s for r in trace])
    total = math.fsum(r.stage_cost for r in trace)
    return ClosedLoopResult(
        mode, trace, np.concatenate(jt), np.concatenate(jv), total, TimingReport(times, budget)
    )


def improvement(j_nominal: float, j_mode: float) -> float:
    """Closed-loop cost reduction relative to nominal MPC, in percent."""
    if j_nominal == 0:
        return 0.0
    return 100.0 * (j_nominal - j_mode) / j_nominal


def compare_modes(cfg: MpcConfig, scenario: Scenario, modes) -> dict[ControllerMode, ClosedLoopResult]:
    return {ControllerMode(m): run_closed_loop(cfg, scenario, m) for m in modes}


def with_seed(cfg: MpcConfig, seed: int) -> MpcConfig:
    return replace(cfg, seed=int(seed))

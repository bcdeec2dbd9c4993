"""Izhikevich spiking networks with conduction delays and STDP training.

The simulator favors batched numpy state over per-neuron objects: every
engine advances all neurons of all runs one millisecond at a time and
delivers synaptic currents through a circular buffer indexed by future
tick. Two engines share the integration step: a frozen-weight engine that
runs many stimulus schedules against one network in lockstep, and a
plastic engine that trains several networks side by side on a shared
presentation order.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, NumericalError

N_EXCITATORY = 200
N_INHIBITORY = 50
N_TOTAL = N_EXCITATORY + N_INHIBITORY
OUT_DEGREE = 25
MAX_DELAY_MS = 20
FIRE_THRESHOLD = 30.0
STIM_CURRENT = 20.0
PRESENTATION_MS = 250
SETTLE_MS = 50
DEFAULT_LEVELS = 40
DEFAULT_W_MAX = 10.0
INIT_W_EXC = 6.0
INIT_W_INH = -5.0

# Delay d lands d slots ahead of the current ring slot; one spare slot keeps
# a maximal delay from wrapping onto the tick being consumed.
_RING = MAX_DELAY_MS + 1
_FAR_PAST = -(10 ** 9)


@dataclass(frozen=True)
class NeuronKernel:
    """Izhikevich parameter quadruple plus the sign of the synapses it drives."""

    a: float
    b: float
    c: float
    d: float
    excitatory: bool

    @classmethod
    def from_preset(cls, name: str) -> "NeuronKernel":
        try:
            return KERNEL_PRESETS[name.upper()]
        except KeyError:
            raise ConfigError(
                f"unknown neuron preset {name!r}; choose from {sorted(KERNEL_PRESETS)}"
            ) from None


KERNEL_PRESETS = {
    "RS": NeuronKernel(0.02, 0.2, -65.0, 8.0, excitatory=True),
    "IB": NeuronKernel(0.02, 0.2, -55.0, 4.0, excitatory=True),
    "CH": NeuronKernel(0.02, 0.2, -50.0, 2.0, excitatory=True),
    "FS": NeuronKernel(0.1, 0.2, -65.0, 2.0, excitatory=False),
    "LTS": NeuronKernel(0.02, 0.25, -65.0, 2.0, excitatory=False),
}


def membrane_derivatives(v, u, current, a=0.02, b=0.2):
    """Right-hand side of the membrane model at a given state.

    dv/dt = 0.04 v^2 + 5 v + 140 - u + I and du/dt = a (b v - u).
    """
    dv = 0.04 * v * v + 5.0 * v + 140.0 - u + current
    du = a * (b * v - u)
    return dv, du


def integrate_tick(v, u, a, b, current):
    """Advance membrane state arrays by one millisecond in place.

    The voltage takes two half-millisecond Euler steps (the recovery term
    held fixed); the recovery variable then takes one full step against the
    updated voltage. Firing detection is left to the caller.
    """
    if _tick_jit is not None and v.ndim == 2:
        _tick_jit(v, u, np.broadcast_to(a, v.shape),
                  np.broadcast_to(b, v.shape), current)
        return
    for _ in range(2):
        v += 0.5 * (0.04 * v * v + 5.0 * v + 140.0 - u + current)
    u += a * (b * v - u)


def _tick_impl(v, u, a, b, current):
    # mirrors the numpy expression order exactly, so both paths agree bitwise
    for i in range(v.shape[0]):
        for j in range(v.shape[1]):
            vv = v[i, j]
            uu = u[i, j]
            cc = current[i, j]
            vv += 0.5 * (0.04 * vv * vv + 5.0 * vv + 140.0 - uu + cc)
            vv += 0.5 * (0.04 * vv * vv + 5.0 * vv + 140.0 - uu + cc)
            u[i, j] = uu + a[i, j] * (b[i, j] * vv - uu)
            v[i, j] = vv


try:
    from numba import njit as _njit

    _tick_jit = _njit(cache=True)(_tick_impl)
except ImportError:  # pragma: no cover
    _tick_jit = None


def _check_finite(v, u, t):
    if np.isfinite(v).all() and np.isfinite(u).all():
        return
    bad = ~(np.isfinite(v) & np.isfinite(u))
    neuron = int(np.argwhere(bad)[0][-1])
    raise NumericalError(f"membrane state diverged for neuron {neuron} at t={t} ms")


def simulate_neuron(kernel: NeuronKernel, current=10.0, duration_ms=500.0, dt=0.1):
    """Run a single neuron under constant input with a fine Euler step.

    Returns (spike_times_ms, voltage_trace); the trace caps fired samples at
    the 30 mV threshold so bursts plot cleanly.
    """
    if dt <= 0:
        raise ConfigError("dt must be positive")
    steps = int(round(duration_ms / dt))
    v = kernel.c
    u = kernel.b * v
    spikes = []
    trace = np.empty(steps)
    for i in range(1, steps + 1):
        v += dt * (0.04 * v * v + 5.0 * v + 140.0 - u + current)
        u += dt * kernel.a * (kernel.b * v - u)
        if not (math.isfinite(v) and math.isfinite(u)):
            raise NumericalError(f"membrane state diverged for neuron 0 at t={i * dt} ms")
        if v >= FIRE_THRESHOLD:
            spikes.append(i * dt)
            trace[i - 1] = FIRE_THRESHOLD
            v = kernel.c
            u += kernel.d
        else:
            trace[i - 1] = v
    return np.asarray(spikes), trace


@dataclass(frozen=True, eq=False)
class FiringMap:
    """Sparse record of (neuron, time) firings from one simulation run."""

    n_neurons: int
    duration: int
    neurons: np.ndarray
    times: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.neurons, dtype=np.int32).ravel()
        t = np.asarray(self.times, dtype=np.int32).ravel()
        if n.shape != t.shape:
            raise DataError("firing map neuron and time arrays differ in length")
        if self.n_neurons < 1 or self.duration < 0:
            raise DataError("firing map needs n_neurons >= 1 and duration >= 0")
        if n.size:
            if n.min() < 0 or n.max() >= self.n_neurons:
                raise DataError("firing map neuron index out of range")
            if t.min() < 1 or t.max() > self.duration:
                raise DataError("firing map time outside [1, duration]")
            order = np.lexsort((n, t))
            n = n[order]
            t = t[order]
        object.__setattr__(self, "neurons", n)
        object.__setattr__(self, "times", t)

    @property
    def n_firings(self) -> int:
        return int(self.neurons.size)

    def pairs(self):
        """The firings as a set of (neuron, time_ms) tuples."""
        return set(zip(self.neurons.tolist(), self.times.tolist()))

    @classmethod
    def from_pairs(cls, pairs, n_neurons, duration):
        pairs = list(pairs)
        return cls(
            n_neurons,
            duration,
            np.array([p[0] for p in pairs], dtype=np.int32),
            np.array([p[1] for p in pairs], dtype=np.int32),
        )


def save_raster(fmap: FiringMap, path) -> None:
    """Write a firing map as CSV with a neuron,time_ms header."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["neuron", "time_ms"])
        writer.writerows(zip(fmap.neurons.tolist(), fmap.times.tolist()))


def load_raster(path, n_neurons=N_TOTAL, duration=None) -> FiringMap:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["neuron", "time_ms"]:
            raise DataError(f"{path}: expected header neuron,time_ms")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append((int(row[0]), int(row[1])))
            except (ValueError, IndexError):
                raise DataError(f"{path}:{lineno}: malformed raster row {row!r}") from None
    neurons = np.array([r[0] for r in rows], dtype=np.int32)
    times = np.array([r[1] for r in rows], dtype=np.int32)
    if duration is None:
        duration = int(times.max()) if times.size else 0
    return FiringMap(n_neurons, duration, neurons, times)


@dataclass(eq=False)
class SpikingNetwork:
    """Fixed random topology with per-synapse integer delays.

    Neurons 0..n_excitatory-1 are excitatory, the rest inhibitory. Each
    neuron owns a row of `targets`/`delays`/`weights`; only excitatory
    weights ever change, clamped to [0, w_max].
    """

    n_excitatory: int
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    targets: np.ndarray
    delays: np.ndarray
    weights: np.ndarray
    w_max: float = DEFAULT_W_MAX
    seed: int = 0
    kernel_pair: tuple = ("RS", "LTS")

    def __post_init__(self):
        for name in ("a", "b", "c", "d"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64).ravel())
        self.targets = np.asarray(self.targets, dtype=np.int32)
        self.delays = np.asarray(self.delays, dtype=np.int32)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        n = self.a.size
        if not (self.b.size == self.c.size == self.d.size == n):
            raise DataError("kernel parameter arrays differ in length")
        if self.targets.ndim != 2 or self.targets.shape[0] != n:
            raise DataError("targets must be (n_neurons, out_degree)")
        if self.delays.shape != self.targets.shape or self.weights.shape != self.targets.shape:
            raise DataError("targets, delays, and weights must share a shape")
        if not 0 < self.n_excitatory <= n:
            raise DataError("n_excitatory out of range")
        if self.targets.min() < 0 or self.targets.max() >= n:
            raise DataError("synapse target out of range")
        if (self.targets == np.arange(n)[:, None]).any():
            raise DataError("self-synapses are not allowed")
        if (self.targets[self.n_excitatory:] >= self.n_excitatory).any():
            raise DataError("inhibitory neurons may only target excitatory neurons")
        if self.delays.min() < 1 or self.delays.max() > MAX_DELAY_MS:
            raise DataError(f"delays must lie in [1, {MAX_DELAY_MS}] ms")
        exc = self.weights[: self.n_excitatory]
        if exc.min() < 0 or exc.max() > self.w_max:
            raise DataError("excitatory weights outside [0, w_max]")
        if self.weights[self.n_excitatory:].max(initial=0.0) > 0:
            raise DataError("inhibitory weights must be non-positive")
        self.kernel_pair = tuple(self.kernel_pair)

    @property
    def n_total(self) -> int:
        return int(self.a.size)

    @property
    def n_inhibitory(self) -> int:
        return self.n_total - self.n_excitatory

    @property
    def out_degree(self) -> int:
        return int(self.targets.shape[1])

    def copy(self) -> "SpikingNetwork":
        return SpikingNetwork(
            n_excitatory=self.n_excitatory,
            a=self.a.copy(),
            b=self.b.copy(),
            c=self.c.copy(),
            d=self.d.copy(),
            targets=self.targets.copy(),
            delays=self.delays.copy(),
            weights=self.weights.copy(),
            w_max=self.w_max,
            seed=self.seed,
            kernel_pair=self.kernel_pair,
        )

    def to_dict(self) -> dict:
        neurons = []
        for i in range(self.n_total):
            neurons.append(
                {
                    "a": float(self.a[i]),
                    "b": float(self.b[i]),
                    "c": float(self.c[i]),
                    "d": float(self.d[i]),
                    "class": "excitatory" if i < self.n_excitatory else "inhibitory",
                }
            )
        synapses = []
        for pre in range(self.n_total):
            for k in range(self.out_degree):
                synapses.append(
                    {
                        "pre": pre,
                        "post": int(self.targets[pre, k]),
                        "delay": int(self.delays[pre, k]),
                        "weight": float(self.weights[pre, k]),
                    }
                )
        return {
            "version": 1,
            "seed": self.seed,
            "kernel_pair": list(self.kernel_pair),
            "w_max": self.w_max,
            "neurons": neurons,
            "synapses": synapses,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "SpikingNetwork":
        if payload.get("version") != 1:
            raise DataError(f"unsupported network format version {payload.get('version')!r}")
        neurons = payload["neurons"]
        n = len(neurons)
        classes = [rec["class"] for rec in neurons]
        n_exc = classes.count("excitatory")
        if classes != ["excitatory"] * n_exc + ["inhibitory"] * (n - n_exc):
            raise DataError("neurons must list all excitatory entries before inhibitory ones")
        per_pre = [[] for _ in range(n)]
        for rec in payload["synapses"]:
            per_pre[rec["pre"]].append(rec)
        degree = len(per_pre[0]) if n else 0
        if any(len(rows) != degree for rows in per_pre):
            raise DataError("every neuron must carry the same number of synapses")
        targets = np.array([[r["post"] for r in rows] for rows in per_pre], dtype=np.int32)
        delays = np.array([[r["delay"] for r in rows] for rows in per_pre], dtype=np.int32)
        weights = np.array([[r["weight"] for r in rows] for rows in per_pre], dtype=np.float64)
        return cls(
            n_excitatory=n_exc,
            a=np.array([rec["a"] for rec in neurons]),
            b=np.array([rec["b"] for rec in neurons]),
            c=np.array([rec["c"] for rec in neurons]),
            d=np.array([rec["d"] for rec in neurons]),
            targets=targets,
            delays=delays,
            weights=weights,
            w_max=float(payload.get("w_max", DEFAULT_W_MAX)),
            seed=int(payload.get("seed", 0)),
            kernel_pair=tuple(payload.get("kernel_pair", ("RS", "LTS"))),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "SpikingNetwork":
        with open(path) as fh:
            try:
                payload = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: not valid JSON ({exc})") from None
        return cls.from_dict(payload)


def build_network(
    kernel_pair=("RS", "LTS"),
    seed=0,
    n_excitatory=N_EXCITATORY,
    n_inhibitory=N_INHIBITORY,
    out_degree=OUT_DEGREE,
) -> SpikingNetwork:
    """Draw a random network: fixed out-degree, no self loops, inhibitory
    neurons projecting onto excitatory ones only.

    Excitatory synapses start at +6, inhibitory at -5; delays are uniform
    integers in [1, 20] ms.
    """
    exc_kernel = NeuronKernel.from_preset(kernel_pair[0])
    inh_kernel = NeuronKernel.from_preset(kernel_pair[1])
    if not exc_kernel.excitatory:
        raise ConfigError(f"{kernel_pair[0]!r} is not an excitatory preset")
    if inh_kernel.excitatory:
        raise ConfigError(f"{kernel_pair[1]!r} is not an inhibitory preset")
    n = n_excitatory + n_inhibitory
    if out_degree > n_excitatory:
        raise ConfigError("out-degree exceeds the excitatory target pool")
    rng = np.random.default_rng(seed)
    targets = np.empty((n, out_degree), dtype=np.int32)
    everyone = np.arange(n)
    for i in range(n):
        if i < n_excitatory:
            pool = np.delete(everyone, i)
        else:
            pool = everyone[:n_excitatory]
        targets[i] = rng.choice(pool, size=out_degree, replace=False)
    delays = rng.integers(1, MAX_DELAY_MS + 1, size=(n, out_degree), dtype=np.int32)
    weights = np.full((n, out_degree), INIT_W_EXC)
    weights[n_excitatory:] = INIT_W_INH
    kernels = [exc_kernel] * n_excitatory + [inh_kernel] * n_inhibitory
    return SpikingNetwork(
        n_excitatory=n_excitatory,
        a=np.array([k.a for k in kernels]),
        b=np.array([k.b for k in kernels]),
        c=np.array([k.c for k in kernels]),
        d=np.array([k.d for k in kernels]),
        targets=targets,
        delays=delays,
        weights=weights,
        w_max=DEFAULT_W_MAX,
        seed=seed,
        kernel_pair=(kernel_pair[0], kernel_pair[1]),
    )


def fit_quantizer(values, min_samples=100):
    """Robust value range for amplitude quantization.

    Returns the (1st, 99th) percentile pair of the pooled samples.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size < min_samples:
        raise DataError(f"quantizer needs at least {min_samples} samples, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise DataError("quantizer input contains non-finite values")
    r1, r99 = np.percentile(v, [1.0, 99.0])
    if not r1 < r99:
        raise DataError("degenerate value range: 1st and 99th percentiles coincide")
    return float(r1), float(r99)


def quantize(values, r1, r99, n_levels=DEFAULT_LEVELS):
    """Map amplitudes onto integer levels 0..n_levels-1.

    Values at or below r1 land on level 0, values at or beyond r99 on the
    top level, and the open interval is split evenly.
    """
    if not r1 < r99:
        raise ConfigError("quantizer requires r1 < r99")
    if n_levels < 2:
        raise ConfigError("need at least two quantization levels")
    x = np.asarray(values, dtype=np.float64)
    q = np.floor((x - r1) / (r99 - r1) * n_levels)
    q = np.clip(q, 0, n_levels - 1).astype(np.int64)
    if np.ndim(values) == 0:
        return int(q)
    return q


@dataclass(frozen=True, eq=False)
class LevelMap:
    """Random partition of the excitatory population into per-level groups."""

    levels: np.ndarray
    seed: int = 0

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=np.int32)
        if levels.ndim != 2:
            raise DataError("level map must be a 2-D array")
        if np.unique(levels).size != levels.size:
            raise DataError("level map assigns some neuron twice")
        object.__setattr__(self, "levels", levels)

    @property
    def n_levels(self) -> int:
        return int(self.levels.shape[0])

    @property
    def group_size(self) -> int:
        return int(self.levels.shape[1])

    def to_dict(self) -> dict:
        return {"seed": self.seed, "levels": self.levels.tolist()}

    @classmethod
    def from_dict(cls, payload: dict) -> "LevelMap":
        return cls(np.asarray(payload["levels"], dtype=np.int32), int(payload["seed"]))


def map_levels(n_levels=DEFAULT_LEVELS, seed=0, n_excitatory=N_EXCITATORY) -> LevelMap:
    """Shuffle the excitatory indices into n_levels equal groups."""
    if n_excitatory % n_levels:
        raise ConfigError(
            f"{n_excitatory} excitatory neurons do not split evenly into {n_levels} levels"
        )
    perm = np.random.default_rng(seed).permutation(n_excitatory)
    return LevelMap(perm.reshape(n_levels, -1).astype(np.int32), seed)


@dataclass(frozen=True, eq=False)
class StimulusSchedule:
    """Per-tick injection plan: at times[k], drive neurons[k] with `current`."""

    times: np.ndarray
    neurons: np.ndarray
    current: float = STIM_CURRENT

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.int32).ravel()
        n = np.asarray(self.neurons, dtype=np.int32).ravel()
        if t.shape != n.shape:
            raise DataError("schedule times and neurons differ in length")
        if t.size and t.min() < 1:
            raise DataError("schedule times are 1-based milliseconds")
        if t.size and np.unique(t).size != t.size:
            raise DataError("schedule drives more than one neuron in the same millisecond")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "neurons", n)

    @property
    def duration(self) -> int:
        return int(self.times.max()) if self.times.size else 0


def schedule_stimuli(column, level_map: LevelMap, current=STIM_CURRENT) -> StimulusSchedule:
    """Unroll a quantized event column into a one-neuron-per-millisecond drive.

    Row r (1-based) with level q stimulates the q-th level group, one neuron
    per tick, over milliseconds g*(r-1)+1 .. g*r where g is the group size.
    """
    col = np.asarray(column)
    if col.ndim != 1 or col.size == 0:
        raise DataError("quantized event column must be a non-empty 1-D array")
    n_levels, group = level_map.levels.shape
    if col.min() < 0 or col.max() >= n_levels:
        raise DataError(f"quantized level outside [0, {n_levels})")
    rows = col.size
    if rows * group + SETTLE_MS > PRESENTATION_MS:
        raise DataError(
            f"event with {rows} rows exceeds the {PRESENTATION_MS} ms presentation budget"
        )
    neurons = level_map.levels[col].ravel().astype(np.int32)
    base = (np.arange(rows, dtype=np.int32) * group)[:, None]
    times = (base + np.arange(1, group + 1, dtype=np.int32)).ravel()
    return StimulusSchedule(times, neurons, float(current))


@dataclass(frozen=True)
class StdpRule:
    """Exponential spike-timing kernel applied to excitatory synapses."""

    a_plus: float = 0.1
    a_minus: float = 0.12
    tau_plus: float = 20.0
    tau_minus: float = 20.0

    def potentiation(self, delta_ms):
        """Increment when the arrival precedes the fire by delta_ms > 0."""
        d = np.asarray(delta_ms, dtype=np.float64)
        out = np.where(d > 0, self.a_plus * np.exp(-d / self.tau_plus), 0.0)
        return float(out) if np.ndim(delta_ms) == 0 else out

    def depression(self, delta_ms):
        """Signed decrement when the arrival lags the last fire by delta_ms > 0."""
        d = np.asarray(delta_ms, dtype=np.float64)
        out = np.where(d > 0, -self.a_minus * np.exp(-d / self.tau_minus), 0.0)
        return float(out) if np.ndim(delta_ms) == 0 else out


def _stim_matrix(schedules, duration_ms):
    """Dense (duration+1, batch) lookup of the neuron driven at each tick."""
    stim = np.full((duration_ms + 1, len(schedules)), -1, dtype=np.int32)
    currents = np.empty(len(schedules))
    for k, sch in enumerate(schedules):
        if sch.duration > duration_ms:
            raise DataError("stimulus schedule extends past the simulation window")
        stim[sch.times, k] = sch.neurons
        currents[k] = sch.current
    return stim, currents


def _run_frozen_numpy(network: SpikingNetwork, stim, currents, duration_ms):
    """Reference engine: advance one network against a batch of schedules."""
    batch = stim.shape[1]
    n = network.n_total
    v = np.tile(network.c, (batch, 1))
    u = network.b * v
    ring = np.zeros((_RING, batch, n))
    out_degree = network.out_degree
    rec_b, rec_n, rec_t = [], [], []
    for t in range(1, duration_ms + 1):
        current = ring[t % _RING]
        row = stim[t]
        hit = np.nonzero(row >= 0)[0]
        if hit.size:
            current[hit, row[hit]] += currents[hit]
        integrate_tick(v, u, network.a, network.b, current)
        _check_finite(v, u, t)
        rows, cols = np.nonzero(v >= FIRE_THRESHOLD)
        if rows.size:
            v[rows, cols] = network.c[cols]
            u[rows, cols] += network.d[cols]
            rec_b.append(rows.astype(np.int32))
            rec_n.append(cols.astype(np.int32))
            rec_t.append(np.full(rows.size, t, dtype=np.int32))
            posts = network.targets[cols].ravel()
            lands = (t + network.delays[cols].ravel()) % _RING
            np.add.at(ring, (lands, np.repeat(rows, out_degree), posts),
                      network.weights[cols].ravel())
        current[:] = 0.0
    if rec_b:
        return np.concatenate(rec_b), np.concatenate(rec_n), np.concatenate(rec_t)
    empty = np.empty(0, dtype=np.int32)
    return empty, empty.copy(), empty.copy()


def _frozen_loop_impl(stim, currents, a, b, c, d, targets, delays, weights,
                      duration, out_b, out_n, out_t):
    """Fused tick loop; mirrors the numpy engine's update and delivery order."""
    batch = stim.shape[1]
    n = a.shape[0]
    k_out = targets.shape[1]
    v = np.empty((batch, n))
    u = np.empty((batch, n))
    for i in range(batch):
        for j in range(n):
            v[i, j] = c[j]
            u[i, j] = b[j] * c[j]
    ring = np.zeros((_RING, batch, n))
    cap = out_b.shape[0]
    count = 0
    for t in range(1, duration + 1):
        slot = t % _RING
        for i in range(batch):
            s = stim[t, i]
            if s >= 0:
                ring[slot, i, s] += currents[i]
        for i in range(batch):
            for j in range(n):
                vv = v[i, j]
                uu = u[i, j]
                cc = ring[slot, i, j]
                vv += 0.5 * (0.04 * vv * vv + 5.0 * vv + 140.0 - uu + cc)
                vv += 0.5 * (0.04 * vv * vv + 5.0 * vv + 140.0 - uu + cc)
                uu = uu + a[j] * (b[j] * vv - uu)
                if not (np.isfinite(vv) and np.isfinite(uu)):
                    return count, j, t
                if vv >= FIRE_THRESHOLD:
                    v[i, j] = c[j]
                    u[i, j] = uu + d[j]
                    if count < cap:
                        out_b[count] = i
                        out_n[count] = j
                        out_t[count] = t
                    count += 1
                    for q in range(k_out):
                        land = (t + delays[j, q]) % _RING
                        ring[land, i, targets[j, q]] += weights[j, q]
                else:
                    v[i, j] = vv
                    u[i, j] = uu
        for i in range(batch):
            for j in range(n):
                ring[slot, i, j] = 0.0
    return count, -1, 0


if _tick_jit is not None:
    _frozen_jit = _njit(cache=True)(_frozen_loop_impl)
else:  # pragma: no cover
    _frozen_jit = None


def _run_frozen(network: SpikingNetwork, stim, currents, duration_ms):
    """Advance one network against a batch of schedules; weights stay fixed."""
    if _frozen_jit is None:
        return _run_frozen_numpy(network, stim, currents, duration_ms)
    cap = max(1024, 2 * stim.shape[1] * duration_ms)
    while True:
        out_b = np.empty(cap, dtype=np.int32)
        out_n = np.empty(cap, dtype=np.int32)
        out_t = np.empty(cap, dtype=np.int32)
        count, bad_neuron, bad_t = _frozen_jit(
            np.ascontiguousarray(stim, dtype=np.int64), currents,
            network.a, network.b, network.c, network.d,
            np.ascontiguousarray(network.targets, dtype=np.int64),
            np.ascontiguousarray(network.delays, dtype=np.int64),
            network.weights, duration_ms, out_b, out_n, out_t)
        if bad_neuron >= 0:
            raise NumericalError(
                f"membrane state diverged for neuron {bad_neuron} at t={bad_t} ms")
        if count <= cap:
            return out_b[:count], out_n[:count], out_t[:count]
        cap = count  # undersized spike buffer: retry with the exact size


def simulate_batch(network, schedules, duration_ms=PRESENTATION_MS, chunk_size=128):
    """Simulate many schedules against one frozen network.

    Schedules run in lockstep chunks so the delivery ring stays cache-sized;
    results are bit-identical to simulating one at a time.
    """
    maps = []
    for lo in range(0, len(schedules), chunk_size):
        part = schedules[lo:lo + chunk_size]
        stim, currents = _stim_matrix(part, duration_ms)
        all_b, all_n, all_t = _run_frozen(network, stim, currents, duration_ms)
        for k in range(len(part)):
            sel = all_b == k
            maps.append(FiringMap(network.n_total, duration_ms, all_n[sel], all_t[sel]))
    return maps


@dataclass(eq=False)
class _Lockstep:
    """Stacked per-network arrays for the plastic engine."""

    weights: np.ndarray
    targets: np.ndarray
    delays: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    n_excitatory: int
    w_max: float
    rev_pre: np.ndarray
    rev_slot: np.ndarray
    rev_valid: np.ndarray


def _reverse_adjacency(targets):
    """Group synapses by postsynaptic neuron, padded to the max in-degree."""
    n, k = targets.shape
    posts = targets.ravel()
    pres = np.repeat(np.arange(n, dtype=np.int32), k)
    slots = np.tile(np.arange(k, dtype=np.int32), n)
    order = np.argsort(posts, kind="stable")
    posts_s = posts[order]
    counts = np.bincount(posts_s, minlength=n)
    depth = int(counts.max()) if n else 0
    rev_pre = np.zeros((n, depth), dtype=np.int32)
    rev_slot = np.zeros((n, depth), dtype=np.int32)
    rev_valid = np.zeros((n, depth), dtype=bool)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    pos = np.arange(posts_s.size) - np.repeat(starts, counts)
    rev_pre[posts_s, pos] = pres[order]
    rev_slot[posts_s, pos] = slots[order]
    rev_valid[posts_s, pos] = True
    return rev_pre, rev_slot, rev_valid


def _stack_networks(networks) -> _Lockstep:
    base = networks[0]
    shape = base.targets.shape
    for net in networks[1:]:
        if (net.targets.shape != shape or net.n_excitatory != base.n_excitatory
                or net.w_max != base.w_max):
            raise ConfigError("lockstep training requires structurally matching networks")
    revs = [_reverse_adjacency(net.targets) for net in networks]
    depth = max(r[0].shape[1] for r in revs)
    batch = len(networks)
    n = shape[0]
    rev_pre = np.zeros((batch, n, depth), dtype=np.int32)
    rev_slot = np.zeros((batch, n, depth), dtype=np.int32)
    rev_valid = np.zeros((batch, n, depth), dtype=bool)
    for i, (rp, rs, rv) in enumerate(revs):
        rev_pre[i, :, : rp.shape[1]] = rp
        rev_slot[i, :, : rp.shape[1]] = rs
        rev_valid[i, :, : rp.shape[1]] = rv
    return _Lockstep(
        weights=np.stack([net.weights for net in networks]),
        targets=np.stack([net.targets for net in networks]),
        delays=np.stack([net.delays for net in networks]),
        a=np.stack([net.a for net in networks]),
        b=np.stack([net.b for net in networks]),
        c=np.stack([net.c for net in networks]),
        d=np.stack([net.d for net in networks]),
        n_excitatory=base.n_excitatory,
        w_max=base.w_max,
        rev_pre=rev_pre,
        rev_slot=rev_slot,
        rev_valid=rev_valid,
    )


def _run_plastic_numpy(st: _Lockstep, stim, currents, total_ms, rule: StdpRule,
                       apply_interval_ms, boundaries, record):
    """Reference STDP engine; see _run_plastic for the update contract."""
    batch, n, out_degree = st.weights.shape
    n_exc = st.n_excitatory
    weights = st.weights
    v = st.c.copy()
    u = st.b * v
    ring_ev = [[] for _ in range(_RING)]
    last_fire = np.full((batch, n), _FAR_PAST, dtype=np.int64)
    last_arr = np.full((batch, n, out_degree), _FAR_PAST, dtype=np.int64)
    pending = np.zeros_like(weights) if apply_interval_ms > 1 else None
    traces = np.zeros((batch, boundaries.size))
    snap = weights.copy() if boundaries.size else None
    next_boundary = 0
    rec_b, rec_n, rec_t = [], [], []
    slot_ids = np.arange(out_degree, dtype=np.int32)

    def flush_pending():
        if pending is not None:
            np.clip(weights[:, :n_exc] + pending[:, :n_exc], 0.0, st.w_max,
                    out=weights[:, :n_exc])
            pending[:, :n_exc] = 0.0

    for t in range(1, total_ms + 1):
        current = np.zeros((batch, n))
        bucket = ring_ev[t % _RING]
        if bucket:
            b_a = np.concatenate([e[0] for e in bucket])
            pre_a = np.concatenate([e[1] for e in bucket])
            slot_a = np.concatenate([e[2] for e in bucket])
            post_a = st.targets[b_a, pre_a, slot_a]
            np.add.at(current, (b_a, post_a), weights[b_a, pre_a, slot_a])
            ring_ev[t % _RING] = []
        else:
            b_a = None
        row = stim[t]
        hit = np.nonzero(row >= 0)[0]
        if hit.size:
            current[hit, row[hit]] += currents[hit]
        integrate_tick(v, u, st.a, st.b, current)
        _check_finite(v, u, t)
        rows, cols = np.nonzero(v >= FIRE_THRESHOLD)
        if rows.size:
            v[rows, cols] = st.c[rows, cols]
            u[rows, cols] += st.d[rows, cols]
            last_fire[rows, cols] = t
            if record:
                rec_b.append(rows.astype(np.int32))
                rec_n.append(cols.astype(np.int32))
                rec_t.append(np.full(rows.size, t, dtype=np.int32))
        if b_a is not None:
            fire_t = last_fire[b_a, post_a]
            mask = (pre_a < n_exc) & (fire_t < t)
            if mask.any():
                drop = rule.a_minus * np.exp((fire_t[mask] - t) / rule.tau_minus)
                bi, pi, si = b_a[mask], pre_a[mask], slot_a[mask]
                if pending is None:
                    weights[bi, pi, si] = np.maximum(weights[bi, pi, si] - drop, 0.0)
                else:
                    pending[bi, pi, si] -= drop
            last_arr[b_a, pre_a, slot_a] = t
        if rows.size:
            rev_p = st.rev_pre[rows, cols]
            rev_s = st.rev_slot[rows, cols]
            b_mat = np.broadcast_to(rows[:, None], rev_p.shape)
            gap = t - last_arr[b_mat, rev_p, rev_s]
            mask = st.rev_valid[rows, cols] & (rev_p < n_exc) & (gap > 0)
            if mask.any():
                gain = rule.a_plus * np.exp(-gap[mask] / rule.tau_plus)
                bi, pi, si = b_mat[mask], rev_p[mask], rev_s[mask]
                if pending is None:
                    weights[bi, pi, si] = np.minimum(weights[bi, pi, si] + gain, st.w_max)
                else:
                    pending[bi, pi, si] += gain
            delay_f = st.delays[rows, cols].ravel()
            b_rep = np.repeat(rows.astype(np.int32), out_degree)
            pre_rep = np.repeat(cols.astype(np.int32), out_degree)
            slot_rep = np.tile(slot_ids, rows.size)
            order = np.argsort(delay_f, kind="stable")
            delay_s = delay_f[order]
            edges = np.searchsorted(delay_s, np.arange(1, MAX_DELAY_MS + 2))
            for d in range(1, MAX_DELAY_MS + 1):
                lo, hi = edges[d - 1], edges[d]
                if lo < hi:
                    sel = order[lo:hi]
                    ring_ev[(t + d) % _RING].append((b_rep[sel], pre_rep[sel], slot_rep[sel]))
        if pending is not None and t % apply_interval_ms == 0:
            flush_pending()
        if next_boundary < boundaries.size and t == boundaries[next_boundary]:
            flush_pending()
            diff = weights - snap
            traces[:, next_boundary] = np.sqrt((diff * diff).sum(axis=(1, 2)))
            np.copyto(snap, weights)
            next_boundary += 1
    flush_pending()
    if rec_b:
        rec = (np.concatenate(rec_b), np.concatenate(rec_n), np.concatenate(rec_t))
    else:
        empty = np.empty(0, dtype=np.int32)
        rec = (empty, empty.copy(), empty.copy())
    return rec, traces


def _plastic_segment_impl(stim_seg, currents, t_start, interval, immediate,
                          weights, pending, v, u, last_fire, last_arr,
                          ring_i, ring_j, ring_cnt,
                          targets, delays, a, b, c, d_reset, n_exc, w_max,
                          rev_pre, rev_slot, rev_valid, dep_table, pot_table,
                          record, out_b, out_n, out_t):
    """One contiguous span of the STDP run; state arrays carry across calls.

    Reproduces the reference engine tick for tick: arrivals are replayed in
    source-tick order from the fire ring, and the exp kernels come from
    integer-gap tables so both engines see identical operands.
    """
    batch, n, k_out = weights.shape
    depth = rev_pre.shape[2]
    tab_len = dep_table.shape[0]
    fired_i = np.empty(batch * n, dtype=np.int64)
    fired_j = np.empty(batch * n, dtype=np.int64)
    current = np.empty((batch, n))
    count = 0
    for step in range(stim_seg.shape[0]):
        t = t_start + 1 + step
        slot = t % _RING
        for i in range(batch):
            for j in range(n):
                current[i, j] = 0.0
        # deliver: source ticks ascending, within a tick in fire order
        for dd in range(MAX_DELAY_MS, 0, -1):
            tp = t - dd
            if tp < 1:
                continue
            src = tp % _RING
            for e in range(ring_cnt[src]):
                fi = ring_i[src, e]
                fj = ring_j[src, e]
                for q in range(k_out):
                    if delays[fi, fj, q] == dd:
                        current[fi, targets[fi, fj, q]] += weights[fi, fj, q]
        for i in range(batch):
            s = stim_seg[step, i]
            if s >= 0:
                current[i, s] += currents[i]
        nf = 0
        ring_cnt[slot] = 0
        for i in range(batch):
            for j in range(n):
                vv = v[i, j]
                uu = u[i, j]
                cc = current[i, j]
                vv += 0.5 * (0.04 * vv * vv + 5.0 * vv + 140.0 - uu + cc)
                vv += 0.5 * (0.04 * vv * vv + 5.0 * vv + 140.0 - uu + cc)
                uu = uu + a[i, j] * (b[i, j] * vv - uu)
                if not (np.isfinite(vv) and np.isfinite(uu)):
                    return count, j, t
                if vv >= FIRE_THRESHOLD:
                    v[i, j] = c[i, j]
                    u[i, j] = uu + d_reset[i, j]
                    last_fire[i, j] = t
                    fired_i[nf] = i
                    fired_j[nf] = j
                    nf += 1
                    m = ring_cnt[slot]
                    ring_i[slot, m] = i
                    ring_j[slot, m] = j
                    ring_cnt[slot] = m + 1
                    if record:
                        out_b[count] = i
                        out_n[count] = j
                        out_t[count] = t
                        count += 1
                else:
                    v[i, j] = vv
                    u[i, j] = uu
        # depress arrivals lagging their target's last fire, then stamp them
        for dd in range(MAX_DELAY_MS, 0, -1):
            tp = t - dd
            if tp < 1:
                continue
            src = tp % _RING
            for e in range(ring_cnt[src]):
                fi = ring_i[src, e]
                fj = ring_j[src, e]
                for q in range(k_out):
                    if delays[fi, fj, q] == dd:
                        if fj < n_exc:
                            ft = last_fire[fi, targets[fi, fj, q]]
                            if ft < t:
                                g = t - ft
                                drop = dep_table[g] if g < tab_len else 0.0
                                if immediate:
                                    w2 = weights[fi, fj, q] - drop
                                    weights[fi, fj, q] = w2 if w2 > 0.0 else 0.0
                                else:
                                    pending[fi, fj, q] -= drop
                        last_arr[fi, fj, q] = t
        # potentiate each fired neuron's incoming synapses
        for f in range(nf):
            i = fired_i[f]
            j = fired_j[f]
            for q in range(depth):
                if not rev_valid[i, j, q]:
                    continue
                pre = rev_pre[i, j, q]
                if pre >= n_exc:
                    continue
                sl = rev_slot[i, j, q]
                g = t - last_arr[i, pre, sl]
                if g <= 0:
                    continue
                gain = pot_table[g] if g < tab_len else 0.0
                if immediate:
                    w2 = weights[i, pre, sl] + gain
                    weights[i, pre, sl] = w2 if w2 < w_max else w_max
                else:
                    pending[i, pre, sl] += gain
        if not immediate and t % interval == 0:
            for i in range(batch):
                for j in range(n_exc):
                    for q in range(k_out):
                        x = weights[i, j, q] + pending[i, j, q]
                        if x < 0.0:
                            x = 0.0
                        if x > w_max:
                            x = w_max
                        weights[i, j, q] = x
                        pending[i, j, q] = 0.0
    return count, -1, 0


if _tick_jit is not None:
    _plastic_jit = _njit(cache=True)(_plastic_segment_impl)
else:  # pragma: no cover
    _plastic_jit = None

_SEGMENT_CAP_MS = 2000


def _run_plastic(st: _Lockstep, stim, currents, total_ms, rule: StdpRule,
                 apply_interval_ms, boundaries, record):
    """Advance stacked networks with STDP.

    Per tick: deliver queued arrivals (reading each weight at arrival time),
    integrate, detect fires, depress arrivals that lag their target's last
    fire, then potentiate each fired neuron's incoming synapses against the
    most recent earlier arrival. Zero timing gaps never update. Updates
    apply immediately for a 1 ms interval, otherwise accumulate and clamp
    every interval and at presentation boundaries.
    """
    if _plastic_jit is None:
        return _run_plastic_numpy(st, stim, currents, total_ms, rule,
                                  apply_interval_ms, boundaries, record)
    batch, n, _ = st.weights.shape
    n_exc = st.n_excitatory
    gaps = -np.arange(total_ms + 1, dtype=np.int64)
    dep_table = rule.a_minus * np.exp(gaps / rule.tau_minus)
    pot_table = rule.a_plus * np.exp(gaps / rule.tau_plus)
    immediate = apply_interval_ms == 1
    weights = st.weights
    pending = np.zeros_like(weights)
    v = st.c.copy()
    u = st.b * v
    last_fire = np.full((batch, n), _FAR_PAST, dtype=np.int64)
    last_arr = np.full(weights.shape, _FAR_PAST, dtype=np.int64)
    ring_i = np.zeros((_RING, batch * n), dtype=np.int64)
    ring_j = np.zeros_like(ring_i)
    ring_cnt = np.zeros(_RING, dtype=np.int64)
    targets = np.ascontiguousarray(st.targets, dtype=np.int64)
    delays = np.ascontiguousarray(st.delays, dtype=np.int64)
    rev_pre = np.ascontiguousarray(st.rev_pre, dtype=np.int64)
    rev_slot = np.ascontiguousarray(st.rev_slot, dtype=np.int64)
    rev_valid = np.ascontiguousarray(st.rev_valid)
    traces = np.zeros((batch, boundaries.size))
    snap = weights.copy() if boundaries.size else None

    edges = [int(x) for x in boundaries]
    if not edges or edges[-1] != total_ms:
        edges.append(total_ms)
    pieces = []
    t0 = 0
    for edge in edges:
        while edge - t0 > _SEGMENT_CAP_MS:
            pieces.append(t0 + _SEGMENT_CAP_MS)
            t0 += _SEGMENT_CAP_MS
        pieces.append(edge)
        t0 = edge
    cap = batch * n * max(p1 - p0 for p0, p1 in zip([0] + pieces, pieces))
    out_b = np.empty(cap if record else 0, dtype=np.int32)
    out_n = np.empty_like(out_b)
    out_t = np.empty_like(out_b)

    def flush_pending():
        if not immediate:
            np.clip(weights[:, :n_exc] + pending[:, :n_exc], 0.0, st.w_max,
                    out=weights[:, :n_exc])
            pending[:, :n_exc] = 0.0

    rec_parts = []
    next_boundary = 0
    t0 = 0
    for edge in pieces:
        stim_seg = np.ascontiguousarray(stim[t0 + 1:edge + 1], dtype=np.int64)
        count, bad_neuron, bad_t = _plastic_jit(
            stim_seg, currents, t0, apply_interval_ms, immediate,
            weights, pending, v, u, last_fire, last_arr,
            ring_i, ring_j, ring_cnt,
            targets, delays, st.a, st.b, st.c, st.d, n_exc, st.w_max,
            rev_pre, rev_slot, rev_valid, dep_table, pot_table,
            record, out_b, out_n, out_t)
        if bad_neuron >= 0:
            raise NumericalError(
                f"membrane state diverged for neuron {bad_neuron} at t={bad_t} ms")
        if record and count:
            rec_parts.append((out_b[:count].copy(), out_n[:count].copy(),
                              out_t[:count].copy()))
        if next_boundary < boundaries.size and edge == boundaries[next_boundary]:
            flush_pending()
            diff = weights - snap
            traces[:, next_boundary] = np.sqrt((diff * diff).sum(axis=(1, 2)))
            np.copyto(snap, weights)
            next_boundary += 1
        t0 = edge
    flush_pending()
    if rec_parts:
        rec = tuple(np.concatenate([p[k] for p in rec_parts]) for k in range(3))
    else:
        empty = np.empty(0, dtype=np.int32)
        rec = (empty, empty.copy(), empty.copy())
    return rec, traces


def simulate(network: SpikingNetwork, schedule: StimulusSchedule,
             duration_ms=PRESENTATION_MS, plasticity=False,
             rule: StdpRule | None = None, apply_interval_ms=1) -> FiringMap:
    """Run one schedule against a network.

    With plasticity off the network is read-only. With plasticity on, STDP
    updates are applied as the run proceeds and the network's weights are
    modified in place.
    """
    if not plasticity:
        return simulate_batch(network, [schedule], duration_ms)[0]
    stim, currents = _stim_matrix([schedule], duration_ms)
    st = _stack_networks([network])
    rec, _ = _run_plastic(st, stim, currents, duration_ms, rule or StdpRule(),
                          apply_interval_ms, np.empty(0, dtype=np.int64), record=True)
    network.weights[:] = st.weights[0]
    sel = rec[0] == 0
    return FiringMap(network.n_total, duration_ms, rec[1][sel], rec[2][sel])


def train_weights_batch(networks, columns_per_net, level_maps, presentations=3600,
                        seed=0, rule: StdpRule | None = None, apply_interval_ms=1):
    """STDP-train several networks in lockstep on a shared presentation order.

    Each network sees its own channel's quantized events, but the sequence
    of event indices (drawn uniformly with replacement) is common, so one
    pass over time trains every channel. State persists across consecutive
    250 ms presentations. Returns the networks (mutated in place) and one
    per-presentation weight-change trace per network.
    """
    if not networks:
        raise ConfigError("no networks to train")
    if len(columns_per_net) != len(networks) or len(level_maps) != len(networks):
        raise ConfigError("need one event list and one level map per network")
    n_events = len(columns_per_net[0])
    if n_events == 0:
        raise DataError("no training events")
    if any(len(cols) != n_events for cols in columns_per_net):
        raise DataError("event count must match across channels")
    if presentations < 1:
        raise ConfigError("presentations must be >= 1")
    if apply_interval_ms < 1 or PRESENTATION_MS % apply_interval_ms:
        raise ConfigError(
            f"apply interval must divide the {PRESENTATION_MS} ms presentation")
    rule = rule or StdpRule()
    scheds = [
        [schedule_stimuli(col, lm) for col in cols]
        for cols, lm in zip(columns_per_net, level_maps)
    ]
    order = np.random.default_rng(seed).integers(0, n_events, size=presentations)
    total_ms = presentations * PRESENTATION_MS
    stim = np.full((total_ms + 1, len(networks)), -1, dtype=np.int32)
    currents = np.array([scheds[i][0].current for i in range(len(networks))])
    for p, event in enumerate(order):
        base = p * PRESENTATION_MS
        for i in range(len(networks)):
            sch = scheds[i][event]
            stim[base + sch.times, i] = sch.neurons
    st = _stack_networks(networks)
    boundaries = np.arange(1, presentations + 1, dtype=np.int64) * PRESENTATION_MS
    _, traces = _run_plastic(st, stim, currents, total_ms, rule, apply_interval_ms,
                             boundaries, record=False)
    for i, net in enumerate(networks):
        net.weights[:] = st.weights[i]
    return networks, [traces[i] for i in range(len(networks))]


def train_weights(network, columns, level_map, presentations=3600, seed=0,
                  rule: StdpRule | None = None, apply_interval_ms=1):
    """Train one network on repeated presentations of its quantized events.

    Returns (network, trace) where trace[p] is the 2-norm of the weight
    change over presentation p; a flattening trace indicates convergence.
    """
    nets, traces = train_weights_batch(
        [network], [list(columns)], [level_map], presentations=presentations,
        seed=seed, rule=rule, apply_interval_ms=apply_interval_ms)
    return nets[0], traces[0]

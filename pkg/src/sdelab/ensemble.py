"""Ensemble runners behind the rate and ergodicity estimators.

Two engines produce the same per-path numbers:

* a vectorized kernel that steps all paths of an ensemble simultaneously on a
  rolling window buffer -- available for the built-in linear families of the
  continuous classes, where the coefficient reads reduce to array gathers;
* a generic fallback that simulates paths one by one through
  :func:`sdelab.engine.simulate` -- used for hand-rolled coefficients and for
  the jump class (whose exact-epoch grids differ per path).

Because every path's noise is addressed by ``(master_seed, path_index, step,
channel)``, the two engines consume identical randomness, and for the
one-dimensional built-ins they produce bitwise-identical states (the batch
arithmetic mirrors the per-path expressions operation for operation).

Estimators talk to the runners through observers: an observer is notified
with the trailing ``tau``-window of the state after every step and reduces it
immediately (record at chosen steps, accumulate time averages), so long
horizons never materialize full ensembles in memory.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .errors import DomainError, FixedPointError
from .models import (
    Distributed,
    LinearRetardedDescriptor,
    ModelClass,
    NeutralLinearDescriptor,
    PointConstant,
    PointVariable,
)
from .engine import SimConfig, simulate, steps_per_window
from .noise import NoiseStream
from .paths import Segment, evaluate

__all__ = [
    "WindowRecorder",
    "IntegralAccumulator",
    "EnsembleOutcome",
    "run_ensemble",
    "supports_batch",
]

_CHUNK_STEPS = 1024
_MAX_BATCH_PATHS = 4096


class WindowRecorder:
    """Record window reductions at chosen step indices.

    ``fns`` maps a name to a callable taking the trailing window (shape
    ``(..., W, n)``, or two such windows for coupled runs) and returning a
    scalar per path.  Missing entries (diverged/truncated paths) stay NaN.
    """

    def __init__(self, record_steps, fns, n_paths):
        self.record_steps = np.asarray(sorted(record_steps), dtype=int)
        self._col = {int(s): i for i, s in enumerate(self.record_steps)}
        self.fns = dict(fns)
        self.out = {name: np.full((n_paths, self.record_steps.size), np.nan)
                    for name in self.fns}

    def see_batch(self, step, *wins):
        col = self._col.get(step)
        if col is None:
            return
        for name, fn in self.fns.items():
            self.out[name][:, col] = fn(*wins)

    def see_path(self, path, step, *wins):
        col = self._col.get(step)
        if col is None:
            return
        for name, fn in self.fns.items():
            self.out[name][path, col] = fn(*wins)


class IntegralAccumulator:
    """Accumulate a strided time average of one window reduction.

    Sums are kept per path and per contiguous time block (``n_blocks`` blocks
    of the strided record sequence), which is enough to batch-mean either
    over ensemble members or over time afterwards without storing series.
    """

    def __init__(self, burn_steps, stride, fn, n_paths, n_records, n_blocks=16):
        self.burn_steps = int(burn_steps)
        self.stride = max(1, int(stride))
        self.fn = fn
        n_blocks = max(1, min(int(n_blocks), max(1, int(n_records))))
        self.block_len = max(1, -(-int(n_records) // n_blocks))
        self.n_blocks = n_blocks
        self.block_sums = np.zeros((n_paths, n_blocks))
        self.block_counts = np.zeros((n_paths, n_blocks), dtype=int)
        self.max_abs = np.zeros(n_paths)

    def _record_index(self, step):
        if step <= self.burn_steps or (step - self.burn_steps) % self.stride:
            return None
        return (step - self.burn_steps) // self.stride - 1

    def _block(self, rec):
        return min(rec // self.block_len, self.n_blocks - 1)

    def see_batch(self, step, *wins):
        rec = self._record_index(step)
        if rec is None:
            return
        v = self.fn(*wins)
        blk = self._block(rec)
        self.block_sums[:, blk] += v
        self.block_counts[:, blk] += 1
        np.maximum(self.max_abs, np.abs(v), out=self.max_abs)

    def see_path(self, path, step, *wins):
        rec = self._record_index(step)
        if rec is None:
            return
        v = float(self.fn(*wins))
        blk = self._block(rec)
        self.block_sums[path, blk] += v
        self.block_counts[path, blk] += 1
        self.max_abs[path] = max(self.max_abs[path], abs(v))

    @property
    def sums(self):
        return self.block_sums.sum(axis=1)

    @property
    def counts(self):
        return self.block_counts.sum(axis=1)


class _MultiObserver:
    def __init__(self, observers):
        self.observers = list(observers)

    def see_batch(self, step, *wins):
        for ob in self.observers:
            ob.see_batch(step, *wins)

    def see_path(self, path, step, *wins):
        for ob in self.observers:
            ob.see_path(path, step, *wins)


class EnsembleOutcome:
    """Bookkeeping shared by both engines: who diverged, and when."""

    def __init__(self, n_paths):
        self.n_paths = n_paths
        self.diverged = np.zeros(n_paths, dtype=bool)
        self.first_bad_time = np.full(n_paths, np.nan)
        self.max_fixed_point_iters = 0

    @property
    def n_diverged(self) -> int:
        return int(self.diverged.sum())


def supports_batch(model) -> bool:
    return isinstance(model.descriptor, (LinearRetardedDescriptor, NeutralLinearDescriptor))


def run_ensemble(model, xi, cfg: SimConfig, n_paths: int, observer,
                 path_offset: int = 0, eta: Segment | None = None) -> EnsembleOutcome:
    """Run ``n_paths`` paths (or coupled pairs when ``eta`` is given),
    feeding every post-step window to ``observer``."""
    if n_paths < 1:
        raise DomainError("need at least one path")
    if supports_batch(model):
        return _run_batch(model, xi, cfg, n_paths, observer, path_offset, eta)
    return _run_generic(model, xi, cfg, n_paths, observer, path_offset, eta)


# ---------------------------------------------------------------------------
# batch kernel (continuous built-ins)
# ---------------------------------------------------------------------------

def _read_back(buf, head, back):
    """Gather the value ``back`` steps behind ``head`` (fractional allowed).

    Mirrors the per-path segment view's interpolation expression exactly.
    """
    r = round(back)
    if abs(back - r) < 1e-9 * max(1.0, back):
        return buf[:, head - int(r)]
    i = int(math.floor(back))
    w = back - i
    lo = buf[:, head - i - 1]
    hi = buf[:, head - i]
    return w * lo + (1.0 - w) * hi


def _delayed_batch(buf, head, delay, t, h, tau):
    if isinstance(delay, PointConstant):
        return _read_back(buf, head, delay.lag / h)
    if isinstance(delay, PointVariable):
        d = float(delay.delta(t))
        if d < -1e-12 or d > tau + 1e-12:
            raise DomainError(f"variable delay {d!r} outside [0, tau] at t={t!r}")
        return _read_back(buf, head, min(max(d, 0.0), tau) / h)
    acc = delay.weights[0] * _read_back(buf, head, -delay.atoms[0] / h)
    for a, w in zip(delay.atoms[1:], delay.weights[1:]):
        acc = acc + w * _read_back(buf, head, -a / h)
    return acc


def _run_batch(model, xi, cfg, n_paths, observer, path_offset, eta):
    outcome = EnsembleOutcome(n_paths)
    for lo in range(0, n_paths, _MAX_BATCH_PATHS):
        hi = min(lo + _MAX_BATCH_PATHS, n_paths)
        _run_batch_block(model, xi, cfg, lo, hi, observer, path_offset, eta, outcome)
    return outcome


def _run_batch_block(model, xi, cfg, lo, hi, observer, path_offset, eta, outcome):
    desc = model.descriptor
    neutral = isinstance(desc, NeutralLinearDescriptor)
    h = cfg.step
    tau = model.tau
    n = model.dim
    m = model.brownian_dim
    k_hist = steps_per_window(tau, h, "tau")
    n_steps = steps_per_window(cfg.horizon, h, "horizon")
    n_blk = hi - lo
    coupled = eta is not None

    cap = k_hist + 1 + _CHUNK_STEPS
    grid = np.linspace(-tau, 0.0, k_hist + 1)

    def init_buf(seg):
        buf = np.empty((n_blk, cap, n))
        hist = np.stack([evaluate(seg, th) for th in grid])
        buf[:, :k_hist + 1] = hist[None, :, :]
        return buf

    buf_a = init_buf(xi)
    buf_b = init_buf(eta) if coupled else None
    head = k_hist

    sig = desc.sigma0
    a_coef, b_coef, delay = desc.a, desc.b_lag, desc.delay
    kappa = desc.kappa if neutral else 0.0
    guard = cfg.divergence_guard

    diverged = np.zeros(n_blk, dtype=bool)
    first_bad = np.full(n_blk, np.nan)

    def win(buf):
        return buf[:, head - k_hist:head + 1]

    if neutral:
        def g_of(buf):
            return kappa * _delayed_batch(buf, head, delay, 0.0, h, tau)
        y_a = buf_a[:, head] - g_of(buf_a)
        y_b = (buf_b[:, head] - g_of(buf_b)) if coupled else None

    if coupled:
        observer.see_batch(0, win(buf_a), win(buf_b))
    else:
        observer.see_batch(0, win(buf_a))

    streams = [NoiseStream(cfg.master_seed, path_offset + lo + p) for p in range(n_blk)]
    max_fp = 0

    for k0 in range(0, n_steps, _CHUNK_STEPS):
        span = min(_CHUNK_STEPS, n_steps - k0)
        if m > 0:
            dw = np.empty((n_blk, span, m))
            for p, st in enumerate(streams):
                dw[p] = st.gaussian_block(k0, span, m)
            dw *= math.sqrt(h)
        for j in range(span):
            k = k0 + j
            if head + 1 >= cap:
                shift = head - k_hist
                buf_a[:, :k_hist + 1] = buf_a[:, shift:head + 1]
                if coupled:
                    buf_b[:, :k_hist + 1] = buf_b[:, shift:head + 1]
                head = k_hist
            t = k * h

            def step_one(buf, y):
                b = -a_coef * buf[:, head] + b_coef * _delayed_batch(buf, head, delay, t, h, tau)
                incr = b * h + dw[:, j] @ sig.T if m > 0 else b * h
                if not neutral:
                    nxt = buf[:, head] + incr
                    buf[:, head + 1] = nxt
                    return y, 0
                y = y + incr
                # contraction fixed point for the newest value, path-masked so
                # converged paths keep the iterate they stopped at
                buf[:, head + 1] = buf[:, head]
                done = np.zeros(n_blk, dtype=bool)
                it = 0
                while True:
                    it += 1
                    x_new = y + kappa * _delayed_batch(buf, head + 1, delay, 0.0, h, tau)
                    res = np.abs(x_new - buf[:, head + 1]).max(axis=1)
                    upd = ~done
                    buf[upd, head + 1] = x_new[upd]
                    done |= res <= cfg.fixed_point_tol
                    if done.all():
                        break
                    if it >= cfg.fixed_point_max_iter:
                        raise FixedPointError(
                            f"state recovery failed to converge in {it} iterations "
                            f"(step {k}, {int((~done).sum())} paths)")
                return y, it

            if neutral:
                y_a, it_a = step_one(buf_a, y_a)
                max_fp = max(max_fp, it_a)
                if coupled:
                    y_b, it_b = step_one(buf_b, y_b)
                    max_fp = max(max_fp, it_b)
            else:
                step_one(buf_a, None)
                if coupled:
                    step_one(buf_b, None)

            # guard: freeze paths that left the box (keep last good value)
            bad = ~np.all(np.isfinite(buf_a[:, head + 1]), axis=1)
            bad |= np.abs(buf_a[:, head + 1]).max(axis=1) >= guard
            if coupled:
                bad |= ~np.all(np.isfinite(buf_b[:, head + 1]), axis=1)
                bad |= np.abs(buf_b[:, head + 1]).max(axis=1) >= guard
            new_bad = bad & ~diverged
            if new_bad.any():
                first_bad[new_bad] = (k + 1) * h
                diverged |= new_bad
            if diverged.any():
                buf_a[diverged, head + 1] = buf_a[diverged, head]
                if coupled:
                    buf_b[diverged, head + 1] = buf_b[diverged, head]

            head += 1
            if coupled:
                observer.see_batch(k + 1, win(buf_a), win(buf_b))
            else:
                observer.see_batch(k + 1, win(buf_a))

    outcome.diverged[lo:hi] = diverged
    outcome.first_bad_time[lo:hi] = first_bad
    outcome.max_fixed_point_iters = max(outcome.max_fixed_point_iters, max_fp)


# ---------------------------------------------------------------------------
# generic per-path fallback
# ---------------------------------------------------------------------------

def _uniform_windows(traj, k_hist):
    """(step -> window view) for a uniform-grid trajectory."""
    states = traj.states

    def at(step):
        return states[step:step + k_hist + 1]
    return at


def _cadlag_window(traj, t, tau):
    times = traj.times
    i1 = int(np.searchsorted(times, t + 1e-12, side="right")) - 1
    i0 = int(np.searchsorted(times, t - tau + 1e-12, side="right")) - 1
    return traj.states[max(i0, 0):i1 + 1]


def _run_generic(model, xi, cfg, n_paths, observer, path_offset, eta):
    outcome = EnsembleOutcome(n_paths)
    h = cfg.step
    tau = model.tau
    k_hist = steps_per_window(tau, h, "tau")
    n_steps = steps_per_window(cfg.horizon, h, "horizon")
    coupled = eta is not None
    want_steps = range(0, n_steps + 1)
    fp_iters = np.zeros(n_paths, dtype=int)

    def work(p):
        stream = NoiseStream(cfg.master_seed, path_offset + p)
        traj_a = simulate(model, xi, cfg, stream)
        traj_b = simulate(model, eta, cfg, stream) if coupled else None
        diverged = traj_a.diverged or (coupled and traj_b.diverged)
        if diverged:
            bads = [t.diverged_at for t in (traj_a, traj_b) if t is not None and t.diverged]
            outcome.diverged[p] = True
            outcome.first_bad_time[p] = min(bads)
        fp = traj_a.max_fixed_point_iters
        if coupled:
            fp = max(fp, traj_b.max_fixed_point_iters)
        fp_iters[p] = fp

        if model.model_class is ModelClass.JUMP:
            horizon_a = traj_a.horizon
            horizon_b = traj_b.horizon if coupled else np.inf
            for k in want_steps:
                t = k * h
                if t > min(horizon_a, horizon_b) + 1e-12:
                    break
                wins = [_cadlag_window(traj_a, t, tau)]
                if coupled:
                    wins.append(_cadlag_window(traj_b, t, tau))
                observer.see_path(p, k, *wins)
        else:
            at_a = _uniform_windows(traj_a, k_hist)
            n_ok = traj_a.states.shape[0] - k_hist - 1
            if coupled:
                n_ok = min(n_ok, traj_b.states.shape[0] - k_hist - 1)
                at_b = _uniform_windows(traj_b, k_hist)
            for k in want_steps:
                if k > n_ok:
                    break
                if coupled:
                    observer.see_path(p, k, at_a(k), at_b(k))
                else:
                    observer.see_path(p, k, at_a(k))

    threads = max(1, cfg.threads)
    if threads == 1 or n_paths == 1:
        for p in range(n_paths):
            work(p)
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(work, range(n_paths)))
    outcome.max_fixed_point_iters = int(fp_iters.max(initial=0))
    return outcome

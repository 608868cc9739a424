"""Clock-driven simulation of a single three-layer spiking module.

Input pixels are Poisson rate coded and fully connected to a layer of
conductance-based LIF excitatory neurons. Each excitatory neuron drives one
inhibitory partner, which in turn inhibits every *other* excitatory neuron.
Input weights learn with trace-based STDP and excitatory thresholds adapt.

Two interchangeable paths simulate a presentation: the compiled kernel in
:mod:`spikeplace._kernel` (default) and :func:`simulate_presentation_reference`,
which composes the step functions below and serves as its oracle.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernel
from .exceptions import ConfigError, InvariantError
from .params import SimulationParams


@dataclass
class LayerState:
    v: np.ndarray
    g_e: np.ndarray
    g_i: np.ndarray
    theta: np.ndarray
    refrac_remaining: np.ndarray

    @classmethod
    def rested(cls, params: SimulationParams, excitatory: bool = True,
               theta: np.ndarray | None = None) -> "LayerState":
        n = params.k_e if excitatory else params.k_i
        rest = params.e_rest_e if excitatory else params.e_rest_i
        return cls(
            v=np.full(n, rest),
            g_e=np.zeros(n),
            g_i=np.zeros(n),
            theta=np.zeros(n) if theta is None else np.asarray(theta, dtype=float).copy(),
            refrac_remaining=np.zeros(n),
        )

    def copy(self) -> "LayerState":
        return LayerState(*(np.array(a, dtype=float, copy=True) for a in
                            (self.v, self.g_e, self.g_i, self.theta, self.refrac_remaining)))

    def __len__(self) -> int:
        return len(self.v)


@dataclass
class SynapseState:
    """Plastic input-to-excitatory synapses plus their spike traces.

    ``x_post`` is the postsynaptic trace gating the depression channel.
    """

    w_pe: np.ndarray
    x_pre: np.ndarray
    x_post: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.w_pe = np.asarray(self.w_pe, dtype=float)
        self.x_pre = np.asarray(self.x_pre, dtype=float)
        if self.x_post is None:
            self.x_post = np.zeros(self.w_pe.shape[1])
        self.x_post = np.asarray(self.x_post, dtype=float)

    @classmethod
    def initial(cls, params: SimulationParams, rng: np.random.Generator) -> "SynapseState":
        hi = params.init_weight_fraction * params.w_max
        w = rng.uniform(0.0, hi, size=(params.k_p, params.k_e))
        return cls(w, np.zeros(params.k_p), np.zeros(params.k_e))

    def copy(self) -> "SynapseState":
        return SynapseState(self.w_pe.copy(), self.x_pre.copy(), self.x_post.copy())


@dataclass
class SpikeCounts:
    """Excitatory spike tallies for one presentation."""

    counts: np.ndarray
    retries: int = 0
    silent: bool = False

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def _check_image(image, params: SimulationParams) -> np.ndarray:
    image = np.asarray(image, dtype=float).ravel()
    if image.shape[0] != params.k_p:
        raise ValueError(f"image has {image.shape[0]} pixels, module expects {params.k_p}")
    return image


def poisson_encode(image, params: SimulationParams, rng: np.random.Generator,
                   max_rate: float | None = None) -> np.ndarray:
    """Rate-code ``image`` into a boolean raster of shape (steps, k_p).

    Each pixel fires independently per step with probability
    ``intensity / 255 * max_rate * dt``.
    """
    image = _check_image(image, params)
    rate = params.max_input_rate if max_rate is None else max_rate
    prob = np.clip(image, 0.0, 255.0) / 255.0 * rate * params.dt * 1e-3
    if prob.max(initial=0.0) > 1.0:
        raise ConfigError(f"rate {rate} Hz with dt {params.dt} ms exceeds one spike per step")
    return rng.random((params.presentation_steps, params.k_p)) < prob


def lif_step(layer: LayerState, input_exc_drive, input_inh_drive,
             params: SimulationParams, is_excitatory: bool,
             adapt_theta: bool = True) -> tuple[LayerState, np.ndarray]:
    """Advance one layer by one time step.

    Conductances jump by the drives, the membrane is forward-Euler
    integrated and kept within the reversal potentials, conductances then
    decay by their exact exponential factor.
    """
    n = len(layer)
    exc_drive = np.asarray(input_exc_drive, dtype=float)
    inh_drive = np.asarray(input_inh_drive, dtype=float)
    if exc_drive.shape != (n,) or inh_drive.shape != (n,):
        raise ValueError("drive vectors must match the layer size")
    if is_excitatory:
        tau, e_rest, e_exc, e_inh = params.tau_e, params.e_rest_e, params.e_exc_e, params.e_inh_e
        v_thresh, v_reset, refrac = params.v_thresh_e, params.v_reset_e, params.refrac_e
        tau_ge, tau_gi = params.tau_ge, params.tau_gi
    else:
        tau, e_rest, e_exc, e_inh = params.tau_i, params.e_rest_i, params.e_exc_i, params.e_inh_i
        v_thresh, v_reset, refrac = params.v_thresh_i, params.v_reset_i, params.refrac_i
        tau_ge, tau_gi = params.tau_ge, params.tau_gi

    out = layer.copy()
    g_e = layer.g_e + exc_drive
    g_i = layer.g_i + inh_drive
    v = layer.v
    refractory = layer.refrac_remaining > 0.0
    stepped = v + (params.dt / tau) * ((e_rest - v) + g_e * (e_exc - v) + g_i * (e_inh - v))
    # reversal potentials bound the membrane; guards Euler overshoot at large g
    stepped = np.minimum(np.maximum(stepped, e_inh), e_exc)
    out.v = np.where(refractory, v_reset, stepped)
    out.refrac_remaining = np.where(refractory, np.maximum(layer.refrac_remaining - params.dt, 0.0),
                                    layer.refrac_remaining)
    spikes = ~refractory & (out.v > v_thresh + layer.theta)
    out.v[spikes] = v_reset
    out.refrac_remaining[spikes] = refrac
    if is_excitatory and adapt_theta:
        out.theta[spikes] += params.theta_plus
    out.g_e = g_e * params.decay(tau_ge)
    out.g_i = g_i * params.decay(tau_gi)
    if not (np.all(np.isfinite(out.v)) and np.all(np.isfinite(out.g_e)) and np.all(np.isfinite(out.g_i))):
        raise InvariantError("non-finite membrane state after lif_step")
    return out, spikes


def stdp_update_on_post(syn: SynapseState, firing_excitatory_indices,
                        params: SimulationParams) -> SynapseState:
    """Potentiation channel, applied when excitatory neurons fire.

    ``w += eta_post * (x_pre - x_tar) * (w_max - w) ** mu``, clipped to
    ``[0, w_max]``.
    """
    out = syn.copy()
    w = out.w_pe
    for e in sorted(int(i) for i in np.atleast_1d(firing_excitatory_indices)):
        if not 0 <= e < w.shape[1]:
            raise IndexError(f"excitatory index {e} out of range")
        col = w[:, e]
        col = col + params.eta_post * (out.x_pre - params.x_tar) * (params.w_max - col) ** params.mu
        w[:, e] = np.clip(col, 0.0, params.w_max)
    return out


def stdp_update_on_pre(syn: SynapseState, firing_input_indices,
                       params: SimulationParams) -> SynapseState:
    """Depression channel, applied when input neurons fire.

    ``w -= eta_pre * x_post``, clipped to ``[0, w_max]``.
    """
    out = syn.copy()
    for p in sorted(int(i) for i in np.atleast_1d(firing_input_indices)):
        out.w_pe[p] = np.clip(out.w_pe[p] - params.eta_pre * out.x_post, 0.0, params.w_max)
    return out


def lateral_inhibition_drive(inh_spikes, w_ie: float) -> np.ndarray:
    """Inhibitory conductance increments for the excitatory layer.

    Inhibitory neuron ``j`` reaches every excitatory neuron except ``j``.
    """
    spk = np.asarray(inh_spikes).astype(np.int64)
    return w_ie * (int(spk.sum()) - spk)


def normalize_weights(w: np.ndarray, params: SimulationParams) -> None:
    """Rescale each excitatory neuron's input weights to a fixed sum, in place."""
    if params.weight_norm_total is None:
        return
    sums = w.sum(axis=0)
    scale = np.divide(params.weight_norm_total, sums, out=np.ones_like(sums), where=sums > 0)
    w *= scale
    np.clip(w, 0.0, params.w_max, out=w)


def _reference_run(raster: np.ndarray, n_rest: int, syn: SynapseState, theta: np.ndarray,
                   params: SimulationParams, learning: bool) -> np.ndarray:
    exc = LayerState.rested(params, True, theta)
    inh = LayerState.rested(params, False)
    syn.x_pre[:] = 0.0
    syn.x_post[:] = 0.0
    spk_e = np.zeros(params.k_e, dtype=bool)
    spk_i = np.zeros(params.k_i, dtype=bool)
    counts = np.zeros(params.k_e, dtype=np.int64)
    n_stim = raster.shape[0]
    dec_trace = params.decay(params.tau_trace)
    for t in range(n_stim + n_rest):
        drive = np.zeros(params.k_e)
        fired_inputs = np.flatnonzero(raster[t]) if t < n_stim else np.empty(0, dtype=int)
        for p in fired_inputs:
            drive += syn.w_pe[p]
        if learning and fired_inputs.size:
            syn.x_pre[fired_inputs] += 1.0
            new = stdp_update_on_pre(syn, fired_inputs, params)
            syn.w_pe[:] = new.w_pe
        inh_drive = lateral_inhibition_drive(spk_i, params.w_ie)
        exc, new_spk_e = lif_step(exc, drive, inh_drive, params, True, adapt_theta=learning)
        inh, spk_i = lif_step(inh, params.w_ei * spk_e, np.zeros(params.k_i), params, False)
        spk_e = new_spk_e
        if t < n_stim:
            counts += spk_e
        if learning:
            fired = np.flatnonzero(spk_e)
            if fired.size:
                new = stdp_update_on_post(syn, fired, params)
                syn.w_pe[:] = new.w_pe
                syn.x_post[fired] += 1.0
            syn.x_pre *= dec_trace
            syn.x_post *= dec_trace
    if learning:
        theta[:] = exc.theta
    return counts


def simulate_presentation(syn: SynapseState, theta: np.ndarray, image,
                          params: SimulationParams, learning: bool,
                          rng: np.random.Generator, backend: str = "numba") -> SpikeCounts:
    """Present one image and tally excitatory spikes.

    Every presentation starts from the rested network state. In learning
    mode ``syn.w_pe`` and ``theta`` are updated in place, the rest period
    is simulated, weights are renormalized afterwards, and presentations
    with fewer than ``min_spike_floor`` spikes are retried at a higher
    input rate. Without learning nothing is mutated.
    """
    image = _check_image(image, params)
    if syn.w_pe.shape != (params.k_p, params.k_e) or theta.shape != (params.k_e,):
        raise ValueError("module dimensions do not match params")
    n_rest = params.rest_steps if learning else 0
    consts = _kernel.pack_constants(params) if backend == "numba" else None
    w, theta_k = syn.w_pe, theta
    if not (w.flags.writeable and theta.flags.writeable):
        # joblib hands large arrays to workers as read-only memmaps; the
        # compiled kernel needs writable buffers even when it will not write
        if learning:
            raise ValueError("learning needs writable weights and thresholds")
        w, theta_k = np.array(w), np.array(theta)
    attempts = params.max_retries + 1 if learning else 1
    for attempt in range(attempts):
        rate = params.max_input_rate + attempt * params.rate_step
        raster = poisson_encode(image, params, rng, max_rate=rate)
        if backend == "numba":
            counts = _kernel.run_presentation(raster, n_rest, w, theta_k, consts, learning)
        elif backend == "reference":
            counts = _reference_run(raster, n_rest, syn, theta, params, learning)
        else:
            raise ValueError(f"unknown backend {backend!r}")
        if learning:
            normalize_weights(syn.w_pe, params)
            theta *= params.decay(params.tau_theta, params.presentation_steps + n_rest)
        if not learning or counts.sum() >= params.min_spike_floor:
            return SpikeCounts(counts, retries=attempt)
    return SpikeCounts(np.zeros(params.k_e, dtype=np.int64), retries=attempts - 1, silent=True)


def simulate_presentation_reference(syn, theta, image, params, learning, rng) -> SpikeCounts:
    """Pure-numpy path built from :func:`lif_step` and the STDP channels."""
    return simulate_presentation(syn, theta, image, params, learning, rng, backend="reference")

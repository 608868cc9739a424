"""Compiled inner loop for one image presentation.

The arithmetic mirrors :func:`spikeplace.snn.lif_step` and the STDP helpers
operation-for-operation so that the two paths agree bit-for-bit; keep them
in sync when touching either.
"""
import numpy as np
from numba import njit

# indices into the packed constant vector
(DT, TAU_E, TAU_I, E_REST_E, E_REST_I, E_EXC_E, E_EXC_I, E_INH_E, E_INH_I,
 DEC_GE, DEC_GI, V_THRESH_E, V_THRESH_I, V_RESET_E, V_RESET_I, REFRAC_E,
 REFRAC_I, THETA_PLUS, ETA_PRE, ETA_POST, X_TAR, DEC_TRACE, W_MAX, MU, W_EI,
 W_IE) = range(26)
N_CONSTS = 26


def pack_constants(params):
    c = np.empty(N_CONSTS)
    c[DT] = params.dt
    c[TAU_E] = params.tau_e
    c[TAU_I] = params.tau_i
    c[E_REST_E] = params.e_rest_e
    c[E_REST_I] = params.e_rest_i
    c[E_EXC_E] = params.e_exc_e
    c[E_EXC_I] = params.e_exc_i
    c[E_INH_E] = params.e_inh_e
    c[E_INH_I] = params.e_inh_i
    c[DEC_GE] = params.decay(params.tau_ge)
    c[DEC_GI] = params.decay(params.tau_gi)
    c[V_THRESH_E] = params.v_thresh_e
    c[V_THRESH_I] = params.v_thresh_i
    c[V_RESET_E] = params.v_reset_e
    c[V_RESET_I] = params.v_reset_i
    c[REFRAC_E] = params.refrac_e
    c[REFRAC_I] = params.refrac_i
    c[THETA_PLUS] = params.theta_plus
    c[ETA_PRE] = params.eta_pre
    c[ETA_POST] = params.eta_post
    c[X_TAR] = params.x_tar
    c[DEC_TRACE] = params.decay(params.tau_trace)
    c[W_MAX] = params.w_max
    c[MU] = params.mu
    c[W_EI] = params.w_ei
    c[W_IE] = params.w_ie
    return c


@njit(cache=True, nogil=True)
def _clip(x, hi):
    if x < 0.0:
        return 0.0
    if x > hi:
        return hi
    return x


@njit(cache=True, nogil=True)
def run_presentation(raster, n_rest, w, theta, c, learning):
    """Simulate ``raster`` followed by ``n_rest`` silent steps.

    Mutates ``w`` and ``theta`` when ``learning``; returns per-excitatory
    spike counts over the stimulus steps only.
    """
    n_stim, k_p = raster.shape
    k_e = w.shape[1]
    dt = c[DT]
    fe = dt / c[TAU_E]
    fi = dt / c[TAU_I]
    w_max = c[W_MAX]
    mu = c[MU]

    counts = np.zeros(k_e, dtype=np.int64)
    v_e = np.full(k_e, c[E_REST_E])
    ge_e = np.zeros(k_e)
    gi_e = np.zeros(k_e)
    ref_e = np.zeros(k_e)
    v_i = np.full(k_e, c[E_REST_I])
    ge_i = np.zeros(k_e)
    gi_i = np.zeros(k_e)
    ref_i = np.zeros(k_e)
    spk_e = np.zeros(k_e, dtype=np.bool_)
    spk_i = np.zeros(k_e, dtype=np.bool_)
    x_pre = np.zeros(k_p)
    x_post = np.zeros(k_e)
    drive = np.zeros(k_e)

    for t in range(n_stim + n_rest):
        # feed-forward drive from this step's input spikes
        for e in range(k_e):
            drive[e] = 0.0
        if t < n_stim:
            for p in range(k_p):
                if raster[t, p]:
                    for e in range(k_e):
                        drive[e] += w[p, e]
            if learning:
                for p in range(k_p):
                    if raster[t, p]:
                        x_pre[p] += 1.0
                        for e in range(k_e):
                            w[p, e] = _clip(w[p, e] - c[ETA_PRE] * x_post[e], w_max)

        n_inh = 0
        for e in range(k_e):
            if spk_i[e]:
                n_inh += 1

        # excitatory layer
        any_spike = False
        for e in range(k_e):
            g_e = ge_e[e] + drive[e]
            g_i = gi_e[e] + c[W_IE] * (n_inh - (1 if spk_i[e] else 0))
            v = v_e[e]
            fired = False
            if ref_e[e] > 0.0:
                v = c[V_RESET_E]
                ref_e[e] = max(ref_e[e] - dt, 0.0)
            else:
                v = v + fe * ((c[E_REST_E] - v) + g_e * (c[E_EXC_E] - v)
                              + g_i * (c[E_INH_E] - v))
                v = min(max(v, c[E_INH_E]), c[E_EXC_E])
                if v > c[V_THRESH_E] + theta[e]:
                    fired = True
                    v = c[V_RESET_E]
                    ref_e[e] = c[REFRAC_E]
                    if learning:
                        theta[e] += c[THETA_PLUS]
            v_e[e] = v
            ge_e[e] = g_e * c[DEC_GE]
            gi_e[e] = g_i * c[DEC_GI]
            # the paired inhibitory neuron sees last step's excitatory spike
            prev = spk_e[e]
            spk_e[e] = fired
            if fired:
                any_spike = True
                if t < n_stim:
                    counts[e] += 1

            # inhibitory partner
            gie = ge_i[e] + (c[W_EI] if prev else 0.0)
            gii = gi_i[e]
            vi = v_i[e]
            ifired = False
            if ref_i[e] > 0.0:
                vi = c[V_RESET_I]
                ref_i[e] = max(ref_i[e] - dt, 0.0)
            else:
                vi = vi + fi * ((c[E_REST_I] - vi) + gie * (c[E_EXC_I] - vi)
                                + gii * (c[E_INH_I] - vi))
                vi = min(max(vi, c[E_INH_I]), c[E_EXC_I])
                if vi > c[V_THRESH_I]:
                    ifired = True
                    vi = c[V_RESET_I]
                    ref_i[e] = c[REFRAC_I]
            v_i[e] = vi
            ge_i[e] = gie * c[DEC_GE]
            gi_i[e] = gii * c[DEC_GI]
            spk_i[e] = ifired

        if learning:
            if any_spike:
                for e in range(k_e):
                    if spk_e[e]:
                        for p in range(k_p):
                            wv = w[p, e]
                            if mu == 1.0:
                                dep = w_max - wv
                            else:
                                dep = (w_max - wv) ** mu
                            wv = wv + c[ETA_POST] * (x_pre[p] - c[X_TAR]) * dep
                            w[p, e] = _clip(wv, w_max)
                        x_post[e] += 1.0
            for p in range(k_p):
                x_pre[p] *= c[DEC_TRACE]
            for e in range(k_e):
                x_post[e] *= c[DEC_TRACE]
    return counts

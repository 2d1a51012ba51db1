"""Numpy implementations of the per-step kernels.

Used when the compiled ``_ckernels`` extension is unavailable, and as the
reference the compiled version is tested against. Phases are stored flat and
contiguous per junction (``jptr``); see ``network.CompiledNetwork``.
"""
import numpy as np

# exp() argument floor: keeps every softmax share strictly positive
EXP_FLOOR = -700.0


def bp_weights(qhat, link_src, link_dst, qbar, ent_phase, ent_road, ent_rate, n_phases):
    n = qhat.shape[0]
    pressure = qhat - np.bincount(link_src, weights=qbar * qhat[link_dst], minlength=n)
    return np.bincount(ent_phase, weights=ent_rate * pressure[ent_road], minlength=n_phases)


def queue_sum_weights(qhat, ent_phase, ent_road, n_phases, floor_negative):
    q = np.maximum(qhat, 0.0) if floor_negative else qhat
    return np.bincount(ent_phase, weights=q[ent_road], minlength=n_phases)


def softmax_alloc(w, jptr, eta, total):
    starts = jptr[:-1]
    counts = np.diff(jptr)
    wmax = np.repeat(np.maximum.reduceat(w, starts), counts)
    e = np.exp(np.maximum(eta * (w - wmax), EXP_FLOOR))
    sums = np.repeat(np.add.reduceat(e, starts), counts)
    return total * e / sums


def argmax_alloc(w, jptr, total):
    starts = jptr[:-1]
    counts = np.diff(jptr)
    wmax = np.repeat(np.maximum.reduceat(w, starts), counts)
    pos = np.arange(w.shape[0])
    first = np.minimum.reduceat(np.where(w == wmax, pos, w.shape[0]), starts)
    out = np.zeros_like(w)
    out[first] = total
    return out


def proportional_alloc(w, jptr, total):
    starts = jptr[:-1]
    counts = np.diff(jptr)
    sums = np.repeat(np.add.reduceat(w, starts), counts)
    uniform = np.repeat(total / counts, counts)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(sums > 0, total * w / np.where(sums > 0, sums, 1.0), uniform)
    return out


def service_means(alloc, ent_phase, ent_road, ent_rate, n_roads, frac):
    return np.bincount(ent_road, weights=ent_rate * alloc[ent_phase], minlength=n_roads) * frac


def fluid_transfer(q, s, arrivals, link_src, link_dst, p_bar, exit_share):
    n = q.shape[0]
    served = np.minimum(s, q)
    inflow = np.bincount(link_dst, weights=served[link_src] * p_bar, minlength=n)
    q_next = q - served + arrivals + inflow
    exits = float(np.dot(served, exit_share))
    return q_next, served, exits

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-step kernels; same signatures and results as ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()

ctypedef cnp.int64_t i64

cdef double EXP_FLOOR = -700.0


def bp_weights(const double[::1] qhat, const i64[::1] link_src, const i64[::1] link_dst,
               const double[::1] qbar, const i64[::1] ent_phase, const i64[::1] ent_road,
               const double[::1] ent_rate, Py_ssize_t n_phases):
    cdef Py_ssize_t n = qhat.shape[0], k
    cdef double[::1] down = np.zeros(n)
    cdef double[::1] pressure = np.empty(n)
    out = np.zeros(n_phases)
    cdef double[::1] w = out
    for k in range(link_src.shape[0]):
        down[link_src[k]] += qbar[k] * qhat[link_dst[k]]
    for k in range(n):
        pressure[k] = qhat[k] - down[k]
    for k in range(ent_phase.shape[0]):
        w[ent_phase[k]] += ent_rate[k] * pressure[ent_road[k]]
    return out


def queue_sum_weights(const double[::1] qhat, const i64[::1] ent_phase, const i64[::1] ent_road,
                      Py_ssize_t n_phases, bint floor_negative):
    out = np.zeros(n_phases)
    cdef double[::1] w = out
    cdef Py_ssize_t k
    cdef double q
    for k in range(ent_phase.shape[0]):
        q = qhat[ent_road[k]]
        if floor_negative and q < 0.0:
            q = 0.0
        w[ent_phase[k]] += q
    return out


def softmax_alloc(const double[::1] w, const i64[::1] jptr, double eta, double total):
    cdef Py_ssize_t nj = jptr.shape[0] - 1, j, k
    out = np.empty(w.shape[0])
    cdef double[::1] p = out
    cdef double m, s, x
    for j in range(nj):
        m = w[jptr[j]]
        for k in range(jptr[j] + 1, jptr[j + 1]):
            if w[k] > m:
                m = w[k]
        s = 0.0
        for k in range(jptr[j], jptr[j + 1]):
            x = eta * (w[k] - m)
            if x < EXP_FLOOR:
                x = EXP_FLOOR
            p[k] = exp(x)
            s += p[k]
        for k in range(jptr[j], jptr[j + 1]):
            p[k] = total * p[k] / s
    return out


def argmax_alloc(const double[::1] w, const i64[::1] jptr, double total):
    cdef Py_ssize_t nj = jptr.shape[0] - 1, j, k, best
    out = np.zeros(w.shape[0])
    cdef double[::1] p = out
    for j in range(nj):
        best = jptr[j]
        for k in range(jptr[j] + 1, jptr[j + 1]):
            if w[k] > w[best]:
                best = k
        p[best] = total
    return out


def proportional_alloc(const double[::1] w, const i64[::1] jptr, double total):
    cdef Py_ssize_t nj = jptr.shape[0] - 1, j, k, cnt
    out = np.empty(w.shape[0])
    cdef double[::1] p = out
    cdef double s
    for j in range(nj):
        s = 0.0
        for k in range(jptr[j], jptr[j + 1]):
            s += w[k]
        cnt = jptr[j + 1] - jptr[j]
        for k in range(jptr[j], jptr[j + 1]):
            if s > 0.0:
                p[k] = total * w[k] / s
            else:
                p[k] = total / cnt
    return out


def service_means(const double[::1] alloc, const i64[::1] ent_phase, const i64[::1] ent_road,
                  const double[::1] ent_rate, Py_ssize_t n_roads, double frac):
    out = np.zeros(n_roads)
    cdef double[::1] m = out
    cdef Py_ssize_t k
    for k in range(ent_phase.shape[0]):
        m[ent_road[k]] += ent_rate[k] * alloc[ent_phase[k]]
    for k in range(n_roads):
        m[k] = m[k] * frac
    return out


def fluid_transfer(const double[::1] q, const double[::1] s, const double[::1] arrivals,
                   const i64[::1] link_src, const i64[::1] link_dst, const double[::1] p_bar,
                   const double[::1] exit_share):
    cdef Py_ssize_t n = q.shape[0], k
    served_arr = np.empty(n)
    inflow_arr = np.zeros(n)
    q_next_arr = np.empty(n)
    cdef double[::1] served = served_arr
    cdef double[::1] inflow = inflow_arr
    cdef double[::1] q_next = q_next_arr
    cdef double exits = 0.0
    for k in range(n):
        served[k] = s[k] if s[k] < q[k] else q[k]
    for k in range(link_src.shape[0]):
        inflow[link_dst[k]] += served[link_src[k]] * p_bar[k]
    for k in range(n):
        q_next[k] = q[k] - served[k] + arrivals[k] + inflow[k]
        exits += served[k] * exit_share[k]
    return q_next_arr, served_arr, exits

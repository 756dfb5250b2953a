"""Pure numpy versions of the hot loops; reference for ``_kernels.pyx``."""
import numpy as np

_COST_CHUNK_BYTES = 1 << 26


def advance(x, decay, phi, wf, bmat, bvec, wg, gconst, glin, dw, rec_slot, out):
    """Advance an ensemble by ``len(wf)`` exponential-Euler steps, in place.

    ``x`` is ``(N, d)``; ``wf``/``wg`` hold the time-basis weights of the
    drift and diffusion stacks at each step; ``dw`` is ``(N, n, m)``.
    After step ``k`` the state is copied to ``out[:, rec_slot[k]]`` when
    ``rec_slot[k] >= 0``. Returns ``(step, path)`` of the first non-finite
    state, or ``(-1, -1)``.
    """
    # overflow is reported as divergence below, not as a warning
    with np.errstate(over="ignore", invalid="ignore"):
        return _advance(x, decay, phi, wf, bmat, bvec, wg, gconst, glin, dw, rec_slot, out)


def _advance(x, decay, phi, wf, bmat, bvec, wg, gconst, glin, dw, rec_slot, out):
    has_lin = glin.shape[0] > 0 and np.any(glin)
    n_paths, d = x.shape
    m = gconst.shape[2]
    for k in range(wf.shape[0]):
        # coefficient assembly and per-path sums follow the compiled kernel's
        # order exactly, so results do not depend on how paths are blocked
        B, b = _combine(wf[k], bmat), _combine(wf[k], bvec)
        C = _combine(wg[k], gconst)
        L = _combine(wg[k], glin) if has_lin else None
        dwk = dw[:, k, :]
        xn = np.empty_like(x)
        for r in range(d):
            acc = np.full(n_paths, b[r])
            for c in range(d):
                acc = acc + B[r, c] * x[:, c]
            g = np.zeros(n_paths)
            for j in range(m):
                gij = np.full(n_paths, C[r, j])
                if has_lin:
                    for l in range(d):
                        gij = gij + L[r, j, l] * x[:, l]
                g += gij * dwk[:, j]
            xn[:, r] = decay[r] * (x[:, r] + g) + phi[r] * acc
        x[...] = xn
        if not np.isfinite(x).all():
            bad = np.flatnonzero(~np.isfinite(x).all(axis=1))
            return k, int(bad[0])
        if rec_slot[k] >= 0:
            out[:, rec_slot[k], :] = x
    return -1, -1


def _combine(w, stack):
    out = np.zeros(stack.shape[1:])
    for i, wi in enumerate(w):
        if wi != 0.0:
            out += wi * stack[i]
    return out


def sup_sq_cost(a, b):
    """``C[i, j] = max_t |a[i, t] - b[j, t]|^2`` for path arrays ``(N, T, d)``."""
    n, t, d = a.shape
    cost = np.empty((n, b.shape[0]))
    rows = max(1, _COST_CHUNK_BYTES // max(1, 8 * b.shape[0] * t * d))
    for i in range(0, n, rows):
        diff = a[i : i + rows, None, :, :] - b[None, :, :, :]
        cost[i : i + rows] = np.einsum("ijtk,ijtk->ijt", diff, diff).max(axis=2)
    return cost

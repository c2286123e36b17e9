"""Pure-numpy serial sweep, the fallback for the compiled kernel.

One call runs one full sweep over the given visiting order. All state
arrays are updated in place; the semantics (including the guard rails and
the dead-edge skips) match otfsdet._mfic_cy bit-for-bit up to floating
point reassociation.
"""

import numpy as np

from ._numeric import DENOM_FLOOR, Q_CAP, VAR_FLOOR


def sweep(ht, abs2t, y_bar, gamma, points, log_prior, order,
          mu_edge, eta_hat, mu_hat, f_mean, f_var, posterior):
    abs_points2 = points.real ** 2 + points.imag ** 2
    for c in order:
        h_col = ht[c]
        a2 = abs2t[c]
        denom = np.maximum(f_var + gamma, DENOM_FLOOR)
        s = (y_bar - f_mean) / denom
        q = float((a2 / denom).sum())
        if q <= 0.0:
            row = np.exp(log_prior[c] - log_prior[c].max())
            row /= row.sum()
            posterior[c] = row
            mu = complex(row @ points)
            mu_hat[c] = mu
            eta_hat[c] = max(float(row @ abs_points2) - abs(mu) ** 2, VAR_FLOOR)
            continue
        b = np.vdot(h_col, s)  # sum of conj(H_dc) s_d over live edges
        chi = mu_hat[c] + b / q
        logp = log_prior[c] - min(q, Q_CAP) * np.abs(points - chi) ** 2
        logp -= logp.max()
        post = np.exp(logp)
        post /= post.sum()
        posterior[c] = post
        mu_new = complex(post @ points)
        eta_new = max(float(post @ np.abs(points - mu_new) ** 2), VAR_FLOOR)
        # extrinsic means, then the incremental interference-sum update
        conj_h_s = h_col.conj() * s
        mu_edges = mu_new - eta_new * conj_h_s
        f_mean += h_col * (mu_edges - mu_edge[c])
        f_var += a2 * (eta_new - eta_hat[c])
        np.maximum(f_var, 0.0, out=f_var)
        np.copyto(mu_edge[c], mu_edges, where=a2 > 0.0)
        mu_hat[c] = mu_new
        eta_hat[c] = eta_new

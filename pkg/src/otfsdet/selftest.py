"""Fast invariant checks runnable from the CLI without pytest.

Each check prints one `ok`/`FAIL` line; run_selftest returns False when any
check fails. The checks are deliberately small versions of the full test
suite so a broken install is caught in seconds.
"""

from __future__ import annotations

import numpy as np

from .bidirectional import detect_iw, detect_turbo, weighting_factor
from .channel import (
    apply_channel_awgn,
    build_dd_channel,
    build_time_channel,
    coupling_matrix,
    draw_channel,
    snr_to_gamma,
)
from .frames import (
    OtfsFrameConfig,
    bits_from_indices,
    demodulate,
    map_bits,
    modulate,
    random_bits,
    symbols_to_bits,
)
from .kernels import available_backends, default_backend
from .sim import ChannelConfig, SimConfig, gen_params, run_trial
from .uamp import (
    PriorTable,
    detect_amp,
    detect_lmmse,
    detect_uamp,
    detect_uamp_mfic,
    init_states,
    map_oracle_marginals,
    reference_sweep,
    resolve_order,
    unitary_transform,
)

_CHECKS = []


def _check(fn):
    _CHECKS.append(fn)
    return fn


def _frame_pipeline(rng, cfg, params, gamma):
    spec = cfg.constellation_spec()
    bits = random_bits(rng, cfg.bits_per_frame)
    x = map_bits(bits, spec)
    chan = draw_channel(params, rng)
    h_t = build_time_channel(chan, cfg.mn)
    y = demodulate(apply_channel_awgn(modulate(x, cfg), h_t, gamma, rng), cfg)
    dd = build_dd_channel(h_t, cfg.M, cfg.N)
    return spec, bits, x, h_t, y, dd


@_check
def bit_round_trips():
    rng = np.random.default_rng(1)
    for name in ("bpsk", "qpsk", "16qam"):
        cfg = OtfsFrameConfig(M=8, N=4, constellation=name)
        spec = cfg.constellation_spec()
        bits = random_bits(rng, cfg.bits_per_frame)
        back = symbols_to_bits(map_bits(bits, spec), spec)
        if not np.array_equal(bits, back):
            return f"{name} mapping does not invert"
    return None


@_check
def transform_unitarity():
    rng = np.random.default_rng(2)
    cfg = OtfsFrameConfig(M=8, N=4)
    for _ in range(50):
        x = rng.standard_normal(cfg.mn) + 1j * rng.standard_normal(cfg.mn)
        err = np.max(np.abs(demodulate(modulate(x, cfg), cfg) - x))
        if err > 1e-10:
            return f"round-trip error {err:.2e}"
    return None


@_check
def domain_equivalence():
    rng = np.random.default_rng(3)
    cfg = OtfsFrameConfig(M=8, N=4)
    params = gen_params(SimConfig(frame=cfg), 138.9)
    for _ in range(10):
        x = rng.standard_normal(cfg.mn) + 1j * rng.standard_normal(cfg.mn)
        chan = draw_channel(params, rng)
        h_t = build_time_channel(chan, cfg.mn)
        via_time = demodulate(h_t @ modulate(x, cfg), cfg)
        direct = coupling_matrix(build_dd_channel(h_t, cfg.M, cfg.N)) @ x
        err = np.max(np.abs(via_time - direct)) / np.max(np.abs(direct))
        if err > 1e-9:
            return f"domain mismatch {err:.2e}"
    return None


@_check
def recursion_consistency():
    rng = np.random.default_rng(4)
    cfg = OtfsFrameConfig(M=4, N=4)
    params = gen_params(SimConfig(frame=cfg), 138.9)
    gamma = snr_to_gamma(10.0)
    worst = 0.0

    for _ in range(5):
        spec, bits, x, h_t, y, dd = _frame_pipeline(rng, cfg, params, gamma)
        model = unitary_transform(dd, y, gamma)
        prior = PriorTable.uniform(cfg.mn, spec)
        bstate, fstate = init_states(model, prior)
        ht, abs2t = model.edge_arrays()
        h_m, a2_m = ht.T, abs2t.T
        log_prior = np.log(prior.table)
        order = resolve_order("forward", cfg.mn)

        def hook(c):
            f_mean = np.einsum("dc,cd->d", h_m, bstate.mu_edge)
            f_var = a2_m @ bstate.eta_hat
            nonlocal worst
            worst = max(worst,
                        float(np.max(np.abs(fstate.mean - f_mean))),
                        float(np.max(np.abs(fstate.var - f_var))))

        for _ in range(3):
            reference_sweep(model, bstate, fstate, log_prior, prior.points,
                            order, position_hook=hook)
    if worst > 1e-9:
        return f"recursive state drifts by {worst:.2e}"
    return None


@_check
def tiny_map_agreement():
    rng = np.random.default_rng(5)
    cfg = OtfsFrameConfig(M=4, N=2, constellation="bpsk")
    params = gen_params(
        SimConfig(frame=cfg, channel=ChannelConfig(n_paths=3, l_max=3)), 138.9)
    gamma = snr_to_gamma(15.0)
    agree = total = 0
    for _ in range(30):
        spec, bits, x, h_t, y, dd = _frame_pipeline(rng, cfg, params, gamma)
        model = unitary_transform(dd, y, gamma)
        prior = PriorTable.uniform(cfg.mn, spec)
        rep = detect_uamp_mfic(model, prior, n_iter=10)
        post = map_oracle_marginals(coupling_matrix(dd), y, gamma, prior)
        agree += int(np.count_nonzero(rep.indices == post.argmax(axis=1)))
        total += cfg.mn
    frac = agree / total
    if frac < 0.9:
        return f"exact-marginal agreement only {frac:.3f}"
    return None


@_check
def noiseless_exactness():
    rng = np.random.default_rng(6)
    cfg = OtfsFrameConfig(M=8, N=4)
    spec = cfg.constellation_spec()
    params = gen_params(SimConfig(frame=cfg), 138.9)
    gamma = 1e-12
    for _ in range(10):
        bits = random_bits(rng, cfg.bits_per_frame)
        x = map_bits(bits, spec)
        chan = draw_channel(params, rng)
        h_t = build_time_channel(chan, cfg.mn)
        dd = build_dd_channel(h_t, cfg.M, cfg.N)
        a = coupling_matrix(dd)
        if np.linalg.cond(a) > 1e6:
            continue
        y = demodulate(h_t @ modulate(x, cfg), cfg)
        model = unitary_transform(dd, y, gamma)
        prior = PriorTable.uniform(cfg.mn, spec)
        outs = {
            "lmmse": symbols_to_bits(detect_lmmse(a, y, gamma, spec), spec),
            "amp": bits_from_indices(detect_amp(a, y, prior, gamma).indices, spec),
            "uamp": bits_from_indices(detect_uamp(model, prior).indices, spec),
            "uamp-mfic": bits_from_indices(
                detect_uamp_mfic(model, prior).indices, spec),
            "turbo-mfic": bits_from_indices(
                detect_turbo(model, prior).indices, spec),
            "iw-mfic": bits_from_indices(detect_iw(model, prior).indices, spec),
        }
        for name, decided in outs.items():
            if not np.array_equal(decided, bits):
                return f"{name} errs on a noiseless frame"
    return None


@_check
def mmse_weight_oracle():
    lam = weighting_factor(np.array([0.1]), np.array([0.4]), 0.0)
    if abs(lam[0] - 0.8) > 1e-12:
        return f"lambda(0.1, 0.4, 0) = {lam[0]!r}, want 0.8"
    return None


@_check
def trial_determinism():
    cfg = SimConfig(frame=OtfsFrameConfig(M=8, N=4),
                    detectors=("lmmse", "uamp-mfic"))
    first = run_trial(cfg, 12.0, 138.9, 0)
    second = run_trial(cfg, 12.0, 138.9, 0)
    for key in first:
        if first[key].bit_errors != second[key].bit_errors:
            return f"{key} not reproducible for equal seeds"
    return None


def run_selftest() -> bool:
    print(f"backends available: {', '.join(available_backends())} "
          f"(default {default_backend()})")
    ok = True
    for fn in _CHECKS:
        detail = fn()
        name = fn.__name__.replace("_", " ")
        if detail is None:
            print(f"ok   {name}")
        else:
            print(f"FAIL {name}: {detail}")
            ok = False
    return ok

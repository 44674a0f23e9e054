"""Encoder-decoder LSTM policy with hand-rolled backpropagation through time.

Architecture: a single-layer LSTM encoder consumes the past observation
window, then keeps stepping autoregressively for the prediction horizon,
feeding each of its own state predictions (hidden state through the encoder
FC layer) back in as the next input. The decoder LSTM starts from the
encoder's final cell/hidden state, consumes a zero start token and then its
own previous action prediction, and emits actions through the decoder FC
layer. Dropout (inverted) applies to the inputs of both FC layers in train
mode only.

Parameters live in four individually addressable groups (encoder LSTM,
encoder FC, decoder LSTM, decoder FC) so fine-tuning can touch exactly one
of them. Gradients are exact: the backward pass walks the decoder feedback,
the encoder autoregression, and the observation window in reverse, and is
validated against central finite differences down to float64 rounding.

Everything is float64. All outputs are deterministic given (params, batch,
seed); the numba kernels parallelize only over independent batch rows.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit, prange

from .errors import InputError

GROUPS = ("enc_lstm", "enc_fc", "dec_lstm", "dec_fc")
GATE_ORDER = "ifgo"  # block layout of the 4H pre-activation
DROPOUT_RATE = 0.2


@dataclass(frozen=True)
class Dims:
    t_past: int = 20
    t_next: int = 10
    hidden: int = 100
    obs: int = 16
    act: int = 2

    def to_json(self):
        return {
            "t_past": self.t_past,
            "t_next": self.t_next,
            "hidden": self.hidden,
            "obs": self.obs,
            "act": self.act,
        }


@dataclass
class LatentState:
    """One snapshot of the encoder's memory."""

    c: np.ndarray
    h: np.ndarray


@dataclass
class WindowBatch:
    """Normalized training windows, stacked.

    past (B, T_p, obs); future_obs (B, T_n, obs); future_act (B, T_n, act).
    Windows never span trajectory boundaries.
    """

    past: np.ndarray
    future_obs: np.ndarray
    future_act: np.ndarray

    def __len__(self):
        return self.past.shape[0]

    def take(self, idx) -> "WindowBatch":
        return WindowBatch(self.past[idx], self.future_obs[idx], self.future_act[idx])


class Seq2SeqParams:
    """All weights, partitioned into the four fine-tuning groups."""

    def __init__(self, dims: Dims, groups: dict):
        self.dims = dims
        self.groups = groups  # group -> {array name -> ndarray}

    def __getitem__(self, key):
        group, name = key
        return self.groups[group][name]

    def iter_arrays(self):
        for group in GROUPS:
            for name in sorted(self.groups[group]):
                yield group, name, self.groups[group][name]

    def n_params(self, group=None):
        sel = GROUPS if group is None else (group,)
        return sum(a.size for g in sel for a in self.groups[g].values())

    def copy(self):
        return Seq2SeqParams(
            self.dims,
            {g: {n: a.copy() for n, a in arrs.items()} for g, arrs in self.groups.items()},
        )

    # ---- serialization: byte-stable JSON container ----

    def save(self, path, stats_ref=None, provenance=None):
        doc = {
            "format": "toolskill-params-v1",
            "dims": self.dims.to_json(),
            "stats_ref": stats_ref,
            "provenance": provenance or {},
            "groups": {
                g: {
                    n: {
                        "shape": list(a.shape),
                        "dtype": "<f8",
                        "data": base64.b64encode(np.ascontiguousarray(a, "<f8").tobytes()).decode(),
                    }
                    for n, a in sorted(arrs.items())
                }
                for g, arrs in self.groups.items()
            },
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, sort_keys=True, separators=(",", ":"))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("format") != "toolskill-params-v1":
            raise InputError(f"{path}: not a parameter file")
        dims = Dims(**doc["dims"])
        groups = {}
        for g, arrs in doc["groups"].items():
            groups[g] = {}
            for n, spec in arrs.items():
                buf = base64.b64decode(spec["data"])
                groups[g][n] = np.frombuffer(buf, dtype=spec["dtype"]).reshape(spec["shape"]).copy()
        params = cls(dims, groups)
        params.meta = {"stats_ref": doc.get("stats_ref"), "provenance": doc.get("provenance", {})}
        return params


def init_params(dims: Dims, seed: int) -> Seq2SeqParams:
    """Uniform +-1/sqrt(fan_in) weights, zero biases, forget-gate bias 1."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5E9]))
    H = dims.hidden

    def uniform(shape, fan_in):
        s = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-s, s, size=shape)

    def lstm(input_dim):
        b = np.zeros(4 * H)
        b[H : 2 * H] = 1.0
        return {
            "w_x": uniform((4 * H, input_dim), input_dim),
            "w_h": uniform((4 * H, H), H),
            "b": b,
        }

    def fc(out_dim):
        return {"w": uniform((out_dim, H), H), "b": np.zeros(out_dim)}

    return Seq2SeqParams(
        dims,
        {
            "enc_lstm": lstm(dims.obs),
            "enc_fc": fc(dims.obs),
            "dec_lstm": lstm(dims.act),
            "dec_fc": fc(dims.act),
        },
    )


# ---- fused elementwise kernels -------------------------------------------
# Transcendentals go through numpy's SIMD tanh on whole blocks; the numba
# kernels only do cheap arithmetic, parallel over independent batch rows.


@njit(parallel=True, cache=True)
def _gates_from_tanh(th, c_prev, c_out):
    """In place: th holds tanh(z/2) for every gate block. Rewrites th to the
    gate activations (sigmoid for i,f,o; full tanh for the candidate via the
    half-angle identity) and fills the new cell state."""
    B, H4 = th.shape
    H = H4 // 4
    for b in prange(B):
        for j in range(H):
            ig = 0.5 * (1.0 + th[b, j])
            fg = 0.5 * (1.0 + th[b, H + j])
            tg = th[b, 2 * H + j]
            gg = 2.0 * tg / (1.0 + tg * tg)
            og = 0.5 * (1.0 + th[b, 3 * H + j])
            th[b, j] = ig
            th[b, H + j] = fg
            th[b, 2 * H + j] = gg
            th[b, 3 * H + j] = og
            c_out[b, j] = fg * c_prev[b, j] + ig * gg


@njit(parallel=True, cache=True)
def _gates_backward(dh, dc_in, gates, c_prev, tanh_c, dz, dc_prev):
    """dz (B,4H) and dc_prev (B,H) from upstream dh/dc and cached activations."""
    B, H = dh.shape
    for b in prange(B):
        for j in range(H):
            ig = gates[b, j]
            fg = gates[b, H + j]
            gg = gates[b, 2 * H + j]
            og = gates[b, 3 * H + j]
            tc = tanh_c[b, j]
            do = dh[b, j] * tc
            dc = dc_in[b, j] + dh[b, j] * og * (1.0 - tc * tc)
            dc_prev[b, j] = dc * fg
            dz[b, j] = dc * gg * ig * (1.0 - ig)
            dz[b, H + j] = dc * c_prev[b, j] * fg * (1.0 - fg)
            dz[b, 2 * H + j] = dc * ig * (1.0 - gg * gg)
            dz[b, 3 * H + j] = do * og * (1.0 - og)


def _lstm_step_into(z, c_prev, c_out, tc_out, h_out):
    """Finish an LSTM step in place: z (B,4H) holds pre-activations on entry
    and the gate activations on exit; c/tanh(c)/h land in the out buffers."""
    z *= 0.5
    np.tanh(z, out=z)
    _gates_from_tanh(z, c_prev, c_out)
    np.tanh(c_out, out=tc_out)
    np.multiply(z[:, 3 * (z.shape[1] // 4) :], tc_out, out=h_out)


@dataclass
class ForwardResult:
    state_preds: np.ndarray  # (B, T_n, obs)
    action_preds: np.ndarray  # (B, T_n, act)
    cell_trace: np.ndarray  # (T_p + T_n, B, H) encoder cell states
    hidden_trace: np.ndarray  # (T_p + T_n, B, H)
    cache: dict | None = None

    def final_latent(self) -> LatentState:
        return LatentState(c=self.cell_trace[-1], h=self.hidden_trace[-1])


def _dropout_masks(rng, count, B, H, rate):
    keep = rng.random((count, B, H)) >= rate
    return keep.astype(float) / (1.0 - rate)


def forward(
    params: Seq2SeqParams,
    past: np.ndarray,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    keep_cache: bool = False,
    dropout: float = DROPOUT_RATE,
) -> ForwardResult:
    """Run the full encoder-decoder pass on a (B, T_p, obs) window batch."""
    dims = params.dims
    past = np.asarray(past, dtype=float)
    if past.ndim != 3 or past.shape[1] != dims.t_past or past.shape[2] != dims.obs:
        raise InputError(f"past window shape {past.shape} != (B, {dims.t_past}, {dims.obs})")
    if mode not in ("train", "eval"):
        raise InputError(f"mode must be 'train' or 'eval', got {mode!r}")
    train = mode == "train"
    if train and rng is None:
        raise InputError("train mode needs an rng for dropout")
    B, Tp, obs = past.shape
    Tn, H, act = dims.t_next, dims.hidden, dims.act
    T = Tp + Tn
    enc, encfc = params.groups["enc_lstm"], params.groups["enc_fc"]
    dec, decfc = params.groups["dec_lstm"], params.groups["dec_fc"]

    train = train and dropout > 0.0
    enc_masks = _dropout_masks(rng, Tn, B, H, dropout) if train else None
    dec_masks = _dropout_masks(rng, Tn, B, H, dropout) if train else None

    e_gates = np.empty((T, B, 4 * H))
    e_c = np.empty((T, B, H))
    e_h = np.empty((T, B, H))
    e_tc = np.empty((T, B, H))
    e_x = np.empty((T, B, obs))
    state_preds = np.empty((B, Tn, obs))

    zeros_h = np.zeros((B, H))
    scratch = np.empty((B, 4 * H))
    win_z = past.reshape(B * Tp, obs) @ enc["w_x"].T
    win_z = win_z.reshape(B, Tp, 4 * H) + enc["b"]
    h, c = zeros_h, zeros_h
    for k in range(Tp):
        z = e_gates[k]
        np.matmul(h, enc["w_h"].T, out=z)
        z += win_z[:, k]
        _lstm_step_into(z, c, e_c[k], e_tc[k], e_h[k])
        e_x[k] = past[:, k]
        h, c = e_h[k], e_c[k]
    for n in range(Tn):
        k = Tp + n
        h_in = h * enc_masks[n] if train else h
        s = h_in @ encfc["w"].T + encfc["b"]
        state_preds[:, n] = s
        e_x[k] = s
        z = e_gates[k]
        np.matmul(s, enc["w_x"].T, out=z)
        np.matmul(h, enc["w_h"].T, out=scratch)
        z += scratch
        z += enc["b"]
        _lstm_step_into(z, c, e_c[k], e_tc[k], e_h[k])
        h, c = e_h[k], e_c[k]

    d_gates = np.empty((Tn, B, 4 * H))
    d_c = np.empty((Tn, B, H))
    d_h = np.empty((Tn, B, H))
    d_tc = np.empty((Tn, B, H))
    d_x = np.empty((Tn, B, act))
    action_preds = np.empty((B, Tn, act))
    u = np.zeros((B, act))
    for m in range(Tn):
        d_x[m] = u
        z = d_gates[m]
        np.matmul(u, dec["w_x"].T, out=z)
        np.matmul(h, dec["w_h"].T, out=scratch)
        z += scratch
        z += dec["b"]
        _lstm_step_into(z, c, d_c[m], d_tc[m], d_h[m])
        h, c = d_h[m], d_c[m]
        h_in = h * dec_masks[m] if train else h
        u = h_in @ decfc["w"].T + decfc["b"]
        action_preds[:, m] = u

    cache = None
    if keep_cache:
        cache = {
            "e_gates": e_gates, "e_c": e_c, "e_h": e_h, "e_tc": e_tc, "e_x": e_x,
            "d_gates": d_gates, "d_c": d_c, "d_h": d_h, "d_tc": d_tc, "d_x": d_x,
            "enc_masks": enc_masks, "dec_masks": dec_masks, "train": train,
        }
    return ForwardResult(state_preds, action_preds, e_c, e_h, cache)


def loss(state_preds, action_preds, batch: WindowBatch, beta: float) -> float:
    """Mean squared state-prediction error plus beta-weighted action error."""
    if state_preds.shape != batch.future_obs.shape:
        raise InputError("state prediction shape mismatch")
    if action_preds.shape != batch.future_act.shape:
        raise InputError("action prediction shape mismatch")
    err_s = state_preds - batch.future_obs
    err_a = action_preds - batch.future_act
    return float((err_s**2).mean() + beta * (err_a**2).mean())


def backward(
    params: Seq2SeqParams,
    batch: WindowBatch,
    beta: float,
    mask: tuple = GROUPS,
    mode: str = "train",
    rng: np.random.Generator | None = None,
    dropout: float = DROPOUT_RATE,
):
    """Loss and exact gradients of the mean batch loss.

    `mask` selects the parameter groups that receive gradients; the rest
    come back as exact zeros. Gradient flow through frozen groups' outputs
    is still propagated (freezing a group does not detach the graph).
    """
    if len(batch) == 0:
        raise InputError("empty batch")
    unknown = set(mask) - set(GROUPS)
    if unknown:
        raise InputError(f"unknown parameter groups in mask: {sorted(unknown)}")
    res = forward(params, batch.past, mode=mode, rng=rng, keep_cache=True, dropout=dropout)
    cache = res.cache
    dims = params.dims
    B = len(batch)
    Tp, Tn, H, obs, act = dims.t_past, dims.t_next, dims.hidden, dims.obs, dims.act
    T = Tp + Tn
    enc, encfc = params.groups["enc_lstm"], params.groups["enc_fc"]
    dec, decfc = params.groups["dec_lstm"], params.groups["dec_fc"]

    err_s = res.state_preds - batch.future_obs
    err_a = res.action_preds - batch.future_act
    total = float((err_s**2).mean() + beta * (err_a**2).mean())
    ds_mse = err_s * (2.0 / err_s.size)
    da_mse = err_a * (2.0 * beta / err_a.size)

    grads = {g: {n: np.zeros_like(a) for n, a in params.groups[g].items()} for g in GROUPS}
    e_gates, e_c, e_h, e_tc, e_x = (cache[k] for k in ("e_gates", "e_c", "e_h", "e_tc", "e_x"))
    d_gates, d_c, d_h, d_tc, d_x = (cache[k] for k in ("d_gates", "d_c", "d_h", "d_tc", "d_x"))
    enc_masks, dec_masks, train = cache["enc_masks"], cache["dec_masks"], cache["train"]

    # ---- decoder, reversed ----
    dh = np.zeros((B, H))
    dc = np.zeros((B, H))
    dc_swap = np.empty((B, H))
    dh_gemm = np.empty((B, H))
    du_next = np.zeros((B, act))
    dz_dec = np.empty((Tn, B, 4 * H))
    for m in range(Tn - 1, -1, -1):
        du = da_mse[:, m] + du_next
        h_in = d_h[m] * dec_masks[m] if train else d_h[m]
        grads["dec_fc"]["w"] += du.T @ h_in
        grads["dec_fc"]["b"] += du.sum(axis=0)
        dh_fc = du @ decfc["w"]
        dh += dh_fc * dec_masks[m] if train else dh_fc
        dz = dz_dec[m]
        c_prev = d_c[m - 1] if m > 0 else e_c[T - 1]
        _gates_backward(dh, dc, d_gates[m], c_prev, d_tc[m], dz, dc_swap)
        du_next = dz @ dec["w_x"]
        np.matmul(dz, dec["w_h"], out=dh_gemm)
        dh, dh_gemm = dh_gemm, dh
        dc, dc_swap = dc_swap, dc
    dz2 = dz_dec.reshape(Tn * B, 4 * H)
    grads["dec_lstm"]["w_x"] += dz2.T @ d_x.reshape(Tn * B, act)
    hprev = np.concatenate([e_h[T - 1][None], d_h[:-1]], axis=0)
    grads["dec_lstm"]["w_h"] += dz2.T @ hprev.reshape(Tn * B, H)
    grads["dec_lstm"]["b"] += dz2.sum(axis=0)

    # ---- encoder, reversed; dh/dc currently hold grads wrt its final state ----
    dz_enc = np.empty((T, B, 4 * H))
    ds_feedback = np.zeros((B, obs))
    zeros_h = np.zeros((B, H))
    for k in range(T - 1, -1, -1):
        if Tp - 1 <= k <= T - 2:
            n = k - Tp + 1  # prediction emitted from h_k and fed to step k+1
            ds = ds_mse[:, n] + ds_feedback
            h_in = e_h[k] * enc_masks[n] if train else e_h[k]
            grads["enc_fc"]["w"] += ds.T @ h_in
            grads["enc_fc"]["b"] += ds.sum(axis=0)
            dh_fc = ds @ encfc["w"]
            dh += dh_fc * enc_masks[n] if train else dh_fc
        dz = dz_enc[k]
        c_prev = e_c[k - 1] if k > 0 else zeros_h
        _gates_backward(dh, dc, e_gates[k], c_prev, e_tc[k], dz, dc_swap)
        if k >= Tp:
            ds_feedback = dz @ enc["w_x"]
        np.matmul(dz, enc["w_h"], out=dh_gemm)
        dh, dh_gemm = dh_gemm, dh
        dc, dc_swap = dc_swap, dc
    dz2 = dz_enc.reshape(T * B, 4 * H)
    grads["enc_lstm"]["w_x"] += dz2.T @ e_x.reshape(T * B, obs)
    hprev = np.concatenate([zeros_h[None], e_h[:-1]], axis=0)
    grads["enc_lstm"]["w_h"] += dz2.T @ hprev.reshape(T * B, H)
    grads["enc_lstm"]["b"] += dz2.sum(axis=0)

    for g in GROUPS:
        if g not in mask:
            for n in grads[g]:
                grads[g][n][...] = 0.0
    return total, grads


def sgd_step(params: Seq2SeqParams, grads: dict, lr: float) -> Seq2SeqParams:
    """p' = p - lr * grad, skipping groups whose gradients are all zero.

    Skipped groups keep their exact arrays, so frozen parameters stay
    bit-identical through any number of updates.
    """
    if lr <= 0:
        raise InputError("lr must be positive")
    new_groups = {}
    for g in GROUPS:
        garrs = grads[g]
        if all(not np.any(a) for a in garrs.values()):
            new_groups[g] = params.groups[g]
        else:
            new_groups[g] = {
                n: params.groups[g][n] - lr * garrs[n] for n in params.groups[g]
            }
    return Seq2SeqParams(params.dims, new_groups)

"""Decentralized controllers built on delayed graph convolutions.

Three single-layer parametrizations share one per-node affine readout:

* ``GC``   - linear graph filter, ``U = conv_A(X) W + b``
* ``GCNN`` - ``U = tanh(conv_A(X)) W + b``
* ``GRNN`` - ``Z(t) = tanh(conv_A(X)(t) + conv_B(Z(t-1))(t))``,
  ``U = tanh(conv_C(Z)(t)) W + b``

Every convolution uses the delayed recursion of :func:`flockgnn.graph.advance_taps`,
so tap ``k`` at time ``t`` sees ``S(t) ... S(t-k+1) signal(t-k)`` and needs one
neighbor exchange per step. All arrays may carry extra leading batch axes:
features are ``(T, ..., N, F)`` and graphs ``(T, ..., N, N)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .graph import AggregationBuffer, GraphSequence, advance_taps, as_dense_sequence

N_FEATURES = 6
N_ACTIONS = 2


class Arch(str, Enum):
    GC = "GC"
    GCNN = "GCNN"
    GRNN = "GRNN"

    @property
    def code(self) -> int:
        return list(Arch).index(self)

    @classmethod
    def from_code(cls, code: int) -> "Arch":
        return list(Arch)[code]


class InvalidStateError(RuntimeError):
    """Raised when parameters, tape or architecture do not belong together."""


@dataclass(frozen=True)
class FilterBank:
    """Filter taps stacked as an array of shape (K, F_in, F_out)."""

    taps: np.ndarray

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.ndim != 3 or taps.shape[0] < 1:
            raise ValueError(f"filter bank needs shape (K, F_in, F_out), got {taps.shape}")
        object.__setattr__(self, "taps", taps)

    @property
    def n_taps(self) -> int:
        return self.taps.shape[0]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.taps.shape


@dataclass(frozen=True)
class ControllerParams:
    arch: Arch
    input_bank: FilterBank
    readout_weight: np.ndarray
    readout_bias: np.ndarray
    hidden_bank: FilterBank | None = None
    output_bank: FilterBank | None = None

    def __post_init__(self):
        arch = Arch(self.arch)
        object.__setattr__(self, "arch", arch)
        object.__setattr__(self, "readout_weight", np.asarray(self.readout_weight, dtype=np.float64))
        object.__setattr__(self, "readout_bias", np.asarray(self.readout_bias, dtype=np.float64))
        K, _, G = self.input_bank.shape
        recurrent = arch is Arch.GRNN
        if recurrent != (self.hidden_bank is not None) or recurrent != (self.output_bank is not None):
            raise ValueError(f"{arch.value} parameters have the wrong set of filter banks")
        if recurrent:
            H = G
            if self.hidden_bank.shape != (K, H, H):
                raise ValueError(f"hidden bank shape {self.hidden_bank.shape} != {(K, H, H)}")
            if self.output_bank.shape[:2] != (K, H):
                raise ValueError(f"output bank shape {self.output_bank.shape} incompatible")
            G = self.output_bank.shape[2]
        if self.readout_weight.shape != (G, N_ACTIONS) or self.readout_bias.shape != (N_ACTIONS,):
            raise ValueError("readout must map G features to 2 action components")

    @property
    def n_taps(self) -> int:
        return self.input_bank.n_taps

    @property
    def n_features(self) -> int:
        return self.input_bank.shape[1]

    @property
    def n_hidden(self) -> int:
        return self.input_bank.shape[2] if self.arch is Arch.GRNN else 0

    @property
    def n_outputs(self) -> int:
        return self.readout_weight.shape[0]

    def tensors(self) -> dict[str, np.ndarray]:
        """Named parameter arrays, in a fixed order."""
        out = {"input_bank": self.input_bank.taps}
        if self.arch is Arch.GRNN:
            out["hidden_bank"] = self.hidden_bank.taps
            out["output_bank"] = self.output_bank.taps
        out["readout_weight"] = self.readout_weight
        out["readout_bias"] = self.readout_bias
        return out

    def with_tensors(self, tensors: dict[str, np.ndarray]) -> "ControllerParams":
        changes = {}
        for name, value in tensors.items():
            if name.endswith("_bank"):
                value = FilterBank(value)
            changes[name] = value
        return replace(self, **changes)

    @classmethod
    def from_tensors(cls, arch: Arch, tensors: dict[str, np.ndarray]) -> "ControllerParams":
        arch = Arch(arch)
        return cls(
            arch=arch,
            input_bank=FilterBank(tensors["input_bank"]),
            hidden_bank=FilterBank(tensors["hidden_bank"]) if arch is Arch.GRNN else None,
            output_bank=FilterBank(tensors["output_bank"]) if arch is Arch.GRNN else None,
            readout_weight=tensors["readout_weight"],
            readout_bias=tensors["readout_bias"],
        )

    def zeros_like(self) -> "ControllerParams":
        return self.with_tensors({k: np.zeros_like(v) for k, v in self.tensors().items()})


def init_params(arch: Arch | str, G: int, K: int, seed: int, n_features: int = N_FEATURES) -> ControllerParams:
    """Uniform fan-in scaled initialization, ``U(-1/sqrt(K F_in), 1/sqrt(K F_in))``.

    The readout weight counts as a single-tap bank; its bias starts at zero.
    """
    if G < 1 or K < 1:
        raise ValueError("G and K must be positive")
    arch = Arch(arch)
    rng = np.random.default_rng(seed)

    def bank(k: int, f_in: int, f_out: int) -> np.ndarray:
        bound = 1.0 / np.sqrt(k * f_in)
        return rng.uniform(-bound, bound, size=(k, f_in, f_out))

    tensors = {"input_bank": bank(K, n_features, G)}
    if arch is Arch.GRNN:
        tensors["hidden_bank"] = bank(K, G, G)
        tensors["output_bank"] = bank(K, G, G)
    tensors["readout_weight"] = bank(1, G, N_ACTIONS)[0]
    tensors["readout_bias"] = np.zeros(N_ACTIONS)
    return ControllerParams.from_tensors(arch, tensors)


def graph_conv(bank: FilterBank, buffer: AggregationBuffer | np.ndarray) -> np.ndarray:
    """``sum_k Y^(k) A_k`` for a buffer of taps (K, ..., N, F_in)."""
    taps = buffer.taps if isinstance(buffer, AggregationBuffer) else np.asarray(buffer)
    if taps.shape[0] != bank.n_taps:
        raise ValueError(f"buffer has {taps.shape[0]} taps, bank has {bank.n_taps}")
    if taps.shape[-1] != bank.shape[1]:
        raise ValueError(f"buffer features {taps.shape[-1]} != bank input width {bank.shape[1]}")
    out = taps[0] @ bank.taps[0]
    for k in range(1, bank.n_taps):
        out += taps[k] @ bank.taps[k]
    return out


@dataclass
class ControllerState:
    """Per-rollout memory: delayed aggregates for every convolution.

    ``hidden_taps`` aggregates the lagged hidden sequence ``Z(t-1), Z(t-2), ...``
    and ``output_taps`` the sequence ``Z(t), Z(t-1), ...``. Pre-history is zero.
    """

    input_taps: np.ndarray
    hidden_taps: np.ndarray | None = None
    output_taps: np.ndarray | None = None
    hidden: np.ndarray | None = None


def initial_state(params: ControllerParams, batch_shape: tuple[int, ...], n_agents: int) -> ControllerState:
    K = params.n_taps
    shape = (K, *batch_shape, n_agents)
    state = ControllerState(np.zeros(shape + (params.n_features,)))
    if params.arch is Arch.GRNN:
        H = params.n_hidden
        state.hidden_taps = np.zeros(shape + (H,))
        state.output_taps = np.zeros(shape + (H,))
        state.hidden = np.zeros((*batch_shape, n_agents, H))
    return state


def _step(params: ControllerParams, state: ControllerState, S: np.ndarray, X: np.ndarray):
    """Advance ``state`` in place by one step; returns (actions, activation, lagged hidden)."""
    state.input_taps = advance_taps(state.input_taps, S, X)
    pre = graph_conv(params.input_bank, state.input_taps)
    z_lag = None
    if params.arch is Arch.GRNN:
        z_lag = state.hidden
        state.hidden_taps = advance_taps(state.hidden_taps, S, z_lag)
        pre += graph_conv(params.hidden_bank, state.hidden_taps)
        state.hidden = np.tanh(pre)
        state.output_taps = advance_taps(state.output_taps, S, state.hidden)
        act = np.tanh(graph_conv(params.output_bank, state.output_taps))
    elif params.arch is Arch.GCNN:
        act = np.tanh(pre)
    else:
        act = pre
    return act @ params.readout_weight + params.readout_bias, act, z_lag


class Policy:
    """Closed-loop wrapper: feed one (graph, features) pair per step, get actions."""

    def __init__(self, params: ControllerParams):
        self.params = params
        self.state: ControllerState | None = None

    def reset(self, batch_shape: tuple[int, ...], n_agents: int) -> None:
        self.state = initial_state(self.params, batch_shape, n_agents)

    def __call__(self, S: np.ndarray, X: np.ndarray) -> np.ndarray:
        if self.state is None:
            self.reset(X.shape[:-2], X.shape[-2])
        actions, _, _ = _step(self.params, self.state, S, X)
        return actions


@dataclass
class ForwardTape:
    """What the reverse pass needs from a forward run.

    Only the signals entering each convolution and the activations are kept;
    delayed aggregates are not stored because the reverse pass rebuilds their
    contributions with adjoint shift chains.
    """

    arch: Arch
    graphs: np.ndarray
    features: np.ndarray
    activations: np.ndarray  # input of the readout, (T, ..., N, G)
    hidden: np.ndarray | None = None  # Z(t), (T, ..., N, H)
    shapes: dict[str, tuple[int, ...]] = field(default_factory=dict)

    def __len__(self) -> int:
        return self.features.shape[0]


def forward(params: ControllerParams, graph_seq, feature_seq: np.ndarray) -> tuple[np.ndarray, ForwardTape]:
    """Teacher-forced run over a whole sequence; returns actions (T, ..., N, 2) and a tape."""
    S = as_dense_sequence(graph_seq)
    X = np.asarray(feature_seq, dtype=np.float64)
    if X.shape[0] != S.shape[0] or X.shape[:-1] != S.shape[:-1]:
        raise ValueError(f"features {X.shape} and graphs {S.shape} disagree")
    if X.shape[-1] != params.n_features:
        raise ValueError(f"expected {params.n_features} features, got {X.shape[-1]}")

    T = X.shape[0]
    state = initial_state(params, X.shape[1:-2], X.shape[-2])
    actions = np.empty(X.shape[:-1] + (N_ACTIONS,))
    activations = np.empty(X.shape[:-1] + (params.n_outputs,))
    hidden = np.empty(X.shape[:-1] + (params.n_hidden,)) if params.arch is Arch.GRNN else None
    for t in range(T):
        actions[t], activations[t], _ = _step(params, state, S[t], X[t])
        if hidden is not None:
            hidden[t] = state.hidden
    tape = ForwardTape(
        params.arch, S, X, activations, hidden, {k: v.shape for k, v in params.tensors().items()}
    )
    return actions, tape


def _require(params: ControllerParams, arch: Arch) -> None:
    if params.arch is not arch:
        raise InvalidStateError(f"parameters are for {params.arch.value}, not {arch.value}")


def forward_gc(params, graph_seq, feature_seq):
    _require(params, Arch.GC)
    return forward(params, graph_seq, feature_seq)


def forward_gcnn(params, graph_seq, feature_seq):
    _require(params, Arch.GCNN)
    return forward(params, graph_seq, feature_seq)


def forward_grnn(params, graph_seq, feature_seq):
    _require(params, Arch.GRNN)
    return forward(params, graph_seq, feature_seq)


def _outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``sum over every leading axis of a[..., :, None] * b[..., None, :]``."""
    return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])


def _conv_backward(S: np.ndarray, signal: np.ndarray, d_out: np.ndarray, bank: np.ndarray, need_input: bool):
    """Reverse pass of ``out(t) = sum_k S(t)..S(t-k+1) signal(t-k) A_k``.

    ``chain[k]`` at time s holds ``S(s+1)^T ... S(s+k)^T d_out(s+k)``, the
    sensitivity of tap k to ``signal(s)``.
    """
    T, K = signal.shape[0], bank.shape[0]
    ST = np.swapaxes(S, -1, -2)
    d_bank = np.zeros_like(bank)
    d_signal = np.empty_like(signal) if need_input else None
    chain = [np.zeros_like(d_out[0]) for _ in range(K)]
    for s in range(T - 1, -1, -1):
        if s + 1 < T:
            for k in range(K - 1, 0, -1):
                chain[k] = ST[s + 1] @ chain[k - 1]
        chain[0] = d_out[s]
        for k in range(min(K, T - s)):
            d_bank[k] += _outer(signal[s], chain[k])
        if need_input:
            d_signal[s] = sum(chain[k] @ bank[k].T for k in range(K))
    return d_bank, d_signal


def backward(params: ControllerParams, tape: ForwardTape, loss_grad_on_actions: np.ndarray) -> ControllerParams:
    """Exact gradient of a scalar loss given its gradient on the actions.

    Graphs are constants. For the GRNN the hidden recursion is unrolled
    backwards in time through both the nonlinearity and the delayed shifts.
    """
    if tape.arch is not params.arch or tape.shapes != {k: v.shape for k, v in params.tensors().items()}:
        raise InvalidStateError("tape was not produced by these parameters")
    dU = np.asarray(loss_grad_on_actions, dtype=np.float64)
    if dU.shape != tape.activations.shape[:-1] + (N_ACTIONS,):
        raise ValueError(f"loss gradient shape {dU.shape} does not match actions")

    S, X, act = tape.graphs, tape.features, tape.activations
    grads = {
        "readout_weight": _outer(act, dU),
        "readout_bias": dU.reshape(-1, N_ACTIONS).sum(axis=0),
    }
    d_act = dU @ params.readout_weight.T

    if params.arch is Arch.GC:
        grads["input_bank"], _ = _conv_backward(S, X, d_act, params.input_bank.taps, False)
    elif params.arch is Arch.GCNN:
        d_pre = d_act * (1.0 - act**2)
        grads["input_bank"], _ = _conv_backward(S, X, d_pre, params.input_bank.taps, False)
    else:
        d_q = d_act * (1.0 - act**2)
        grads["output_bank"], dZ_out = _conv_backward(S, tape.hidden, d_q, params.output_bank.taps, True)
        grads["input_bank"], grads["hidden_bank"] = _grnn_hidden_backward(params, tape, dZ_out)
    return params.with_tensors(grads)


def _grnn_hidden_backward(params: ControllerParams, tape: ForwardTape, dZ_out: np.ndarray):
    S, X, Z = tape.graphs, tape.features, tape.hidden
    A, B = params.input_bank.taps, params.hidden_bank.taps
    T, K = X.shape[0], A.shape[0]
    ST = np.swapaxes(S, -1, -2)
    dA, dB = np.zeros_like(A), np.zeros_like(B)
    # both convolutions feed the same pre-activation, so they share one adjoint chain
    chain = [np.zeros_like(Z[0]) for _ in range(K)]
    d_lag_next = np.zeros_like(Z[0])  # gradient on Z(t) through the hidden conv at t+1..
    for t in range(T - 1, -1, -1):
        dZ = dZ_out[t] + d_lag_next
        dP = dZ * (1.0 - Z[t] ** 2)
        if t + 1 < T:
            for k in range(K - 1, 0, -1):
                chain[k] = ST[t + 1] @ chain[k - 1]
        chain[0] = dP
        z_lag = Z[t - 1] if t > 0 else None
        for k in range(min(K, T - t)):
            dA[k] += _outer(X[t], chain[k])
            if z_lag is not None:
                dB[k] += _outer(z_lag, chain[k])
        d_lag_next = sum(chain[k] @ B[k].T for k in range(K))
    return dA, dB

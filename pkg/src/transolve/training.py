"""Training loop: sample, solve the per-parameter LS systems, step the net.

Each epoch draws a parameter batch and fresh collocation points, solves the
angular eigenproblems the batch needs (2D), evaluates the network jets once,
assembles and Cholesky-solves every parameter's least-squares system through
the cached Gram blocks, and back-propagates the mean squared residual to the
network weights holding the solved coefficients fixed (the derivative of a
minimum is the partial derivative at the minimizer, so the coefficients
contribute no gradient term).  Adam with a linearly interpolated learning
rate closes the loop.
"""

from __future__ import annotations

import pickle
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .assembly import (
    CoefficientVector,
    EpochCache,
    assemble_system,
    build_epoch_cache,
    evaluate_solution,
    singular_evals_from_cache,
    solve_normal_equations,
    solve_parameter_batch,
)
from .cutoffs import (
    CutoffConfig,
    composition_factors,
    default_cutoff_config,
    interface_trace_factors,
)
from .eigen import assemble_eigensystem, select_singular, solve_eigenpairs
from .geometry import Geometry, angular_trace
from .nets import AdamState, MlpParams, NetConfig, adam_step, backward_jets, forward_jets, linear_lr
from .reference import RhsSpec
from .sampling import QuadratureSet, midpoint_grid, sample_collocation, sample_parameters
from .singular import SingularBasis, eval_s

__all__ = [
    "Seeds",
    "TrainConfig",
    "TrainState",
    "EpochData",
    "EpochError",
    "init_train_state",
    "prepare_epoch",
    "loss_and_param_gradient",
    "run_epoch",
    "train",
    "final_solve",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Seeds:
    params: int = 0
    interior: int = 1
    interface: int = 2
    init: int = 3

    def stream(self, which: str) -> np.random.Generator:
        base = getattr(self, which)
        return np.random.default_rng(np.random.SeedSequence((base, 0x5EED)))

    def validation_stream(self, which: str) -> np.random.Generator:
        base = getattr(self, which)
        return np.random.default_rng(np.random.SeedSequence((base, 0xA11)))


@dataclass
class TrainConfig:
    iterations: int
    lr_start: float
    lr_end: float
    theta: float
    n_params: int
    n_interior: int
    n_interface: int
    p_min: float
    p_max: float
    n_singular: int = 1
    seeds: Seeds = field(default_factory=Seeds)
    val_every: int = 10
    checkpoint_every: int = 0  # 0: only final
    threads: int = 1

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("need at least one iteration")
        if not (self.lr_start >= self.lr_end > 0):
            raise ValueError("learning-rate endpoints must satisfy lr_start >= lr_end > 0")
        if self.theta < 0:
            raise ValueError("theta must be nonnegative")


@dataclass
class TrainState:
    net_config: NetConfig
    params: MlpParams
    adam: AdamState
    iteration: int
    rng_params: np.random.Generator
    rng_interior: np.random.Generator
    rng_interface: np.random.Generator
    best_val: tuple[float, np.ndarray, int] | None = None


class EpochError(RuntimeError):
    """LS or eigen failure, tagged with the epoch and parameter index."""

    def __init__(self, epoch: int, param_index: int | None, message: str):
        self.epoch = epoch
        self.param_index = param_index
        where = f"epoch {epoch}" + ("" if param_index is None else f", parameter {param_index}")
        super().__init__(f"{where}: {message}")


@dataclass
class EpochData:
    """One epoch's parameter batch, quadrature and singular data."""

    geometry: Geometry
    cutoff_config: CutoffConfig
    rhs: RhsSpec
    quad: QuadratureSet
    parameters: np.ndarray  # (P, I)
    pairs_per_p: list  # per parameter: list per vertex of EigenPairs (2D)
    theta: float


def init_train_state(geometry: Geometry, net_config: NetConfig, config: TrainConfig) -> TrainState:
    params = _init_net(net_config, config.seeds.init)
    return TrainState(
        net_config=net_config,
        params=params,
        adam=AdamState.zeros(params.n_params),
        iteration=0,
        rng_params=config.seeds.stream("params"),
        rng_interior=config.seeds.stream("interior"),
        rng_interface=config.seeds.stream("interface"),
    )


def _init_net(net_config: NetConfig, seed: int) -> MlpParams:
    from .nets import init_params

    return init_params(net_config, seed)


def solve_vertex_eigenpairs(
    geometry: Geometry, parameter, n_singular: int, trace_cache: dict | None = None
):
    """Selected singular eigenpairs at every vertex for one parameter.

    Identical angular traces within an epoch share one solve through the
    optional cache dict.
    """
    pairs = []
    for vid in range(geometry.n_singular):
        sectors = angular_trace(geometry, parameter, vid)
        key = tuple(round(s[2], 14) for s in sectors)
        if trace_cache is not None and key in trace_cache:
            pairs.append(trace_cache[key])
            continue
        solved = select_singular(
            solve_eigenpairs(assemble_eigensystem(sectors)), n_singular
        )
        if trace_cache is not None:
            trace_cache[key] = solved
        pairs.append(solved)
    return pairs


def prepare_epoch(
    state: TrainState, config: TrainConfig, geometry: Geometry, rhs: RhsSpec,
    cutoff_config: CutoffConfig,
) -> EpochData:
    """Sample the batch and fresh points; solve the eigenproblems it needs."""
    if config.n_params < 1:
        raise ValueError("empty parameter batch")
    parameters = sample_parameters(
        state.rng_params, config.n_params, geometry.n_subdomains, config.p_min, config.p_max
    )
    quad = sample_collocation(
        geometry, config.n_interior, config.n_interface, state.rng_interior,
        rng_interface=state.rng_interface,
    )
    pairs_per_p = _eigen_for_batch(geometry, parameters, config, state.iteration)
    return EpochData(geometry, cutoff_config, rhs, quad, parameters, pairs_per_p, config.theta)


def _eigen_for_batch(geometry, parameters, config: TrainConfig, epoch: int):
    if geometry.n_singular == 0:
        return [[] for _ in range(parameters.shape[0])]
    trace_cache: dict = {}

    def solve_one(k):
        try:
            return solve_vertex_eigenpairs(
                geometry, parameters[k], config.n_singular, trace_cache
            )
        except Exception as exc:  # noqa: BLE001 - re-tagged with context
            raise EpochError(epoch, k, f"eigen solve failed: {exc}") from exc

    n_p = parameters.shape[0]
    if config.threads > 1:
        # thread-@safe: the per-trace cache is only an optimization, and the
        # jacobi kernel releases no shared state
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            return list(pool.map(solve_one, range(n_p)))
    return [solve_one(k) for k in range(n_p)]


def _composed_cache(params: MlpParams, data: EpochData, need_tape: bool):
    """Network jets at all epoch points, composed with the cutoffs."""
    cfg = params.config
    quad = data.quad
    n_int = quad.n_interior
    pts = np.concatenate([quad.interior_points, quad.interface_points], axis=0)
    if need_tape:
        jets, tape = forward_jets(params, pts, need_tape=True)
    else:
        jets = forward_jets(params, pts)
        tape = None
    fac = composition_factors(
        quad.interior_points, data.geometry, data.cutoff_config, cfg.n1, cfg.n2
    )
    lap_raw = jets.laplacian[:n_int]
    lap = (
        fac.value * lap_raw
        + 2.0 * np.einsum("jnd,jnd->jn", fac.gradient, jets.gradient[:n_int])
        + jets.value[:n_int] * fac.laplacian
    )
    ifc_axes = np.array([data.geometry.interfaces[k].axis for k in quad.interface_ids], dtype=int)
    tf = interface_trace_factors(
        quad.interface_points, ifc_axes, data.geometry, data.cutoff_config, cfg.n1, cfg.n2
    )
    v_ifc = jets.value[n_int:]
    g_ifc = jets.gradient[n_int:]
    tr_minus = tf.a_minus * v_ifc + np.einsum("jnd,jnd->jn", tf.d_coef, g_ifc)
    tr_plus = tf.a_plus * v_ifc + np.einsum("jnd,jnd->jn", tf.d_coef, g_ifc)
    cache = build_epoch_cache(
        data.geometry, data.cutoff_config, quad, lap, tr_minus, tr_plus, data.rhs,
        theta=data.theta,
    )
    return cache, fac, tf, jets, tape


def loss_and_param_gradient(params: MlpParams, data: EpochData, need_gradient: bool = True):
    """Mean squared LS residual over the batch and its gradient in the weights.

    The gradient treats every parameter's solved coefficient vector as a
    constant and back-propagates the residual through the basis Laplacians
    and one-sided traces only.
    """
    if data.parameters.shape[0] < 1:
        raise ValueError("empty parameter batch")
    cache, fac, tf, jets, tape = _composed_cache(params, data, need_tape=need_gradient)
    sing_per_p = [
        singular_evals_from_cache(cache, pairs) if pairs else None
        for pairs in data.pairs_per_p
    ]
    if all(s is None for s in sing_per_p):
        sing_per_p = None
    batch = solve_parameter_batch(cache, data.parameters, singular_evals_per_p=sing_per_p)
    n_p = data.parameters.shape[0]
    loss = float(np.mean(batch.losses))
    if not need_gradient:
        return loss, None

    quad = data.quad
    n_int = quad.n_interior
    scale = 2.0 / n_p
    sw_int = cache.sqrt_w_int
    sw_ifc = np.sqrt(data.theta) * cache.sqrt_w_ifc
    w_lap = scale * sw_int[:, None] * ((batch.p_int * batch.r_int) @ batch.y_nn)
    w_plus = scale * sw_ifc[:, None] * ((batch.p_plus * batch.r_jump) @ batch.y_nn)
    w_minus = -scale * sw_ifc[:, None] * ((batch.p_minus * batch.r_jump) @ batch.y_nn)

    n_out = params.config.n_outputs
    d = params.config.input_dim
    n_pts = n_int + quad.n_interface
    bar_value = np.zeros((n_pts, n_out))
    bar_grad = np.zeros((n_pts, n_out, d))
    bar_hess = np.zeros((n_pts, n_out, d, d))
    # interior rows: lap(c*raw) = c lap_raw + 2 grad_c . grad_raw + raw lap_c
    bar_value[:n_int] = w_lap * fac.laplacian
    bar_grad[:n_int] = 2.0 * w_lap[:, :, None] * fac.gradient
    for k in range(d):
        bar_hess[:n_int, :, k, k] = w_lap * fac.value
    # jump rows: trace_pm = a_pm*raw + d_coef . grad_raw
    bar_value[n_int:] = w_plus * tf.a_plus + w_minus * tf.a_minus
    bar_grad[n_int:] = (w_plus + w_minus)[:, :, None] * tf.d_coef
    grad = backward_jets(params, tape, bar_value, bar_grad, bar_hess)
    return loss, grad


def run_epoch(
    state: TrainState,
    config: TrainConfig,
    geometry: Geometry,
    rhs: RhsSpec,
    cutoff_config: CutoffConfig,
    validation: "ValidationSet | None" = None,
):
    """One Algorithm-step: sample, solve, differentiate, update.

    Returns (train_loss, val_loss or None); the state advances in place.
    """
    epoch = state.iteration
    data = prepare_epoch(state, config, geometry, rhs, cutoff_config)
    try:
        loss, grad = loss_and_param_gradient(state.params, data)
    except EpochError:
        raise
    except RuntimeError as exc:
        raise EpochError(epoch, None, str(exc)) from exc
    lr = linear_lr(config.lr_start, config.lr_end, epoch, config.iterations)
    flat = adam_step(state.adam, state.params.to_flat(), grad, lr)
    state.params = MlpParams.from_flat(state.net_config, flat)
    state.iteration += 1

    val_loss = None
    if validation is not None and (
        state.iteration % config.val_every == 0 or state.iteration == config.iterations
    ):
        val_loss = validation_loss(state.params, validation, data.geometry, rhs, cutoff_config)
        if state.best_val is None or val_loss < state.best_val[0]:
            state.best_val = (val_loss, state.params.to_flat().copy(), state.iteration)
    return loss, val_loss


@dataclass
class ValidationSet:
    """Frozen validation quadrature, parameters and their eigen data."""

    quad: QuadratureSet
    parameters: np.ndarray
    pairs_per_p: list
    theta: float


def make_validation_set(geometry: Geometry, config: TrainConfig) -> ValidationSet:
    from .sampling import VALIDATION_EXTRA

    rng_pts = config.seeds.validation_stream("interior")
    n_ifc = config.n_interface + (VALIDATION_EXTRA if geometry.dimension == 2 else 0)
    quad = sample_collocation(
        geometry, config.n_interior + VALIDATION_EXTRA, n_ifc, rng_pts
    )
    rng_par = config.seeds.validation_stream("params")
    parameters = sample_parameters(
        rng_par, config.n_params, geometry.n_subdomains, config.p_min, config.p_max
    )
    pairs = _eigen_for_batch(geometry, parameters, config, epoch=-1)
    return ValidationSet(quad, parameters, pairs, config.theta)


def validation_loss(
    params: MlpParams,
    validation: ValidationSet,
    geometry: Geometry,
    rhs: RhsSpec,
    cutoff_config: CutoffConfig,
) -> float:
    data = EpochData(
        geometry, cutoff_config, rhs, validation.quad, validation.parameters,
        validation.pairs_per_p, validation.theta,
    )
    loss, _ = loss_and_param_gradient(params, data, need_gradient=False)
    return loss


def train(
    geometry: Geometry,
    net_config: NetConfig,
    config: TrainConfig,
    rhs: RhsSpec,
    cutoff_config: CutoffConfig | None = None,
    on_epoch=None,
    with_validation: bool = True,
) -> tuple[TrainState, list]:
    """Full training run; returns the final state and the loss history.

    History rows are (iteration, train_loss, val_loss or None).  The
    optional on_epoch callback receives each row as it is produced.
    """
    cutoff_config = cutoff_config or default_cutoff_config(geometry)
    state = init_train_state(geometry, net_config, config)
    validation = make_validation_set(geometry, config) if with_validation else None
    history = []
    for _ in range(config.iterations):
        loss, val = run_epoch(state, config, geometry, rhs, cutoff_config, validation)
        row = (state.iteration, loss, val)
        history.append(row)
        if on_epoch is not None:
            on_epoch(row)
    return state, history


def final_solve(
    params: MlpParams,
    geometry: Geometry,
    parameter,
    rhs: RhsSpec,
    cutoff_config: CutoffConfig,
    theta: float,
    n_per_axis: int,
    n_per_interface: int | None = None,
    n_singular: int = 1,
):
    """Re-assemble on a midpoint evaluation grid and solve one parameter.

    Returns (coefficients, fields) where fields carries the grid, solution
    values, gradients and fluxes.  The trained basis is discretization
    invariant, so the grid may be much finer than the training points.
    """
    parameter = np.asarray(parameter, dtype=float)
    if n_per_interface is None:
        n_per_interface = n_per_axis
    quad = midpoint_grid(geometry, n_per_axis, n_per_interface)
    cfg = params.config
    jets = forward_jets(params, quad.interior_points)
    fac = composition_factors(
        quad.interior_points, geometry, cutoff_config, cfg.n1, cfg.n2
    )
    lap = (
        fac.value * jets.laplacian
        + 2.0 * np.einsum("jnd,jnd->jn", fac.gradient, jets.gradient)
        + jets.value * fac.laplacian
    )
    values = fac.value * jets.value
    grads = fac.value[:, :, None] * jets.gradient + jets.value[:, :, None] * fac.gradient
    ifc_axes = np.array([geometry.interfaces[k].axis for k in quad.interface_ids], dtype=int)
    tf = interface_trace_factors(
        quad.interface_points, ifc_axes, geometry, cutoff_config, cfg.n1, cfg.n2
    )
    ifc_jets = forward_jets(params, quad.interface_points)
    tr_minus = tf.a_minus * ifc_jets.value + np.einsum("jnd,jnd->jn", tf.d_coef, ifc_jets.gradient)
    tr_plus = tf.a_plus * ifc_jets.value + np.einsum("jnd,jnd->jn", tf.d_coef, ifc_jets.gradient)
    cache = build_epoch_cache(
        geometry, cutoff_config, quad, lap, tr_minus, tr_plus, rhs, theta=theta
    )
    pairs = solve_vertex_eigenpairs(geometry, parameter, n_singular) if geometry.n_singular else []
    sing_evals = singular_evals_from_cache(cache, pairs) if pairs else None
    system = assemble_system(cache, parameter, sing_evals, theta)
    y, res_sq = solve_normal_equations(system)
    coeffs = CoefficientVector.split(y, cfg.n1, cfg.n2)

    sing_vals = sing_grads = None
    if pairs and any(pairs):
        basis = SingularBasis(geometry, cutoff_config, pairs)
        cols_v, cols_g = [], []
        for i, j in basis.columns():
            v, g = eval_s(basis, i, j, quad.interior_points)
            cols_v.append(v)
            cols_g.append(g)
        if cols_v:
            sing_vals = np.stack(cols_v, axis=1)
            sing_grads = np.stack(cols_g, axis=2).transpose(0, 2, 1)
    u, grad_u = evaluate_solution(y, values, grads, sing_vals, sing_grads)
    p_local = parameter[quad.interior_subdomain]
    flux = p_local[:, None] * grad_u
    fields = {
        "quad": quad,
        "values": u,
        "gradients": grad_u,
        "flux": flux,
        "residual_sq": res_sq,
    }
    return coeffs, fields


def save_checkpoint(path, state: TrainState, config: TrainConfig, extra: dict | None = None):
    payload = {
        "version": CHECKPOINT_VERSION,
        "net_config": {
            "input_dim": state.net_config.input_dim,
            "hidden": list(state.net_config.hidden),
            "n1": state.net_config.n1,
            "n2": state.net_config.n2,
        },
        "flat_params": state.params.to_flat(),
        "adam_m": state.adam.m,
        "adam_v": state.adam.v,
        "adam_t": state.adam.t,
        "iteration": state.iteration,
        "rng_params": state.rng_params.bit_generator.state,
        "rng_interior": state.rng_interior.bit_generator.state,
        "rng_interface": state.rng_interface.bit_generator.state,
        "best_val": state.best_val,
        "train_config": config,
        "extra": extra or {},
    }
    with open(path, "wb") as fh:
        pickle.dump(payload, fh)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        payload = pickle.load(fh)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    nc = payload["net_config"]
    net_config = NetConfig(nc["input_dim"], tuple(nc["hidden"]), nc["n1"], nc["n2"])
    params = MlpParams.from_flat(net_config, payload["flat_params"])
    adam = AdamState(payload["adam_m"], payload["adam_v"], payload["adam_t"])
    config: TrainConfig = payload["train_config"]
    state = TrainState(
        net_config=net_config,
        params=params,
        adam=adam,
        iteration=payload["iteration"],
        rng_params=config.seeds.stream("params"),
        rng_interior=config.seeds.stream("interior"),
        rng_interface=config.seeds.stream("interface"),
        best_val=payload["best_val"],
    )
    for name in ("rng_params", "rng_interior", "rng_interface"):
        getattr(state, name).bit_generator.state = payload[name]
    return state, config, payload["extra"]

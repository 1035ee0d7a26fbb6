"""Training schemes: cross-contrast fusion, blind-spot and neighbor baselines.

Implemented schemes (CLI names match the evaluation-table labels):

    n2c_bfs                chained filter stack -> translation net, trained
                           jointly against the noisy other-contrast image;
                           the filter stack alone is the denoiser of interest
    n2c_net                two stages: first n2c_bfs to obtain a trained
                           translator, then the translator is frozen and a
                           fresh network denoiser is trained through it
    n2v_bfs                blind-spot training of the filter stack: masked
                           pixels are replaced by random neighbors and
                           predicted from context
    n2neighbor_bfs         noisy target taken from a neighboring slice of
                           the same contrast (offset 0 degenerates to true
                           two-realization training)
    n2n_direct             ablation: one network maps input contrast
                           directly onto the target contrast
    bf_only_crosscontrast  ablation: the filter stack alone regresses onto
                           the other contrast (it cannot remap intensities,
                           so it can only blur)

Training granularity is one slice pair per optimizer step with a
full-image MSE loss.  Filter and network parameters get separate Adam
states (their scales differ by orders of magnitude).  Early stopping
watches the same self-supervised loss on held-out slices, never clean
images; the best-validation parameters are restored at the end.  Runs are
bit-reproducible from (data, config, seed).
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ._version import __version__
from .bilateral import BilateralStackParams, stack_backward, stack_forward
from .errors import ConfigurationError, ContractError, DataError, NumericalError
from .image import STREAM_N2V_MASK, STREAM_N2V_VAL, Contrast, rng_for
from .metrics import MetricConfig, psnr, ssim
from .optim import AdamState, ParamVector, adam_step
from .phantom import MultiContrastVolume
from .unet import DomainNetParams, FrozenNet, NetConfig, freeze, net_backward, net_forward, net_init

SCHEMES = (
    "n2c_bfs",
    "n2c_net",
    "n2v_bfs",
    "n2neighbor_bfs",
    "n2n_direct",
    "bf_only_crosscontrast",
)
_CROSS_CONTRAST = {"n2c_bfs", "n2c_net", "n2n_direct", "bf_only_crosscontrast"}
ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON = 0.9, 0.999, 1e-8


@dataclass
class TrainConfig:
    """Resolved training configuration; every field is echoed into reports."""

    scheme: str
    lr: float = 5e-5
    max_epochs: int = 300
    patience: int = 10
    seed: int = 0
    direction: tuple[str, str] = ("A", "B")
    n2v_mask_fraction: float = 0.01
    n2v_replace_radius: int = 2
    neighbor_offset: int = 1
    bf_depth: int = 3
    net_base_features: int = 8
    net_depth: int = 2
    n_val_slices: int | None = None

    def __post_init__(self) -> None:
        if self.scheme not in SCHEMES:
            raise ConfigurationError(
                f"unknown scheme {self.scheme!r}; valid schemes: {', '.join(SCHEMES)}"
            )
        if self.lr <= 0:
            raise ConfigurationError(f"lr must be > 0, got {self.lr}")
        if self.max_epochs < 0:
            raise ConfigurationError(f"max_epochs must be >= 0, got {self.max_epochs}")
        if self.patience < 1:
            raise ConfigurationError(f"patience must be >= 1, got {self.patience}")
        if not 0.0 < self.n2v_mask_fraction < 0.5:
            raise ConfigurationError(
                f"n2v_mask_fraction must lie in (0, 0.5), got {self.n2v_mask_fraction}"
            )
        if self.n2v_replace_radius < 1:
            raise ConfigurationError(
                f"n2v_replace_radius must be >= 1, got {self.n2v_replace_radius}"
            )
        if self.neighbor_offset < 0:
            raise ConfigurationError(
                f"neighbor_offset must be >= 0, got {self.neighbor_offset}"
            )
        if self.bf_depth < 1:
            raise ConfigurationError(f"bf_depth must be >= 1, got {self.bf_depth}")
        try:
            self.direction = (Contrast(self.direction[0]).value, Contrast(self.direction[1]).value)
        except ValueError as exc:
            raise ConfigurationError(f"direction tags must be A or B, got {self.direction}") from exc
        if self.scheme in _CROSS_CONTRAST and self.direction[0] == self.direction[1]:
            raise ConfigurationError(
                f"scheme {self.scheme} is cross-contrast: input and target must differ"
            )

    @property
    def input_contrast(self) -> Contrast:
        return Contrast(self.direction[0])

    @property
    def target_contrast(self) -> Contrast:
        return Contrast(self.direction[1])

    def net_config(self) -> NetConfig:
        return NetConfig(base_features=self.net_base_features, depth=self.net_depth)


@dataclass
class TrainReport:
    """Everything needed to audit one run; serialized as JSON."""

    scheme: str
    config: dict
    history: list[dict]
    stopping_epoch: int
    stopping_reason: str
    metrics: dict
    train_slices: list[int]
    val_slices: list[int]
    wall_clock_seconds: float
    stages: list[dict] | None = None
    adam: dict = field(
        default_factory=lambda: {"beta1": ADAM_BETA1, "beta2": ADAM_BETA2, "epsilon": ADAM_EPSILON}
    )
    tool_version: str = __version__

    @property
    def initial_train_loss(self) -> float:
        return self.history[0]["train_loss"] if self.history else float("nan")

    @property
    def final_train_loss(self) -> float:
        return self.history[-1]["train_loss"] if self.history else float("nan")

    def to_dict(self) -> dict:
        return {
            "tool_version": self.tool_version,
            "scheme": self.scheme,
            "config": self.config,
            "adam": self.adam,
            "train_slices": self.train_slices,
            "val_slices": self.val_slices,
            "history": self.history,
            "stopping_epoch": self.stopping_epoch,
            "stopping_reason": self.stopping_reason,
            "stages": self.stages,
            "metrics": self.metrics,
            "wall_clock_seconds": self.wall_clock_seconds,
        }


_BUNDLE_CONTENTS = {
    # scheme -> (has stack, has net, has translator)
    "n2c_bfs": (True, False, True),
    "n2c_net": (False, True, True),
    "n2v_bfs": (True, False, False),
    "n2neighbor_bfs": (True, False, False),
    "n2n_direct": (False, True, False),
    "bf_only_crosscontrast": (True, False, False),
}


@dataclass
class ModelBundle:
    """Trained operators tied to their scheme; format_version guards files."""

    scheme: str
    stack: BilateralStackParams | None = None
    net: DomainNetParams | None = None
    translator: DomainNetParams | None = None
    seed: int = 0
    format_version: int = 1

    def __post_init__(self) -> None:
        if self.scheme not in _BUNDLE_CONTENTS:
            raise ContractError(f"unknown bundle scheme {self.scheme!r}")
        want_stack, want_net, want_translator = _BUNDLE_CONTENTS[self.scheme]
        for label, want, have in (
            ("stack", want_stack, self.stack),
            ("net", want_net, self.net),
            ("translator", want_translator, self.translator),
        ):
            if want and have is None:
                raise ContractError(f"scheme {self.scheme} bundle requires {label} parameters")
            if not want and have is not None:
                raise ContractError(f"scheme {self.scheme} bundle must not carry {label} parameters")

    def denoising_operator(self):
        """Callable applying only the denoising operator (2-D float64 arrays).

        For the ablation scheme n2n_direct this is the direct mapper, whose
        output deliberately lives in the target contrast.
        """
        if self.stack is not None:
            stack = self.stack

            def run(x: np.ndarray) -> np.ndarray:
                y, _ = stack_forward(np.asarray(x, dtype=np.float64), stack)
                return y

            return run
        net = self.net

        def run(x: np.ndarray) -> np.ndarray:
            y, _ = net_forward(np.asarray(x, dtype=np.float64), net)
            return y

        return run

    def translation_operator(self):
        if self.translator is None:
            raise ContractError(f"scheme {self.scheme} bundle carries no translation operator")
        translator = self.translator

        def run(x: np.ndarray) -> np.ndarray:
            y, _ = net_forward(np.asarray(x, dtype=np.float64), translator)
            return y

        return run


def mse_loss(pred, target) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient 2*(pred - target)/N wrt pred."""
    p = np.asarray(getattr(pred, "data", pred), dtype=np.float64)
    t = np.asarray(getattr(target, "data", target), dtype=np.float64)
    if p.shape != t.shape:
        raise ContractError(f"shape mismatch {p.shape} vs {t.shape}")
    diff = p - t
    loss = float(np.mean(diff**2))
    return loss, 2.0 * diff / diff.size


def _split_slices(volume: MultiContrastVolume, cfg: TrainConfig) -> tuple[list[int], list[int]]:
    n = volume.n_slices
    n_val = cfg.n_val_slices if cfg.n_val_slices is not None else max(1, n // 4)
    if n_val < 1 or n - n_val < 2:
        raise DataError(
            f"volume with {n} slices cannot provide >= 2 training and >= 1 validation slices "
            f"(n_val_slices={n_val})"
        )
    return list(range(n - n_val)), list(range(n - n_val, n))


def _require_contrast(volume: MultiContrastVolume, contrast: Contrast) -> None:
    for i, slc in enumerate(volume.slices):
        if not slc.noisy(contrast):
            raise DataError(f"slice {i} lacks noisy acquisitions of contrast {contrast}")


def _noisy_data(slc, contrast: Contrast, index: int) -> np.ndarray:
    imgs = slc.noisy(contrast)
    return imgs[index % len(imgs)].as_float64()


class _Group:
    """One independently optimized parameter collection."""

    def __init__(self, name: str, get, set_):
        self.name = name
        self.get = get
        self.set = set_


def _optimize(cfg: TrainConfig, groups: list[_Group], train_items, step_fn, val_fn, snapshot, restore, log=None):
    adam = {g.name: AdamState.fresh(len(g.get()), cfg.lr) for g in groups}
    history: list[dict] = []
    best_val, best_epoch, best_state = np.inf, -1, snapshot()
    stopping_reason = "max_epochs"
    epochs_run = 0

    for epoch in range(cfg.max_epochs):
        step_losses = []
        for pos, item in enumerate(train_items):
            loss, grads = step_fn(epoch, pos, item)
            if not np.isfinite(loss):
                raise NumericalError(f"training loss diverged at epoch {epoch}")
            step_losses.append(loss)
            for g in groups:
                if g.name in grads:
                    new_params, adam[g.name] = adam_step(g.get(), grads[g.name], adam[g.name])
                    g.set(new_params)
        train_loss = float(np.mean(step_losses))
        val_loss = float(val_fn())
        if not np.isfinite(val_loss):
            raise NumericalError(f"validation loss diverged at epoch {epoch}")
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        if log is not None:
            log(f"epoch {epoch} train_loss {train_loss:.6e} val_loss {val_loss:.6e}")
        epochs_run = epoch + 1
        if val_loss < best_val:
            best_val, best_epoch, best_state = val_loss, epoch, snapshot()
        elif epoch - best_epoch >= cfg.patience:
            stopping_reason = "patience"
            break

    restore(best_state)
    return history, epochs_run, stopping_reason


def evaluate_denoiser(
    bundle: ModelBundle,
    volume: MultiContrastVolume,
    slice_indices: list[int],
    input_contrast: Contrast,
) -> dict:
    """PSNR/SSIM of the bundle's denoiser vs clean, next to the noisy baseline.

    Uses noisy realization index 0 of the input contrast on the given
    slices; data_range is the volume's max clean intensity.
    """
    mc = MetricConfig(data_range=volume.data_range())
    op = bundle.denoising_operator()
    rows = []
    for i in slice_indices:
        slc = volume.slices[i]
        clean = slc.clean(input_contrast).as_float64()
        noisy = slc.noisy(input_contrast)[0].as_float64()
        den = op(noisy)
        rows.append(
            {
                "slice": i,
                "psnr": psnr(den, clean, mc),
                "ssim": ssim(den, clean, mc),
                "baseline_psnr": psnr(noisy, clean, mc),
                "baseline_ssim": ssim(noisy, clean, mc),
            }
        )

    def agg(key: str):
        vals = np.asarray([r[key] for r in rows])
        return float(vals.mean()), float(vals.std())

    out = {"per_slice": rows, "data_range": mc.data_range}
    for key in ("psnr", "ssim", "baseline_psnr", "baseline_ssim"):
        out[f"{key}_mean"], out[f"{key}_std"] = agg(key)
    return out


def _finish_report(cfg, history, epochs_run, reason, bundle, volume, train_idx, val_idx, t0, stages=None):
    metrics = evaluate_denoiser(bundle, volume, val_idx, cfg.input_contrast)
    cfg_dict = asdict(cfg)
    cfg_dict["direction"] = list(cfg.direction)
    return TrainReport(
        scheme=cfg.scheme,
        config=cfg_dict,
        history=history,
        stopping_epoch=epochs_run,
        stopping_reason=reason,
        metrics=metrics,
        train_slices=train_idx,
        val_slices=val_idx,
        wall_clock_seconds=time.perf_counter() - t0,
        stages=stages,
    )


def train_n2c_known(data: MultiContrastVolume, cfg: TrainConfig, log=None) -> tuple[ModelBundle, TrainReport]:
    """Joint training of the filter stack and the translation net (cross contrast).

    Per step: stack forward on the noisy input contrast, net forward on the
    stack output, MSE against the noisy target contrast, full backward
    chain, one Adam step for each operator.  The filter stack alone is the
    denoiser extracted at inference time.
    """
    t0 = time.perf_counter()
    cin, ctg = cfg.input_contrast, cfg.target_contrast
    _require_contrast(data, cin)
    _require_contrast(data, ctg)
    train_idx, val_idx = _split_slices(data, cfg)

    state = {
        "stack": BilateralStackParams.default_init(cfg.bf_depth),
        "net": net_init(cfg.net_config(), cfg.seed),
    }
    groups = [
        _Group("stack", lambda: state["stack"].to_param_vector(),
               lambda pv: state.__setitem__("stack", BilateralStackParams.from_param_vector(pv))),
        _Group("net", lambda: state["net"].to_param_vector(),
               lambda pv: state.__setitem__("net", state["net"].with_flat(pv.values))),
    ]

    def step(epoch, pos, slice_index):
        slc = data.slices[slice_index]
        x = _noisy_data(slc, cin, epoch)
        tgt = _noisy_data(slc, ctg, epoch)
        y1, inter = stack_forward(x, state["stack"])
        y2, saved = net_forward(y1, state["net"])
        loss, gp = mse_loss(y2, tgt)
        gv, gy1 = net_backward(saved, gp)
        gw, _ = stack_backward(inter, gy1)
        return loss, {"stack": gw, "net": gv}

    def val_loss():
        losses = []
        for i in val_idx:
            slc = data.slices[i]
            y1, _ = stack_forward(_noisy_data(slc, cin, 0), state["stack"])
            y2, _ = net_forward(y1, state["net"])
            losses.append(mse_loss(y2, _noisy_data(slc, ctg, 0))[0])
        return np.mean(losses)

    def snapshot():
        return (state["stack"].copy(), state["net"].copy())

    def restore(snap):
        state["stack"], state["net"] = snap[0].copy(), snap[1].copy()

    history, epochs, reason = _optimize(cfg, groups, train_idx, step, val_loss, snapshot, restore, log)
    bundle = ModelBundle(scheme="n2c_bfs", stack=state["stack"], translator=state["net"], seed=cfg.seed)
    report = _finish_report(cfg, history, epochs, reason, bundle, data, train_idx, val_idx, t0)
    return bundle, report


def train_n2c_network(data: MultiContrastVolume, cfg: TrainConfig, log=None) -> tuple[ModelBundle, TrainReport]:
    """Two-stage variant: train the translator jointly, freeze it, then train
    a fresh network denoiser through the frozen translator."""
    t0 = time.perf_counter()
    cin, ctg = cfg.input_contrast, cfg.target_contrast
    stage1_cfg = TrainConfig(**{**asdict(cfg), "scheme": "n2c_bfs"})
    stage1_log = (lambda msg: log(f"[stage translator] {msg}")) if log is not None else None
    stage1_bundle, stage1_report = train_n2c_known(data, stage1_cfg, log=stage1_log)
    frozen: FrozenNet = freeze(stage1_bundle.translator)

    train_idx, val_idx = _split_slices(data, cfg)
    state = {"net": net_init(cfg.net_config(), cfg.seed, stream_index=1)}
    groups = [
        _Group("net", lambda: state["net"].to_param_vector(),
               lambda pv: state.__setitem__("net", state["net"].with_flat(pv.values))),
    ]

    def step(epoch, pos, slice_index):
        slc = data.slices[slice_index]
        x = _noisy_data(slc, cin, epoch)
        tgt = _noisy_data(slc, ctg, epoch)
        y1, s1 = net_forward(x, state["net"])
        y2, s2 = frozen.forward(y1)
        loss, gp = mse_loss(y2, tgt)
        gy1 = frozen.backward_input(s2, gp)
        gd, _ = net_backward(s1, gy1)
        return loss, {"net": gd}

    def val_loss():
        losses = []
        for i in val_idx:
            slc = data.slices[i]
            y1, _ = net_forward(_noisy_data(slc, cin, 0), state["net"])
            y2, _ = frozen.forward(y1)
            losses.append(mse_loss(y2, _noisy_data(slc, ctg, 0))[0])
        return np.mean(losses)

    def snapshot():
        return state["net"].copy()

    def restore(snap):
        state["net"] = snap.copy()

    history, epochs, reason = _optimize(cfg, groups, train_idx, step, val_loss, snapshot, restore, log)
    bundle = ModelBundle(
        scheme="n2c_net",
        net=state["net"],
        translator=frozen.parameters_snapshot(),
        seed=cfg.seed,
    )
    stages = [
        {
            "name": "translator",
            "epochs": stage1_report.stopping_epoch,
            "stopping_reason": stage1_report.stopping_reason,
            "history": stage1_report.history,
        },
        {"name": "denoiser", "epochs": epochs, "stopping_reason": reason, "history": history},
    ]
    report = _finish_report(cfg, history, epochs, reason, bundle, data, train_idx, val_idx, t0, stages)
    return bundle, report


def _blindspot_sample(x: np.ndarray, rng: np.random.Generator, fraction: float, radius: int):
    """Masked-pixel indices and replacement values from random neighbors."""
    h, w = x.shape
    n_mask = max(1, int(round(fraction * x.size)))
    flat_idx = np.sort(rng.choice(x.size, size=n_mask, replace=False))
    values = np.empty(n_mask)
    for i, fi in enumerate(flat_idx):
        r, c = divmod(int(fi), w)
        while True:
            dr = int(rng.integers(-radius, radius + 1))
            dc = int(rng.integers(-radius, radius + 1))
            rr, cc = r + dr, c + dc
            if (dr or dc) and 0 <= rr < h and 0 <= cc < w:
                break
        values[i] = x[rr, cc]
    return flat_idx, values


def _masked_mse(pred: np.ndarray, original: np.ndarray, flat_idx: np.ndarray):
    diff = pred.reshape(-1)[flat_idx] - original.reshape(-1)[flat_idx]
    loss = float(np.mean(diff**2))
    grad = np.zeros_like(pred)
    grad.reshape(-1)[flat_idx] = 2.0 * diff / diff.size
    return loss, grad


def train_n2v(data: MultiContrastVolume, cfg: TrainConfig, log=None) -> tuple[ModelBundle, TrainReport]:
    """Blind-spot training of the filter stack on a single contrast.

    Masked pixels are replaced by a uniformly random in-bounds neighbor
    within ``n2v_replace_radius`` (never the pixel itself); the loss is the
    MSE at masked positions against the original noisy values.  Masks are a
    pure function of (seed, step index); validation slices use fixed masks.
    """
    t0 = time.perf_counter()
    cin = cfg.input_contrast
    _require_contrast(data, cin)
    train_idx, val_idx = _split_slices(data, cfg)

    state = {"stack": BilateralStackParams.default_init(cfg.bf_depth)}
    groups = [
        _Group("stack", lambda: state["stack"].to_param_vector(),
               lambda pv: state.__setitem__("stack", BilateralStackParams.from_param_vector(pv))),
    ]

    val_cases = []
    for i in val_idx:
        x = _noisy_data(data.slices[i], cin, 0)
        rng = rng_for(cfg.seed, STREAM_N2V_VAL, i)
        flat_idx, values = _blindspot_sample(x, rng, cfg.n2v_mask_fraction, cfg.n2v_replace_radius)
        xm = x.copy()
        xm.reshape(-1)[flat_idx] = values
        val_cases.append((x, xm, flat_idx))

    def step(epoch, pos, slice_index):
        slc = data.slices[slice_index]
        x = _noisy_data(slc, cin, epoch)
        step_index = epoch * len(train_idx) + pos
        rng = rng_for(cfg.seed, STREAM_N2V_MASK, step_index)
        flat_idx, values = _blindspot_sample(x, rng, cfg.n2v_mask_fraction, cfg.n2v_replace_radius)
        xm = x.copy()
        xm.reshape(-1)[flat_idx] = values
        y, inter = stack_forward(xm, state["stack"])
        loss, grad = _masked_mse(y, x, flat_idx)
        gw, _ = stack_backward(inter, grad)
        return loss, {"stack": gw}

    def val_loss():
        losses = []
        for x, xm, flat_idx in val_cases:
            y, _ = stack_forward(xm, state["stack"])
            losses.append(_masked_mse(y, x, flat_idx)[0])
        return np.mean(losses)

    def snapshot():
        return state["stack"].copy()

    def restore(snap):
        state["stack"] = snap.copy()

    history, epochs, reason = _optimize(cfg, groups, train_idx, step, val_loss, snapshot, restore, log)
    bundle = ModelBundle(scheme="n2v_bfs", stack=state["stack"], seed=cfg.seed)
    report = _finish_report(cfg, history, epochs, reason, bundle, data, train_idx, val_idx, t0)
    return bundle, report


def train_n2neighbor(data: MultiContrastVolume, cfg: TrainConfig, log=None) -> tuple[ModelBundle, TrainReport]:
    """Noisy target from the slice ``neighbor_offset`` positions further on.

    Same-contrast training; the target uses the next acquisition index so
    that offset 0 degenerates to true two-realization training instead of
    regressing an image onto itself.
    """
    t0 = time.perf_counter()
    cin = cfg.input_contrast
    _require_contrast(data, cin)
    off = cfg.neighbor_offset
    if data.n_slices < off + 1:
        raise DataError(
            f"neighbor_offset {off} needs at least {off + 1} slices, volume has {data.n_slices}"
        )
    if off == 0 and any(len(s.noisy(cin)) < 2 for s in data.slices):
        raise DataError("neighbor_offset 0 requires >= 2 noisy realizations per slice")
    train_idx, val_idx = _split_slices(data, cfg)
    train_pairs = [(i, i + off) for i in train_idx if i + off in set(train_idx)]
    val_pairs = [(i, i + off) for i in val_idx if i + off in set(val_idx)]
    if not train_pairs or not val_pairs:
        raise DataError(
            f"neighbor_offset {off} leaves no usable slice pairs "
            f"({len(train_pairs)} train, {len(val_pairs)} val)"
        )

    state = {"stack": BilateralStackParams.default_init(cfg.bf_depth)}
    groups = [
        _Group("stack", lambda: state["stack"].to_param_vector(),
               lambda pv: state.__setitem__("stack", BilateralStackParams.from_param_vector(pv))),
    ]

    def step(epoch, pos, pair):
        i, j = pair
        x = _noisy_data(data.slices[i], cin, epoch)
        tgt = _noisy_data(data.slices[j], cin, epoch + 1)
        y, inter = stack_forward(x, state["stack"])
        loss, grad = mse_loss(y, tgt)
        gw, _ = stack_backward(inter, grad)
        return loss, {"stack": gw}

    def val_loss():
        losses = []
        for i, j in val_pairs:
            y, _ = stack_forward(_noisy_data(data.slices[i], cin, 0), state["stack"])
            losses.append(mse_loss(y, _noisy_data(data.slices[j], cin, 1))[0])
        return np.mean(losses)

    def snapshot():
        return state["stack"].copy()

    def restore(snap):
        state["stack"] = snap.copy()

    history, epochs, reason = _optimize(cfg, groups, train_pairs, step, val_loss, snapshot, restore, log)
    bundle = ModelBundle(scheme="n2neighbor_bfs", stack=state["stack"], seed=cfg.seed)
    report = _finish_report(cfg, history, epochs, reason, bundle, data, train_idx, val_idx, t0)
    return bundle, report


def train_ablations(data: MultiContrastVolume, cfg: TrainConfig, log=None) -> tuple[ModelBundle, TrainReport]:
    """Discussion-section ablations: direct contrast mapping with one net,
    and the filter stack regressing cross-contrast without a translator."""
    if cfg.scheme not in ("n2n_direct", "bf_only_crosscontrast"):
        raise ConfigurationError(f"train_ablations cannot run scheme {cfg.scheme!r}")
    t0 = time.perf_counter()
    cin, ctg = cfg.input_contrast, cfg.target_contrast
    _require_contrast(data, cin)
    _require_contrast(data, ctg)
    train_idx, val_idx = _split_slices(data, cfg)

    use_net = cfg.scheme == "n2n_direct"
    state: dict = {}
    if use_net:
        state["net"] = net_init(cfg.net_config(), cfg.seed)
        groups = [
            _Group("net", lambda: state["net"].to_param_vector(),
                   lambda pv: state.__setitem__("net", state["net"].with_flat(pv.values))),
        ]
    else:
        state["stack"] = BilateralStackParams.default_init(cfg.bf_depth)
        groups = [
            _Group("stack", lambda: state["stack"].to_param_vector(),
                   lambda pv: state.__setitem__("stack", BilateralStackParams.from_param_vector(pv))),
        ]

    def forward_full(x):
        if use_net:
            return net_forward(x, state["net"])
        return stack_forward(x, state["stack"])

    def step(epoch, pos, slice_index):
        slc = data.slices[slice_index]
        x = _noisy_data(slc, cin, epoch)
        tgt = _noisy_data(slc, ctg, epoch)
        y, saved = forward_full(x)
        loss, grad = mse_loss(y, tgt)
        if use_net:
            g, _ = net_backward(saved, grad)
            return loss, {"net": g}
        g, _ = stack_backward(saved, grad)
        return loss, {"stack": g}

    def val_loss():
        losses = []
        for i in val_idx:
            slc = data.slices[i]
            y, _ = forward_full(_noisy_data(slc, cin, 0))
            losses.append(mse_loss(y, _noisy_data(slc, ctg, 0))[0])
        return np.mean(losses)

    def snapshot():
        return {k: v.copy() for k, v in state.items()}

    def restore(snap):
        state.update({k: v.copy() for k, v in snap.items()})

    history, epochs, reason = _optimize(cfg, groups, train_idx, step, val_loss, snapshot, restore, log)
    if use_net:
        bundle = ModelBundle(scheme="n2n_direct", net=state["net"], seed=cfg.seed)
    else:
        bundle = ModelBundle(scheme="bf_only_crosscontrast", stack=state["stack"], seed=cfg.seed)
    report = _finish_report(cfg, history, epochs, reason, bundle, data, train_idx, val_idx, t0)
    return bundle, report


_TRAINERS = {
    "n2c_bfs": train_n2c_known,
    "n2c_net": train_n2c_network,
    "n2v_bfs": train_n2v,
    "n2neighbor_bfs": train_n2neighbor,
    "n2n_direct": train_ablations,
    "bf_only_crosscontrast": train_ablations,
}


def train(data: MultiContrastVolume, cfg: TrainConfig, log=None) -> tuple[ModelBundle, TrainReport]:
    """Dispatch to the scheme's trainer."""
    return _TRAINERS[cfg.scheme](data, cfg, log=log)

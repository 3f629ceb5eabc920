"""Deterministic training, distillation, evaluation, and persistence.

Every source of randomness is a stateless stream keyed on (seed, epoch,
sample): shuffling, cropping, and initialization replay identically from
any epoch boundary, which is what makes checkpoint resume bit-exact.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .distill import (
    DistillConfig,
    VIEWS,
    distill_loss_terms,
    dual_depth_map,
    supervised_loss,
)
from .errors import CheckpointError, ConfigError, ShapeError, SignalError, TrainingDiverged
from .model import Model, ModelConfig
from .signal import DEFAULT_RESOLUTIONS, AudioClip, si_sdr
from .tensor import Tensor

CHECKPOINT_MAGIC = b"MVATCKPT"
CHECKPOINT_VERSION = 1

_SHUFFLE_TAG = 101
_CROP_TAG = 103


@dataclass
class TrainConfig:
    epochs: int
    seed: int = 0
    batch_size: int = 4
    learning_rate: float = 5e-4
    lr_decay: float = 0.999
    segment_len: int = 16384
    grad_clip: float = 5.0
    val_every: int = 1
    recrop_each_epoch: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.segment_len < 1:
            raise ConfigError(f"segment_len must be >= 1, got {self.segment_len}")
        if self.val_every < 1:
            raise ConfigError(f"val_every must be >= 1, got {self.val_every}")


class Adam:
    """Adam with bias correction; state arrays live in the parameter dtype."""

    def __init__(self, named_params, learning_rate, beta1=0.9, beta2=0.999, eps=1e-8):
        self.named_params = list(named_params)
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.named_params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.named_params}

    def zero_grad(self):
        for _, p in self.named_params:
            p.grad = None

    def clip_gradients(self, max_norm: float):
        if max_norm <= 0:
            return
        total = 0.0
        for _, p in self.named_params:
            if p.grad is not None:
                total += float((p.grad.astype(np.float64) ** 2).sum())
        norm = np.sqrt(total)
        if norm > max_norm:
            scale = max_norm / norm
            for _, p in self.named_params:
                if p.grad is not None:
                    p.grad = (p.grad * scale).astype(p.data.dtype)

    def step(self, lr: float | None = None):
        lr = self.learning_rate if lr is None else lr
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.step_count
        bc2 = 1.0 - b2**self.step_count
        for name, p in self.named_params:
            if p.grad is None:
                continue
            g = p.grad.astype(p.data.dtype, copy=False)
            self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            self.v[name] = b2 * self.v[name] + (1.0 - b2) * (g * g)
            m_hat = self.m[name] / p.data.dtype.type(bc1)
            v_hat = self.v[name] / p.data.dtype.type(bc2)
            p.data = p.data - p.data.dtype.type(lr) * m_hat / (np.sqrt(v_hat) + p.data.dtype.type(self.eps))

    def state(self) -> dict:
        return {
            "step": self.step_count,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }

    def load_state(self, state: dict):
        self.step_count = int(state["step"])
        for k in self.m:
            self.m[k] = np.asarray(state["m"][k]).copy()
            self.v[k] = np.asarray(state["v"][k]).copy()


# -- state & checkpoints -------------------------------------------------------

def model_state(model: Model, *, seed: int, completed_epochs: int = 0,
                optimizer: Adam | None = None, best_val: float | None = None,
                best_params: dict | None = None, train_config: TrainConfig | None = None) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "model_config": asdict(model.config),
        "train_config": asdict(train_config) if train_config else None,
        "seed": int(seed),
        "completed_epochs": int(completed_epochs),
        "rng": {"scheme": "stateless-per-epoch", "seed": int(seed),
                "completed_epochs": int(completed_epochs)},
        "params": {k: v.copy() for k, v in model.state_arrays().items()},
        "adam": optimizer.state() if optimizer else None,
        "best_val": best_val,
        "best_params": {k: v.copy() for k, v in best_params.items()} if best_params else None,
    }


def build_from_state(state: dict, requires_grad: bool = True) -> Model:
    cfg_dict = dict(state["model_config"])
    cfg_dict["ma_placement"] = tuple(cfg_dict["ma_placement"])
    config = ModelConfig(**cfg_dict)
    model = Model(config, seed=state["seed"], dtype=np.float32)
    model.load_state(state["params"])
    model.set_requires_grad(requires_grad)
    return model


def save_checkpoint(state: dict, path) -> None:
    """Manifest (JSON header) plus a raw little-endian float32 blob."""
    entries = []
    blob = bytearray()

    def put(name, arr):
        arr = np.asarray(arr)
        if arr.dtype != np.float32:
            raise CheckpointError(f"checkpoint tensors must be float32, {name} is {arr.dtype}")
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(arr.shape),
                        "offset": len(blob), "nbytes": len(raw)})
        blob.extend(raw)

    for k, v in state["params"].items():
        put(f"param.{k}", v)
    if state.get("adam"):
        for k, v in state["adam"]["m"].items():
            put(f"adam.m.{k}", v)
        for k, v in state["adam"]["v"].items():
            put(f"adam.v.{k}", v)
    if state.get("best_params"):
        for k, v in state["best_params"].items():
            put(f"best.{k}", v)

    header = {
        "version": state["version"],
        "model_config": state["model_config"],
        "train_config": state.get("train_config"),
        "seed": state["seed"],
        "completed_epochs": state["completed_epochs"],
        "rng": state["rng"],
        "adam_step": state["adam"]["step"] if state.get("adam") else None,
        "best_val": state.get("best_val"),
        "tensors": entries,
    }
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC + b" %d\n" % state["version"])
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        f.write(bytes(blob))


def load_checkpoint(path) -> dict:
    with open(path, "rb") as f:
        magic_line = f.readline()
        if not magic_line.startswith(CHECKPOINT_MAGIC):
            raise CheckpointError(f"{path} is not a checkpoint file")
        try:
            version = int(magic_line.split()[1])
        except (IndexError, ValueError) as e:
            raise CheckpointError(f"corrupt checkpoint magic line in {path}") from e
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unknown checkpoint version {version}")
        try:
            header = json.loads(f.readline().decode())
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            raise CheckpointError(f"corrupt checkpoint manifest in {path}: {e}") from e
        blob = f.read()

    tensors = {}
    for entry in header["tensors"]:
        start, n = entry["offset"], entry["nbytes"]
        if start + n > len(blob):
            raise CheckpointError(
                f"truncated checkpoint blob: {entry['name']} needs bytes up to "
                f"{start + n}, file has {len(blob)}"
            )
        arr = np.frombuffer(blob[start : start + n], dtype="<f4").reshape(entry["shape"]).copy()
        tensors[entry["name"]] = arr

    params = {k[len("param."):]: v for k, v in tensors.items() if k.startswith("param.")}
    adam = None
    if header.get("adam_step") is not None:
        adam = {
            "step": header["adam_step"],
            "m": {k[len("adam.m."):]: v for k, v in tensors.items() if k.startswith("adam.m.")},
            "v": {k[len("adam.v."):]: v for k, v in tensors.items() if k.startswith("adam.v.")},
        }
    best_params = {k[len("best."):]: v for k, v in tensors.items() if k.startswith("best.")}
    return {
        "version": header["version"],
        "model_config": header["model_config"],
        "train_config": header.get("train_config"),
        "seed": header["seed"],
        "completed_epochs": header["completed_epochs"],
        "rng": header["rng"],
        "params": params,
        "adam": adam,
        "best_val": header.get("best_val"),
        "best_params": best_params or None,
    }


# -- batching -----------------------------------------------------------------

def _stream(*parts) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(tuple(int(p) for p in parts)))


def _crop(samples: np.ndarray, seg: int, rng: np.random.Generator) -> np.ndarray:
    if len(samples) <= seg:
        return samples
    off = int(rng.integers(0, len(samples) - seg + 1))
    return samples[off : off + seg]


def _epoch_batches(dataset, cfg: TrainConfig, epoch: int):
    """Deterministic shuffled batches of cropped (noisy, clean) arrays."""
    order = _stream(cfg.seed, _SHUFFLE_TAG, epoch).permutation(len(dataset))
    crop_epoch = epoch if cfg.recrop_each_epoch else 0
    for start in range(0, len(order), cfg.batch_size):
        idx = order[start : start + cfg.batch_size]
        noisy, clean = [], []
        for i in idx:
            n_clip, c_clip = dataset[int(i)]
            rng = _stream(cfg.seed, _CROP_TAG, crop_epoch, int(i))
            n = n_clip.samples
            c = c_clip.samples
            if len(n) != len(c):
                raise SignalError(f"sample {i}: noisy/clean length mismatch")
            if len(n) > cfg.segment_len:
                off = int(rng.integers(0, len(n) - cfg.segment_len + 1))
                n = n[off : off + cfg.segment_len]
                c = c[off : off + cfg.segment_len]
            noisy.append(n)
            clean.append(c)
        x = np.stack(noisy)[:, None, :].astype(np.float32)
        y = np.stack(clean)[:, None, :].astype(np.float32)
        yield x, y


# -- loss assembly ---------------------------------------------------------------

def _f64(t: Tensor) -> Tensor:
    return T.cast(t, np.float64)


def _compose_loss(sup, terms, dcfg: DistillConfig | None):
    """Assemble the scalar loss in float64 so the logged decomposition
    recombines exactly; gradients re-cast to float32 at the boundary."""
    parts = {
        "loss_sup": float(sup.data),
        "loss_at_channel": 0.0,
        "loss_at_global": 0.0,
        "loss_at_local": 0.0,
        "loss_kd": 0.0,
    }
    total = _f64(sup)
    if terms is not None and dcfg is not None:
        at_sum = None
        for view in VIEWS:
            term = terms[f"at_{view}"]
            if term is None:
                continue
            parts[f"loss_at_{view}"] = float(term.data)
            t64 = _f64(term)
            at_sum = t64 if at_sum is None else at_sum + t64
        distill_total = None
        if at_sum is not None:
            distill_total = at_sum * dcfg.lambda_at
        if terms["kd"] is not None:
            parts["loss_kd"] = float(terms["kd"].data)
            kd64 = _f64(terms["kd"]) * dcfg.lambda_kd
            distill_total = kd64 if distill_total is None else distill_total + kd64
        if distill_total is not None:
            total = total + distill_total * dcfg.lambda_distill
    parts["loss_total"] = float(total.data)
    return total, parts


# -- training loops ----------------------------------------------------------------

@dataclass
class TrainResult:
    final_state: dict
    best_state: dict
    step_records: list = field(default_factory=list)
    epoch_records: list = field(default_factory=list)

    @property
    def records(self):
        return self.step_records + self.epoch_records


def _validate(model: Model, val_set, chunk: int = 8) -> float:
    if not val_set:
        return float("nan")
    scores = []
    for start in range(0, len(val_set), chunk):
        batch = val_set[start : start + chunk]
        lengths = {len(n) for n, _ in batch}
        if len(lengths) != 1:
            for n_clip, c_clip in batch:
                out = enhance(model, n_clip)
                scores.append(si_sdr(out, c_clip))
            continue
        x = np.stack([n.samples for n, _ in batch])[:, None, :].astype(np.float32)
        with T.no_grad():
            y = model.forward(Tensor(x)).enhanced.data
        for row, (_, c_clip) in zip(y[:, 0, :], batch):
            scores.append(si_sdr(row.astype(np.float64), c_clip.samples))
    return float(np.mean(scores))


def _normalized_model_config(cfg_dict: dict) -> dict:
    out = dict(cfg_dict)
    out["ma_placement"] = tuple(out["ma_placement"])
    return out


def _check_resume(resume: dict, model_config: ModelConfig, train_config: TrainConfig):
    saved_model = _normalized_model_config(resume["model_config"])
    if saved_model != _normalized_model_config(asdict(model_config)):
        raise CheckpointError("resume checkpoint was built from a different model config")
    if resume.get("train_config") is not None:
        saved = dict(resume["train_config"])
        current = asdict(train_config)
        if saved.get("epochs") > current["epochs"]:
            raise CheckpointError(
                f"resume checkpoint already covers {saved['epochs']} epochs, "
                f"config asks for {current['epochs']}"
            )
        for key in ("seed", "batch_size", "learning_rate", "lr_decay", "segment_len",
                    "grad_clip", "recrop_each_epoch"):
            if saved.get(key) != current[key]:
                raise CheckpointError(f"resume checkpoint differs in train.{key}")


def _run_loop(student: Model, teacher: Model | None, pair_map, dcfg: DistillConfig | None,
              train_config: TrainConfig, train_set, val_set,
              resume: dict | None = None,
              resolutions=DEFAULT_RESOLUTIONS) -> TrainResult:
    if not train_set:
        raise ConfigError("training needs a non-empty dataset")
    cfg = train_config
    optimizer = Adam(student.named_parameters(), cfg.learning_rate)
    start_epoch = 0
    best_val = -np.inf
    best_params = {k: v.copy() for k, v in student.state_arrays().items()}
    if resume is not None:
        student.load_state(resume["params"])
        if resume.get("adam"):
            optimizer.load_state(resume["adam"])
        start_epoch = int(resume["completed_epochs"])
        if resume.get("best_val") is not None:
            best_val = resume["best_val"]
        if resume.get("best_params"):
            best_params = {k: v.copy() for k, v in resume["best_params"].items()}

    step_records, epoch_records = [], []
    for epoch in range(start_epoch, cfg.epochs):
        lr = cfg.learning_rate * (cfg.lr_decay**epoch)
        epoch_losses = []
        for step, (x, y) in enumerate(_epoch_batches(train_set, cfg, epoch)):
            x_t = Tensor(x)
            y_t = Tensor(y)
            terms = None
            if teacher is not None:
                with T.no_grad():
                    trace_t = teacher.forward(x_t)
            trace_s = student.forward(x_t)
            sup = supervised_loss(y_t, trace_s.enhanced, resolutions)
            if teacher is not None and dcfg is not None:
                terms = distill_loss_terms(trace_t, trace_s, pair_map, dcfg, resolutions)
            total, parts = _compose_loss(sup, terms, dcfg)
            if not np.isfinite(parts["loss_total"]):
                raise TrainingDiverged(
                    f"non-finite loss {parts['loss_total']} at epoch {epoch + 1} step {step}"
                )
            optimizer.zero_grad()
            total.backward()
            optimizer.clip_gradients(cfg.grad_clip)
            optimizer.step(lr)
            epoch_losses.append(parts["loss_total"])
            step_records.append({"kind": "step", "epoch": epoch + 1, "step": step,
                                 **parts, "lr": lr})

        record = {"kind": "epoch", "epoch": epoch + 1,
                  "train_loss": float(np.mean(epoch_losses)), "lr": lr}
        is_last = epoch + 1 == cfg.epochs
        if val_set and ((epoch + 1) % cfg.val_every == 0 or is_last):
            val = _validate(student, val_set)
            record["val_si_sdr"] = val
            if val > best_val:
                best_val = val
                best_params = {k: v.copy() for k, v in student.state_arrays().items()}
        epoch_records.append(record)

    if not np.isfinite(best_val):
        best_val_out = None
        best_params = {k: v.copy() for k, v in student.state_arrays().items()}
    else:
        best_val_out = float(best_val)
    final_state = model_state(student, seed=cfg.seed, completed_epochs=cfg.epochs,
                              optimizer=optimizer, best_val=best_val_out,
                              best_params=best_params, train_config=cfg)
    best_model = Model(student.config, seed=cfg.seed, dtype=np.float32)
    best_model.load_state(best_params)
    best_state = model_state(best_model, seed=cfg.seed, completed_epochs=cfg.epochs,
                             best_val=best_val_out, train_config=cfg)
    return TrainResult(final_state, best_state, step_records, epoch_records)


def train(model_config: ModelConfig, train_config: TrainConfig, train_set,
          val_set=(), resume: dict | None = None,
          resolutions=DEFAULT_RESOLUTIONS) -> TrainResult:
    """Supervised training from scratch (or from a resume checkpoint state)."""
    if resume is not None:
        _check_resume(resume, model_config, train_config)
    model = Model(model_config, seed=train_config.seed, dtype=np.float32)
    return _run_loop(model, None, None, None, train_config, train_set, val_set,
                     resume=resume, resolutions=resolutions)


def distill(teacher_state: dict, student_config: ModelConfig, train_config: TrainConfig,
            distill_config: DistillConfig, train_set, val_set=(),
            resume: dict | None = None, resolutions=DEFAULT_RESOLUTIONS) -> TrainResult:
    """Train a student against a frozen teacher with the combined loss.

    With both distillation weights at zero this collapses to plain
    supervised training, bit-for-bit.
    """
    teacher = build_from_state(teacher_state, requires_grad=False)
    t_cfg = teacher.config
    if (t_cfg.kernel, t_cfg.stride) != (student_config.kernel, student_config.stride):
        raise ConfigError(
            "teacher and student must share kernel/stride so same-level "
            f"activations align: teacher ({t_cfg.kernel}, {t_cfg.stride}) vs "
            f"student ({student_config.kernel}, {student_config.stride})"
        )
    if resume is not None:
        _check_resume(resume, student_config, train_config)
    pair_map = dual_depth_map(t_cfg.depth, student_config.depth,
                              student_config.ma_placement, distill_config.dual_depth)
    for entry in pair_map.entries:
        for level in entry.teacher_levels:
            if level not in t_cfg.ma_placement:
                raise ConfigError(
                    f"pair map needs teacher activations at level {level}, "
                    f"but the teacher only attends at {t_cfg.ma_placement}"
                )
    student = Model(student_config, seed=train_config.seed, dtype=np.float32)
    use_distill = distill_config.lambda_distill > 0 and (
        distill_config.lambda_at > 0 or distill_config.lambda_kd > 0
    )
    if not use_distill:
        teacher_arg, pm_arg, dcfg_arg = None, None, None
    else:
        teacher_arg, pm_arg, dcfg_arg = teacher, pair_map, distill_config
    return _run_loop(student, teacher_arg, pm_arg, dcfg_arg, train_config,
                     train_set, val_set, resume=resume, resolutions=resolutions)


# -- evaluation ------------------------------------------------------------------

def enhance(model: Model, clip: AudioClip) -> AudioClip:
    """Run the denoiser over one clip; output has the input's length."""
    x = clip.samples[None, None, :].astype(np.float32)
    with T.no_grad():
        y = model.forward(Tensor(x)).enhanced.data[0, 0]
    return AudioClip(np.clip(y.astype(np.float64), -1.0, 1.0), clip.sample_rate)


@dataclass
class EvalReport:
    clip_records: list
    mean_input_si_sdr: float
    mean_enhanced_si_sdr: float

    @property
    def improvement_db(self) -> float:
        return self.mean_enhanced_si_sdr - self.mean_input_si_sdr

    def summary(self) -> dict:
        return {
            "kind": "summary",
            "clips": len(self.clip_records),
            "si_sdr_input": self.mean_input_si_sdr,
            "si_sdr_enhanced": self.mean_enhanced_si_sdr,
            "improvement_db": self.improvement_db,
        }


def evaluate(state: dict, dataset, chunk: int = 8) -> EvalReport:
    """Mean and per-clip SI-SDR of enhanced and unprocessed audio."""
    if not dataset:
        raise SignalError("evaluation needs a non-empty dataset")
    model = build_from_state(state, requires_grad=False)
    records = []
    for start in range(0, len(dataset), chunk):
        batch = dataset[start : start + chunk]
        for n_clip, c_clip in batch:
            if len(n_clip) != len(c_clip):
                raise SignalError("noisy/clean length mismatch in evaluation pair")
            if n_clip.sample_rate != c_clip.sample_rate:
                raise SignalError("noisy/clean sample-rate mismatch in evaluation pair")
        lengths = {len(n) for n, _ in batch}
        if len(lengths) == 1:
            x = np.stack([n.samples for n, _ in batch])[:, None, :].astype(np.float32)
            with T.no_grad():
                y = model.forward(Tensor(x)).enhanced.data
            enhanced_rows = [row.astype(np.float64) for row in y[:, 0, :]]
        else:
            enhanced_rows = [enhance(model, n).samples for n, _ in batch]
        for (n_clip, c_clip), out in zip(batch, enhanced_rows):
            rec = {
                "kind": "clip",
                "index": len(records),
                "si_sdr_input": si_sdr(n_clip, c_clip),
                "si_sdr_enhanced": si_sdr(out, c_clip.samples),
            }
            records.append(rec)
    mean_in = float(np.mean([r["si_sdr_input"] for r in records]))
    mean_out = float(np.mean([r["si_sdr_enhanced"] for r in records]))
    return EvalReport(records, mean_in, mean_out)

"""End-to-end experiment: data generation, training, attacks, evaluation, UQ.

Every step reads and writes files under one output directory, so the steps
can run as separate commands and the whole run is reproducible from the
configuration and its seed::

    out/
      config.json
      data/{train,test}.{json,bin}
      models/{ori,adv}.{json,bin}, models/{ori,adv}_loss.csv
      attacks/<model>_<method>_eps<eps>.{json,bin}
      reports/table1_mse.csv, table2_pvalues.csv, table3_moments.csv, eval.json
      uq/density_<model>_eps<eps>.csv, response_<model>_<kind>.csv,
         lda_<model>_<variant>.csv, summary.csv
"""

import copy
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adversarial import AttackConfig, fgnm_from_grad, fgsm_from_grad
from .fields import GridSpec, KernelParams
from .simulator import LabeledDataset, SolverConfig, generate_dataset, load_dataset, save_dataset, simulate_batch
from .tensor_net import (
    TrainConfig,
    backward,
    default_layers,
    init_network,
    load_network,
    mse_loss,
    predict,
    save_network,
    train,
)
from .uq import (
    RANK_TEST_HEADER,
    kde_curves,
    lda_project,
    mann_whitney_u,
    mc_density_experiment,
    moments,
    moments_to_csv,
    per_sample_se,
    random_perturb_matched_norm,
    relative_error,
    se_terciles,
    write_csv,
)

log = logging.getLogger(__name__)

MODELS = ("ori", "adv")
# attack each model is judged by when only one is reported (its stronger one)
OWN_METHOD = {"ori": "fgnm", "adv": "fgsm"}

DEFAULTS = {
    "seed": None,
    "grid": {"nx": 16},
    "kernel": {"sigma2": 1.0, "length": 0.5, "jitter": None},
    "solver": {"tol": 1e-10, "max_iter": None, "load": 1.0},
    "data": {"n_train": 512, "n_test": 256},
    "model": {"hidden": 512, "conv_channels": 0},
    "train": {
        "batch_size": 32,
        "epochs": 400,
        "lr": 1e-3,
        "l2_lambda": 1e-7,
        "alpha": 0.8,
        "eps_train": 0.1,
        "attack_method": "fgnm",
        "lr_schedule": "constant",
        "lr_final_frac": 0.01,
    },
    "attack": {"eps": 0.1},
    "uq": {"eps_ladder": [0.01, 0.1, 1.0], "n_points": 50, "n_dirs": 100},
}


class ConfigError(ValueError):
    pass


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config section {path + key!r} must be a mapping")
            out[key] = _merge(base[key], value, path + key + ".")
        else:
            out[key] = value
    return out


@dataclass
class ExperimentConfig:
    """Resolved experiment settings; ``raw`` mirrors the JSON file layout."""

    raw: dict
    out: Path

    @classmethod
    def from_dict(cls, values=None, out="run", seed=None):
        raw = _merge(DEFAULTS, values or {})
        if seed is not None:
            raw["seed"] = int(seed)
        if raw["seed"] is None:
            raise ConfigError("a seed is required (config 'seed' or --seed)")
        cfg = cls(raw, Path(out))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path=None, out="run", seed=None):
        values = {}
        if path is not None:
            with open(path) as fh:
                try:
                    values = json.load(fh)
                except json.JSONDecodeError as exc:
                    raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(values, out, seed)

    def validate(self):
        try:
            self.grid, self.kernel, self.solver, self.train_cfg("adv"), self.attack()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        d = self.raw["data"]
        if d["n_train"] < 1 or d["n_test"] < 1:
            raise ConfigError("n_train and n_test must be >= 1")
        if any(e <= 0 for e in self.raw["uq"]["eps_ladder"]):
            raise ConfigError("eps_ladder entries must be > 0")

    @property
    def seed(self):
        return int(self.raw["seed"])

    @property
    def grid(self):
        return GridSpec(**self.raw["grid"])

    @property
    def kernel(self):
        return KernelParams(**self.raw["kernel"])

    @property
    def solver(self):
        return SolverConfig(**self.raw["solver"])

    def attack(self, method="fgnm", eps=None):
        return AttackConfig(method, self.raw["attack"]["eps"] if eps is None else eps)

    def train_cfg(self, mode):
        t = dict(self.raw["train"])
        if mode == "ori":
            t["attack_method"] = "none"
        elif mode != "adv":
            raise ConfigError(f"mode must be 'ori' or 'adv', got {mode!r}")
        return TrainConfig(seed=derive_seed(self.seed, "train"), **t)

    def digest(self):
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()[:16]

    def path(self, *parts):
        return self.out.joinpath(*parts)


def derive_seed(seed, tag):
    """Stable 32-bit seed for one pipeline stage."""
    return int.from_bytes(hashlib.sha256(f"{seed}:{tag}".encode()).digest()[:4], "little")


def eps_tag(eps):
    return f"{float(eps):g}"


def _write_json(path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _require(path):
    if not Path(path).exists():
        raise FileNotFoundError(f"missing artifact {path}; run the earlier pipeline steps first")


def _save_config(cfg):
    _write_json(cfg.path("config.json"), {**cfg.raw, "config_hash": cfg.digest()})


# -- gen -------------------------------------------------------------------------


def cmd_gen(cfg):
    """Generate and persist the train and test sets."""
    d = cfg.raw["data"]
    n_train, n_test = d["n_train"], d["n_test"]
    seed = derive_seed(cfg.seed, "data")
    full = generate_dataset(n_train + n_test, cfg.grid, cfg.kernel, cfg.solver, seed=seed)
    cfg.path("data").mkdir(parents=True, exist_ok=True)
    _save_config(cfg)
    common = {"config_hash": cfg.digest(), "experiment_seed": cfg.seed}
    train_set = full.subset(np.arange(n_train), split="train", first_index=0, **common)
    test_set = full.subset(np.arange(n_train, n_train + n_test), split="test", first_index=n_train, **common)
    for name, ds in (("train", train_set), ("test", test_set)):
        ds.meta["n_samples"] = len(ds)
        save_dataset(ds, cfg.path("data", name))
    log.info("generated %d train / %d test samples", n_train, n_test)
    return train_set, test_set


def load_split(cfg, name):
    _require(cfg.path("data", name + ".json"))
    return load_dataset(cfg.path("data", name))


# -- train -----------------------------------------------------------------------


def build_network(cfg):
    m = cfg.raw["model"]
    layers, shape = default_layers(cfg.grid.nx, m["conv_channels"], m["hidden"])
    return init_network(layers, shape, derive_seed(cfg.seed, "init"))


def cmd_train(cfg, mode):
    """Train DNN_ori (plain loss) or DNN_adv (mixed adversarial loss)."""
    data = load_split(cfg, "train")
    tcfg = cfg.train_cfg(mode)
    net, trace = train(build_network(cfg), data, tcfg)
    cfg.path("models").mkdir(parents=True, exist_ok=True)
    save_network(
        net,
        cfg.path("models", mode),
        mode=mode,
        training=tcfg.to_dict(),
        config_hash=cfg.digest(),
        data_config_hash=data.meta.get("config_hash"),
    )
    write_csv(cfg.path("models", f"{mode}_loss.csv"), ["epoch", "loss"], enumerate(trace))
    log.info("trained %s: loss %.3e -> %.3e", mode, trace[0] if trace.size else np.nan, trace[-1] if trace.size else np.nan)
    return net, trace


def load_model(cfg, mode):
    _require(cfg.path("models", mode + ".json"))
    return load_network(cfg.path("models", mode))[0]


# -- attack ----------------------------------------------------------------------


def _as_net_input(net, fields):
    return np.asarray(fields).reshape((len(fields),) + net.input_shape)


def attack_deltas(net, data, method, eps):
    """Per-sample attack deltas on ``data``; ``eps = 0`` yields zeros.

    Returns ``(delta_fields, zero_gradient_mask)`` with deltas shaped like the
    input fields.
    """
    X = _as_net_input(net, data.inputs)
    Y = data.outputs.reshape((len(data),) + net.output_shape)
    g = backward(net, X, Y).input_grad * len(data)
    flat = g.reshape(len(data), -1)
    zero = np.linalg.norm(flat, axis=1) < 1e-30
    if method == "fgsm":
        delta = fgsm_from_grad(flat, eps)
    elif method == "fgnm":
        delta, _ = fgnm_from_grad(flat, eps, skip_zero=True)
    else:
        raise ValueError(f"unknown attack method {method!r}")
    return delta.reshape(data.inputs.shape), zero


def _perturbed_set(cfg, net, data, delta, keep, meta):
    idx = np.flatnonzero(keep)
    inputs = data.inputs[idx] + delta[idx]
    outputs = simulate_batch(inputs, cfg.solver)
    meta = {
        "nx": data.nx,
        "solver": cfg.solver.to_dict(),
        "test_indices": idx.tolist(),
        "source_fingerprint": net.fingerprint(),
        "config_hash": cfg.digest(),
        **meta,
    }
    return LabeledDataset(inputs, outputs, meta)


def attack_stem(cfg, source, method, eps):
    return cfg.path("attacks", f"{source}_{method}_eps{eps_tag(eps)}")


def cmd_attack(cfg, source, method, eps, net=None, test=None):
    """Perturb the test set along ``source``'s attack directions and relabel with the simulator.

    ``method`` is ``fgsm``, ``fgnm`` or ``rand`` (a uniformly random direction
    with the L2 norm of the FGNM perturbation). Samples with a vanishing input
    gradient are skipped and counted.
    """
    net = load_model(cfg, source) if net is None else net
    test = load_split(cfg, "test") if test is None else test
    eps = float(eps)
    if eps < 0:
        raise ValueError("eps must be >= 0")
    if method == "rand":
        ref, zero = attack_deltas(net, test, "fgnm", eps)
        keep = ~zero & (np.linalg.norm(ref.reshape(len(test), -1), axis=1) > 0)
        rng = np.random.default_rng(derive_seed(cfg.seed, f"rand:{source}:{eps_tag(eps)}"))
        delta = np.zeros_like(ref)
        if keep.any():
            delta[keep] = random_perturb_matched_norm(test.inputs[keep], ref[keep], rng) - test.inputs[keep]
    else:
        delta, zero = attack_deltas(net, test, method, eps)
        keep = ~zero if eps > 0 else np.ones(len(test), dtype=bool)
    ds = _perturbed_set(
        cfg,
        net,
        test,
        delta,
        keep,
        {"source": source, "method": method, "eps": eps, "n_zero_gradient": int(np.count_nonzero(~keep))},
    )
    stem = attack_stem(cfg, source, method, eps)
    stem.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, stem)
    return ds


def attack_set(cfg, source, method, eps, nets=None, test=None):
    """Load a persisted attack set, creating it first if absent."""
    stem = attack_stem(cfg, source, method, eps)
    if Path(str(stem) + ".json").exists():
        return load_dataset(stem)
    net = nets[source] if nets else None
    return cmd_attack(cfg, source, method, eps, net=net, test=test)


# -- eval ------------------------------------------------------------------------


def model_mse(net, data):
    pred = predict(net, _as_net_input(net, data.inputs))
    return mse_loss(pred, data.outputs.reshape(pred.shape))


def model_outputs(net, data):
    return predict(net, _as_net_input(net, data.inputs)).reshape(data.outputs.shape)


def cmd_eval(cfg):
    """Cross-evaluate both models; write Table 1/2/3-style CSV files and ``eval.json``."""
    test = load_split(cfg, "test")
    nets = {m: load_model(cfg, m) for m in MODELS}
    eps = float(cfg.raw["attack"]["eps"])
    report = {"config_hash": cfg.digest(), "eps": eps, "fingerprints": {m: nets[m].fingerprint() for m in MODELS}}

    # Table 1: MSE of each model on clean and attacked test sets. Attack sets
    # omit zero-gradient samples, so each ratio uses the clean MSE of the same samples.
    rows = []
    mse = {}
    ratio = {}
    for m in MODELS:
        clean_se = per_sample_se(model_outputs(nets[m], test), test.outputs).se
        mse[f"{m}/clean/-"] = model_mse(nets[m], test)
        rows.append([m, "clean", "-", "-", len(test), mse[f"{m}/clean/-"], mse[f"{m}/clean/-"], 1.0])
        for source in MODELS:
            for method in ("fgnm", "fgsm"):
                ds = attack_set(cfg, source, method, eps, nets, test)
                key = f"{m}/{method}/{source}"
                mse[key] = model_mse(nets[m], ds)
                base = float(clean_se[np.asarray(ds.meta["test_indices"], dtype=int)].mean())
                ratio[key] = mse[key] / base
                rows.append([m, "perturbed", method, source, len(ds), mse[key], base, ratio[key]])
    cfg.path("reports").mkdir(parents=True, exist_ok=True)
    write_csv(
        cfg.path("reports", "table1_mse.csv"),
        ["model", "test_set", "method", "source", "n", "mse", "clean_mse_same_samples", "ratio"],
        rows,
    )
    report["mse"] = mse
    report["mse_ratio"] = ratio
    report["n_zero_gradient"] = {m: len(test) - len(attack_set(cfg, m, "fgsm", eps, nets, test)) for m in MODELS}

    # Table 2: rank test of own-direction SE against matched-norm random SE
    rows = []
    pvals = {}
    for m in MODELS:
        method = OWN_METHOD[m]
        for e in cfg.raw["uq"]["eps_ladder"]:
            adv = attack_set(cfg, m, method, e, nets, test)
            rnd = attack_set(cfg, m, "rand", e, nets, test)
            se_adv = per_sample_se(model_outputs(nets[m], adv), adv.outputs).se
            se_rnd = per_sample_se(model_outputs(nets[m], rnd), rnd.outputs).se
            r = mann_whitney_u(se_adv, se_rnd)
            pvals[f"{m}/{method}/eps{eps_tag(e)}"] = r.p_value
            rows.append([m, method, e] + r.to_row())
    write_csv(cfg.path("reports", "table2_pvalues.csv"), ["model", "attack", "eps"] + RANK_TEST_HEADER, rows)
    report["p_values"] = pvals

    # Table 3: moment relative errors against the simulator on the same inputs
    rows = []
    res = {}
    for m in MODELS:
        variants = {
            "clean": test,
            "rand": attack_set(cfg, m, "rand", eps, nets, test),
            "fg": attack_set(cfg, m, OWN_METHOD[m], eps, nets, test),
        }
        for name, ds in variants.items():
            sim = moments(ds.outputs)
            sur = moments(model_outputs(nets[m], ds))
            re1 = relative_error(sur.m1, sim.m1)
            re2 = relative_error(sur.m2, sim.m2)
            res[f"{m}/{name}"] = {"m1": re1, "m2": re2}
            rows.append([m, name, OWN_METHOD[m] if name == "fg" else "-", re1, re2])
            if name == "clean":
                moments_to_csv(sim, cfg.path("reports", "moments_simulator_clean.csv"))
            moments_to_csv(sur, cfg.path("reports", f"moments_{m}_{name}.csv"))
    write_csv(cfg.path("reports", "table3_moments.csv"), ["model", "test_set", "method", "re_m1", "re_m2"], rows)
    report["moment_re"] = res
    _write_json(cfg.path("reports", "eval.json"), report)
    return report


# -- uq --------------------------------------------------------------------------


def _curves_csv(path, names, curves):
    grid = curves[0].grid
    write_csv(path, ["grid"] + list(names), zip(grid, *[c.density for c in curves]))


def cmd_uq(cfg):
    """Density experiments, perturbation-response densities and LDA coordinates."""
    test = load_split(cfg, "test")
    nets = {m: load_model(cfg, m) for m in MODELS}
    u = cfg.raw["uq"]
    eps = float(cfg.raw["attack"]["eps"])
    cfg.path("uq").mkdir(parents=True, exist_ok=True)
    summary = []

    # log(SE) densities under random vs adversarial directions
    for m in MODELS:
        for e in u["eps_ladder"]:
            res = mc_density_experiment(
                nets[m],
                cfg.solver,
                test,
                AttackConfig("fgnm", e),
                n_points=min(u["n_points"], len(test)),
                n_dirs=u["n_dirs"],
                seed=derive_seed(cfg.seed, f"mc:{m}:{eps_tag(e)}"),
            )
            names = ("f_rand", "f_fgnm", "f_fgsm")
            _curves_csv(cfg.path("uq", f"density_{m}_eps{eps_tag(e)}.csv"), names, [res[n] for n in names])
            rand_max = float(res["log_se_rand"].max())
            for n in names:
                c = res[n]
                summary.append(
                    ["density", m, eps_tag(e), n, c.n, c.bandwidth, c.integral(), float(np.mean(res["log_se_" + n[2:]])), rand_max]
                )

    # SE between clean and perturbed outputs: simulator versus surrogate
    for m in MODELS:
        clean_pred = model_outputs(nets[m], test)
        for kind, method in (("rand", "rand"), ("adv", OWN_METHOD[m])):
            ds = attack_set(cfg, m, method, eps, nets, test)
            idx = np.asarray(ds.meta["test_indices"], dtype=int)
            sim = per_sample_se(ds.outputs, test.outputs[idx])
            sur = per_sample_se(model_outputs(nets[m], ds), clean_pred[idx])
            curves = kde_curves([sim.log_se, sur.log_se])
            _curves_csv(cfg.path("uq", f"response_{m}_{kind}.csv"), ["log_se_simulator", "log_se_surrogate"], curves)
            for who, errs, c in (("simulator", sim, curves[0]), (m, sur, curves[1])):
                summary.append(["response", m, eps_tag(eps), f"{kind}:{who}", c.n, c.bandwidth, c.integral(), float(errs.se.mean()), ""])

    # LDA heatmap coordinates with SE terciles
    for m in MODELS:
        variants = {"clean": test}
        for source in MODELS:
            variants[f"fgnm_{source}"] = attack_set(cfg, source, "fgnm", eps, nets, test)
        for name, ds in variants.items():
            se = per_sample_se(model_outputs(nets[m], ds), ds.outputs)
            coords = lda_project(ds.inputs.reshape(len(ds), -1), se)
            write_csv(
                cfg.path("uq", f"lda_{m}_{name}.csv"),
                ["lda1", "lda2", "se", "tercile"],
                zip(coords[:, 0], coords[:, 1], se.se, se_terciles(se)),
            )
    write_csv(
        cfg.path("uq", "summary.csv"),
        ["kind", "model", "eps", "curve", "n", "bandwidth", "integral", "mean", "rand_max"],
        summary,
    )
    return summary


def run_all(cfg):
    """gen, both trainings, every attack set, eval and uq in order."""
    cmd_gen(cfg)
    for m in MODELS:
        cmd_train(cfg, m)
    report = cmd_eval(cfg)
    cmd_uq(cfg)
    return report

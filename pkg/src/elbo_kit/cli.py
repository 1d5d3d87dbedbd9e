"""Command-line entry point: verification workflows and VAE training.

Subcommands: kl-check, bound-check, grad-check, train, eval, sample.
Data goes to stdout or files as CSV; human-readable notes go to stderr.
Every metrics file starts with a manifest comment block (subcommand,
resolved configuration, seed, toolkit version) followed by start/finish
timestamp lines; re-running with the same flags and seed reproduces the
data bytes exactly, timestamps aside.

Exit codes: 0 success, 1 a numeric check failed, 2 usage or input error.
The default seed is 0, overridable by the ELBO_KIT_SEED environment
variable, overridable by --seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from datetime import datetime, timezone

import elbo_kit
from elbo_kit.datagen import Dataset, load_dataset, save_dataset
from elbo_kit.divergence import (
    default_quadrature_spec,
    gaussian_logpdf_1d,
    kl_gaussian_closed,
    kl_monte_carlo,
    kl_quadrature_1d,
)
from elbo_kit.elbo import (
    LinearGaussianModel,
    elbo_estimate,
    exact_log_marginal,
    exact_posterior,
    model_log_likelihood_fn,
    sample_observations,
)
from elbo_kit.gaussian_core import DiagonalGaussian, RngState, standard_normal
from elbo_kit.neural import grad_check
from elbo_kit.vae import (
    TrainConfig,
    TrainingDivergedError,
    VaeModel,
    decode_probabilities,
    init_vae,
    load_checkpoint,
    loss,
    save_checkpoint,
    train,
)


def _resolve_seed(flag_value) -> int:
    if flag_value is not None:
        return int(flag_value)
    env = os.environ.get("ELBO_KIT_SEED")
    if env is not None:
        return int(env)
    return 0


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


class _Report:
    """Collects manifest + data lines, then writes them in one shot."""

    def __init__(self, subcommand: str, config: dict, seed: int):
        manifest = {
            "subcommand": subcommand,
            "config": config,
            "seed": seed,
            "version": elbo_kit.__version__,
        }
        self.manifest = manifest
        self.started = _utc_now()
        self.rows: list[str] = []

    def line(self, text: str) -> None:
        self.rows.append(text)

    def render(self) -> str:
        head = [
            "# manifest " + json.dumps(self.manifest, sort_keys=True),
            "# started " + self.started,
            "# finished " + _utc_now(),
        ]
        return "\n".join(head + self.rows) + "\n"

    def write(self, out_path: str | None) -> None:
        text = self.render()
        if out_path is None:
            sys.stdout.write(text)
        else:
            with open(out_path, "w") as fh:
                fh.write(text)


def _note(msg: str) -> None:
    print(msg, file=sys.stderr)


def _f(x) -> str:
    """Full-precision decimal rendering of a scalar for CSV cells."""
    return repr(float(x))


# ---------------------------------------------------------------------------
# kl-check


def cmd_kl_check(args) -> int:
    seed = _resolve_seed(args.seed)
    if args.var_q <= 0.0:
        raise ValueError(f"--var-q must be positive, got {args.var_q}")
    if args.var_p <= 0.0:
        raise ValueError(f"--var-p must be positive, got {args.var_p}")
    if args.mc_samples < 2:
        raise ValueError(f"--mc-samples must be >= 2, got {args.mc_samples}")
    q = DiagonalGaussian([args.mu_q], [args.var_q])
    p = DiagonalGaussian([args.mu_p], [args.var_p])

    closed = kl_gaussian_closed(q, p)
    spec = default_quadrature_spec(q, p)
    if args.quadrature is not None:
        spec = type(spec)(lower=spec.lower, upper=spec.upper, n_points=args.quadrature)
    quad = kl_quadrature_1d(gaussian_logpdf_1d(q), gaussian_logpdf_1d(p), spec)
    mc = kl_monte_carlo(
        q, gaussian_logpdf_1d(q), gaussian_logpdf_1d(p), args.mc_samples, RngState(seed)
    )

    config = {
        "mu_q": args.mu_q, "var_q": args.var_q, "mu_p": args.mu_p, "var_p": args.var_p,
        "quadrature_points": spec.n_points, "mc_samples": args.mc_samples,
        "quad_tol": args.quad_tol, "mc_sigmas": args.mc_sigmas,
    }
    report = _Report("kl-check", config, seed)
    report.line("closed_form,quadrature,mc_value,mc_std_error")
    report.line(f"{_f(closed)},{_f(quad)},{_f(mc.value)},{_f(mc.std_error)}")
    report.write(args.out)

    mc_tol = args.mc_sigmas * mc.std_error + 1e-12
    ok = (
        abs(closed - quad) <= args.quad_tol
        and abs(closed - mc.value) <= mc_tol
        and abs(quad - mc.value) <= mc_tol
    )
    _note(
        f"kl-check closed={closed:.9f} quad={quad:.9f} mc={mc.value:.9f}"
        f"(+-{mc.std_error:.2e}) -> {'ok' if ok else 'DISAGREE'}"
    )
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# bound-check


def _random_trial_model(rng: RngState, latent_dim: int, data_dim: int):
    a = (2.0 * rng.uniforms(data_dim * latent_dim) - 1.0).reshape(data_dim, latent_dim)
    b = rng.uniforms(data_dim) - 0.5
    noise_var = 0.25 + 1.25 * float(rng.uniforms(1)[0])
    model = LinearGaussianModel(weight=a, bias=b, noise_variance=noise_var)
    x = sample_observations(model, 1, rng)[0]
    return model, x


def _random_q(rng: RngState, latent_dim: int) -> DiagonalGaussian:
    mean = 4.0 * rng.uniforms(latent_dim) - 2.0
    var = 0.25 + 3.75 * rng.uniforms(latent_dim)
    return DiagonalGaussian(mean, var)


def cmd_bound_check(args) -> int:
    seed = _resolve_seed(args.seed)
    if args.trials < 1:
        raise ValueError(f"--trials must be >= 1, got {args.trials}")
    if args.recon_samples < 2:
        raise ValueError(f"--recon-samples must be >= 2, got {args.recon_samples}")
    if args.q_mode == "posterior" and args.latent_dim != 1:
        raise ValueError("--q-mode posterior needs --latent-dim 1 (diagonal posterior)")

    config = {
        "trials": args.trials, "latent_dim": args.latent_dim, "data_dim": args.data_dim,
        "recon_samples": args.recon_samples, "q_mode": args.q_mode, "sigmas": args.sigmas,
    }
    report = _Report("bound-check", config, seed)
    report.line("trial,exact_log_marginal,elbo,gap,std_error")

    rng = RngState(seed)
    violations = 0
    for trial in range(args.trials):
        model, x = _random_trial_model(rng, args.latent_dim, args.data_dim)
        if args.q_mode == "posterior":
            q = exact_posterior(model, x).diagonal()
        else:
            q = _random_q(rng, args.latent_dim)
        breakdown = elbo_estimate(
            q,
            standard_normal(args.latent_dim),
            model_log_likelihood_fn(model, x),
            args.recon_samples,
            rng,
        )
        exact = exact_log_marginal(model, x)
        gap = exact - breakdown.elbo
        tol = args.sigmas * breakdown.recon_std_error
        if args.q_mode == "posterior":
            violated = abs(gap) > tol
        else:
            violated = gap < -tol
        violations += int(violated)
        report.line(
            f"{trial},{_f(exact)},{_f(breakdown.elbo)},{_f(gap)},"
            f"{_f(breakdown.recon_std_error)}"
        )
    report.write(args.out)
    _note(
        f"bound-check {args.trials} trials ({args.q_mode} q): {violations} violation(s) "
        f"beyond {args.sigmas} standard errors"
    )
    return 0 if violations == 0 else 1


# ---------------------------------------------------------------------------
# grad-check


def cmd_grad_check(args) -> int:
    seed = _resolve_seed(args.seed)
    config = TrainConfig(latent_dim=args.latent_dim, hidden_units=args.hidden, seed=seed)
    model = init_vae(args.data_dim, config)
    rng = RngState(seed).split(17)
    batch = 3
    x = rng.uniforms(batch * args.data_dim).reshape(batch, args.data_dim)
    eps = rng.normals(args.recon_samples * batch * args.latent_dim).reshape(
        args.recon_samples, batch, args.latent_dim
    )

    def enc_objective(enc_params):
        candidate = VaeModel(enc_params, model.decoder, model.latent_dim, model.data_dim)
        rep, enc_g, _ = loss(candidate, x, L=args.recon_samples, eps=eps)
        return rep.total_loss, enc_g

    def dec_objective(dec_params):
        candidate = VaeModel(model.encoder, dec_params, model.latent_dim, model.data_dim)
        rep, _, dec_g = loss(candidate, x, L=args.recon_samples, eps=eps)
        return rep.total_loss, dec_g

    err = max(
        grad_check(model.encoder, enc_objective, args.step),
        grad_check(model.decoder, dec_objective, args.step),
    )
    flags = {
        "latent_dim": args.latent_dim, "data_dim": args.data_dim, "hidden": args.hidden,
        "recon_samples": args.recon_samples, "step": args.step, "tol": args.tol,
    }
    report = _Report("grad-check", flags, seed)
    report.line("max_relative_error")
    report.line(_f(err))
    report.write(args.out)
    _note(f"grad-check max relative error {err:.3e} (tolerance {args.tol:.1e})")
    return 0 if err <= args.tol else 1


# ---------------------------------------------------------------------------
# train / eval / sample


def _history_report(subcommand, config, seed, history) -> _Report:
    report = _Report(subcommand, config, seed)
    report.line("epoch,batch,total_loss,kl,recon")
    for rep in history:
        report.line(
            f"{rep.epoch},{rep.batch},{_f(rep.total_loss)},{_f(rep.kl_component)},"
            f"{_f(rep.recon_component)}"
        )
    return report


def cmd_train(args) -> int:
    seed = _resolve_seed(args.seed)
    dataset = load_dataset(args.dataset)
    config = TrainConfig(
        latent_dim=args.latent_dim,
        recon_samples=args.recon_samples,
        batch_size=args.batch_size,
        epochs=args.epochs,
        learning_rate=args.lr,
        seed=seed,
        hidden_units=args.hidden,
    )
    model = init_vae(dataset.data_dim, config)
    os.makedirs(args.out, exist_ok=True)
    flags = {"dataset": args.dataset, **_config_dict(config)}

    diverged = None
    try:
        model, history = train(model, dataset.rows, config)
    except TrainingDivergedError as err:
        model, history, diverged = err.last_model, err.history, str(err)

    report = _history_report("train", flags, seed, history)
    report.write(os.path.join(args.out, "metrics.csv"))
    save_checkpoint(model, config, os.path.join(args.out, "checkpoint.json"))
    manifest = dict(report.manifest)
    manifest["started"] = report.started
    manifest["finished"] = _utc_now()
    manifest["batches_recorded"] = len(history)
    if diverged is not None:
        manifest["diverged"] = diverged
    with open(os.path.join(args.out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    if diverged is not None:
        _note(f"train: {diverged}; wrote last good checkpoint to {args.out}")
        return 1
    final = history[-1]
    _note(
        f"train: {config.epochs} epochs done, final batch loss {final.total_loss:.4f} "
        f"(kl {final.kl_component:.4f}, recon {final.recon_component:.4f}) -> {args.out}"
    )
    return 0


def _config_dict(config: TrainConfig) -> dict:
    out = {
        "latent_dim": config.latent_dim, "recon_samples": config.recon_samples,
        "batch_size": config.batch_size, "epochs": config.epochs,
        "learning_rate": config.learning_rate, "hidden_units": config.hidden_units,
        "logvar_clamp": list(config.logvar_clamp),
    }
    return out


def cmd_eval(args) -> int:
    seed = _resolve_seed(args.seed)
    model, config = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.dataset)
    if dataset.data_dim != model.data_dim:
        raise ValueError(
            f"dataset width {dataset.data_dim} does not match model {model.data_dim}"
        )
    L = args.recon_samples if args.recon_samples is not None else config.recon_samples
    rep, _, _ = loss(model, dataset.rows, L=L, rng=RngState(seed), clamp=config.logvar_clamp)
    flags = {"checkpoint": args.checkpoint, "dataset": args.dataset, "recon_samples": L}
    report = _Report("eval", flags, seed)
    report.line("n,mean_total_loss,mean_kl,mean_recon")
    report.line(
        f"{dataset.n},{_f(rep.total_loss)},{_f(rep.kl_component)},{_f(rep.recon_component)}"
    )
    report.write(args.out)
    _note(
        f"eval: {dataset.n} rows, mean loss {rep.total_loss:.4f} "
        f"(kl {rep.kl_component:.4f}, recon {rep.recon_component:.4f})"
    )
    return 0


def cmd_sample(args) -> int:
    seed = _resolve_seed(args.seed)
    if args.count < 1:
        raise ValueError(f"--count must be >= 1, got {args.count}")
    model, _ = load_checkpoint(args.checkpoint)
    rng = RngState(seed)
    z = rng.normals(args.count * model.latent_dim).reshape(args.count, model.latent_dim)
    probs = decode_probabilities(model, z)
    save_dataset(Dataset(rows=probs, name="samples", seed=seed), args.out)
    _note(f"sample: wrote {args.count} decoded draws to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="elbo-kit", description="Variational inference toolkit checks and training."
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    kl = sub.add_parser("kl-check", help="closed form vs quadrature vs Monte Carlo KL")
    kl.add_argument("--mu-q", type=float, required=True)
    kl.add_argument("--var-q", type=float, required=True)
    kl.add_argument("--mu-p", type=float, default=0.0)
    kl.add_argument("--var-p", type=float, default=1.0)
    kl.add_argument("--quadrature", type=int, default=None, help="override grid size")
    kl.add_argument("--mc-samples", type=int, default=100_000)
    kl.add_argument("--quad-tol", type=float, default=1e-7)
    kl.add_argument("--mc-sigmas", type=float, default=4.0)
    kl.add_argument("--seed", type=int, default=None)
    kl.add_argument("--out", default=None)
    kl.set_defaults(func=cmd_kl_check)

    bc = sub.add_parser("bound-check", help="log p(x) >= ELBO on exact linear-Gaussian models")
    bc.add_argument("--trials", type=int, default=100)
    bc.add_argument("--latent-dim", type=int, default=2)
    bc.add_argument("--data-dim", type=int, default=4)
    bc.add_argument("--recon-samples", type=int, default=10_000)
    bc.add_argument("--q-mode", choices=("random", "posterior"), default="random")
    bc.add_argument("--sigmas", type=float, default=4.0)
    bc.add_argument("--seed", type=int, default=None)
    bc.add_argument("--out", default=None)
    bc.set_defaults(func=cmd_bound_check)

    gc = sub.add_parser("grad-check", help="finite-difference check of the full VAE loss")
    gc.add_argument("--latent-dim", type=int, default=2)
    gc.add_argument("--data-dim", type=int, default=4)
    gc.add_argument("--hidden", type=int, default=8)
    gc.add_argument("--recon-samples", type=int, default=1)
    gc.add_argument("--step", type=float, default=1e-5)
    gc.add_argument("--tol", type=float, default=1e-4)
    gc.add_argument("--seed", type=int, default=None)
    gc.add_argument("--out", default=None)
    gc.set_defaults(func=cmd_grad_check)

    tr = sub.add_parser("train", help="train the VAE on a dataset file")
    tr.add_argument("--dataset", required=True)
    tr.add_argument("--latent-dim", type=int, default=2)
    tr.add_argument("--recon-samples", type=int, default=1)
    tr.add_argument("--epochs", type=int, default=200)
    tr.add_argument("--batch-size", type=int, default=64)
    tr.add_argument("--lr", type=float, default=1e-3)
    tr.add_argument("--hidden", type=int, default=32)
    tr.add_argument("--seed", type=int, default=None)
    tr.add_argument("--out", required=True, help="output directory")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="mean loss decomposition of a checkpoint on a dataset")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--recon-samples", type=int, default=None)
    ev.add_argument("--seed", type=int, default=None)
    ev.add_argument("--out", default=None)
    ev.set_defaults(func=cmd_eval)

    sm = sub.add_parser("sample", help="decode prior draws from a checkpoint")
    sm.add_argument("--checkpoint", required=True)
    sm.add_argument("--count", type=int, default=16)
    sm.add_argument("--seed", type=int, default=None)
    sm.add_argument("--out", required=True)
    sm.set_defaults(func=cmd_sample)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError, TypeError) as err:
        _note(f"error: {err}")
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()

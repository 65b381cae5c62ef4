use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use qswing_core::bounds::price as price_bounds;
use qswing_core::qlearn::{load_checkpoint, save_checkpoint};
use qswing_core::rng::derive_seed;
use qswing_core::{
    brute_force_value, solve_chain, train as train_net, ChainSpec, DenseNet, NetQ, RunConfig, TrainDiagnostics,
};
use serde_json::json;

use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

/// Runs `f` on a pool of `workers` threads, or the default pool.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match workers {
        None => f(),
        Some(0) => Err(CliError::Workers("--workers must be >= 1".into())),
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| CliError::Workers(e.to_string()))?
            .install(f),
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.override_seed(s);
        cfg.validate()?;
    }
    Ok(cfg)
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|source| CliError::Write { path: dir.to_path_buf(), source })
        }
        _ => Ok(()),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    create_parent(path)?;
    fs::write(path, bytes).map_err(|source| CliError::Write { path: path.to_path_buf(), source })
}

fn write_loss_csv(path: &Path, diag: &TrainDiagnostics) -> Result<()> {
    let mut out = Vec::with_capacity(diag.loss_trace.len() * 24);
    writeln!(out, "step,loss").expect("write to memory");
    for (i, l) in diag.loss_trace.iter().enumerate() {
        writeln!(out, "{},{l:.17e}", i + 1).expect("write to memory");
    }
    write_file(path, &out)
}

fn run_training(cfg: &RunConfig) -> Result<DenseNet> {
    let started = Instant::now();
    let (net, diag) = train_net(&cfg.training, &cfg.market, cfg.rights.n, cfg.rights.delta, cfg.seeds.train)?;
    let ckpt = &cfg.output.checkpoint;
    create_parent(ckpt)?;
    save_checkpoint(&net, ckpt)?;
    write_loss_csv(&cfg.output.loss_csv(), &diag)?;
    eprintln!(
        "trained {} episodes, {} gradient steps in {:.1}s; final loss {:.3e}, final epsilon {:.3}",
        diag.episodes,
        diag.gradient_steps,
        started.elapsed().as_secs_f64(),
        diag.loss_trace.last().copied().unwrap_or(f64::NAN),
        diag.final_epsilon
    );
    if diag.negative_continue > 0 {
        eprintln!("note: {} buffered states have a continue value below -0.05", diag.negative_continue);
    }
    eprintln!("checkpoint written to {}", ckpt.display());
    Ok(net)
}

pub fn train(config: &Path, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(config, seed)?;
    run_training(&cfg).map(|_| ())
}

fn check_architecture(net: &DenseNet, cfg: &RunConfig) -> Result<()> {
    let mut want = vec![cfg.market.d + 2];
    want.extend(&cfg.training.hidden);
    want.push(2);
    if net.arch() != want {
        return Err(CliError::StaleCheckpoint(format!(
            "checkpoint layers {:?}, configuration expects {:?}",
            net.arch(),
            want
        )));
    }
    Ok(())
}

pub fn price(
    config: &Path,
    seed: Option<u64>,
    train_first: bool,
    no_timing: bool,
    dump_paths: Option<&Path>,
) -> Result<()> {
    let cfg = load_config(config, seed)?;
    let started = Instant::now();
    let net = if train_first {
        run_training(&cfg)?
    } else {
        let ckpt = &cfg.output.checkpoint;
        if !ckpt.exists() {
            return Err(CliError::MissingCheckpoint(ckpt.clone()));
        }
        load_checkpoint(ckpt)?
    };
    check_architecture(&net, &cfg)?;
    let (n, delta) = (cfg.rights.n, cfg.rights.delta);
    let q = NetQ::checked(&net, &cfg.market, n)?;
    let (_, _, mut report) = price_bounds(&q, &cfg.market, n, delta, &cfg.evaluation, cfg.seeds.eval)?;
    report.seed_train = cfg.seeds.train;
    report.runtime_seconds = if no_timing { 0.0 } else { started.elapsed().as_secs_f64() };

    let path = &cfg.output.report;
    write_file(path, report.to_json()?.as_bytes())?;
    write_file(&cfg.output.config_echo(), cfg.to_toml()?.as_bytes())?;
    if let Some(dump) = dump_paths {
        let paths = cfg.market.simulate_paths(cfg.evaluation.m_l, derive_seed(cfg.seeds.eval, "lower"));
        create_parent(dump)?;
        paths.save_dump(dump)?;
    }
    println!(
        "lower {:.4} (sd {:.4})  upper {:.4} (sd {:.4})  point {:.4}  {:.0}% CI [{:.4}, {:.4}]",
        report.l_hat,
        report.sigma_l,
        report.u_hat,
        report.sigma_u,
        report.point_estimate,
        100.0 * (1.0 - report.alpha),
        report.ci_low,
        report.ci_high
    );
    eprintln!("report written to {}", path.display());
    Ok(())
}

pub fn oracle(chain: &Path, out: &Path, brute: bool) -> Result<()> {
    let text = fs::read_to_string(chain).map_err(|e| qswing_core::Error::Config(format!("cannot read {}: {e}", chain.display())))?;
    let spec = ChainSpec::from_toml(&text)?;
    let sol = solve_chain(&spec)?;
    let brute_value = if brute { Some(brute_force_value(&spec)?) } else { None };
    let doc = json!({
        "v0": sol.v0,
        "v0_brute_force": brute_value,
        "steps": sol.steps,
        "rights": sol.rights,
        "delta": sol.delta,
        "q": sol.q,
        "q_delta": sol.q_delta,
        "y": sol.y,
        "exercise": sol.exercise,
    });
    let mut text = serde_json::to_string_pretty(&doc).expect("tables serialize");
    text.push('\n');
    write_file(out, text.as_bytes())?;
    match brute_value {
        Some(b) => println!("V0 = {:.12} (tree search {:.12})", sol.v0, b),
        None => println!("V0 = {:.12}", sol.v0),
    }
    Ok(())
}

//! Subcommand bodies. Each writes the resolved config to the output directory first.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use cpsr::checkpoint::Checkpoint;
use cpsr::eval::{evaluate_split, sweep_pe, write_sweep_csv, RankingMetrics};
use cpsr::graph::{InductiveSplit, RawSplit};
use cpsr::oracle::generate_planted_kg;
use cpsr::rules::mine_confidence_scoped;
use cpsr::{fit, Scalar};

use crate::config::{Precision, RunConfig};
use crate::CliError;

pub const CONFIG_ECHO: &str = "config.txt";
pub const RULES_CSV: &str = "rules.csv";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const BEST_CKPT: &str = "best.ckpt";
pub const LAST_CKPT: &str = "last.ckpt";
pub const METRICS_CSV: &str = "metrics.csv";
pub const SWEEP_CSV: &str = "sweep_pe.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    MineRules,
    Train,
    Eval,
    Sweep,
    GenSynth,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn prepare_out_dir(cfg: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;
    let path = cfg.out_dir.join(CONFIG_ECHO);
    fs::write(&path, cfg.to_text()).map_err(io_err(&path))
}

fn load_split(cfg: &RunConfig) -> Result<InductiveSplit, CliError> {
    let raw = RawSplit::load(cfg.dataset()?, &cfg.ind_dataset()?)?;
    Ok(raw.build(cfg.graph_options())?)
}

pub fn run(command: Command, cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    if command == Command::GenSynth {
        return gen_synth(cfg, out);
    }
    cfg.dataset()?;
    prepare_out_dir(cfg)?;
    match cfg.precision {
        Precision::F64 => run_typed::<f64>(command, cfg, out),
        Precision::F32 => run_typed::<f32>(command, cfg, out),
    }
}

fn run_typed<T: Scalar>(command: Command, cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::MineRules => mine_rules(cfg, out),
        Command::Train => train::<T>(cfg, out),
        Command::Eval => eval::<T>(cfg, out),
        Command::Sweep => sweep::<T>(cfg, out),
        Command::GenSynth => unreachable!("handled before dispatch"),
    }
}

fn mine_rules(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let split = load_split(cfg)?;
    let table = mine_confidence_scoped(&split.train, cfg.train.mining);
    let path = cfg.out_dir.join(RULES_CSV);
    let mut w = create(&path)?;
    table.write_csv(&mut w, split.train.relations()).and_then(|_| w.flush()).map_err(io_err(&path))?;
    writeln!(out, "wrote {} rules to {}", table.num_relations().pow(2), path.display()).map_err(io_err(&path))?;
    Ok(())
}

fn train<T: Scalar>(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let split = load_split(cfg)?;
    let relations = split.train.relations().clone();
    let resume = match &cfg.resume {
        Some(path) => {
            let ck = Checkpoint::<T>::load(path)?;
            ck.check_relations(&relations)?;
            Some(ck.into_state()?)
        }
        None => None,
    };
    let log_path = cfg.out_dir.join(TRAIN_LOG);
    let mut log = create(&log_path)?;
    writeln!(log, "epoch,loss,valid_mrr,valid_h1,valid_h10").map_err(io_err(&log_path))?;
    let best_path = cfg.out_dir.join(BEST_CKPT);
    let last_path = cfg.out_dir.join(LAST_CKPT);

    let outcome = fit::<T>(&split, &cfg.train, resume, |entry, state, improved| {
        let v = &entry.valid;
        writeln!(log, "{},{},{},{},{}", entry.epoch, entry.loss, v.mrr(), v.hits_at_1(), v.hits_at_10())
            .and_then(|_| log.flush())
            .map_err(|e| cpsr::Error::Checkpoint(format!("{}: {e}", log_path.display())))?;
        if improved {
            Checkpoint::from_state(&relations, state, false).save(&best_path)?;
        }
        Checkpoint::from_state(&relations, state, true).save(&last_path)?;
        let _ = writeln!(out, "epoch {:>4}  loss {:.6}  valid_mrr {:.4}", entry.epoch, entry.loss, v.mrr());
        Ok(())
    })?;
    writeln!(out, "best epoch {} (valid mrr {:.4})", outcome.best_epoch, outcome.state.best_valid_mrr.max(0.0))
        .map_err(io_err(&best_path))?;
    Ok(())
}

/// Loads the checkpoint named by `checkpoint`, defaulting to `<out_dir>/best.ckpt`.
fn checkpoint_path(cfg: &RunConfig) -> PathBuf {
    cfg.checkpoint.clone().unwrap_or_else(|| cfg.out_dir.join(BEST_CKPT))
}

pub fn write_metrics_csv<W: Write>(mut w: W, rows: &[(&str, RankingMetrics)]) -> std::io::Result<()> {
    writeln!(w, "split,queries,mrr,hits1,hits3,hits10")?;
    for (name, m) in rows {
        writeln!(w, "{name},{},{},{},{},{}", m.count, m.mrr(), m.hits_at_1(), m.hits_at_3(), m.hits_at_10())?;
    }
    w.flush()
}

fn eval<T: Scalar>(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let path = checkpoint_path(cfg);
    if !path.is_file() {
        return Err(CliError::MissingCheckpoint(path));
    }
    let split = load_split(cfg)?;
    let ck = Checkpoint::<T>::load(&path)?;
    ck.check_relations(split.inference.relations())?;
    let m = evaluate_split(&ck.params, &split, &cfg.train.eval_config())?;
    let csv = cfg.out_dir.join(METRICS_CSV);
    write_metrics_csv(create(&csv)?, &[("test", m)]).map_err(io_err(&csv))?;
    let table = format!(
        "{:<8}{:>8}{:>10}{:>10}{:>10}{:>10}\n{:<8}{:>8}{:>10.4}{:>10.4}{:>10.4}{:>10.4}\n",
        "split",
        "queries",
        "MRR",
        "Hits@1",
        "Hits@3",
        "Hits@10",
        "test",
        m.count,
        m.mrr(),
        m.hits_at_1(),
        m.hits_at_3(),
        m.hits_at_10()
    );
    out.write_all(table.as_bytes()).map_err(io_err(&csv))?;
    Ok(())
}

fn sweep<T: Scalar>(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let split = load_split(cfg)?;
    let rows = sweep_pe::<T>(&split, &cfg.train, &cfg.pe_values)?;
    let path = cfg.out_dir.join(SWEEP_CSV);
    write_sweep_csv(create(&path)?, &rows).map_err(io_err(&path))?;
    for (p, mrr) in &rows {
        writeln!(out, "p_e {p:<6} mrr {mrr:.4}").map_err(io_err(&path))?;
    }
    Ok(())
}

fn gen_synth(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let dir = cfg.dataset()?.to_path_buf();
    let ind = cfg.ind_dataset()?;
    let raw = generate_planted_kg(&cfg.planted_spec())?;
    raw.write(&dir, &ind)?;
    // The resolved config travels with the generated data.
    let echo = dir.join(CONFIG_ECHO);
    fs::write(&echo, cfg.to_text()).map_err(io_err(&echo))?;
    writeln!(
        out,
        "wrote {} train / {} valid / {} inference / {} test triples to {} and {}",
        raw.train.len(),
        raw.valid.len(),
        raw.inference.len(),
        raw.test.len(),
        dir.display(),
        ind.display()
    )
    .map_err(io_err(&dir))?;
    Ok(())
}

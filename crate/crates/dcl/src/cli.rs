//! Argument parsing and the subcommands of the `dcl` binary.

use std::cell::RefCell;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use dcl_core::model::{EncoderState, NormKind};
use dcl_core::objectives::DualNetworks;
use dcl_core::robusteval::{
    cosine_analysis, invariance_test, project_2d, pwws_attack, ModelAdapter, Representation, SentenceEncoder,
};
use dcl_core::textpipe::{mask_for_mlm, words, Vocabulary};
use dcl_core::trainer::{accuracy, augmented_pair, finetune, objective_grad_check, pretrain, ObjectiveBatch, RunLog};
use dcl_core::SeededStream;

use crate::checkpoint::{self, Checkpoint, Payload};
use crate::config::{Condition, RunConfig};
use crate::error::{CliError, ExitCode, Result};
use crate::io::{load_corpus, load_labeled, load_lexicon, load_vocab, write_report};
use crate::report;

#[derive(Debug, Parser)]
#[command(name = "dcl", version, about = "Momentum-aligned contrastive text encoders: train, attack, analyze")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// MLM + symmetric alignment pretraining with an EMA target network.
    Pretrain(Common),
    /// Train the classifier head (and encoder) on the labeled set.
    Finetune(WithCheckpoint),
    /// Synonym-perturbation invariance test on the labeled texts.
    EvalInvariance(RequiredCheckpoint),
    /// PWWS synonym-substitution attack on every labeled example.
    Attack(RequiredCheckpoint),
    /// Positive- vs random-pair cosines and 2D projections per
    /// normalization condition.
    Analyze(AnalyzeArgs),
    /// Finite-difference check of the full training objective.
    GradCheck(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory receiving every output file (created if absent).
    #[arg(long, default_value = "dcl-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct WithCheckpoint {
    #[command(flatten)]
    pub common: Common,
    /// Start from this checkpoint's online network instead of a fresh one.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RequiredCheckpoint {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Analyze this encoder instead of training one per condition.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Restrict the comparison to one normalization kind.
    #[arg(long, value_parser = ["layer", "power", "none"])]
    pub norm: Option<String>,
}

/// Parses `args` (including the program name) and runs the command.
/// Diagnostics go to stderr, summaries to stdout, data files to `--out`.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::Usage } else { ExitCode::Ok };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::Ok,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Pretrain(c) => cmd_pretrain(&c),
        Command::Finetune(a) => cmd_finetune(&a.common, a.checkpoint.as_deref()),
        Command::EvalInvariance(a) => cmd_invariance(&a.common, &a.checkpoint),
        Command::Attack(a) => cmd_attack(&a.common, &a.checkpoint),
        Command::Analyze(a) => cmd_analyze(&a.common, a.checkpoint.as_deref(), a.norm.as_deref()),
        Command::GradCheck(c) => cmd_grad_check(&c),
    }
}

fn setup(c: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    std::fs::create_dir_all(&c.out).map_err(|e| CliError::io(&c.out, e))?;
    Ok(cfg)
}

fn clock(cfg: &RunConfig) -> impl FnMut() -> f64 {
    let start = Instant::now();
    let wall = cfg.wall_clock;
    move || if wall { start.elapsed().as_secs_f64() } else { 0.0 }
}

fn no_overwrite(path: &Path) -> Result<()> {
    if path.exists() {
        return Err(CliError::Exists(path.to_path_buf()));
    }
    Ok(())
}

fn load_model(path: &Path, vocab: &Vocabulary) -> Result<EncoderState> {
    let model = checkpoint::load(path)?.into_online();
    if model.config().vocab_size != vocab.len() {
        return Err(CliError::Checkpoint {
            path: path.to_path_buf(),
            msg: format!(
                "model vocabulary has {} entries but the vocabulary file has {}",
                model.config().vocab_size,
                vocab.len()
            ),
        });
    }
    Ok(model)
}

fn write_abort_dump(out: &Path, e: &dcl_core::Error) {
    if let dcl_core::Error::Aborted { step, cause, batch } = e {
        let mut s = format!("step: {step}\ncause: {cause}\nbatch:\n");
        for t in batch {
            let _ = writeln!(s, "  {t}");
            log::error!("offending batch text: {t}");
        }
        let _ = write_report(&out.join("abort_batch.txt"), &s);
    }
}

fn cmd_pretrain(c: &Common) -> Result<()> {
    let cfg = setup(c)?;
    let vocab = load_vocab(&cfg.data.vocab)?;
    let lex = load_lexicon(&cfg.data.lexicon)?;
    let corpus = load_corpus(&cfg.data.corpus)?;
    let tc = cfg.pretrain_config();
    let final_path = c.out.join("pretrained.ckpt");
    no_overwrite(&final_path)?;
    let nets = DualNetworks::new(cfg.encoder_config(vocab.len()), tc.tau_ema)?;
    log::info!("pretraining {} steps on {} sentences", tc.steps, corpus.len());

    let failed: RefCell<Option<CliError>> = RefCell::new(None);
    let every = tc.checkpoint_every;
    let after = |run: &dcl_core::trainer::PretrainRun, _: &dcl_core::trainer::RunRecord| {
        if every > 0 && run.step.is_multiple_of(every) && run.step < tc.steps {
            let ck = Checkpoint {
                step: run.step,
                payload: Payload::Dual(run.nets.clone()),
            };
            if let Err(e) = checkpoint::save(&c.out.join(format!("step_{:06}.ckpt", run.step)), &ck) {
                *failed.borrow_mut() = Some(e);
                return Err(dcl_core::Error::Contract("checkpoint write failed".into()));
            }
        }
        Ok(())
    };
    let result = pretrain(nets, &corpus, &vocab, &lex, &tc, clock(&cfg), after);
    if let Some(e) = failed.into_inner() {
        return Err(e);
    }
    let (nets, log) = result.inspect_err(|e| write_abort_dump(&c.out, e))?;
    write_report(&c.out.join("pretrain_log.csv"), &log.to_csv())?;
    checkpoint::save(
        &final_path,
        &Checkpoint {
            step: tc.steps,
            payload: Payload::Dual(nets),
        },
    )?;
    summarize("pretrain", &log);
    Ok(())
}

fn summarize(what: &str, log: &RunLog) {
    if let Some(r) = log.records.last() {
        println!(
            "{what}: {} steps, final total_loss {:.6} (mlm {:.6}, align {:.6})",
            r.step, r.total_loss, r.mlm_loss, r.align_loss
        );
    } else {
        println!("{what}: 0 steps");
    }
}

fn cmd_finetune(c: &Common, ck: Option<&Path>) -> Result<()> {
    let cfg = setup(c)?;
    let vocab = load_vocab(&cfg.data.vocab)?;
    let labeled = load_labeled(&cfg.data.labeled)?;
    let out_path = c.out.join("finetuned.ckpt");
    no_overwrite(&out_path)?;
    let model = match ck {
        Some(p) => load_model(p, &vocab)?,
        None => {
            log::warn!("no --checkpoint given; fine-tuning a freshly initialized encoder");
            EncoderState::new(cfg.encoder_config(vocab.len()))?
        }
    };
    let tc = cfg.finetune_config();
    let run = finetune(model, &labeled, &vocab, &tc, clock(&cfg)).map_err(|e| match e {
        dcl_core::Error::Data { line, msg } => CliError::File {
            path: cfg.data.labeled.clone(),
            source: dcl_core::Error::Data { line, msg },
        },
        e => e.into(),
    })?;
    write_report(&c.out.join("finetune_log.csv"), &run.log.to_csv())?;
    let acc = accuracy(&run.model, &labeled, &vocab, cfg.model.max_len)?;
    checkpoint::save(
        &out_path,
        &Checkpoint {
            step: tc.steps,
            payload: Payload::Single(run.model),
        },
    )?;
    summarize("finetune", &run.log);
    println!("finetune: training accuracy {acc:.4}");
    Ok(())
}

fn cmd_invariance(c: &Common, ck: &Path) -> Result<()> {
    let cfg = setup(c)?;
    let vocab = load_vocab(&cfg.data.vocab)?;
    let lex = load_lexicon(&cfg.data.lexicon)?;
    let labeled = load_labeled(&cfg.data.labeled)?;
    let model = load_model(ck, &vocab)?;
    let adapter = ModelAdapter::new(&model, &vocab, Representation::Pooled);
    let texts: Vec<String> = labeled.iter().map(|e| e.text.clone()).collect();
    let e = &cfg.eval;
    let mut rng = SeededStream::new(cfg.seed);
    let rep = invariance_test(&adapter, &texts, &lex, e.k, e.aug_p, e.eps, &mut rng)?;
    write_report(&c.out.join("invariance.csv"), &report::invariance_csv(&rep))?;
    println!(
        "eval-invariance: {} perturbations, flip rate {:.4}, pass rate {:.4} at eps {}, mean cosine {:.4}, min cosine {:.4}, {} texts without eligible words",
        rep.records.len(),
        rep.flip_rate(),
        rep.pass_rate(),
        rep.eps,
        rep.mean_cosine(),
        rep.min_cosine(),
        rep.no_perturbation.len()
    );
    Ok(())
}

fn cmd_attack(c: &Common, ck: &Path) -> Result<()> {
    let cfg = setup(c)?;
    let vocab = load_vocab(&cfg.data.vocab)?;
    let lex = load_lexicon(&cfg.data.lexicon)?;
    let labeled = load_labeled(&cfg.data.labeled)?;
    let model = load_model(ck, &vocab)?;
    let adapter = ModelAdapter::new(&model, &vocab, Representation::Pooled);
    let results = labeled
        .iter()
        .filter(|e| !words(&e.text).is_empty())
        .map(|e| pwws_attack(&adapter, &e.text, e.label, &lex))
        .collect::<dcl_core::Result<Vec<_>>>()?;
    let log = report::attack_log(&results);
    write_report(&c.out.join("attack_log.txt"), &log)?;
    println!("attack: {}", log.lines().nth(1).unwrap_or("").trim_start_matches("# "));
    Ok(())
}

fn cmd_analyze(c: &Common, ck: Option<&Path>, norm: Option<&str>) -> Result<()> {
    let cfg = setup(c)?;
    let vocab = load_vocab(&cfg.data.vocab)?;
    let lex = load_lexicon(&cfg.data.lexicon)?;
    let corpus = load_corpus(&cfg.data.corpus)?;
    let labeled = load_labeled(&cfg.data.labeled)?;
    let a = &cfg.analyze;
    let repr = match a.representation.as_str() {
        "pooled" => Representation::Pooled,
        _ => Representation::Projected,
    };

    let mut encoders: Vec<(String, EncoderState)> = Vec::new();
    if let Some(p) = ck {
        let m = load_model(p, &vocab)?;
        let name = if m.config().projection_batch_norm { "batch" } else { m.config().norm.as_str() };
        encoders.push((name.to_string(), m));
    } else {
        let conditions: Vec<Condition> = match norm {
            Some(n) => vec![Condition::Norm(NormKind::parse(n).expect("validated by clap"))],
            None => a.conditions.iter().filter_map(|s| Condition::parse(s)).collect(),
        };
        let mut tc = cfg.pretrain_config();
        tc.steps = a.steps.unwrap_or(tc.steps);
        tc.contrast.lambda_mlm = a.lambda_mlm;
        for cond in conditions {
            let mut ec = cfg.encoder_config(vocab.len());
            cond.apply(&mut ec);
            log::info!("analyze: training condition {} for {} steps", cond.name(), tc.steps);
            let nets = DualNetworks::new(ec, tc.tau_ema)?;
            let (nets, log) = pretrain(nets, &corpus, &vocab, &lex, &tc, clock(&cfg), |_, _| Ok(()))
                .inspect_err(|e| write_abort_dump(&c.out, e))?;
            write_report(&c.out.join(format!("analyze_{}_log.csv", cond.name())), &log.to_csv())?;
            encoders.push((cond.name().to_string(), nets.online));
        }
    }

    let label_words: Vec<Vec<String>> = labeled.iter().map(|e| words(&e.text)).collect();
    let labels: Vec<usize> = labeled.iter().map(|e| e.label).collect();
    let mut rows = Vec::new();
    for (name, model) in &encoders {
        let adapter = ModelAdapter::new(model, &vocab, repr);
        let mut rng = SeededStream::new(cfg.seed);
        let row = cosine_analysis(name, &adapter, &corpus, &lex, a.n_pairs, cfg.eval.aug_p, &mut rng)?;
        println!(
            "analyze: {name}: positive_mean {:.4} random_mean {:.4}",
            row.positive_mean, row.random_mean
        );
        rows.push(row);
        match project_2d(&adapter.encode(&label_words)?) {
            Ok(p) => {
                write_report(&c.out.join(format!("projection_{name}.csv")), &report::projection_csv(&p.coords, &labels))?;
                if a.svg {
                    let svg = report::projection_svg(&p.coords, &labels, &format!("{name} representations (PCA)"));
                    write_report(&c.out.join(format!("projection_{name}.svg")), &svg)?;
                }
            }
            Err(dcl_core::Error::DegenerateInput(m)) => log::warn!("{name}: no projection written: {m}"),
            Err(e) => return Err(e.into()),
        }
    }
    write_report(&c.out.join("analysis.csv"), &report::analysis_csv(&rows))?;
    Ok(())
}

fn cmd_grad_check(c: &Common) -> Result<()> {
    let cfg = setup(c)?;
    let vocab = load_vocab(&cfg.data.vocab)?;
    let lex = load_lexicon(&cfg.data.lexicon)?;
    let corpus = load_corpus(&cfg.data.corpus)?;
    let g = &cfg.gradcheck;
    let ec = cfg.encoder_config(vocab.len());
    let nets = DualNetworks::new(ec.clone(), cfg.pretrain.tau_ema)?;
    let texts: Vec<String> = corpus.iter().take(g.sentences.max(1)).cloned().collect();
    let mut rng = SeededStream::new(cfg.seed);
    // Dense replacement and masking so every head and most embedding rows
    // take part in the checked loss.
    let (x, x_aug) = augmented_pair(&texts, &vocab, &lex, 0.5, ec.max_len, &mut rng)?;
    let masked = mask_for_mlm(&x, 0.5, vocab.len(), &mut rng)?;
    let labels = (0..texts.len()).map(|i| i % ec.num_classes).collect();
    let batch = ObjectiveBatch { x, x_aug, masked, labels };
    let mut contrast = cfg.pretrain_config().contrast;
    contrast.lambda_mlm = 1.0;
    contrast.lambda_align = 1.0;
    let rep = objective_grad_check(&nets, &batch, &contrast, g.h, g.tol, g.max_per_tensor)?;
    write_report(&c.out.join("gradcheck.csv"), &report::gradcheck_csv(&[("objective", &rep)]))?;
    println!(
        "grad-check: max relative error {:e} over {} parameter entries (max abs {:e}, tol {:e}, norm {}): {}",
        rep.max_rel_error,
        rep.checked,
        rep.max_abs_error,
        rep.tol,
        ec.norm.as_str(),
        if rep.passed { "PASS" } else { "FAIL" }
    );
    if !rep.passed {
        return Err(CliError::GradCheck {
            max_rel_error: rep.max_rel_error,
            tol: rep.tol,
        });
    }
    Ok(())
}

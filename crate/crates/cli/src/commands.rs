use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use pgan::corpus::{
    build_triples, read_dialogues, read_triples, write_triples, EncodedTriple, PaddedBatch, Triple, Vocabulary,
};
use pgan::discriminators::{BackwardDiscriminator, ForwardDiscriminator};
use pgan::eval::{
    evaluate, export_reward_distribution, read_stopwords, write_reward_csv, Contexts, EmbeddingTable, FrequencyProfile,
};
use pgan::numerics::checkpoint;
use pgan::numerics::gradcheck::{check_gradients, GradCheckOptions};
use pgan::numerics::{Graph, ParamStore, Real};
use pgan::seq2seq::{source_row, DecodeMode, ModelConfig, Seq2Seq};
use pgan::trainer::{
    adversarial_train, mle_epoch, perplexity, teacher_forcing_loss, LogRecord, Models, Optimizers, Pair, Progress,
    TrainObserver,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{existing, input, Config};
use crate::{Failure, Stage, Target};

/// Validation failures exit with the usage code; they are raised before any compute.
fn usage<T>(r: Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(Failure::Usage)
}

fn rng_for(cfg: &Config, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
    r.set_stream(stream);
    r
}

fn load_triples(p: &Path) -> Result<Vec<Triple>> {
    read_triples(BufReader::new(File::open(p)?)).with_context(|| format!("reading {}", p.display()))
}

fn load_vocab(p: &Path) -> Result<Vocabulary> {
    Vocabulary::read(BufReader::new(File::open(p)?)).with_context(|| format!("reading {}", p.display()))
}

fn create(p: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(
        File::create(p).with_context(|| format!("creating {}", p.display()))?,
    ))
}

fn output(p: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match p {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn json_line<W: Write, T: Serialize>(w: &mut W, v: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, v)?;
    w.write_all(b"\n")?;
    Ok(())
}

// ---------------------------------------------------------------- prepare-data

pub fn prepare_data(cfg: &Config) -> std::result::Result<(), Failure> {
    let p = &cfg.paths;
    let splits = [
        (&p.raw_train, &p.train, "train"),
        (&p.raw_valid, &p.valid, "valid"),
        (&p.raw_test, &p.test, "test"),
    ];
    let mut jobs = Vec::new();
    for (raw, out, name) in splits {
        match (raw, out) {
            (Some(_), Some(o)) => jobs.push((
                usage(input(raw, &format!("paths.raw_{name}")))?.to_path_buf(),
                o.clone(),
                name,
            )),
            (Some(_), None) => {
                return Err(Failure::Usage(anyhow::anyhow!(
                    "paths.raw_{name} is set but paths.{name} is not"
                )))
            }
            _ => {}
        }
    }
    if !jobs.iter().any(|j| j.2 == "train") {
        return Err(Failure::Usage(anyhow::anyhow!(
            "prepare-data needs paths.raw_train and paths.train"
        )));
    }
    let vocab_path = usage(p.vocab.clone().ok_or_else(|| anyhow::anyhow!("paths.vocab is not set")))?;

    let mut reports = serde_json::Map::new();
    for (raw, out, name) in jobs {
        let dialogues = read_dialogues(BufReader::new(File::open(&raw)?))?;
        let (triples, report) = build_triples(&dialogues, &cfg.triples)?;
        write_triples(&mut create(&out)?, &triples)?;
        if name == "train" {
            let vocab = Vocabulary::from_triples(&triples, cfg.model.vocab_size)?;
            let mut w = create(&vocab_path)?;
            vocab.write(&mut w)?;
            w.flush()?;
            reports.insert("vocab_size".into(), vocab.len().into());
        }
        log::info!("{name}: {} triples from {} dialogues", report.emitted, report.dialogues);
        reports.insert(name.into(), serde_json::to_value(report)?);
    }
    println!("{}", serde_json::to_string_pretty(&reports)?);
    Ok(())
}

// ---------------------------------------------------------------- model plumbing

fn generator<F: Real>(cfg: &Config, model: ModelConfig, rng: &mut ChaCha8Rng) -> Result<Seq2Seq<F>> {
    Ok(Seq2Seq::initialized(model, "gen", cfg.train.init_sigma, rng)?)
}

fn forward<F: Real>(cfg: &Config, model: ModelConfig, rng: &mut ChaCha8Rng) -> Result<ForwardDiscriminator<F>> {
    Ok(ForwardDiscriminator::initialized(model, cfg.train.init_sigma, rng)?)
}

fn backward<F: Real>(cfg: &Config, model: ModelConfig, rng: &mut ChaCha8Rng) -> Result<BackwardDiscriminator<F>> {
    Ok(BackwardDiscriminator::initialized(
        model,
        cfg.r2_sign,
        cfg.train.init_sigma,
        rng,
    )?)
}

fn restore(store: &mut ParamStore<impl Real>, p: &Path) -> Result<()> {
    checkpoint::load(store, p).with_context(|| format!("loading {}", p.display()))
}

fn save(store: &ParamStore<impl Real>, p: &Path) -> Result<()> {
    fs::create_dir_all(p.parent().unwrap_or(Path::new(".")))?;
    checkpoint::save(store, p).with_context(|| format!("writing {}", p.display()))
}

fn stage_name(target: Target, stage: Stage) -> String {
    let t = match target {
        Target::Gen => "gen",
        Target::D1 => "d1",
        Target::D2 => "d2",
    };
    let s = match stage {
        Stage::Pretrained => "pretrained",
        Stage::Adversarial => "adversarial",
    };
    format!("{t}-{s}")
}

// ---------------------------------------------------------------- pretrain

#[derive(Serialize)]
struct EpochRecord {
    target: &'static str,
    epoch: usize,
    train_loss: f64,
    valid_perplexity: Option<f64>,
}

pub fn pretrain<F: Real>(cfg: &Config, target: Target) -> std::result::Result<(), Failure> {
    let train_path = usage(input(&cfg.paths.train, "paths.train"))?;
    let vocab_path = usage(input(&cfg.paths.vocab, "paths.vocab"))?;
    let valid_path = match &cfg.paths.valid {
        Some(_) => Some(usage(input(&cfg.paths.valid, "paths.valid"))?),
        None => None,
    };

    let vocab = load_vocab(vocab_path)?;
    let model_cfg = cfg.model_for(vocab.len());
    let train = EncodedTriple::encode_all(&load_triples(train_path)?, &vocab);
    let valid = match valid_path {
        Some(p) => EncodedTriple::encode_all(&load_triples(p)?, &vocab),
        None => Vec::new(),
    };
    if train.is_empty() {
        return Err(Failure::Runtime(anyhow::anyhow!(
            "{} holds no triples",
            train_path.display()
        )));
    }

    let (name, stream, epochs): (&'static str, u64, usize) = match target {
        Target::Gen => ("gen", 1, cfg.train.gen_epochs),
        Target::D1 => ("d1", 2, cfg.train.disc_epochs),
        Target::D2 => ("d2", 3, cfg.train.disc_epochs),
    };
    let mut rng = rng_for(cfg, stream);
    let orient = |t: &EncodedTriple| -> Pair {
        match target {
            Target::Gen => (t.query.clone(), t.response.clone()),
            Target::D1 => (t.response.clone(), t.future.clone()),
            Target::D2 => (t.future.clone(), t.response.clone()),
        }
    };
    let train_pairs: Vec<Pair> = train.iter().map(orient).collect();
    let valid_pairs: Vec<Pair> = valid.iter().map(orient).collect();

    let mut model: Seq2Seq<F> = match target {
        Target::Gen => generator(cfg, model_cfg, &mut rng)?,
        Target::D1 => forward::<F>(cfg, model_cfg, &mut rng)?.model().clone(),
        Target::D2 => backward::<F>(cfg, model_cfg, &mut rng)?.model().clone(),
    };
    let mut opt = cfg.optim.clone();
    let ckpt = cfg.checkpoint(&stage_name(target, Stage::Pretrained));
    let mut log = create(&cfg.paths.checkpoint_dir.join(format!("pretrain-{name}.jsonl")))?;
    let bs = cfg.train.batch_size;
    for epoch in 1..=epochs {
        let train_loss = mle_epoch(&mut model, &train_pairs, bs, &mut opt, &mut rng)?;
        let valid_perplexity = if valid_pairs.is_empty() {
            None
        } else {
            Some(perplexity(&model, &valid_pairs, bs)?)
        };
        log::info!("{name} epoch {epoch}: loss {train_loss:.4}, valid perplexity {valid_perplexity:?}");
        json_line(
            &mut log,
            &EpochRecord {
                target: name,
                epoch,
                train_loss,
                valid_perplexity,
            },
        )?;
        log.flush()?;
        save(model.params(), &ckpt)?;
    }
    if epochs == 0 {
        save(model.params(), &ckpt)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- train-adversarial

struct Recorder<'a, W: Write> {
    log: W,
    cfg: &'a Config,
}

impl<W: Write, F: Real> TrainObserver<F> for Recorder<'_, W> {
    fn record(&mut self, r: &LogRecord) -> pgan::Result<()> {
        serde_json::to_writer(&mut self.log, r)?;
        self.log.write_all(b"\n")?;
        Ok(())
    }

    fn end_cycle(&mut self, cycle: usize, models: &Models<F>, _opts: &Optimizers) -> pgan::Result<()> {
        self.log.flush()?;
        if (cycle + 1).is_multiple_of(self.cfg.train.checkpoint_every) {
            write_models(self.cfg, models).map_err(|e| pgan::Error::Checkpoint(e.to_string()))?;
        }
        Ok(())
    }
}

fn write_models<F: Real>(cfg: &Config, models: &Models<F>) -> Result<()> {
    save(
        models.gen.params(),
        &cfg.checkpoint(&stage_name(Target::Gen, Stage::Adversarial)),
    )?;
    if let Some(d) = &models.d1 {
        save(
            d.model().params(),
            &cfg.checkpoint(&stage_name(Target::D1, Stage::Adversarial)),
        )?;
    }
    if let Some(d) = &models.d2 {
        save(
            d.model().params(),
            &cfg.checkpoint(&stage_name(Target::D2, Stage::Adversarial)),
        )?;
    }
    Ok(())
}

fn read_corpus(cfg: &Config) -> std::result::Result<(PathBuf, PathBuf), Failure> {
    let train = usage(input(&cfg.paths.train, "paths.train"))?.to_path_buf();
    let vocab = usage(input(&cfg.paths.vocab, "paths.vocab"))?.to_path_buf();
    Ok((train, vocab))
}

pub fn train_adversarial<F: Real>(cfg: &Config) -> std::result::Result<(), Failure> {
    let (train_path, vocab_path) = read_corpus(cfg)?;
    let gen_ckpt = cfg.checkpoint(&stage_name(Target::Gen, Stage::Pretrained));
    let d1_ckpt = cfg.checkpoint(&stage_name(Target::D1, Stage::Pretrained));
    let d2_ckpt = cfg.checkpoint(&stage_name(Target::D2, Stage::Pretrained));
    usage(existing(&gen_ckpt))?;
    if cfg.mode.uses_forward() {
        usage(existing(&d1_ckpt))?;
    }
    if cfg.mode.uses_backward() {
        usage(existing(&d2_ckpt))?;
    }

    let vocab = load_vocab(&vocab_path)?;
    let train = EncodedTriple::encode_all(&load_triples(&train_path)?, &vocab);
    let model_cfg = cfg.model_for(vocab.len());
    let mut rng = rng_for(cfg, 4);
    let mut gen = generator::<F>(cfg, model_cfg, &mut rng)?;
    restore(gen.params_mut(), &gen_ckpt)?;
    let d1 = if cfg.mode.uses_forward() {
        let mut d = forward::<F>(cfg, model_cfg, &mut rng)?;
        restore(d.model_mut().params_mut(), &d1_ckpt)?;
        Some(d)
    } else {
        None
    };
    let d2 = if cfg.mode.uses_backward() {
        let mut d = backward::<F>(cfg, model_cfg, &mut rng)?;
        restore(d.model_mut().params_mut(), &d2_ckpt)?;
        Some(d)
    } else {
        None
    };
    let mut models = Models { gen, d1, d2 };
    let mut opts = Optimizers::uniform(&cfg.optim);
    let mut recorder = Recorder {
        log: create(&cfg.paths.checkpoint_dir.join("train.jsonl"))?,
        cfg,
    };
    let mut progress = Progress::default();
    let run = adversarial_train(
        &mut models,
        &mut opts,
        &train,
        &cfg.adversarial(),
        &mut progress,
        &mut rng,
        &mut recorder,
    );
    recorder.log.flush()?;
    if let Err(e) = run {
        log::error!(
            "training stopped after {} generator and {} discriminator steps",
            progress.g_step,
            progress.d_step
        );
        write_models(cfg, &models).context("checkpointing after the failure")?;
        log::error!("last good models written to {}", cfg.paths.checkpoint_dir.display());
        return Err(Failure::Runtime(e.into()));
    }
    write_models(cfg, &models)?;
    let summary = serde_json::json!({ "g_steps": progress.g_step, "d_steps": progress.d_step });
    fs::write(cfg.paths.checkpoint_dir.join("progress.json"), summary.to_string())?;
    Ok(())
}

// ---------------------------------------------------------------- generate

fn generate_all<F: Real>(cfg: &Config, gen: &Seq2Seq<F>, queries: &[Vec<usize>]) -> Result<Vec<Vec<usize>>> {
    let mut rng = rng_for(cfg, 5);
    let mut out = Vec::with_capacity(queries.len());
    for chunk in queries.chunks(cfg.train.batch_size.max(1)) {
        let src = PaddedBatch::from_ids(chunk.iter().map(|q| source_row(q)).collect())?;
        let res = gen.generate(&src, DecodeMode::Greedy, cfg.train.max_decode_len, &mut rng)?;
        out.extend(res.into_iter().map(|r| r.tokens));
    }
    Ok(out)
}

fn triples_input(cfg: &Config, given: Option<&Path>) -> std::result::Result<PathBuf, Failure> {
    match given {
        Some(p) => Ok(usage(existing(p))?.to_path_buf()),
        None => Ok(usage(input(&cfg.paths.test, "paths.test"))?.to_path_buf()),
    }
}

fn load_generator<F: Real>(cfg: &Config, vocab: &Vocabulary, stage: Stage) -> Result<Seq2Seq<F>> {
    let mut rng = rng_for(cfg, 0);
    let mut gen = generator::<F>(cfg, cfg.model_for(vocab.len()), &mut rng)?;
    restore(gen.params_mut(), &cfg.checkpoint(&stage_name(Target::Gen, stage)))?;
    Ok(gen)
}

pub fn generate<F: Real>(
    cfg: &Config,
    stage: Stage,
    triples: Option<&Path>,
    out: Option<&Path>,
) -> std::result::Result<(), Failure> {
    let vocab_path = usage(input(&cfg.paths.vocab, "paths.vocab"))?;
    let triples = triples_input(cfg, triples)?;
    usage(existing(&cfg.checkpoint(&stage_name(Target::Gen, stage))))?;

    let vocab = load_vocab(vocab_path)?;
    let gen = load_generator::<F>(cfg, &vocab, stage)?;
    let data = EncodedTriple::encode_all(&load_triples(&triples)?, &vocab);
    let queries: Vec<Vec<usize>> = data.into_iter().map(|t| t.query).collect();
    let hyps = generate_all(cfg, &gen, &queries)?;
    let mut w = output(out)?;
    for h in hyps {
        writeln!(w, "{}", vocab.decode(&h).join(" "))?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- evaluate

fn read_sentences(p: &Path) -> Result<Vec<Vec<String>>> {
    BufReader::new(File::open(p)?)
        .lines()
        .map(|l| Ok(l?.split_whitespace().map(String::from).collect()))
        .collect()
}

pub fn evaluate_files(
    cfg: &Config,
    hyp: &Path,
    reference: &Path,
    contexts: Option<&Path>,
) -> std::result::Result<(), Failure> {
    usage(existing(hyp))?;
    usage(existing(reference))?;
    if let Some(c) = contexts {
        usage(existing(c))?;
    }
    let embeddings = match &cfg.paths.embeddings {
        Some(_) => Some(usage(input(&cfg.paths.embeddings, "paths.embeddings"))?),
        None => None,
    };
    let profile_inputs = match (&cfg.paths.train, &cfg.paths.stopwords) {
        (Some(_), Some(_)) => Some((
            usage(input(&cfg.paths.train, "paths.train"))?,
            usage(input(&cfg.paths.stopwords, "paths.stopwords"))?,
        )),
        _ => None,
    };

    let hyps = read_sentences(hyp)?;
    let refs = read_sentences(reference)?;
    if hyps.len() != refs.len() {
        return Err(Failure::Usage(anyhow::anyhow!(
            "{} hypotheses but {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let table = match embeddings {
        Some(p) => Some(
            EmbeddingTable::read(BufReader::new(File::open(p)?)).with_context(|| format!("reading {}", p.display()))?,
        ),
        None => None,
    };
    let profile = match profile_inputs {
        Some((train, stop)) => {
            let stopwords = read_stopwords(BufReader::new(File::open(stop)?))?;
            let responses: Vec<Vec<String>> = load_triples(train)?.into_iter().map(|t| t.response).collect();
            Some(FrequencyProfile::build(
                &responses,
                &stopwords,
                FrequencyProfile::DEFAULT_SIZE,
            )?)
        }
        None => None,
    };
    let ctx_triples = match contexts {
        Some(p) => load_triples(p)?,
        None => Vec::new(),
    };
    let queries: Vec<Vec<String>> = ctx_triples.iter().map(|t| t.query.clone()).collect();
    let futures: Vec<Vec<String>> = ctx_triples.iter().map(|t| t.future.clone()).collect();
    let ctx = contexts.map(|_| Contexts {
        queries: &queries,
        futures: &futures,
    });
    let report = evaluate(&hyps, &refs, table.as_ref(), profile.as_ref(), ctx)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

// ---------------------------------------------------------------- analyze-rewards

pub fn analyze_rewards<F: Real>(
    cfg: &Config,
    stage: Stage,
    triples: Option<&Path>,
    out: Option<&Path>,
) -> std::result::Result<(), Failure> {
    let vocab_path = usage(input(&cfg.paths.vocab, "paths.vocab"))?;
    let triples = triples_input(cfg, triples)?;
    for t in [Target::Gen, Target::D1, Target::D2] {
        usage(existing(&cfg.checkpoint(&stage_name(t, stage))))?;
    }

    let vocab = load_vocab(vocab_path)?;
    let model_cfg = cfg.model_for(vocab.len());
    let gen = load_generator::<F>(cfg, &vocab, stage)?;
    let mut rng = rng_for(cfg, 0);
    let mut d1 = forward::<F>(cfg, model_cfg, &mut rng)?;
    restore(
        d1.model_mut().params_mut(),
        &cfg.checkpoint(&stage_name(Target::D1, stage)),
    )?;
    let mut d2 = backward::<F>(cfg, model_cfg, &mut rng)?;
    restore(
        d2.model_mut().params_mut(),
        &cfg.checkpoint(&stage_name(Target::D2, stage)),
    )?;

    let data = EncodedTriple::encode_all(&load_triples(&triples)?, &vocab);
    let queries: Vec<Vec<usize>> = data.iter().map(|t| t.query.clone()).collect();
    let futures: Vec<Vec<usize>> = data.iter().map(|t| t.future.clone()).collect();
    let responses = generate_all(cfg, &gen, &queries)?;
    let rows = export_reward_distribution(
        &d1,
        &d2,
        &responses,
        &futures,
        cfg.reward.discount,
        cfg.reward.discount_indexing,
    )?;
    let mut w = output(out)?;
    write_reward_csv(&mut w, &rows)?;
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- gradcheck

pub fn gradcheck(cfg: &Config) -> std::result::Result<(), Failure> {
    let model = ModelConfig::tiny(12, 4, 4);
    let opts = GradCheckOptions::default();
    let mut rng = rng_for(cfg, 6);
    let sigma = 0.4;
    let src = vec![vec![4, 5, 6, 7, 8], vec![9, 10]];
    let tgt = vec![vec![5, 11, 6], vec![7]];
    let batch = pgan::discriminators::DiscBatch {
        true_responses: vec![vec![4, 5, 6], vec![7, 8]],
        generated: vec![vec![9, 9], vec![]],
        futures: vec![vec![10, 11, 4, 5], vec![6]],
    };

    let mut results = Vec::new();
    let mut gen = Seq2Seq::<f64>::initialized(model, "gen", sigma, &mut rng)?;
    results.extend(check_gradients(&mut gen, opts, |m, want| {
        let mut g = Graph::new(m.params());
        let l = teacher_forcing_loss(m, &mut g, &src, &tgt)?;
        Ok((g.value(l).item(), if want { Some(g.backward(l)?) } else { None }))
    })?);
    let mut d1 = ForwardDiscriminator::<f64>::initialized(model, sigma, &mut rng)?;
    results.extend(check_gradients(&mut d1, opts, |d, want| {
        let mut g = Graph::new(d.model().params());
        let (l, _, _) = d.loss(&mut g, &batch)?;
        Ok((g.value(l).item(), if want { Some(g.backward(l)?) } else { None }))
    })?);
    let mut d2 = BackwardDiscriminator::<f64>::initialized(model, cfg.r2_sign, sigma, &mut rng)?;
    results.extend(check_gradients(&mut d2, opts, |d, want| {
        let mut g = Graph::new(d.model().params());
        let (l, _, _) = d.loss(&mut g, &batch)?;
        Ok((g.value(l).item(), if want { Some(g.backward(l)?) } else { None }))
    })?);

    let failing: Vec<_> = results.iter().filter(|c| !c.passed(opts.tolerance)).collect();
    for c in &results {
        let status = if c.passed(opts.tolerance) { "ok" } else { "FAIL" };
        println!("{status:4} {:<32} {:.3e}", c.name, c.max_rel_error);
    }
    if !failing.is_empty() {
        let names: Vec<&str> = failing.iter().map(|c| c.name.as_str()).collect();
        bail_runtime(format!(
            "{} of {} parameters failed: {}",
            failing.len(),
            results.len(),
            names.join(", ")
        ))?;
    }
    println!("all {} parameters within {:e}", results.len(), opts.tolerance);
    Ok(())
}

fn bail_runtime(msg: String) -> std::result::Result<(), Failure> {
    Err(Failure::Runtime(anyhow::anyhow!(msg)))
}

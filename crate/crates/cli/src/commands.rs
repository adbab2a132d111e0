use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use vqdr::corpus::{load_wav_16k, write_wav_pcm16, CorpusManifest, ManifestEntry};
use vqdr::dsp::{log_mel, mfcc, read_features, write_features, write_features_csv, FeatureMatrix, MelConfig};
use vqdr::metrics::{
    bottleneck_report, codebook_sweep, profile_audio, project_2d, prosody_delta, BottleneckInput, ProsodyConfig,
    Projection, SweepConfig,
};
use vqdr::synth::desk_corpus;
use vqdr::testbench::{
    aggregate, build_test_plan, load_plan, parse_responses, save_plan, Design, Pairing, Question, Stimulus,
};
use vqdr::vq::{
    codes_to_csv, load_codebook, quantize, remove_duplicates, rls_to_csv, save_codebook, train_codebook_on,
    KMeansConfig,
};

use crate::{Cli, Command, Common, DesignArg, FeatureArgs, Format, Kind, Method, UsageError};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn run(cli: Cli) -> Result<()> {
    let Cli { common, command } = cli;
    if common.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(common.jobs)
            .build_global()
            .context("configuring worker threads")?;
    }
    eprintln!("vqdr config: {common:?}");
    eprintln!("vqdr command: {command:?}");
    match command {
        Command::Features { manifest, out, kind, csv, features } => cmd_features(&common, &manifest, &out, kind, csv, &features),
        Command::TrainVq { features, k, out, max_iters, restarts } => {
            cmd_train_vq(&common, &features, k, &out, max_iters, restarts)
        }
        Command::Quantize { features, codebook, dedup, out } => cmd_quantize(&features, &codebook, dedup, out.as_deref()),
        Command::Sweep {
            manifest,
            eval_manifest,
            eval_fraction,
            sizes,
            seeds,
            max_iters,
            standardize,
            include_c0,
            out,
            features,
        } => {
            let config = SweepConfig {
                sizes,
                seeds,
                max_iters,
                standardize,
                exclude_c0: !include_c0,
                ..SweepConfig::default()
            };
            cmd_sweep(&common, &manifest, eval_manifest.as_deref(), eval_fraction, config, &out, &features)
        }
        Command::Prosody { a, b, no_trim, trim_db, out } => cmd_prosody(&common, &a, &b, !no_trim, trim_db, out.as_deref()),
        Command::Bottleneck { manifest, codebook, features } => cmd_bottleneck(&common, &manifest, &codebook, &features),
        Command::Project { input, method, perplexity, out } => cmd_project(&common, &input, method, perplexity, out.as_deref()),
        Command::Plan { stimuli, design, pairings, trials, plan_id, out } => {
            cmd_plan(&common, &stimuli, design, &pairings, trials, &plan_id, &out)
        }
        Command::Serve { plan_dir, listen, static_dir } => {
            let config = vqdr_service::ServiceConfig {
                listen,
                plan_dir,
                corpus_root: common.corpus_root.clone(),
                static_dir,
            };
            let runtime = tokio::runtime::Runtime::new().context("starting async runtime")?;
            eprintln!("listening on http://{listen}");
            runtime.block_on(vqdr_service::serve(config))?;
            Ok(())
        }
        Command::Results { plan, responses, out } => cmd_results(&common, &plan, &responses, out.as_deref()),
        Command::SynthCorpus { out, speakers, utts } => cmd_synth(&common, &out, speakers, utts),
    }
}

fn mel_config(args: &FeatureArgs) -> MelConfig {
    MelConfig {
        window_s: args.window_ms / 1000.0,
        hop_s: args.hop_ms / 1000.0,
        n_mels: args.n_mels,
        n_mfcc: args.n_mfcc,
        f_max: args.f_max,
        ..MelConfig::default()
    }
}

fn corpus_root(common: &Common, manifest: &Path) -> PathBuf {
    common.corpus_root.clone().unwrap_or_else(|| {
        manifest
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    })
}

fn load_manifest(common: &Common, path: &Path) -> Result<(CorpusManifest, PathBuf)> {
    let manifest = CorpusManifest::load(path)?;
    let root = corpus_root(common, path);
    manifest.validate(&root)?;
    eprintln!("corpus root: {}", root.display());
    Ok((manifest, root))
}

fn extract(entry: &ManifestEntry, root: &Path, kind: Kind, cfg: &MelConfig) -> Result<FeatureMatrix> {
    let path = CorpusManifest::resolve(entry, root);
    let audio = load_wav_16k(&path)?;
    let m = match kind {
        Kind::Mfcc => mfcc(&audio, cfg),
        Kind::Logmel => log_mel(&audio, cfg),
    };
    m.with_context(|| format!("extracting features from {}", path.display()))
}

fn write_out(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Column-aligned rendering of a CSV for terminals.
fn align_csv(csv: &str) -> String {
    let rows: Vec<Vec<&str>> = csv.lines().map(|l| l.split(',').collect()).collect();
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.len()).max().unwrap_or(0))
        .collect();
    rows.iter()
        .map(|r| {
            let cells: Vec<String> = r.iter().enumerate().map(|(c, s)| format!("{s:>w$}", w = widths[c])).collect();
            cells.join("  ") + "\n"
        })
        .collect()
}

fn render(csv: String, format: Format) -> String {
    match format {
        Format::Csv => csv,
        Format::Table => align_csv(&csv),
    }
}

fn cmd_features(common: &Common, manifest: &Path, out: &Path, kind: Kind, csv: bool, args: &FeatureArgs) -> Result<()> {
    let (manifest, root) = load_manifest(common, manifest)?;
    let cfg = mel_config(args);
    manifest.entries.par_iter().try_for_each(|e| -> Result<()> {
        let m = extract(e, &root, kind, &cfg)?;
        let dir = out.join(&e.speaker_id);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(format!("{}.feat", e.utt_id));
        write_features(&path, &m)?;
        if csv {
            let file = fs::File::create(path.with_extension("csv"))?;
            write_features_csv(std::io::BufWriter::new(file), &m)?;
        }
        Ok(())
    })?;
    println!("wrote {} feature files under {}", manifest.entries.len(), out.display());
    Ok(())
}

fn feature_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            for entry in walkdir::WalkDir::new(input).sort_by_file_name() {
                let entry = entry?;
                if entry.file_type().is_file() && entry.path().extension().is_some_and(|x| x == "feat") {
                    files.push(entry.into_path());
                }
            }
        } else {
            files.push(input.clone());
        }
    }
    if files.is_empty() {
        bail!("no .feat files found");
    }
    Ok(files)
}

fn cmd_train_vq(common: &Common, inputs: &[PathBuf], k: usize, out: &Path, max_iters: usize, restarts: usize) -> Result<()> {
    if k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    if restarts == 0 {
        return Err(usage("--restarts must be at least 1"));
    }
    let files = feature_files(inputs)?;
    let parts = files
        .iter()
        .map(|f| read_features(f).with_context(|| format!("reading {}", f.display())))
        .collect::<Result<Vec<_>>>()?;
    let config = KMeansConfig {
        k,
        seed: common.seed,
        max_iters,
        restarts,
        ..KMeansConfig::default()
    };
    let cb = train_codebook_on(&parts, &config)?;
    save_codebook(&cb, out)?;
    let frames: usize = parts.iter().map(FeatureMatrix::rows).sum();
    println!(
        "k={} dim={} frames={} files={} iterations={} distortion={:.6} seed={}",
        cb.k(),
        cb.dim(),
        frames,
        files.len(),
        cb.iterations_run,
        cb.final_distortion,
        common.seed
    );
    Ok(())
}

fn cmd_quantize(features: &Path, codebook: &Path, dedup: bool, out: Option<&Path>) -> Result<()> {
    let m = read_features(features).with_context(|| format!("reading {}", features.display()))?;
    let cb = load_codebook(codebook)?;
    let codes = quantize(&m, &cb)?;
    let text = if dedup { rls_to_csv(&remove_duplicates(&codes)) } else { codes_to_csv(&codes) };
    write_out(&text, out)
}

/// Seeded held-out split: sorts by (speaker, utterance), shuffles, and
/// takes the first `fraction` for evaluation.
fn split_eval(entries: &[ManifestEntry], fraction: f64, seed: u64) -> Result<(Vec<ManifestEntry>, Vec<ManifestEntry>)> {
    if entries.len() < 2 {
        bail!("need at least 2 utterances to hold some out");
    }
    let mut sorted = entries.to_vec();
    sorted.sort_by(|a, b| (&a.speaker_id, &a.utt_id).cmp(&(&b.speaker_id, &b.utt_id)));
    sorted.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_eval = ((fraction * sorted.len() as f64).round() as usize).clamp(1, sorted.len() - 1);
    let train = sorted.split_off(n_eval);
    Ok((train, sorted))
}

fn cmd_sweep(
    common: &Common,
    manifest: &Path,
    eval_manifest: Option<&Path>,
    eval_fraction: f64,
    config: SweepConfig,
    out: &Path,
    args: &FeatureArgs,
) -> Result<()> {
    if config.sizes.is_empty() {
        return Err(usage("--sizes must list at least one codebook size"));
    }
    if config.sizes.windows(2).any(|w| w[0] >= w[1]) || config.sizes[0] == 0 {
        return Err(usage("--sizes must be positive and strictly increasing"));
    }
    if config.seeds.is_empty() {
        return Err(usage("--seeds must list at least one seed"));
    }
    if eval_manifest.is_none() && !(eval_fraction > 0.0 && eval_fraction < 1.0) {
        return Err(usage("--eval-fraction must lie strictly between 0 and 1"));
    }
    let (m, root) = load_manifest(common, manifest)?;
    let (train, eval) = match eval_manifest {
        Some(p) => (m.entries.clone(), load_manifest(common, p)?.0.entries),
        None => split_eval(&m.entries, eval_fraction, common.seed)?,
    };
    let eval_root = match eval_manifest {
        Some(p) => corpus_root(common, p),
        None => root.clone(),
    };
    let cfg = mel_config(args);
    let feats = |entries: &[ManifestEntry], root: &Path| -> Result<Vec<FeatureMatrix>> {
        entries.par_iter().map(|e| extract(e, root, Kind::Mfcc, &cfg)).collect()
    };
    let train_f = feats(&train, &root)?;
    let eval_f = feats(&eval, &eval_root)?;
    eprintln!("sweep: {} training utterances, {} held out", train_f.len(), eval_f.len());

    let report = codebook_sweep(&train_f, &eval_f, &config)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("sweep.csv"), report.to_csv())?;
    fs::write(out.join("sweep.svg"), report.to_svg())?;

    let mut stats = String::new();
    match report.anova() {
        Ok(a) => stats.push_str(&format!(
            "one-way ANOVA over sizes: F({}, {}) = {:.4}, p = {:.3e}\n",
            a.df_between, a.df_within, a.f, a.p
        )),
        Err(e) => stats.push_str(&format!("one-way ANOVA over sizes: not available ({e})\n")),
    }
    for (from, to, t) in report.consecutive_t_tests() {
        match t {
            Ok(t) => stats.push_str(&format!(
                "paired t-test {from} -> {to} (one-tailed, MCD decreases): t({}) = {:.4}, p = {:.3e}\n",
                t.df, t.t, t.p
            )),
            Err(e) => stats.push_str(&format!("paired t-test {from} -> {to}: not available ({e})\n")),
        }
    }
    fs::write(out.join("stats.txt"), &stats)?;

    match common.format {
        Format::Csv => print!("{}", report.to_csv()),
        Format::Table => print!("{}\n{stats}", report.to_table()),
    }
    Ok(())
}

/// Pairs entries by utt_id, or by (speaker_id, utt_id) when utt_ids repeat
/// across speakers in either manifest.
fn match_entries<'a>(a: &'a CorpusManifest, b: &'a CorpusManifest) -> Vec<(&'a ManifestEntry, &'a ManifestEntry)> {
    let unique = |m: &CorpusManifest| {
        let mut seen = std::collections::HashSet::new();
        m.entries.iter().all(|e| seen.insert(e.utt_id.as_str()))
    };
    let by_utt = unique(a) && unique(b);
    let key = |e: &'a ManifestEntry| (if by_utt { "" } else { e.speaker_id.as_str() }, e.utt_id.as_str());
    let index: BTreeMap<_, _> = b.entries.iter().map(|e| (key(e), e)).collect();
    let mut pairs: Vec<_> = a.entries.iter().filter_map(|e| index.get(&key(e)).map(|f| (e, *f))).collect();
    pairs.sort_by_key(|(e, _)| key(e));
    pairs
}

fn cmd_prosody(common: &Common, a: &Path, b: &Path, trim: bool, trim_db: f64, out: Option<&Path>) -> Result<()> {
    let (ma, root_a) = load_manifest(common, a)?;
    let (mb, root_b) = load_manifest(common, b)?;
    let matched = match_entries(&ma, &mb);
    let cfg = ProsodyConfig { trim, trim_db, ..ProsodyConfig::default() };
    let profile = |e: &ManifestEntry, root: &Path| -> Result<_> {
        let audio = load_wav_16k(CorpusManifest::resolve(e, root))?;
        Ok(profile_audio(&audio, &cfg)?)
    };
    let pairs = matched
        .par_iter()
        .map(|(ea, eb)| Ok((profile(ea, &root_a)?, profile(eb, &root_b)?)))
        .collect::<Result<Vec<_>>>()?;
    let delta = prosody_delta(&pairs)?;
    eprintln!("prosody: {} common utterances, {} skipped for missing F0", matched.len(), delta.pairs_skipped);
    write_out(&render(delta.to_csv(), common.format), out)
}

fn cmd_bottleneck(common: &Common, manifest: &Path, codebook: &Path, args: &FeatureArgs) -> Result<()> {
    let (m, root) = load_manifest(common, manifest)?;
    let cb = load_codebook(codebook)?;
    let cfg = mel_config(args);
    let items = m
        .entries
        .par_iter()
        .map(|e| -> Result<BottleneckInput> {
            let audio = load_wav_16k(CorpusManifest::resolve(e, &root))?;
            let f = mfcc(&audio, &cfg)?;
            let codes = quantize(&f, &cb)?;
            let rls = remove_duplicates(&codes);
            Ok(BottleneckInput { codes, rls, duration_s: audio.duration_s() })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = bottleneck_report(&items)?;
    match common.format {
        Format::Csv => print!("{}", report.to_csv()),
        Format::Table => print!("{}", report.to_table()),
    }
    Ok(())
}

fn cmd_project(common: &Common, input: &Path, method: Method, perplexity: f64, out: Option<&Path>) -> Result<()> {
    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let mut labels = Vec::new();
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label = fields.next().unwrap_or_default().trim().to_string();
        let values: std::result::Result<Vec<f64>, _> = fields.map(|f| f.trim().parse::<f64>()).collect();
        match values {
            Ok(v) if !v.is_empty() => {
                labels.push(label);
                points.push(v);
            }
            _ if i == 0 => continue,
            _ => bail!("{} line {}: expected label followed by numbers", input.display(), i + 1),
        }
    }
    let projection = match method {
        Method::Pca => Projection::Pca,
        Method::Tsne => Projection::Tsne { perplexity },
    };
    let xy = project_2d(&points, projection, common.seed)?;
    let mut csv = String::from("label,x,y\n");
    for (l, p) in labels.iter().zip(&xy) {
        csv.push_str(&format!("{l},{:.6},{:.6}\n", p[0], p[1]));
    }
    write_out(&render(csv, if out.is_some() { Format::Csv } else { common.format }), out)
}

fn parse_stimuli(path: &Path) -> Result<Vec<Stimulus>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.split('\t').collect::<Vec<_>>() == ["stim_id", "utt_id", "system_tag", "condition", "path"] => {}
        _ => bail!("{}: header must be stim_id, utt_id, system_tag, condition, path (tab-separated)", path.display()),
    }
    lines
        .map(|(i, l)| {
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 5 {
                bail!("{} line {}: expected 5 fields, found {}", path.display(), i + 1, f.len());
            }
            Ok(Stimulus {
                stim_id: f[0].into(),
                utt_id: f[1].into(),
                system_tag: f[2].into(),
                condition: f[3]
                    .parse()
                    .map_err(|e: String| anyhow::anyhow!("{} line {}: {e}", path.display(), i + 1))?,
                path: PathBuf::from(f[4]),
            })
        })
        .collect()
}

fn parse_pairing(spec: &str, design: Design) -> Result<Pairing> {
    let f: Vec<&str> = spec.split(',').map(str::trim).collect();
    let default_question = match design {
        Design::Ab => Question::Comprehensibility,
        Design::Abx => Question::VoiceSimilarity,
    };
    let question = |s: Option<&&str>| -> Result<Question> {
        s.map(|q| q.parse().map_err(usage)).transpose().map(|q| q.unwrap_or(default_question))
    };
    match (design, f.len()) {
        (Design::Ab, 2) => Ok(Pairing::ab(f[0], f[1])),
        (Design::Ab, 3) => Ok(Pairing { question: question(f.get(2))?, ..Pairing::ab(f[0], f[1]) }),
        (Design::Abx, 3 | 4) => Ok(Pairing::abx(f[0], f[1], f[2], question(f.get(3))?)),
        (Design::Ab, _) => Err(usage(format!("AB pairing {spec:?} must be baseline,proposed[,question]"))),
        (Design::Abx, _) => Err(usage(format!("ABX pairing {spec:?} must be baseline,proposed,reference[,question]"))),
    }
}

fn cmd_plan(
    common: &Common,
    stimuli: &Path,
    design: DesignArg,
    pairings: &[String],
    trials: usize,
    plan_id: &str,
    out: &Path,
) -> Result<()> {
    let design = match design {
        DesignArg::Ab => Design::Ab,
        DesignArg::Abx => Design::Abx,
    };
    if trials == 0 {
        return Err(usage("--trials must be at least 1"));
    }
    let pairings = pairings.iter().map(|p| parse_pairing(p, design)).collect::<Result<Vec<_>>>()?;
    let plan = build_test_plan(plan_id, parse_stimuli(stimuli)?, design, pairings, trials, common.seed)?;
    save_plan(&plan, out)?;
    println!("plan {} ({}, {} trials, seed {}) written to {}", plan.plan_id, plan.design, plan.trials.len(), plan.seed, out.display());
    Ok(())
}

fn cmd_results(common: &Common, plan: &Path, responses: &Path, out: Option<&Path>) -> Result<()> {
    let plan = load_plan(plan).with_context(|| format!("reading plan {}", plan.display()))?;
    let log = match fs::read_to_string(responses) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(e).with_context(|| format!("reading {}", responses.display())),
    };
    let agg = aggregate(&parse_responses(&log)?, &plan)?;
    write_out(&render(agg.to_csv(), if out.is_some() { Format::Csv } else { common.format }), out)
}

fn cmd_synth(common: &Common, out: &Path, speakers: usize, utts: usize) -> Result<()> {
    if speakers == 0 || utts == 0 {
        return Err(usage("--speakers and --utts must be at least 1"));
    }
    let corpus = desk_corpus(speakers, utts, common.seed);
    let mut entries = Vec::with_capacity(corpus.len());
    for u in &corpus {
        let rel = PathBuf::from(&u.speaker_id).join(format!("{}.wav", u.utt_id));
        let path = out.join(&rel);
        fs::create_dir_all(path.parent().expect("joined path has a parent"))?;
        write_wav_pcm16(&path, &u.audio)?;
        entries.push(ManifestEntry { utt_id: u.utt_id.clone(), speaker_id: u.speaker_id.clone(), path: rel, text: None });
    }
    let manifest = CorpusManifest::new(entries)?;
    manifest.save(out.join("manifest.tsv"))?;
    println!("wrote {} utterances and manifest.tsv to {}", corpus.len(), out.display());
    Ok(())
}

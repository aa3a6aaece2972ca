use std::fmt::Write as _;
use std::path::PathBuf;

use edgeguard::evaluation::class_key;
use edgeguard::ids_data::synthetic::Generator;
use edgeguard::ids_data::{
    clean, encode_cache, ingest_csv_files, select_features, split, stratified_sample, CleanPolicy,
    CleanReport, Dataset, RawTable, SelectPolicy,
};
use edgeguard::ids_models::{serialize_model, train, TrainConfig};

use crate::args::{Cli, TrainArgs};
use crate::{ensure_dir, CliError, Manifest};

pub const DEFAULT_SEED: u64 = 42;

/// CSV paths, with directories expanded to their `*.csv` files in name
/// order.
pub(crate) fn csv_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(CliError::Data("no CSV files found".into()));
    }
    Ok(out)
}

pub(crate) fn clean_policy(name: &str) -> Result<CleanPolicy, CliError> {
    match name {
        "strict" => Ok(CleanPolicy::default()),
        "reference" => Ok(CleanPolicy::reference_counts()),
        other => Err(CliError::Usage(format!("unknown clean policy `{other}` (strict or reference)"))),
    }
}

fn config_for(a: &TrainArgs, seed: u64) -> Result<TrainConfig, CliError> {
    let mut cfg = TrainConfig::default_for(a.family);
    match &mut cfg {
        TrainConfig::Gnb(c) => {
            if let Some(v) = a.var_smoothing {
                c.var_smoothing = v;
            }
        }
        TrainConfig::Tree(c) => {
            if let Some(v) = a.max_depth {
                c.max_depth = v;
            }
            if let Some(v) = a.min_samples_split {
                c.min_samples_split = v;
            }
        }
        TrainConfig::Gbt(c) => {
            if let Some(v) = a.rounds {
                c.n_rounds = v;
            }
            if let Some(v) = a.learning_rate {
                c.learning_rate = v;
            }
            if let Some(v) = a.max_depth {
                c.max_depth = v;
            }
            if let Some(v) = a.lambda {
                c.lambda = v;
            }
        }
        TrainConfig::Mlp(c) => {
            if let Some(h) = &a.hidden {
                c.hidden_sizes = h
                    .split(',')
                    .map(|w| w.trim().parse::<usize>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| CliError::Usage(format!("bad --hidden `{h}`")))?;
            }
            if let Some(v) = a.epochs {
                c.epochs = v;
            }
            if let Some(v) = a.batch_size {
                c.batch_size = v;
            }
            if let Some(v) = a.learning_rate {
                c.learning_rate = v;
            }
            c.seed = seed;
        }
    }
    Ok(cfg)
}

pub(crate) fn load_raw(a: &TrainArgs) -> Result<(RawTable, String), CliError> {
    if a.synthetic {
        if !a.data.is_empty() {
            return Err(CliError::Usage("--synthetic and --data are exclusive".into()));
        }
        let raw = Generator::new(a.corpus_seed).raw_table();
        Ok((raw, format!("synthetic:{}", a.corpus_seed)))
    } else {
        if a.data.is_empty() {
            return Err(CliError::Usage("give --data <csv...> or --synthetic".into()));
        }
        let files = csv_files(&a.data)?;
        let names: Vec<String> = files
            .iter()
            .map(|f| f.file_name().unwrap_or_default().to_string_lossy().into_owned())
            .collect();
        Ok((ingest_csv_files(&files)?, names.join(",")))
    }
}

fn clean_lines(out: &mut String, r: &CleanReport) {
    let _ = writeln!(out, "clean.input = {}", r.input);
    let _ = writeln!(out, "clean.invalid = {}", r.invalid);
    let _ = writeln!(out, "clean.unlabeled = {}", r.unlabeled);
    let _ = writeln!(out, "clean.nan = {}", r.nan);
    let _ = writeln!(out, "clean.infinite = {}", r.infinite);
    let _ = writeln!(out, "clean.clamped = {}", r.clamped);
    let _ = writeln!(out, "clean.duplicates = {}", r.duplicates);
    let _ = writeln!(out, "clean.retained = {}", r.retained);
}

fn count_lines(out: &mut String, prefix: &str, d: &Dataset) {
    for (name, c) in d.labels.classes().iter().zip(d.per_class_counts()) {
        let _ = writeln!(out, "{prefix}.{} = {c}", class_key(name));
    }
}

pub fn run(cli: &Cli, a: &TrainArgs) -> Result<(), CliError> {
    let seed = cli.seed.unwrap_or(DEFAULT_SEED);
    if !(a.scale > 0.0 && a.scale <= 1.0) {
        return Err(CliError::Usage(format!("--scale {} outside (0, 1]", a.scale)));
    }
    let policy = clean_policy(&a.clean)?;
    let config = config_for(a, seed)?;
    let (raw, source) = load_raw(a)?;
    let (cleaned, report) = clean(&raw, policy);
    drop(raw);
    let sampled = if a.scale < 1.0 {
        stratified_sample(&cleaned, a.scale, seed)?
    } else {
        cleaned.clone()
    };
    let schema = select_features(&sampled, &SelectPolicy::default());
    let data = sampled.project(&schema)?;
    let (train_set, test_set) = split(&data, a.test_fraction, seed, true)?;
    let model = train(&train_set, &config)?;

    let mut text = String::new();
    let _ = writeln!(text, "family = {}", a.family);
    let _ = writeln!(text, "seed = {seed}");
    let _ = writeln!(text, "source = {source}");
    let _ = writeln!(text, "clean_policy = {}", a.clean);
    let _ = writeln!(text, "scale = {}", a.scale);
    let _ = writeln!(text, "test_fraction = {}", a.test_fraction);
    for (k, v) in config.describe() {
        let _ = writeln!(text, "config.{k} = {v}");
    }
    clean_lines(&mut text, &report);
    count_lines(&mut text, "cleaned", &cleaned);
    let _ = writeln!(text, "rows.sampled = {}", data.len());
    let _ = writeln!(text, "rows.train = {}", train_set.len());
    let _ = writeln!(text, "rows.test = {}", test_set.len());
    count_lines(&mut text, "train", &train_set);
    count_lines(&mut text, "test", &test_set);
    let _ = writeln!(text, "features.kept = {}", schema.names.len());
    for n in &schema.names {
        let _ = writeln!(text, "feature = {n}");
    }
    for (n, reason) in &schema.dropped {
        let _ = writeln!(text, "dropped = {n}\t{reason}");
    }

    ensure_dir(&cli.out)?;
    let mut manifest = Manifest::new("train");
    manifest.set("family", a.family);
    manifest.set("seed", seed);
    manifest.set("source", &source);
    manifest.output(&cli.out, "model.bin", serialize_model(&model))?;
    manifest.output(&cli.out, "test.flows", encode_cache(&test_set))?;
    manifest.output(&cli.out, "train_report.txt", &text)?;
    manifest.write(&cli.out)?;
    println!(
        "trained {} on {} rows ({} features); wrote {}",
        a.family,
        train_set.len(),
        schema.names.len(),
        cli.out.display()
    );
    Ok(())
}

use edgeguard::evaluation::{confusion, metrics, normalize};
use edgeguard::ids_data::{clean, decode_cache, ingest_csv_files, CleanPolicy, Dataset, CACHE_MAGIC};
use edgeguard::ids_models::{read_model, ClassifierModel};

use crate::args::{Cli, EvaluateArgs};
use crate::train::csv_files;
use crate::{ensure_dir, CliError, Manifest};

/// A `.flows` cache, or CSV files cleaned with the strict policy.
fn load_eval_data(a: &EvaluateArgs, model: &ClassifierModel) -> Result<Dataset, CliError> {
    if let [single] = &a.data[..] {
        if single.is_file() {
            let bytes = std::fs::read(single).map_err(|e| CliError::Data(format!("{}: {e}", single.display())))?;
            if bytes.starts_with(CACHE_MAGIC) {
                return Ok(decode_cache(&bytes)?);
            }
        }
    }
    let raw = ingest_csv_files(&csv_files(&a.data)?)?;
    let (data, _) = clean(&raw, CleanPolicy::default());
    data.project(&model.schema)
        .map_err(|e| CliError::Model(format!("schema mismatch: {e}")))
}

pub fn run(cli: &Cli, a: &EvaluateArgs) -> Result<(), CliError> {
    let model = read_model(&a.model)?;
    let data = load_eval_data(a, &model)?;
    if data.labels != model.labels {
        return Err(CliError::Model("label sets of model and data differ".into()));
    }
    let data = if data.schema.names == model.schema.names {
        data
    } else {
        data.project(&model.schema)
            .map_err(|e| CliError::Model(format!("schema mismatch: {e}")))?
    };
    let preds = model.predict_dataset(&data)?;
    let y_pred: Vec<usize> = preds.iter().map(|p| p.class).collect();
    let m = confusion(data.targets(), &y_pred, &model.labels).map_err(|e| CliError::Data(e.to_string()))?;
    let report = metrics(&m);
    let norm = normalize(&m);

    ensure_dir(&cli.out)?;
    let mut manifest = Manifest::new("evaluate");
    manifest.set("family", model.family());
    manifest.set("rows", data.len());
    manifest.output(&cli.out, "metrics.txt", report.to_text())?;
    manifest.output(&cli.out, "confusion.tsv", m.to_tsv())?;
    manifest.output(&cli.out, "confusion_normalized.tsv", norm.to_tsv())?;
    manifest.output(&cli.out, "confusion_grid.txt", norm.to_grid())?;
    manifest.write(&cli.out)?;
    print!("{}", report.to_text());
    Ok(())
}

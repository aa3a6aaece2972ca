use std::sync::Arc;

use edgeguard::ids_models::{load_model, Family};
use edgeguard::ledger::Digest;
use edgeguard::simulation::{bundled, reference_model, run_scenario, RunOptions, Scenario, BUNDLED};

use crate::args::{Cli, SimulateArgs};
use crate::{ensure_dir, read_text, CliError, Manifest};

pub fn run(cli: &Cli, a: &SimulateArgs) -> Result<(), CliError> {
    let (mut scenario, source) = match (&a.scenario, &a.bundled) {
        (Some(path), None) => {
            let text = read_text(path)?;
            let sc = Scenario::parse(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            (sc, path.display().to_string())
        }
        (None, Some(name)) => {
            let sc = bundled(name).ok_or_else(|| {
                let names: Vec<&str> = BUNDLED.iter().map(|(n, _)| *n).collect();
                CliError::Usage(format!("no bundled scenario `{name}` (have {})", names.join(", ")))
            })?;
            (sc, format!("bundled:{name}"))
        }
        _ => return Err(CliError::Usage("give --scenario <file> or --bundled <name>".into())),
    };
    if let Some(seed) = cli.seed {
        scenario.seed = seed;
    }
    let (model, model_source) = match &a.model {
        Some(p) => {
            let bytes = std::fs::read(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            (load_model(&bytes)?, format!("sha256:{}", Digest::of(&bytes).to_hex()))
        }
        None => (
            reference_model(scenario.corpus_seed, Family::Tree)?,
            format!("tree:synthetic:{}", scenario.corpus_seed),
        ),
    };
    let out = run_scenario(&scenario, Arc::new(model), &RunOptions::default())
        .map_err(|e| CliError::Data(e.to_string()))?;

    ensure_dir(&cli.out)?;
    let mut manifest = Manifest::new("simulate");
    manifest.set("scenario", &source);
    manifest.set("seed", scenario.seed);
    manifest.set("model", &model_source);
    manifest.output(&cli.out, "scenario.scn", scenario.to_text())?;
    manifest.output(&cli.out, "ledger.txt", out.ledger_export())?;
    manifest.output(&cli.out, "trace.tsv", out.trace_export())?;
    manifest.output(&cli.out, "decisions.tsv", out.decision_export())?;
    manifest.output(&cli.out, "summary.txt", out.summary.to_text())?;
    manifest.write(&cli.out)?;
    print!("{}", out.summary.to_text());
    Ok(())
}

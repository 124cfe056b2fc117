use dvelab::train::evaluate;

use super::{level_set, load_network, runtime};
use crate::output::write_json;
use crate::{CliError, EvalArgs};

pub fn run(args: &EvalArgs) -> Result<(), CliError> {
    let net = load_network(&args.checkpoint)?;
    let levels = level_set(&args.levels, args.gapworld_length)?;
    let report =
        evaluate(&net, &levels, args.episodes as usize, args.seed, args.horizon, args.greedy).map_err(runtime)?;
    if let Some(path) = &args.out {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        write_json(path, &report)?;
    }
    println!("{}", serde_json::to_string(&report).map_err(|e| CliError::Runtime(e.to_string()))?);
    Ok(())
}

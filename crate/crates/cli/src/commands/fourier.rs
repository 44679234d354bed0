//! `fourier`: Fourier-basis sensitivity heat map (CSV matrix + PGM).

use std::fs::File;
use std::io::{BufWriter, Write};

use pdalab_core::analysis::fourier_heatmap;
use pdalab_core::pgm::write_pgm_autoscale;

use crate::args::{ArgMap, Flag};
use crate::commands::{load_data, load_model, CmdError, CmdResult, CommandSpec};

pub const SPEC: CommandSpec = CommandSpec {
    name: "fourier",
    about: "test-error heat map under Fourier-basis perturbations",
    flags: &[
        Flag { name: "model", metavar: "ckpt", required: true, default: None, help: "model checkpoint" },
        Flag { name: "data", metavar: "dataset", required: true, default: None, help: "evaluation images" },
        Flag { name: "r", metavar: "frac", required: false, default: Some("0.1"), help: "perturbation norm as a fraction of each image's norm" },
        Flag { name: "limit", metavar: "N", required: false, default: Some("0"), help: "evaluate only the first N images (0 = all)" },
        Flag { name: "seed", metavar: "S", required: false, default: Some("0"), help: "sign-randomization seed" },
        Flag { name: "out", metavar: "prefix", required: true, default: None, help: "writes <prefix>.csv and <prefix>.pgm" },
    ],
    run,
};

fn run(args: &ArgMap) -> CmdResult {
    let model = load_model(args.get("model"))?;
    let mut data = load_data(args.get("data"))?;
    let limit = args.get_usize("limit").map_err(CmdError::Usage)?;
    if limit > 0 && limit < data.len() {
        data = data.take(limit).map_err(CmdError::runtime)?;
    }
    let r = args.get_f64("r").map_err(CmdError::Usage)?;
    let seed = args.get_u64("seed").map_err(CmdError::Usage)?;

    let map = fourier_heatmap(&model, &data, r, seed).map_err(CmdError::runtime)?;

    let prefix = args.get("out");
    let csv_path = format!("{prefix}.csv");
    let mut w = BufWriter::new(File::create(&csv_path).map_err(CmdError::runtime)?);
    map.write_csv(&mut w).map_err(CmdError::runtime)?;
    w.flush().map_err(CmdError::runtime)?;
    let pgm_path = format!("{prefix}.pgm");
    write_pgm_autoscale(&pgm_path, map.rows, map.cols, &map.cells).map_err(CmdError::runtime)?;

    let min = map.cells.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = map.cells.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    println!(
        "heat map {}×{} over {} images: error range [{:.4}, {:.4}] → {csv_path}, {pgm_path}",
        map.rows,
        map.cols,
        data.len(),
        min,
        max
    );
    Ok(())
}

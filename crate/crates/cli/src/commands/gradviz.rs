//! `gradviz`: normalized input-gradient images.

use std::fs;
use std::path::Path;

use pdalab_core::analysis::grad_visualization;
use pdalab_core::pgm::{write_pgm, write_ppm};

use crate::args::{ArgMap, Flag};
use crate::commands::{load_data, load_model, CmdError, CmdResult, CommandSpec};

pub const SPEC: CommandSpec = CommandSpec {
    name: "gradviz",
    about: "min-max normalized loss gradients w.r.t. input images (PGM/PPM)",
    flags: &[
        Flag { name: "model", metavar: "ckpt", required: true, default: None, help: "model checkpoint" },
        Flag { name: "data", metavar: "dataset", required: true, default: None, help: "images to visualize" },
        Flag { name: "count", metavar: "N", required: false, default: Some("8"), help: "number of leading images" },
        Flag { name: "out", metavar: "dir", required: true, default: None, help: "output directory" },
    ],
    run,
};

fn run(args: &ArgMap) -> CmdResult {
    let model = load_model(args.get("model"))?;
    let data = load_data(args.get("data"))?;
    let shape = data.example_shape();
    let &[c, h, w] = shape.as_slice() else {
        return Err(CmdError::runtime(format!(
            "gradviz needs [C,H,W] images, got example shape {shape:?}"
        )));
    };
    let count = args.get_usize("count").map_err(CmdError::Usage)?.min(data.len());
    let out = Path::new(args.get("out"));
    fs::create_dir_all(out).map_err(CmdError::runtime)?;

    let (x, y) = data.batch(0, count);
    let viz = grad_visualization(&model, &x, &y).map_err(CmdError::runtime)?;
    let stride = c * h * w;
    for i in 0..count {
        let grad = &viz.data()[i * stride..(i + 1) * stride];
        let image = &x.data()[i * stride..(i + 1) * stride];
        match c {
            1 => {
                write_pgm(out.join(format!("grad_{i:03}.pgm")), h, w, grad)
                    .map_err(CmdError::runtime)?;
                write_pgm(out.join(format!("input_{i:03}.pgm")), h, w, image)
                    .map_err(CmdError::runtime)?;
            }
            3 => {
                write_ppm(out.join(format!("grad_{i:03}.ppm")), h, w, grad)
                    .map_err(CmdError::runtime)?;
                write_ppm(out.join(format!("input_{i:03}.ppm")), h, w, image)
                    .map_err(CmdError::runtime)?;
            }
            other => {
                return Err(CmdError::runtime(format!(
                    "gradviz supports 1 or 3 channels, got {other}"
                )))
            }
        }
    }
    println!("wrote {count} gradient visualizations to {}", out.display());
    Ok(())
}

//! `corrupt`: build a corruption suite from a dataset.

use std::path::Path;

use pdalab_core::corruptions::build_corruption_suite;

use crate::args::{ArgMap, Flag};
use crate::commands::{load_data, resolve_kinds, CmdError, CmdResult, CommandSpec};

pub const SPEC: CommandSpec = CommandSpec {
    name: "corrupt",
    about: "write <out>/<kind>/<severity>/data.bin sub-datasets plus a manifest",
    flags: &[
        Flag { name: "data", metavar: "dataset", required: true, default: None, help: "source images (spec string or .bin)" },
        Flag { name: "kinds", metavar: "list", required: false, default: Some("all"), help: "all, group names (noise,blur,weather,digital), or kind names" },
        Flag { name: "seed", metavar: "S", required: false, default: Some("0"), help: "suite seed" },
        Flag { name: "out", metavar: "dir", required: true, default: None, help: "suite directory" },
    ],
    run,
};

fn run(args: &ArgMap) -> CmdResult {
    let data = load_data(args.get("data"))?;
    let kinds = resolve_kinds(args.get("kinds"))?;
    let seed = args.get_u64("seed").map_err(CmdError::Usage)?;
    let manifest = build_corruption_suite(&data, &kinds, seed, Path::new(args.get("out")))
        .map_err(CmdError::runtime)?;
    println!(
        "wrote {} sub-datasets ({} kinds × 5 severities, {} images each) to {}",
        manifest.entries.len(),
        kinds.len(),
        data.len(),
        args.get("out")
    );
    Ok(())
}
